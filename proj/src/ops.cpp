#include "occludox/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "occludox/error.hpp"

namespace occludox {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

void require_same_dims(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": dims " + to_string(a.dims()) + " vs " + to_string(b.dims()));
  }
}

struct ConvGeometry {
  std::size_t n, c, h, w;
  std::size_t out_c, kh, kw;
  std::size_t stride, pad;
  std::size_t oh, ow;
  std::size_t k() const { return c * kh * kw; }
  std::size_t ohw() const { return oh * ow; }
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + to_string(x.dims()));
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [O,C,kh,kw], got " + to_string(kernel.dims()));
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  ConvGeometry g{x.dim(0), x.dim(1), x.dim(2), x.dim(3), kernel.dim(0), kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
  if (kernel.dim(1) != g.c) {
    throw ShapeError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, input has " +
                     std::to_string(g.c));
  }
  if (g.h + 2 * padding < g.kh || g.w + 2 * padding < g.kw) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  if (g.oh == 0 || g.ow == 0) throw ShapeError("conv2d: non-positive output size");
  return g;
}

// Output columns [lo, hi) whose input column ox * stride + j - pad is inside the image.
std::pair<std::size_t, std::size_t> valid_cols(const ConvGeometry& g, std::size_t j) {
  std::size_t lo = 0;
  while (lo < g.ow && lo * g.stride + j < g.pad) ++lo;
  std::size_t hi = lo;
  while (hi < g.ow && hi * g.stride + j < g.pad + g.w) ++hi;
  return {lo, hi};
}

// cols is [C*kh*kw, OH*OW] for one image.
void im2col(const Real* img, const ConvGeometry& g, Real* cols) {
  const auto ohw = g.ohw();
  for (std::size_t j = 0; j < g.kw; ++j) {
    const auto [lo, hi] = valid_cols(g, j);
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        Real* row = cols + ((ch * g.kh + i) * g.kw + j) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          Real* out = row + oy * g.ow;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h) || lo == hi) {
            std::fill(out, out + g.ow, 0.0);
            continue;
          }
          // For ox >= lo the input column ox * stride + j - pad is non-negative.
          const Real* src = img + (ch * g.h + static_cast<std::size_t>(y)) * g.w;
          std::fill(out, out + lo, 0.0);
          if (g.stride == 1) {
            std::copy(src + (lo + j - g.pad), src + (hi + j - g.pad), out + lo);
          } else {
            for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[ox * g.stride + j - g.pad];
          }
          std::fill(out + hi, out + g.ow, 0.0);
        }
      }
    }
  }
}

void col2im_add(const Real* cols, const ConvGeometry& g, Real* img) {
  const auto ohw = g.ohw();
  for (std::size_t j = 0; j < g.kw; ++j) {
    const auto [lo, hi] = valid_cols(g, j);
    for (std::size_t ch = 0; ch < g.c; ++ch) {
      for (std::size_t i = 0; i < g.kh; ++i) {
        const Real* row = cols + ((ch * g.kh + i) * g.kw + j) * ohw;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.h)) continue;
          Real* dst = img + (ch * g.h + static_cast<std::size_t>(y)) * g.w;
          const Real* src = row + oy * g.ow;
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * g.stride + j - g.pad] += src[ox];
        }
      }
    }
  }
}

}  // namespace

namespace kernels {

Tensor conv2d_forward(const Tensor& x, const Tensor& kernel, const Tensor& bias, std::size_t stride,
                      std::size_t padding) {
  const ConvGeometry g = conv_geometry(x, kernel, stride, padding);
  if (bias.size() != g.out_c) throw ShapeError("conv2d: bias length must equal output channels");
  Tensor out(Shape{g.n, g.out_c, g.oh, g.ow});
  std::vector<Real> cols(g.k() * g.ohw());
  ConstMatMap w(kernel.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.k()));
  ConstMatMap c(cols.data(), static_cast<Eigen::Index>(g.k()), static_cast<Eigen::Index>(g.ohw()));
  for (std::size_t n = 0; n < g.n; ++n) {
    im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
    MatMap o(out.data() + n * g.out_c * g.ohw(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.ohw()));
    o.noalias() = w * c;
    for (std::size_t oc = 0; oc < g.out_c; ++oc) o.row(static_cast<Eigen::Index>(oc)).array() += bias[oc];
  }
  return out;
}

void conv2d_backward(const Tensor& x, const Tensor& kernel, const Tensor& grad_out, std::size_t stride,
                     std::size_t padding, Tensor* grad_x, Tensor* grad_kernel, Tensor* grad_bias) {
  const ConvGeometry g = conv_geometry(x, kernel, stride, padding);
  std::vector<Real> cols(g.k() * g.ohw());
  std::vector<Real> gcols(grad_x ? g.k() * g.ohw() : 0);
  ConstMatMap w(kernel.data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.k()));
  for (std::size_t n = 0; n < g.n; ++n) {
    ConstMatMap go(grad_out.data() + n * g.out_c * g.ohw(), static_cast<Eigen::Index>(g.out_c),
                   static_cast<Eigen::Index>(g.ohw()));
    if (grad_kernel) {
      im2col(x.data() + n * g.c * g.h * g.w, g, cols.data());
      ConstMatMap c(cols.data(), static_cast<Eigen::Index>(g.k()), static_cast<Eigen::Index>(g.ohw()));
      MatMap gw(grad_kernel->data(), static_cast<Eigen::Index>(g.out_c), static_cast<Eigen::Index>(g.k()));
      gw.noalias() += go * c.transpose();
    }
    if (grad_bias) {
      for (std::size_t oc = 0; oc < g.out_c; ++oc) {
        Real s = 0.0;
        const Real* row = grad_out.data() + (n * g.out_c + oc) * g.ohw();
        for (std::size_t t = 0; t < g.ohw(); ++t) s += row[t];
        (*grad_bias)[oc] += s;
      }
    }
    if (grad_x) {
      MatMap gc(gcols.data(), static_cast<Eigen::Index>(g.k()), static_cast<Eigen::Index>(g.ohw()));
      gc.noalias() = w.transpose() * go;
      col2im_add(gcols.data(), g, grad_x->data() + n * g.c * g.h * g.w);
    }
  }
}

Tensor dense_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || weight.dim(1) != x.dim(1) || bias.size() != weight.dim(0)) {
    throw ShapeError("dense: x " + to_string(x.dims()) + ", weight " + to_string(weight.dims()) + ", bias " +
                     to_string(bias.dims()));
  }
  const auto n = x.dim(0), f = x.dim(1), o = weight.dim(0);
  Tensor out(Shape{n, o});
  ConstMatMap w(weight.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
  ConstVecMap b(bias.data(), static_cast<Eigen::Index>(o));
  for (std::size_t r = 0; r < n; ++r) {
    ConstVecMap xr(x.data() + r * f, static_cast<Eigen::Index>(f));
    VecMap yr(out.data() + r * o, static_cast<Eigen::Index>(o));
    yr.noalias() = w * xr;
    yr += b;
  }
  return out;
}

}  // namespace kernels

Var add(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return a.tape->record(OpKind::kAdd, {a.id, b.id}, std::move(out), [](const Tensor& go, std::span<Tensor* const> pg) {
    for (Tensor* g : pg) {
      if (!g) continue;
      for (std::size_t i = 0; i < go.size(); ++i) (*g)[i] += go[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape->record(OpKind::kSub, {a.id, b.id}, std::move(out), [](const Tensor& go, std::span<Tensor* const> pg) {
    if (pg[0]) {
      for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += go[i];
    }
    if (pg[1]) {
      for (std::size_t i = 0; i < go.size(); ++i) (*pg[1])[i] -= go[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_dims(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  Tape* t = a.tape;
  return t->record(OpKind::kMul, {a.id, b.id}, std::move(out), [t, ia = a.id, ib = b.id](const Tensor& go, std::span<Tensor* const> pg) {
    const Tensor& av = t->value(ia);
    const Tensor& bv = t->value(ib);
    if (pg[0]) {
      for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += go[i] * bv[i];
    }
    if (pg[1]) {
      for (std::size_t i = 0; i < go.size(); ++i) (*pg[1])[i] += go[i] * av[i];
    }
  });
}

Var scale(Var a, Real factor) {
  Tensor out = a.value();
  for (auto& v : out.values()) v *= factor;
  return a.tape->record(OpKind::kScale, {a.id}, std::move(out), [factor](const Tensor& go, std::span<Tensor* const> pg) {
    for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += factor * go[i];
  });
}

Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.values()) v = v > 0.0 ? v : 0.0;
  Tape* t = a.tape;
  return t->record(OpKind::kRelu, {a.id}, std::move(out), [t, ia = a.id](const Tensor& go, std::span<Tensor* const> pg) {
    const Tensor& av = t->value(ia);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (av[i] > 0.0) (*pg[0])[i] += go[i];
    }
  });
}

Var clip(Var a, Real lo, Real hi) {
  if (lo > hi) throw ContractError("clip: lo > hi");
  Tensor out = a.value();
  for (auto& v : out.values()) v = std::min(hi, std::max(lo, v));
  Tape* t = a.tape;
  return t->record(OpKind::kClip, {a.id}, std::move(out), [t, ia = a.id, lo, hi](const Tensor& go, std::span<Tensor* const> pg) {
    const Tensor& av = t->value(ia);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (av[i] > lo && av[i] < hi) (*pg[0])[i] += go[i];
    }
  });
}

Var max_pool2(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 4) throw ShapeError("max_pool2: input must be [N,C,H,W], got " + to_string(x.dims()));
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("max_pool2: spatial dims below 2");
  Tensor out(Shape{n, c, oh, ow});
  std::vector<std::size_t> argmax_idx(out.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const Real* src = x.data() + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        const std::size_t cand[3] = {best + 1, best + w, best + w + 1};
        for (std::size_t k : cand) {
          if (src[k] > src[best]) best = k;
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = src[best];
        argmax_idx[o] = plane * h * w + best;
      }
    }
  }
  return a.tape->record(OpKind::kMaxPool2, {a.id}, std::move(out),
                        [idx = std::move(argmax_idx)](const Tensor& go, std::span<Tensor* const> pg) {
                          for (std::size_t o = 0; o < go.size(); ++o) (*pg[0])[idx[o]] += go[o];
                        });
}

Var flatten(Var a) {
  const Tensor& x = a.value();
  if (x.rank() < 1) throw ShapeError("flatten: rank-0 input");
  const std::size_t n = x.dim(0);
  Tensor out = x.reshaped(Shape{n, n == 0 ? 0 : x.size() / n});
  return a.tape->record(OpKind::kFlatten, {a.id}, std::move(out), [](const Tensor& go, std::span<Tensor* const> pg) {
    for (std::size_t i = 0; i < go.size(); ++i) (*pg[0])[i] += go[i];
  });
}

Var dense(Var x, Var weight, Var bias) {
  Tensor out = kernels::dense_forward(x.value(), weight.value(), bias.value());
  Tape* t = x.tape;
  return t->record(OpKind::kDense, {x.id, weight.id, bias.id}, std::move(out),
                   [t, ix = x.id, iw = weight.id](const Tensor& go, std::span<Tensor* const> pg) {
                     const Tensor& xv = t->value(ix);
                     const Tensor& wv = t->value(iw);
                     const auto n = xv.dim(0), f = xv.dim(1), o = wv.dim(0);
                     ConstMatMap w(wv.data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
                     for (std::size_t r = 0; r < n; ++r) {
                       ConstVecMap gr(go.data() + r * o, static_cast<Eigen::Index>(o));
                       ConstVecMap xr(xv.data() + r * f, static_cast<Eigen::Index>(f));
                       if (pg[0]) {
                         VecMap gx(pg[0]->data() + r * f, static_cast<Eigen::Index>(f));
                         gx.noalias() += w.transpose() * gr;
                       }
                       if (pg[1]) {
                         MatMap gw(pg[1]->data(), static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(f));
                         gw.noalias() += gr * xr.transpose();
                       }
                       if (pg[2]) {
                         for (std::size_t k = 0; k < o; ++k) (*pg[2])[k] += go[r * o + k];
                       }
                     }
                   });
}

Var conv2d(Var x, Var kernel, Var bias, std::size_t stride, std::size_t padding) {
  Tensor out = kernels::conv2d_forward(x.value(), kernel.value(), bias.value(), stride, padding);
  Tape* t = x.tape;
  return t->record(OpKind::kConv2d, {x.id, kernel.id, bias.id}, std::move(out),
                   [t, ix = x.id, ik = kernel.id, stride, padding](const Tensor& go, std::span<Tensor* const> pg) {
                     kernels::conv2d_backward(t->value(ix), t->value(ik), go, stride, padding, pg[0], pg[1], pg[2]);
                   });
}

Real softmax_cross_entropy(std::span<const Real> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw IndexError("label " + std::to_string(label) + " out of range for " + std::to_string(logits.size()) +
                     " logits");
  }
  const Real m = *std::max_element(logits.begin(), logits.end());
  Real s = 0.0;
  for (Real z : logits) s += std::exp(z - m);
  return m + std::log(s) - logits[label];
}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,K], got " + to_string(z.dims()));
  const auto n = z.dim(0), k = z.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count differs from batch size");
  Tensor out(Shape{n});
  // Softmax probabilities are saved for the backward pass.
  std::vector<Real> probs(n * k);
  for (std::size_t r = 0; r < n; ++r) {
    std::span<const Real> row(z.data() + r * k, k);
    out[r] = softmax_cross_entropy(row, labels[r]);
    const Real m = *std::max_element(row.begin(), row.end());
    Real s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(row[j] - m);
    for (std::size_t j = 0; j < k; ++j) probs[r * k + j] = std::exp(row[j] - m) / s;
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return logits.tape->record(OpKind::kCrossEntropy, {logits.id}, std::move(out),
                             [probs = std::move(probs), lab = std::move(lab), k](const Tensor& go, std::span<Tensor* const> pg) {
                               for (std::size_t r = 0; r < lab.size(); ++r) {
                                 for (std::size_t j = 0; j < k; ++j) {
                                   const Real d = probs[r * k + j] - (j == lab[r] ? 1.0 : 0.0);
                                   (*pg[0])[r * k + j] += go[r] * d;
                                 }
                               }
                             });
}

Var sum(Var a) {
  Real s = 0.0;
  for (Real v : a.value().values()) s += v;
  return a.tape->record(OpKind::kSum, {a.id}, Tensor::scalar(s), [](const Tensor& go, std::span<Tensor* const> pg) {
    for (auto& v : pg[0]->values()) v += go[0];
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty tensor");
  Real s = 0.0;
  for (Real v : a.value().values()) s += v;
  const Real inv = 1.0 / static_cast<Real>(n);
  return a.tape->record(OpKind::kMean, {a.id}, Tensor::scalar(s * inv), [inv](const Tensor& go, std::span<Tensor* const> pg) {
    for (auto& v : pg[0]->values()) v += go[0] * inv;
  });
}

}  // namespace occludox
