#pragma once

// Independent reference implementations used only by tests. They share no
// code with the library beyond the Tensor container.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "occludox/model.hpp"
#include "occludox/rng.hpp"
#include "occludox/tensor.hpp"

namespace oracle {

using occludox::Real;
using occludox::Shape;
using occludox::Tensor;

inline Tensor random_tensor(const Shape& dims, occludox::SplitMix64& rng, Real lo = -1.0, Real hi = 1.0) {
  Tensor t(dims);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Direct nested-loop cross-correlation, x [N,C,H,W], k [O,C,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& b, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t o = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (w + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{n, o, oh, ow});
  for (std::size_t ni = 0; ni < n; ++ni)
    for (std::size_t oc = 0; oc < o; ++oc)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xo = 0; xo < ow; ++xo) {
          long double s = b[oc];
          for (std::size_t ic = 0; ic < c; ++ic)
            for (std::size_t i = 0; i < kh; ++i)
              for (std::size_t j = 0; j < kw; ++j) {
                const long yy = static_cast<long>(y * stride + i) - static_cast<long>(pad);
                const long xx = static_cast<long>(xo * stride + j) - static_cast<long>(pad);
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
                s += static_cast<long double>(k[((oc * c + ic) * kh + i) * kw + j]) *
                     x[((ni * c + ic) * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)];
              }
          out[((ni * o + oc) * oh + y) * ow + xo] = static_cast<Real>(s);
        }
  return out;
}

inline Tensor relu(Tensor x) {
  for (auto& v : x.values()) v = v > 0.0 ? v : 0.0;
  return x;
}

inline Tensor max_pool2(const Tensor& x) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2) / 2, w = x.dim(3) / 2;
  Tensor out(Shape{n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xo = 0; xo < w; ++xo) {
        Real m = -std::numeric_limits<Real>::infinity();
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) m = std::max(m, x[(p * x.dim(2) + 2 * y + dy) * x.dim(3) + 2 * xo + dx]);
        out[(p * h + y) * w + xo] = m;
      }
  return out;
}

// x [N,F], W [O,F], b [O].
inline Tensor dense(const Tensor& x, const Tensor& wt, const Tensor& b) {
  const std::size_t n = x.dim(0), f = x.dim(1), o = wt.dim(0);
  Tensor out(Shape{n, o});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < o; ++j) {
      long double s = b[j];
      for (std::size_t i = 0; i < f; ++i) s += static_cast<long double>(wt[j * f + i]) * x[r * f + i];
      out[r * o + j] = static_cast<Real>(s);
    }
  return out;
}

// Forward pass of a ConvNetSpec model from the layer definitions alone.
inline Tensor cnn_logits(const occludox::ModelParams& p, const Tensor& batch) {
  Tensor h = batch;
  std::size_t t = 0;
  for (const auto& layer : p.spec.conv) {
    h = relu(conv2d(h, p.tensors[t].value, p.tensors[t + 1].value, layer.stride, layer.padding));
    if (layer.pool) h = max_pool2(h);
    t += 2;
  }
  h = h.reshaped({h.dim(0), h.size() / h.dim(0)});
  for (std::size_t d = 0; d < p.spec.dense.size(); ++d, t += 2) h = relu(dense(h, p.tensors[t].value, p.tensors[t + 1].value));
  return dense(h, p.tensors[t].value, p.tensors[t + 1].value);
}

inline Real cross_entropy(std::span<const Real> logits, std::size_t label) {
  long double m = *std::max_element(logits.begin(), logits.end()), s = 0.0L;
  for (Real v : logits) s += std::exp(static_cast<long double>(v) - m);
  return static_cast<Real>(m + std::log(s) - logits[label]);
}

// Parameter count of a ConvNetSpec by the closed-form layer formula.
inline std::size_t parameter_count(const occludox::ConvNetSpec& s) {
  std::size_t total = 0, ch = s.channels, h = s.height, w = s.width;
  for (const auto& l : s.conv) {
    total += l.out_channels * ch * l.kernel * l.kernel + l.out_channels;
    h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
    if (l.pool) h /= 2, w /= 2;
    ch = l.out_channels;
  }
  std::size_t f = ch * h * w;
  for (std::size_t d : s.dense) total += d * f + d, f = d;
  return total + s.classes * f + s.classes;
}

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace oracle
