#include "occludox/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "occludox/error.hpp"
#include "occludox/optim.hpp"
#include "occludox/rng.hpp"

namespace occludox {
namespace {

constexpr std::size_t kScoreChunk = 32;

void check_image(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("attack input must be an image [C,H,W], got " + to_string(image.dims()));
}

Real sgn(Real v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Calls `fn(i)` for every flat index of `image` whose pixel is attackable.
template <typename Fn>
void for_each_attackable(const Tensor& image, const Mask* mask, Fn&& fn) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t col = 0; col < w; ++col) {
        if (mask && !mask->at(r, col)) continue;
        fn((ch * h + r) * w + col);
      }
    }
  }
}

// Shared keep-best ascent loop. `step` edits x in place from the gradient at x.
template <typename Step>
AttackResult ascend(const LossGradFn& objective, Tensor start, std::size_t iterations, bool keep_best, Step&& step) {
  Tensor x = std::move(start);
  LossGrad lg = objective(x);
  AttackResult best{x, lg.loss, lg.loss};
  for (std::size_t t = 0; t < iterations; ++t) {
    step(x, lg.grad);
    lg = objective(x);
    if (!keep_best || lg.loss > best.loss) {
      best.image = x;
      best.loss = lg.loss;
    }
  }
  return best;
}

}  // namespace

AttackBudget AttackBudget::from_255(Norm norm, Real epsilon_255, Real step_255, std::size_t iterations) {
  AttackBudget b;
  b.norm = norm;
  b.epsilon = epsilon_255 / 255.0;
  b.step = step_255 / 255.0;
  b.iterations = iterations;
  return b;
}

void AttackBudget::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ContractError("attack epsilon must lie in [0, 255] (0-255 scale)");
  if (iterations > 0 && !(step > 0.0 && step <= 1.0)) {
    throw ContractError("attack step must lie in (0, 255] (0-255 scale) when iterating");
  }
}

LossGradFn cross_entropy_objective(const ModelParams& params, std::size_t label) {
  return [&params, label](const Tensor& x) { return loss_and_input_grad(params, x, label); };
}

AttackResult pgd_linf(const ModelParams& params, const Tensor& image, std::size_t label, const AttackBudget& budget,
                      const Mask* mask) {
  return pgd_linf(cross_entropy_objective(params, label), image, budget, mask);
}

AttackResult pgd_linf(const LossGradFn& objective, const Tensor& image, const AttackBudget& budget, const Mask* mask) {
  check_image(image);
  if (budget.norm != Norm::kInf) throw ContractError("pgd_linf needs an l_inf budget");
  budget.validate();
  if (mask) mask->check_fits(image);
  const Real eps = budget.epsilon, alpha = budget.step;
  return ascend(objective, image, budget.iterations, budget.keep_best, [&](Tensor& x, const Tensor& g) {
    for_each_attackable(x, mask, [&](std::size_t i) {
      const Real moved = x[i] + alpha * sgn(g[i]);
      const Real boxed = std::min(image[i] + eps, std::max(image[i] - eps, moved));
      x[i] = std::clamp(boxed, 0.0, 1.0);
    });
  });
}

AttackResult pgd_l2(const ModelParams& params, const Tensor& image, std::size_t label, const AttackBudget& budget,
                    const Mask* mask) {
  return pgd_l2(cross_entropy_objective(params, label), image, budget, mask);
}

Tensor l2_ascent_step(const Tensor& x, const Tensor& grad, Real step) {
  Real norm2 = 0.0;
  for (Real v : grad.values()) norm2 += v * v;
  Tensor out = x;
  if (norm2 == 0.0) return out;
  const Real scale = step / std::sqrt(norm2);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * grad[i];
  return out;
}

AttackResult pgd_l2(const LossGradFn& objective, const Tensor& image, const AttackBudget& budget, const Mask* mask) {
  check_image(image);
  if (budget.norm != Norm::kTwo) throw ContractError("pgd_l2 needs an l_2 budget");
  budget.validate();
  if (mask) mask->check_fits(image);
  const Real eps = budget.epsilon;
  return ascend(objective, image, budget.iterations, budget.keep_best, [&](Tensor& x, const Tensor& g) {
    Tensor masked(g.dims(), 0.0);
    for_each_attackable(x, mask, [&](std::size_t i) { masked[i] = g[i]; });
    const Tensor moved = l2_ascent_step(x, masked, budget.step);
    Real norm2 = 0.0;
    for_each_attackable(x, mask, [&](std::size_t i) {
      const Real d = moved[i] - image[i];
      norm2 += d * d;
    });
    const Real norm = std::sqrt(norm2);
    const Real shrink = norm > eps ? eps / norm : 1.0;
    for_each_attackable(x, mask, [&](std::size_t i) {
      const Real d = moved[i] - image[i];
      x[i] = std::clamp(shrink == 1.0 ? moved[i] : image[i] + d * shrink, 0.0, 1.0);
    });
  });
}

// ---------------------------------------------------------------------------

RoaSearch parse_roa_search(const std::string& name) {
  if (name == "exhaustive") return RoaSearch::kExhaustive;
  if (name == "gradient") return RoaSearch::kGradient;
  throw ConfigError("unknown ROA search '" + name + "' (expected exhaustive or gradient)");
}

const char* to_string(RoaSearch search) { return search == RoaSearch::kExhaustive ? "exhaustive" : "gradient"; }

void RoaConfig::validate(std::size_t image_h, std::size_t image_w) const {
  if (stride == 0) throw ContractError("ROA stride must be >= 1");
  if (candidates == 0) throw ContractError("ROA candidate count must be >= 1");
  if (inner.norm != Norm::kInf) throw ContractError("ROA inner budget must be l_inf");
  inner.validate();
  if (height > image_h || width > image_w) {
    throw ShapeError("ROA rectangle " + std::to_string(height) + "x" + std::to_string(width) + " exceeds image " +
                     std::to_string(image_h) + "x" + std::to_string(image_w));
  }
}

Real roa_default_step_255(std::size_t iterations) {
  switch (iterations) {
    case 7: return 32.0;
    case 20: return 16.0;
    case 30: return 8.0;
    case 50: return 4.0;
    default: return 8.0;
  }
}

std::vector<RoaPlacement> roa_grid(std::size_t image_h, std::size_t image_w, const RoaConfig& cfg) {
  cfg.validate(image_h, image_w);
  std::vector<RoaPlacement> out;
  if (cfg.degenerate()) return out;
  for (std::size_t j = 0; j <= (image_h - cfg.height) / cfg.stride; ++j) {
    for (std::size_t k = 0; k <= (image_w - cfg.width) / cfg.stride; ++k) out.push_back({j * cfg.stride, k * cfg.stride, 0.0});
  }
  return out;
}

Tensor fill_rectangle(const Tensor& image, std::size_t row, std::size_t col, std::size_t height, std::size_t width,
                      Real fill) {
  check_image(image);
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (row + height > h || col + width > w) throw BoundsError("rectangle leaves the image");
  Tensor out = image;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = row; r < row + height; ++r) {
      for (std::size_t x = col; x < col + width; ++x) out[(ch * h + r) * w + x] = fill;
    }
  }
  return out;
}

std::vector<Real> grey_fill_losses(const ModelParams& params, const Tensor& image, std::size_t label,
                                   std::span<const RoaPlacement> placements, const RoaConfig& cfg) {
  check_image(image);
  std::vector<Real> losses;
  losses.reserve(placements.size());
  for (std::size_t start = 0; start < placements.size(); start += kScoreChunk) {
    const std::size_t end = std::min(placements.size(), start + kScoreChunk);
    std::vector<Tensor> batch;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(fill_rectangle(image, placements[i].row, placements[i].col, cfg.height, cfg.width, cfg.fill));
    }
    const std::vector<std::size_t> labels(batch.size(), label);
    const auto l = example_losses(params, stack(batch), labels);
    losses.insert(losses.end(), l.begin(), l.end());
  }
  return losses;
}

RoaPlacement roa_exhaustive_position(const ModelParams& params, const Tensor& image, std::size_t label,
                                     const RoaConfig& cfg) {
  check_image(image);
  auto grid = roa_grid(image.dim(1), image.dim(2), cfg);
  if (grid.empty()) return {};
  const auto losses = grey_fill_losses(params, image, label, grid, cfg);
  std::size_t best = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] > losses[best]) best = i;
  }
  grid[best].loss = losses[best];
  return grid[best];
}

std::vector<Real> roa_sensitivity(const Tensor& grad, const RoaConfig& cfg) {
  check_image(grad);
  const std::size_t c = grad.dim(0), h = grad.dim(1), w = grad.dim(2);
  const auto grid = roa_grid(h, w, cfg);
  std::vector<Real> out;
  out.reserve(grid.size());
  for (const auto& p : grid) {
    Real s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t r = p.row; r < p.row + cfg.height; ++r) {
        for (std::size_t x = p.col; x < p.col + cfg.width; ++x) {
          const Real g = grad[(ch * h + r) * w + x];
          s += g * g;
        }
      }
    }
    out.push_back(s);
  }
  return out;
}

std::vector<std::size_t> top_candidates(std::span<const Real> scores, std::size_t count) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  idx.resize(std::min(count, idx.size()));
  return idx;
}

RoaPlacement roa_gradient_positions(const ModelParams& params, const Tensor& image, std::size_t label,
                                    const RoaConfig& cfg) {
  check_image(image);
  const auto grid = roa_grid(image.dim(1), image.dim(2), cfg);
  if (grid.empty()) return {};
  const LossGrad lg = loss_and_input_grad(params, image, label);
  auto chosen = top_candidates(roa_sensitivity(lg.grad, cfg), cfg.candidates);
  // Scored in row-major order so that ties resolve as in the exhaustive search.
  std::sort(chosen.begin(), chosen.end());
  std::vector<RoaPlacement> cands;
  for (std::size_t i : chosen) cands.push_back(grid[i]);
  const auto losses = grey_fill_losses(params, image, label, cands, cfg);
  std::size_t best = 0;
  for (std::size_t i = 1; i < losses.size(); ++i) {
    if (losses[i] > losses[best]) best = i;
  }
  cands[best].loss = losses[best];
  return cands[best];
}

RoaResult roa_attack(const ModelParams& params, const Tensor& image, std::size_t label, const RoaConfig& cfg,
                     RoaSearch search) {
  check_image(image);
  cfg.validate(image.dim(1), image.dim(2));
  if (cfg.degenerate()) {
    const Real loss = example_losses(params, image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)}),
                                     std::vector<std::size_t>{label})[0];
    return {{image, loss, loss}, {}};
  }
  const RoaPlacement where = search == RoaSearch::kExhaustive ? roa_exhaustive_position(params, image, label, cfg)
                                                              : roa_gradient_positions(params, image, label, cfg);
  const Tensor filled = fill_rectangle(image, where.row, where.col, cfg.height, cfg.width, cfg.fill);
  const Mask rect = Mask::rectangle(image.dim(1), image.dim(2), where.row, where.col, cfg.height, cfg.width);
  return {pgd_linf(params, filled, label, cfg.inner, &rect), where};
}

// ---------------------------------------------------------------------------

bool eyeglass_step(Tensor& x, Tensor& velocity, const Tensor& grad, const Mask& mask, Real learning_rate,
                   Real momentum) {
  Real peak = 0.0;
  for_each_attackable(x, &mask, [&](std::size_t i) { peak = std::max(peak, std::abs(grad[i])); });
  if (peak == 0.0) return false;
  for_each_attackable(x, &mask, [&](std::size_t i) {
    velocity[i] = momentum * velocity[i] + grad[i] / peak;
    x[i] += learning_rate * velocity[i];
  });
  return true;
}

AttackResult eyeglass_attack(const ModelParams& params, const Tensor& image, std::size_t label, const Mask& mask,
                             const EyeglassConfig& cfg, std::uint64_t seed) {
  check_image(image);
  mask.check_fits(image);
  if (mask.empty()) throw ContractError("eyeglass attack needs a nonempty mask");
  if (cfg.start_colors == 0) throw ContractError("eyeglass attack needs at least one start colour");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);

  SplitMix64 rng(seed);
  std::vector<Tensor> starts;
  for (std::size_t k = 0; k < cfg.start_colors; ++k) {
    Tensor s = image;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const Real colour = std::round(rng.uniform() * 255.0) / 255.0;
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t col = 0; col < w; ++col) {
          if (mask.at(r, col)) s[(ch * h + r) * w + col] = colour;
        }
      }
    }
    starts.push_back(std::move(s));
  }
  const auto losses = example_losses(params, stack(starts), std::vector<std::size_t>(starts.size(), label));
  const std::size_t pick = argmax(losses);

  Tensor velocity(image.dims(), 0.0);
  const Real lr = cfg.learning_rate / 255.0;
  return ascend(cross_entropy_objective(params, label), starts[pick], cfg.iterations, true,
                [&](Tensor& x, const Tensor& g) {
                  if (!eyeglass_step(x, velocity, g, mask, lr, cfg.momentum)) return;
                  for_each_attackable(x, &mask, [&](std::size_t i) {
                    x[i] = std::round(std::clamp(x[i], 0.0, 1.0) * 255.0) / 255.0;
                  });
                });
}

AttackResult sticker_attack(const ModelParams& params, const Tensor& image, std::size_t label, const Mask& mask,
                            const StickerConfig& cfg, std::uint64_t seed) {
  check_image(image);
  mask.check_fits(image);
  if (mask.empty()) throw ContractError("sticker attack needs a nonempty mask");
  SplitMix64 rng(seed);
  Tensor start = image;
  for_each_attackable(start, &mask, [&](std::size_t i) { start[i] = rng.uniform(); });

  OptimConfig oc;
  oc.kind = OptimKind::kAdam;
  oc.learning_rate = cfg.learning_rate;
  oc.ascent = true;
  OptimState state(oc);
  return ascend(cross_entropy_objective(params, label), std::move(start), cfg.iterations, true,
                [&](Tensor& x, const Tensor& g) {
                  Tensor masked(g.dims(), 0.0);
                  for_each_attackable(x, &mask, [&](std::size_t i) { masked[i] = g[i]; });
                  Tensor moved = x;
                  Tensor* p[1] = {&moved};
                  const Tensor* gp[1] = {&masked};
                  optimizer_step(p, gp, state);
                  for_each_attackable(x, &mask, [&](std::size_t i) { x[i] = std::clamp(moved[i], 0.0, 1.0); });
                });
}

// ---------------------------------------------------------------------------

std::size_t patch_side(Real region, std::size_t image_h, std::size_t image_w) {
  if (!(region >= 0.0)) throw ContractError("patch region fraction must be >= 0");
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(region * static_cast<Real>(image_h * image_w))));
  if (side > std::min(image_h, image_w)) {
    throw ShapeError("patch side " + std::to_string(side) + " exceeds image " + std::to_string(image_h) + "x" +
                     std::to_string(image_w));
  }
  return side;
}

namespace {

// Source cell in the unrotated patch for cell (r, c) of the rotated one.
std::pair<std::size_t, std::size_t> rotated_source(std::size_t r, std::size_t c, std::size_t s, Rotation rot) {
  switch (rot) {
    case Rotation::k0: return {r, c};
    case Rotation::k90: return {s - 1 - c, r};
    case Rotation::k180: return {s - 1 - r, s - 1 - c};
    case Rotation::k270: return {c, s - 1 - r};
  }
  return {r, c};
}

void check_patch(const Tensor& patch) {
  if (patch.rank() != 3 || patch.dim(1) != patch.dim(2)) {
    throw ShapeError("patch must be square [C,s,s], got " + to_string(patch.dims()));
  }
}

}  // namespace

Tensor rotate_patch(const Tensor& patch, Rotation rotation) {
  check_patch(patch);
  const std::size_t c = patch.dim(0), s = patch.dim(1);
  Tensor out(patch.dims());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t col = 0; col < s; ++col) {
        const auto [pr, pc] = rotated_source(r, col, s, rotation);
        out[(ch * s + r) * s + col] = patch[(ch * s + pr) * s + pc];
      }
    }
  }
  return out;
}

Tensor patch_apply(const Tensor& image, const Tensor& patch, std::size_t row, std::size_t col, Rotation rotation) {
  check_image(image);
  check_patch(patch);
  const std::size_t s = patch.dim(1);
  if (s == 0) return image;
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch.dim(0) != c) throw ShapeError("patch channels differ from image channels");
  if (row + s > h || col + s > w) {
    throw BoundsError("patch of side " + std::to_string(s) + " at (" + std::to_string(row) + "," + std::to_string(col) +
                      ") leaves the image");
  }
  Tensor out = image;
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t r = 0; r < s; ++r) {
      for (std::size_t x = 0; x < s; ++x) {
        const auto [pr, pc] = rotated_source(r, x, s, rotation);
        out[(ch * h + row + r) * w + col + x] = patch[(ch * s + pr) * s + pc];
      }
    }
  }
  return out;
}

Dataset patch_design_set(const Dataset& data, std::size_t target, std::size_t per_class) {
  std::vector<std::size_t> taken(data.class_count(), 0);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t l = data.labels[i];
    if (l == target || taken[l] >= per_class) continue;
    ++taken[l];
    rows.push_back(i);
  }
  return data.subset(rows);
}

Tensor patch_train(const ModelParams& params, const Dataset& design_set, const PatchConfig& cfg, std::uint64_t seed) {
  const Shape dims = design_set.image_dims();
  if (dims.size() != 3) throw ShapeError("patch design set must hold [C,H,W] images");
  const std::size_t c = dims[0], h = dims[1], w = dims[2];
  const std::size_t s = patch_side(cfg.region, h, w);
  if (cfg.target >= params.spec.classes) throw IndexError("patch target class out of range");
  for (std::size_t l : design_set.labels) {
    if (l == cfg.target) throw ContractError("patch design set must exclude target-class images");
  }
  Tensor patch(Shape{c, s, s});
  if (s == 0) return patch;

  SplitMix64 rng(seed);
  for (auto& v : patch.values()) v = rng.uniform();
  const Real lr = cfg.learning_rate / 255.0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < design_set.size(); ++i) {
      const Tensor image = design_set.image(i);
      for (std::size_t it = 0; it < cfg.iterations; ++it) {
        const std::size_t row = rng.below(h - s + 1);
        const std::size_t col = rng.below(w - s + 1);
        const auto rot = static_cast<Rotation>(rng.below(4));
        // log P[target] = -CE(target): step against the cross-entropy gradient.
        const LossGrad lg = loss_and_input_grad(params, patch_apply(image, patch, row, col, rot), cfg.target);
        for (std::size_t ch = 0; ch < c; ++ch) {
          for (std::size_t r = 0; r < s; ++r) {
            for (std::size_t x = 0; x < s; ++x) {
              const auto [pr, pc] = rotated_source(r, x, s, rot);
              Real& p = patch[(ch * s + pr) * s + pc];
              p = std::clamp(p - lr * lg.grad[(ch * h + row + r) * w + col + x], 0.0, 1.0);
            }
          }
        }
      }
    }
  }
  return patch;
}

Dataset apply_patch_randomly(const Dataset& data, const Tensor& patch, std::uint64_t seed) {
  check_patch(patch);
  Dataset out = data;
  const std::size_t s = patch.dim(1);
  if (s == 0) return out;
  const Shape dims = data.image_dims();
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t row = rng.below(dims[1] - s + 1);
    const std::size_t col = rng.below(dims[2] - s + 1);
    const auto rot = static_cast<Rotation>(rng.below(4));
    out.images.set_slice(i, patch_apply(data.image(i), patch, row, col, rot));
  }
  return out;
}

}  // namespace occludox
