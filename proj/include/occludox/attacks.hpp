#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "occludox/dataset.hpp"
#include "occludox/mask.hpp"
#include "occludox/model.hpp"
#include "occludox/tensor.hpp"

namespace occludox {

enum class Norm { kInf, kTwo };

/// Perturbation budget. `epsilon` and `step` are on the unit pixel scale;
/// configs carry 0-255 values and convert through from_255().
struct AttackBudget {
  Norm norm = Norm::kInf;
  Real epsilon = 8.0 / 255.0;
  Real step = 2.0 / 255.0;
  std::size_t iterations = 7;
  bool keep_best = true;

  static AttackBudget from_255(Norm norm, Real epsilon_255, Real step_255, std::size_t iterations);
  /// ContractError unless epsilon in [0,1], step in (0,1] when iterating.
  void validate() const;
};

struct AttackResult {
  Tensor image;
  Real loss = 0.0;          // loss of the returned image
  Real initial_loss = 0.0;  // loss of the starting point
};

/// Loss of an image and its gradient; attacks ascend it.
using LossGradFn = std::function<LossGrad(const Tensor&)>;

/// Untargeted cross-entropy objective of `params` for `label`.
LossGradFn cross_entropy_objective(const ModelParams& params, std::size_t label);

/// x <- Proj(x + step * sgn(M . grad)); Proj clips to the epsilon box around
/// `image` and to [0,1]. Pixels outside `mask` are never written.
AttackResult pgd_linf(const ModelParams& params, const Tensor& image, std::size_t label, const AttackBudget& budget,
                      const Mask* mask = nullptr);
AttackResult pgd_linf(const LossGradFn& objective, const Tensor& image, const AttackBudget& budget,
                      const Mask* mask = nullptr);

/// x <- Proj(x + step * g / |g|_2); Proj rescales the offset from `image`
/// onto the epsilon ball, then clips to [0,1]. A zero gradient takes no step.
AttackResult pgd_l2(const ModelParams& params, const Tensor& image, std::size_t label, const AttackBudget& budget,
                    const Mask* mask = nullptr);
AttackResult pgd_l2(const LossGradFn& objective, const Tensor& image, const AttackBudget& budget,
                    const Mask* mask = nullptr);

/// One unprojected l2 step: x + step * g / |g|_2 (x unchanged if g == 0).
Tensor l2_ascent_step(const Tensor& x, const Tensor& grad, Real step);

// ---------------------------------------------------------------------------
// Rectangular occlusion

enum class RoaSearch { kExhaustive, kGradient };

RoaSearch parse_roa_search(const std::string& name);
const char* to_string(RoaSearch search);

struct RoaConfig {
  std::size_t height = 7;
  std::size_t width = 7;
  std::size_t stride = 2;
  std::size_t candidates = 30;
  Real fill = 0.5;  // 127.5 / 255
  AttackBudget inner = AttackBudget::from_255(Norm::kInf, 127.5, 8.0, 30);

  /// A zero height or width makes the attack a no-op.
  bool degenerate() const noexcept { return height == 0 || width == 0; }
  /// ShapeError when the rectangle does not fit; ContractError on a zero
  /// stride, zero candidate count or non-l_inf inner budget.
  void validate(std::size_t image_h, std::size_t image_w) const;
};

/// Inner PGD step size paired with an inner iteration count:
/// 7 -> 32, 20 -> 16, 30 -> 8, 50 -> 4 (0-255 scale). Other counts get 8.
Real roa_default_step_255(std::size_t iterations);

struct RoaPlacement {
  std::size_t row = 0;
  std::size_t col = 0;
  Real loss = 0.0;

  friend bool operator==(const RoaPlacement&, const RoaPlacement&) = default;
};

/// Every fully contained top-left corner (j*S, k*S), row-major.
std::vector<RoaPlacement> roa_grid(std::size_t image_h, std::size_t image_w, const RoaConfig& cfg);

/// Copy of `image` with every channel of the rectangle set to `fill`.
Tensor fill_rectangle(const Tensor& image, std::size_t row, std::size_t col, std::size_t height, std::size_t width,
                      Real fill);

/// Loss at every grid placement with a grey rectangle, row-major.
std::vector<Real> grey_fill_losses(const ModelParams& params, const Tensor& image, std::size_t label,
                                   std::span<const RoaPlacement> placements, const RoaConfig& cfg);

/// Maximal grey-fill loss placement; ties keep the first in row-major order.
RoaPlacement roa_exhaustive_position(const ModelParams& params, const Tensor& image, std::size_t label,
                                     const RoaConfig& cfg);

/// Sum over channels and rectangle cells of grad^2, per grid placement.
std::vector<Real> roa_sensitivity(const Tensor& grad, const RoaConfig& cfg);

/// Indices of the `count` largest scores; ties keep the lower index.
std::vector<std::size_t> top_candidates(std::span<const Real> scores, std::size_t count);

/// Ranks placements by gradient sensitivity, scores the top C by grey-fill
/// loss and returns the best (ties: row-major).
RoaPlacement roa_gradient_positions(const ModelParams& params, const Tensor& image, std::size_t label,
                                    const RoaConfig& cfg);

struct RoaResult {
  AttackResult attack;
  RoaPlacement placement;
};

/// Locates the rectangle, fills it grey and runs masked l_inf PGD inside it
/// starting from the grey fill.
RoaResult roa_attack(const ModelParams& params, const Tensor& image, std::size_t label, const RoaConfig& cfg,
                     RoaSearch search);

// ---------------------------------------------------------------------------
// Physical attack simulations

struct EyeglassConfig {
  Real learning_rate = 20.0;  // 0-255 scale
  Real momentum = 0.4;
  std::size_t iterations = 300;
  std::size_t start_colors = 5;
};

/// Pixel update of one momentum step on the mask: g / max|g| accumulated into
/// `velocity`, then x + lr * velocity. Returns false (and leaves everything
/// untouched) when the masked gradient is all zero.
bool eyeglass_step(Tensor& x, Tensor& velocity, const Tensor& grad, const Mask& mask, Real learning_rate,
                   Real momentum);

/// Frame attack: best of `start_colors` random solid colours, then
/// normalised-gradient momentum ascent, clipped and rounded to the 1/255 grid.
AttackResult eyeglass_attack(const ModelParams& params, const Tensor& image, std::size_t label, const Mask& mask,
                             const EyeglassConfig& cfg, std::uint64_t seed);

struct StickerConfig {
  std::size_t iterations = 100;
  Real learning_rate = 0.1;  // unit pixel scale
};

/// Random-noise stickers refined by Adam ascent inside the mask.
AttackResult sticker_attack(const ModelParams& params, const Tensor& image, std::size_t label, const Mask& mask,
                            const StickerConfig& cfg, std::uint64_t seed);

enum class Rotation : std::uint8_t { k0 = 0, k90 = 1, k180 = 2, k270 = 3 };

struct PatchConfig {
  Real region = 0.05;  // fraction of H*W covered by the square patch
  std::size_t target = 0;
  Real learning_rate = 5.0;  // 0-255 scale
  std::size_t iterations = 100;
  std::size_t epochs = 5;
  std::size_t design_per_class = 1;
};

/// round(sqrt(region * H * W)); ShapeError when larger than the image.
std::size_t patch_side(Real region, std::size_t image_h, std::size_t image_w);

/// Patch [C,s,s] rotated clockwise by `rotation`.
Tensor rotate_patch(const Tensor& patch, Rotation rotation);

/// Overwrites the s x s footprint at (row, col) with the rotated patch.
/// BoundsError when it does not fit. An empty patch returns the image.
Tensor patch_apply(const Tensor& image, const Tensor& patch, std::size_t row, std::size_t col, Rotation rotation);

/// Design images: first `per_class` of every class except `target`.
Dataset patch_design_set(const Dataset& data, std::size_t target, std::size_t per_class);

/// Gradient ascent on log P[target] over random placements and rotations.
/// Returns the patch [C,s,s] (s may be 0).
Tensor patch_train(const ModelParams& params, const Dataset& design_set, const PatchConfig& cfg, std::uint64_t seed);

/// Every image with the patch at a seeded random position and rotation.
Dataset apply_patch_randomly(const Dataset& data, const Tensor& patch, std::uint64_t seed);

}  // namespace occludox
