#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

enum class OptimKind { kSgd, kSgdMomentum, kAdam };

OptimKind parse_optim_kind(const std::string& name);
const char* to_string(OptimKind kind);

struct OptimConfig {
  OptimKind kind = OptimKind::kAdam;
  Real learning_rate = 1e-3;
  Real momentum = 0.9;
  // PyTorch Adam defaults.
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  /// Step along the gradient instead of against it.
  bool ascent = false;
};

/// Per-parameter moments plus a step counter. Moments are created on the
/// first update with the dims of their parameters.
struct OptimState {
  OptimConfig config;
  std::uint64_t step = 0;
  std::vector<Tensor> first;
  std::vector<Tensor> second;

  explicit OptimState(OptimConfig cfg = {}) : config(cfg) {}
};

/// One update of every parameter. `grads[i]` belongs to `params[i]`; a null
/// entry raises ContractError before anything is modified.
void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimState& state);

}  // namespace occludox
