#include "occludox/optim.hpp"

#include <cmath>

#include "occludox/error.hpp"

namespace occludox {

OptimKind parse_optim_kind(const std::string& name) {
  if (name == "sgd") return OptimKind::kSgd;
  if (name == "sgd-momentum") return OptimKind::kSgdMomentum;
  if (name == "adam") return OptimKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd, sgd-momentum or adam)");
}

const char* to_string(OptimKind kind) {
  switch (kind) {
    case OptimKind::kSgd: return "sgd";
    case OptimKind::kSgdMomentum: return "sgd-momentum";
    case OptimKind::kAdam: return "adam";
  }
  return "?";
}

void optimizer_step(std::span<Tensor* const> params, std::span<const Tensor* const> grads, OptimState& state) {
  if (grads.size() != params.size()) throw ContractError("optimizer_step: gradient count differs from parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!grads[i]) throw ContractError("optimizer_step: missing gradient for parameter " + std::to_string(i));
    if (grads[i]->dims() != params[i]->dims()) {
      throw ShapeError("optimizer_step: gradient dims " + to_string(grads[i]->dims()) + " vs parameter " +
                       to_string(params[i]->dims()));
    }
  }
  const OptimConfig& c = state.config;
  if (state.first.empty()) {
    for (Tensor* p : params) {
      state.first.emplace_back(p->dims(), 0.0);
      if (c.kind == OptimKind::kAdam) state.second.emplace_back(p->dims(), 0.0);
    }
  } else if (state.first.size() != params.size()) {
    throw ContractError("optimizer_step: parameter list changed between steps");
  }
  ++state.step;
  const Real dir = c.ascent ? 1.0 : -1.0;
  const Real lr = c.learning_rate;

  switch (c.kind) {
    case OptimKind::kSgd:
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        const Tensor& g = *grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) p[k] += dir * lr * g[k];
      }
      break;
    case OptimKind::kSgdMomentum:
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& v = state.first[i];
        const Tensor& g = *grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
          v[k] = c.momentum * v[k] + g[k];
          p[k] += dir * lr * v[k];
        }
      }
      break;
    case OptimKind::kAdam: {
      const Real t = static_cast<Real>(state.step);
      const Real bc1 = 1.0 - std::pow(c.beta1, t);
      const Real bc2 = 1.0 - std::pow(c.beta2, t);
      for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        Tensor& m = state.first[i];
        Tensor& v = state.second[i];
        const Tensor& g = *grads[i];
        for (std::size_t k = 0; k < p.size(); ++k) {
          m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
          v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
          const Real mhat = m[k] / bc1;
          const Real vhat = v[k] / bc2;
          p[k] += dir * lr * mhat / (std::sqrt(vhat) + c.eps);
        }
      }
      break;
    }
  }
}

}  // namespace occludox
