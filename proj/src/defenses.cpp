#include "occludox/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "occludox/error.hpp"
#include "occludox/ops.hpp"
#include "occludox/rng.hpp"

namespace occludox {
namespace {

constexpr std::uint64_t kShuffleStream = 11;
constexpr std::uint64_t kNoiseStream = 12;
constexpr std::uint64_t kSmoothStream = 13;
constexpr std::size_t kSmoothChunk = 256;

// Maps one training example (image, label, global example counter) to the
// image the optimiser sees.
using Perturb = std::function<Tensor(const ModelParams&, const Tensor&, std::size_t, std::uint64_t)>;

TrainResult train_with(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg, const Perturb& perturb,
                       const EpochCallback& on_epoch) {
  cfg.validate();
  spec.validate();
  data.validate();
  if (data.size() == 0) throw ContractError("training set is empty");
  if (data.image_dims() != spec.input_dims()) {
    throw ShapeError("training images " + to_string(data.image_dims()) + " do not match model input " +
                     to_string(spec.input_dims()));
  }
  if (data.class_count() > spec.classes) throw ShapeError("dataset has more classes than the model");

  TrainResult out{cfg.init ? *cfg.init : build_cnn(spec, cfg.seed), {}};
  if (!(out.params.spec == spec)) throw ContractError("initial parameters were built for another spec");
  out.params.check_consistent();

  OptimState state(cfg.optimizer);
  SplitMix64 shuffle(derive_seed(cfg.seed, kShuffleStream));
  std::vector<std::size_t> order(data.size());
  std::uint64_t example_counter = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    Real loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<Tensor> images;
      std::vector<std::size_t> labels;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        images.push_back(perturb(out.params, data.image(idx), data.labels[idx], example_counter++));
        labels.push_back(data.labels[idx]);
      }
      Tape tape;
      std::vector<Var> pvars;
      Var logits = forward(tape, out.params, tape.leaf(stack(images)), &pvars);
      Var loss = mean(cross_entropy(logits, labels));
      const Gradients grads = tape.backward(loss);

      std::vector<Tensor*> ps;
      std::vector<const Tensor*> gs;
      for (std::size_t i = 0; i < pvars.size(); ++i) {
        ps.push_back(&out.params.tensors[i].value);
        gs.push_back(&grads.of(pvars[i]));
      }
      optimizer_step(ps, gs, state);
      loss_sum += loss.value()[0] * static_cast<Real>(labels.size());
    }
    const Real epoch_loss = loss_sum / static_cast<Real>(data.size());
    if (!std::isfinite(epoch_loss)) {
      throw NumericError("non-finite training loss in epoch " + std::to_string(epoch));
    }
    out.epoch_losses.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return out;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ContractError("epochs must be >= 1");
  if (batch_size < 1) throw ContractError("batch size must be >= 1");
}

TrainResult adversarial_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                              const TrainAttack& attack, const EpochCallback& on_epoch) {
  Perturb perturb = std::visit(
      [](const auto& a) -> Perturb {
        using A = std::decay_t<decltype(a)>;
        if constexpr (std::is_same_v<A, std::monostate>) {
          return [](const ModelParams&, const Tensor& x, std::size_t, std::uint64_t) { return x; };
        } else if constexpr (std::is_same_v<A, AttackBudget>) {
          a.validate();
          return [a](const ModelParams& p, const Tensor& x, std::size_t y, std::uint64_t) {
            return a.norm == Norm::kInf ? pgd_linf(p, x, y, a).image : pgd_l2(p, x, y, a).image;
          };
        } else {
          return [a](const ModelParams& p, const Tensor& x, std::size_t y, std::uint64_t) {
            return roa_attack(p, x, y, a.config, a.search).attack.image;
          };
        }
      },
      attack);
  return train_with(spec, data, cfg, perturb, on_epoch);
}

TrainResult clean_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch) {
  return adversarial_train(spec, data, cfg, std::monostate{}, on_epoch);
}

std::vector<Real> curriculum_schedule(Real start_255, Real target_255) {
  if (!(start_255 > 0.0) || !(target_255 >= start_255)) {
    throw ConfigError("curriculum needs 0 < start epsilon <= target epsilon");
  }
  std::vector<Real> out{start_255};
  while (out.back() < target_255) out.push_back(out.back() * 2.0);
  if (out.back() != target_255) {
    throw ConfigError("curriculum target epsilon must be start * 2^n (start " + std::to_string(start_255) +
                      ", target " + std::to_string(target_255) + ")");
  }
  return out;
}

std::vector<CurriculumStage> curriculum_adversarial_train(const ConvNetSpec& spec, const Dataset& data,
                                                          const TrainConfig& cfg, const AttackBudget& budget,
                                                          Real start_255, Real target_255,
                                                          const EpochCallback& on_epoch) {
  const auto schedule = curriculum_schedule(start_255, target_255);
  std::vector<CurriculumStage> stages;
  TrainConfig stage_cfg = cfg;
  for (Real eps : schedule) {
    AttackBudget b = AttackBudget::from_255(budget.norm, eps, eps / 4.0, budget.iterations);
    b.keep_best = budget.keep_best;
    CurriculumStage stage;
    stage.epsilon_255 = eps;
    stage.initial = stage_cfg.init ? *stage_cfg.init : build_cnn(spec, cfg.seed);
    stage_cfg.init = stage.initial;
    stage.result = adversarial_train(spec, data, stage_cfg, b, on_epoch);
    stage_cfg.init = stage.result.params;
    stages.push_back(std::move(stage));
  }
  return stages;
}

TrainConfig doa_default_config(std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.optimizer.kind = OptimKind::kAdam;
  cfg.optimizer.learning_rate = 1e-4;
  cfg.seed = seed;
  return cfg;
}

TrainResult doa_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg, const RoaConfig& roa,
                      RoaSearch search, const EpochCallback& on_epoch) {
  roa.validate(spec.height, spec.width);
  return adversarial_train(spec, data, cfg, RoaTrainAttack{roa, search}, on_epoch);
}

TrainResult gaussian_noise_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg, Real sigma,
                                 const EpochCallback& on_epoch) {
  if (!(sigma >= 0.0)) throw ContractError("noise sigma must be >= 0");
  const std::uint64_t seed = cfg.seed;
  Perturb perturb = [sigma, seed](const ModelParams&, const Tensor& x, std::size_t, std::uint64_t counter) {
    if (sigma == 0.0) return x;
    SplitMix64 rng(derive_seed(seed, kNoiseStream, counter));
    Tensor noisy = x;
    for (auto& v : noisy.values()) v = std::clamp(v + sigma * rng.normal(), 0.0, 1.0);
    return noisy;
  };
  return train_with(spec, data, cfg, perturb, on_epoch);
}

SmoothedPrediction smoothed_predict(const ModelParams& params, const Tensor& image, const SmoothingConfig& cfg) {
  if (cfg.samples < 1) throw ContractError("smoothing needs at least one sample");
  if (!(cfg.sigma >= 0.0)) throw ContractError("smoothing sigma must be >= 0");
  if (image.rank() != 3) throw ShapeError("smoothed_predict takes one image [C,H,W]");
  SmoothedPrediction out;
  out.votes.assign(params.spec.classes, 0);
  for (std::size_t start = 0; start < cfg.samples; start += kSmoothChunk) {
    const std::size_t end = std::min(cfg.samples, start + kSmoothChunk);
    std::vector<Tensor> batch;
    for (std::size_t s = start; s < end; ++s) {
      SplitMix64 rng(derive_seed(cfg.seed, kSmoothStream, s));
      Tensor noisy = image;
      if (cfg.sigma > 0.0) {
        for (auto& v : noisy.values()) v = std::clamp(v + cfg.sigma * rng.normal(), 0.0, 1.0);
      }
      batch.push_back(std::move(noisy));
    }
    for (std::size_t c : predict_classes(params, stack(batch))) ++out.votes[c];
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < out.votes.size(); ++c) {
    if (out.votes[c] > out.votes[best]) best = c;
  }
  out.label = best;
  return out;
}

}  // namespace occludox
