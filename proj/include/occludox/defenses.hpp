#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <variant>
#include <vector>

#include "occludox/attacks.hpp"
#include "occludox/dataset.hpp"
#include "occludox/model.hpp"
#include "occludox/optim.hpp"

namespace occludox {

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimConfig optimizer;
  std::uint64_t seed = 0;
  /// Warm start; a fresh build_cnn(spec, seed) when empty.
  std::optional<ModelParams> init;

  /// ContractError unless epochs and batch size are >= 1.
  void validate() const;
};

struct RoaTrainAttack {
  RoaConfig config;
  RoaSearch search = RoaSearch::kExhaustive;
};

/// Inner maximiser used by adversarial training: none (clean training),
/// PGD under an l_inf / l_2 budget, or a rectangular occlusion attack.
using TrainAttack = std::variant<std::monostate, AttackBudget, RoaTrainAttack>;

struct TrainResult {
  ModelParams params;
  std::vector<Real> epoch_losses;  // mean training loss per epoch
};

/// Called after every epoch with (epoch index, mean loss).
using EpochCallback = std::function<void(std::size_t, Real)>;

/// Minibatch training on the attack's outputs under the current parameters.
/// Each epoch visits the data in a seeded shuffle; NumericError on a
/// non-finite epoch loss.
TrainResult adversarial_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                              const TrainAttack& attack, const EpochCallback& on_epoch = {});

TrainResult clean_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg,
                        const EpochCallback& on_epoch = {});

/// [start, 2 start, ..., target]; ConfigError unless target = start * 2^n.
std::vector<Real> curriculum_schedule(Real start_255, Real target_255);

struct CurriculumStage {
  Real epsilon_255 = 0.0;
  ModelParams initial;  // parameters the stage started from
  TrainResult result;
};

/// One adversarial training run per schedule entry, each warm-started from
/// the previous stage. `budget` supplies norm and iteration count; the step
/// is epsilon / 4 for every stage.
std::vector<CurriculumStage> curriculum_adversarial_train(const ConvNetSpec& spec, const Dataset& data,
                                                          const TrainConfig& cfg, const AttackBudget& budget,
                                                          Real start_255, Real target_255,
                                                          const EpochCallback& on_epoch = {});

/// 5 epochs, Adam with learning rate 1e-4.
TrainConfig doa_default_config(std::uint64_t seed);

/// Adversarial training with roa_attack as the inner maximiser.
TrainResult doa_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg, const RoaConfig& roa,
                      RoaSearch search, const EpochCallback& on_epoch = {});

/// Clean training on inputs with seeded N(0, sigma^2) noise, clipped to [0,1].
TrainResult gaussian_noise_train(const ConvNetSpec& spec, const Dataset& data, const TrainConfig& cfg, Real sigma,
                                 const EpochCallback& on_epoch = {});

struct SmoothingConfig {
  Real sigma = 0.25;
  std::size_t samples = 1000;
  std::uint64_t seed = 0;
};

struct SmoothedPrediction {
  std::size_t label = 0;
  std::vector<std::size_t> votes;  // per class, sums to samples
};

/// Plurality vote of the base classifier over Gaussian-perturbed copies
/// (clipped to [0,1]); ties go to the lowest class index.
SmoothedPrediction smoothed_predict(const ModelParams& params, const Tensor& image, const SmoothingConfig& cfg);

}  // namespace occludox
