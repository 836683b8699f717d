#pragma once

#include <array>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "occludox/attacks.hpp"
#include "occludox/dataset.hpp"
#include "occludox/defenses.hpp"
#include "occludox/model.hpp"
#include "occludox/report.hpp"

namespace occludox::harness {

const char* version() noexcept;

/// Raises glibc's mmap and trim thresholds so the many short-lived
/// activation buffers are recycled instead of mapped and unmapped per op.
/// No-op on other C libraries. Call once from main().
void tune_allocator() noexcept;

enum class ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

/// ConfigError -> 2, IoError / FormatError -> 3, NumericError -> 4, else 1.
ExitCode exit_code_for(const std::exception& e) noexcept;

enum class AttackKind { kPgdLinf, kPgdL2, kRoa, kEyeglass, kSticker, kPatch };

AttackKind parse_attack_kind(const std::string& name);
const char* to_string(AttackKind kind);

enum class DefenseKind { kClean, kAt, kCat, kDoaExh, kDoaGrad, kRs };

DefenseKind parse_defense_kind(const std::string& name);
const char* to_string(DefenseKind kind);

/// Attackable region: a PGM file or a union of rectangles (row, col, h, w).
/// Empty means the attack's default region.
struct MaskSpec {
  std::optional<std::filesystem::path> pgm;
  std::vector<std::array<std::size_t, 4>> rectangles;
};

/// Frame of a pair of glasses scaled to the image.
Mask default_eyeglass_mask(std::size_t height, std::size_t width);
/// Two horizontal bars above and below the image centre.
Mask default_sticker_mask(std::size_t height, std::size_t width);

struct AttackSpec {
  AttackKind kind = AttackKind::kEyeglass;
  // PGD budgets on the 0-255 scale; the strength grid supplies iterations.
  Real epsilon_255 = 8.0;
  std::optional<Real> step_255;  // epsilon / 4 when empty
  bool keep_best = true;
  RoaConfig roa;
  RoaSearch search = RoaSearch::kExhaustive;
  std::optional<Real> roa_step_255;  // roa_default_step_255(iterations) when empty
  EyeglassConfig eyeglass;
  StickerConfig sticker;
  PatchConfig patch;
  MaskSpec mask;

  /// Name of the strength axis: "region" for patches, else "iterations".
  const char* param_name() const noexcept;
  /// Mask for images of the given size, or nullopt for unmasked PGD.
  std::optional<Mask> resolve_mask(std::size_t height, std::size_t width) const;
};

struct DefenseSpec {
  std::string id;
  DefenseKind kind = DefenseKind::kClean;
  std::filesystem::path checkpoint;
  Real sigma = 0.25;  // rs only
  std::size_t samples = 1000;
};

struct DataSpec {
  std::optional<std::filesystem::path> dir;  // in-memory synthetic data when empty
  std::optional<std::uint64_t> seed;         // global seed when empty
  std::size_t classes = 16;
  std::size_t per_class = 100;
  std::size_t side = 32;
};

enum class TrainMethod { kClean, kAt, kCat, kDoa, kRsNoise };

TrainMethod parse_train_method(const std::string& name);
const char* to_string(TrainMethod method);

struct TrainSpec {
  TrainMethod method = TrainMethod::kClean;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  OptimConfig optimizer;
  std::optional<std::filesystem::path> init;
  // at / cat
  Norm norm = Norm::kInf;
  Real epsilon_255 = 8.0;
  std::optional<Real> step_255;
  std::size_t iterations = 7;
  Real start_epsilon_255 = 4.0;
  Real target_epsilon_255 = 32.0;
  // doa
  RoaConfig roa;
  RoaSearch search = RoaSearch::kExhaustive;
  // rs-noise
  Real sigma = 0.25;
  std::filesystem::path out = "model.ckpt";
  std::optional<std::filesystem::path> log;  // <out stem>.log.csv when empty
};

struct EvalSpec {
  DefenseSpec defense{"model", DefenseKind::kClean, "model.ckpt"};
  AttackSpec attack;
  std::vector<Real> grid;  // default grid when empty
  std::filesystem::path out = "attack_report.csv";
  std::optional<std::filesystem::path> dump;
};

struct SweepSpec {
  std::vector<DefenseSpec> defenses;
  AttackSpec attack;
  std::vector<Real> grid;
  std::filesystem::path out = "sweep_report.csv";
};

struct SmoothSpec {
  std::filesystem::path checkpoint = "model.ckpt";
  Real sigma = 0.25;
  std::size_t samples = 1000;
  std::filesystem::path out = "smooth_predictions.csv";
};

struct Config {
  std::uint64_t seed = 42;
  std::size_t threads = 1;
  bool fast = false;
  DataSpec data;
  std::optional<ConvNetSpec> model;  // desk default for the data when empty
  TrainSpec train;
  EvalSpec attack;
  SweepSpec sweep;
  SmoothSpec smooth;
  /// Parsed document, compact; the hash input.
  std::string raw_json;
  /// FNV-1a of the effective config (seed and fast applied, threads removed).
  std::string hash;

  ConvNetSpec model_spec() const;
  std::uint64_t data_seed() const { return data.seed.value_or(seed); }
};

/// Parses a config document. Relative paths resolve against `base_dir`.
/// ConfigError carries the JSON path of the offending field.
Config parse_config(const std::string& json_text, const std::filesystem::path& base_dir = {});
Config load_config(const std::filesystem::path& path);

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  bool fast = false;
};
/// Applies CLI flags and recomputes the hash.
void apply_overrides(Config& config, const Overrides& overrides);

/// Default strength grid: patch fractions {0, .05, ..., .25} or the
/// iteration ladder {0, 10, 100, 1000} ({0, 10, 50} with `fast`).
std::vector<Real> default_grid(AttackKind kind, bool fast);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. The first failing
/// index's exception is rethrown.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Prediction of a defense: argmax of the model or the smoothed plurality.
std::vector<std::size_t> defense_predictions(const ModelParams& params, const DefenseSpec& defense,
                                             const Dataset& data, std::uint64_t seed, std::size_t threads);

/// Fraction of correct predictions; bit-equal to accuracy() for non-smoothed defenses.
double prediction_accuracy(std::span<const std::size_t> predictions, const Dataset& data);

struct EvalContext {
  const Dataset* train = nullptr;  // patch design images
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::optional<std::filesystem::path> dump_dir;
};

/// Images the attack is scored on: the test split, minus the target class
/// for patches.
Dataset attack_eval_set(const Dataset& test, const AttackSpec& attack);

/// Attacked copy of `eval_set` at one strength. Strength 0 returns the set
/// unchanged.
Dataset attack_dataset(const ModelParams& params, const Dataset& eval_set, const AttackSpec& attack, Real strength,
                       const EvalContext& ctx);

/// One report row per grid point.
std::vector<EvaluationRow> evaluate_defense(const ModelParams& params, const DefenseSpec& defense,
                                            const Dataset& test, const AttackSpec& attack,
                                            std::span<const Real> grid, const EvalContext& ctx);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
};
/// Loads `data.dir/{train,val,test}` or generates the synthetic set in memory.
Splits load_data(const Config& config);

// Commands. Each returns normally on success and throws on failure.
void cmd_gen_data(const Config& config, const std::filesystem::path& out_dir, bool force);
/// Returns the checkpoint paths written (one per curriculum stage for cat).
std::vector<std::filesystem::path> cmd_train(const Config& config);
EvaluationReport cmd_attack(const Config& config);
EvaluationReport cmd_sweep(const Config& config);
/// Returns smoothed test accuracy.
double cmd_smooth_predict(const Config& config);
void cmd_plot(const std::filesystem::path& report_csv, const std::filesystem::path& out_svg);

}  // namespace occludox::harness
