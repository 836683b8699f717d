#include "occludox/harness.hpp"

#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "json.hpp"
#include "occludox/checkpoint.hpp"
#include "occludox/error.hpp"
#include "occludox/pnm.hpp"
#include "occludox/rng.hpp"

namespace occludox::harness {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr std::uint64_t kAttackStream = 21;
constexpr std::uint64_t kPatchStream = 22;
constexpr std::uint64_t kSmoothStream = 23;
constexpr std::uint64_t kPatchPlaceStream = 24;

std::shared_ptr<spdlog::logger> logger() {
  static const std::shared_ptr<spdlog::logger> instance = [] {
    auto l = spdlog::stderr_logger_mt("occludox");
    l->set_pattern("[%l] %v");
    auto level = spdlog::level::info;
    if (const char* env = std::getenv("OCCLUDOX_LOG")) {
      const std::string v(env);
      if (v == "error") level = spdlog::level::err;
      else if (v == "debug") level = spdlog::level::debug;
    }
    l->set_level(level);
    return l;
  }();
  return instance;
}

// Read-only view of one JSON value that knows its own path.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {}

  [[noreturn]] void fail(const std::string& what) const { throw ConfigError(what, path_); }

  void expect_object(std::initializer_list<std::string_view> allowed) const {
    if (!j_->is_object()) fail("expected an object");
    for (const auto& [key, value] : j_->items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        throw ConfigError("unknown field", path_ + "." + key);
      }
    }
  }

  bool has(const char* key) const { return j_->contains(key) && !(*j_)[key].is_null(); }
  Node at(const char* key) const {
    if (!has(key)) throw ConfigError("missing required field", path_ + "." + key);
    return Node((*j_)[key], path_ + "." + key);
  }
  Node index(std::size_t i) const { return Node((*j_)[i], path_ + "[" + std::to_string(i) + "]"); }
  std::size_t array_size() const {
    if (!j_->is_array()) fail("expected an array");
    return j_->size();
  }

  Real real() const {
    if (!j_->is_number()) fail("expected a number");
    const double v = j_->get<double>();
    if (!std::isfinite(v)) fail("expected a finite number");
    return v;
  }
  std::uint64_t u64() const {
    if (j_->is_number_unsigned()) return j_->get<std::uint64_t>();
    if (j_->is_number_integer() && j_->get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j_->get<std::int64_t>());
    fail("expected a non-negative integer");
  }
  std::size_t size() const { return static_cast<std::size_t>(u64()); }
  bool boolean() const {
    if (!j_->is_boolean()) fail("expected true or false");
    return j_->get<bool>();
  }
  std::string str() const {
    if (!j_->is_string()) fail("expected a string");
    return j_->get<std::string>();
  }

  Real real(const char* key, Real def) const { return has(key) ? at(key).real() : def; }
  std::size_t size(const char* key, std::size_t def) const { return has(key) ? at(key).size() : def; }
  bool boolean(const char* key, bool def) const { return has(key) ? at(key).boolean() : def; }
  std::string str(const char* key, const std::string& def) const { return has(key) ? at(key).str() : def; }
  std::optional<Real> opt_real(const char* key) const {
    return has(key) ? std::optional<Real>(at(key).real()) : std::nullopt;
  }

  const std::string& path() const { return path_; }

 private:
  const json* j_;
  std::string path_;
};

// Runs `parse` on the string field and rewrites its error with the field path.
template <class F>
auto parse_enum(const Node& n, F&& parse) {
  const std::string s = n.str();
  try {
    return parse(s);
  } catch (const Error& e) {
    n.fail(e.what());
  }
}

fs::path resolve(const fs::path& base, const fs::path& p) { return p.is_absolute() || base.empty() ? p : base / p; }

fs::path path_field(const Node& n, const fs::path& base) {
  const std::string s = n.str();
  if (s.empty()) n.fail("expected a non-empty path");
  return resolve(base, s);
}

Real non_negative(const Node& n, const char* key, Real def) {
  const Real v = n.real(key, def);
  if (v < 0.0) n.at(key).fail("must be >= 0");
  return v;
}

std::vector<Real> parse_grid(const Node& n) {
  std::vector<Real> grid;
  const std::size_t count = n.array_size();
  if (count == 0) n.fail("grid must not be empty");
  for (std::size_t i = 0; i < count; ++i) {
    const Real v = n.index(i).real();
    if (v < 0.0) n.index(i).fail("strength must be >= 0");
    grid.push_back(v);
  }
  return grid;
}

OptimConfig parse_optimizer(const Node& n, Real default_lr) {
  OptimConfig o;
  o.learning_rate = default_lr;
  if (n.has("optimizer")) o.kind = parse_enum(n.at("optimizer"), parse_optim_kind);
  o.learning_rate = n.real("lr", o.learning_rate);
  if (!(o.learning_rate > 0.0)) n.at("lr").fail("must be > 0");
  o.momentum = n.real("momentum", o.momentum);
  return o;
}

RoaConfig parse_roa(const Node& parent) {
  RoaConfig r;
  if (!parent.has("roa")) return r;
  const Node n = parent.at("roa");
  n.expect_object({"height", "width", "stride", "candidates", "epsilon", "step", "iterations"});
  r.height = n.size("height", r.height);
  r.width = n.size("width", r.width);
  r.stride = n.size("stride", r.stride);
  r.candidates = n.size("candidates", r.candidates);
  const Real eps = non_negative(n, "epsilon", 127.5);
  const std::size_t iters = n.size("iterations", r.inner.iterations);
  const Real step = n.real("step", roa_default_step_255(iters));
  r.inner = AttackBudget::from_255(Norm::kInf, eps, step, iters);
  return r;
}

MaskSpec parse_mask(const Node& n, const fs::path& base) {
  MaskSpec m;
  n.expect_object({"pgm", "rectangles"});
  if (n.has("pgm")) m.pgm = path_field(n.at("pgm"), base);
  if (n.has("rectangles")) {
    const Node rects = n.at("rectangles");
    for (std::size_t i = 0; i < rects.array_size(); ++i) {
      const Node r = rects.index(i);
      if (r.array_size() != 4) r.fail("rectangle is [row, col, height, width]");
      m.rectangles.push_back({r.index(0).size(), r.index(1).size(), r.index(2).size(), r.index(3).size()});
    }
  }
  if (m.pgm && !m.rectangles.empty()) n.fail("give either pgm or rectangles, not both");
  return m;
}

AttackSpec parse_attack(const Node& n, const fs::path& base) {
  n.expect_object({"kind", "epsilon", "step", "keep_best", "roa", "search", "lr", "momentum", "start_colors",
                   "region", "target", "iterations", "epochs", "design_per_class", "mask"});
  AttackSpec a;
  a.kind = parse_enum(n.at("kind"), parse_attack_kind);
  a.epsilon_255 = non_negative(n, "epsilon", a.epsilon_255);
  a.step_255 = n.opt_real("step");
  a.keep_best = n.boolean("keep_best", a.keep_best);
  if (a.kind == AttackKind::kRoa) {
    a.roa = parse_roa(n);
    if (n.has("roa") && n.at("roa").has("step")) a.roa_step_255 = a.roa.inner.step * 255.0;
  }
  if (n.has("search")) a.search = parse_enum(n.at("search"), parse_roa_search);
  switch (a.kind) {
    case AttackKind::kEyeglass:
      a.eyeglass.learning_rate = n.real("lr", a.eyeglass.learning_rate);
      a.eyeglass.momentum = n.real("momentum", a.eyeglass.momentum);
      a.eyeglass.start_colors = n.size("start_colors", a.eyeglass.start_colors);
      break;
    case AttackKind::kSticker:
      a.sticker.learning_rate = n.real("lr", a.sticker.learning_rate);
      break;
    case AttackKind::kPatch:
      a.patch.learning_rate = n.real("lr", a.patch.learning_rate);
      a.patch.target = n.size("target", a.patch.target);
      a.patch.iterations = n.size("iterations", a.patch.iterations);
      a.patch.epochs = n.size("epochs", a.patch.epochs);
      a.patch.design_per_class = n.size("design_per_class", a.patch.design_per_class);
      break;
    default:
      break;
  }
  if (n.has("mask")) a.mask = parse_mask(n.at("mask"), base);
  return a;
}

DefenseSpec parse_defense(const Node& n, const fs::path& base, const std::string& default_id) {
  n.expect_object({"id", "kind", "checkpoint", "sigma", "samples"});
  DefenseSpec d;
  d.kind = n.has("kind") ? parse_enum(n.at("kind"), parse_defense_kind) : DefenseKind::kClean;
  d.id = n.str("id", n.has("kind") ? to_string(d.kind) : default_id);
  if (d.id.empty() || d.id.find_first_of(",\n\r") != std::string::npos) n.at("id").fail("id must be non-empty without commas");
  d.checkpoint = path_field(n.at("checkpoint"), base);
  d.sigma = non_negative(n, "sigma", d.sigma);
  d.samples = n.size("samples", d.samples);
  if (d.samples < 1) n.at("samples").fail("must be >= 1");
  return d;
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string effective_hash(const Config& c, json raw) {
  raw["seed"] = c.seed;
  raw["fast"] = c.fast;
  raw.erase("threads");
  return fnv1a_hex(raw.dump());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::uint64_t strength_key(Real strength) { return std::bit_cast<std::uint64_t>(strength); }

std::size_t iteration_count(Real strength) {
  if (strength != std::floor(strength) || strength > 1e9) {
    throw ConfigError("iteration strength must be a whole number, got " + format_value(strength));
  }
  return static_cast<std::size_t>(strength);
}

Tensor attack_one(const ModelParams& params, const Tensor& image, std::size_t label, const AttackSpec& attack,
                  Real strength, const Mask* mask, std::uint64_t seed) {
  const std::size_t iters = iteration_count(strength);
  switch (attack.kind) {
    case AttackKind::kPgdLinf:
    case AttackKind::kPgdL2: {
      const Norm norm = attack.kind == AttackKind::kPgdLinf ? Norm::kInf : Norm::kTwo;
      AttackBudget b = AttackBudget::from_255(norm, attack.epsilon_255, attack.step_255.value_or(attack.epsilon_255 / 4.0),
                                              iters);
      b.keep_best = attack.keep_best;
      return norm == Norm::kInf ? pgd_linf(params, image, label, b, mask).image
                                : pgd_l2(params, image, label, b, mask).image;
    }
    case AttackKind::kRoa: {
      RoaConfig cfg = attack.roa;
      cfg.inner.iterations = iters;
      cfg.inner.step = attack.roa_step_255.value_or(roa_default_step_255(iters)) / 255.0;
      cfg.inner.keep_best = attack.keep_best;
      return roa_attack(params, image, label, cfg, attack.search).attack.image;
    }
    case AttackKind::kEyeglass: {
      EyeglassConfig cfg = attack.eyeglass;
      cfg.iterations = iters;
      return eyeglass_attack(params, image, label, *mask, cfg, seed).image;
    }
    case AttackKind::kSticker: {
      StickerConfig cfg = attack.sticker;
      cfg.iterations = iters;
      return sticker_attack(params, image, label, *mask, cfg, seed).image;
    }
    case AttackKind::kPatch:
      break;
  }
  throw ContractError("attack_one does not handle patches");
}

void dump_images(const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    write_pnm(dir / name, from_tensor(data.image(i)));
  }
}

void write_training_log(const fs::path& path, const std::vector<std::tuple<std::size_t, Real, std::size_t, Real>>& rows) {
  std::string text = "stage,epsilon,epoch,loss\n";
  char buf[128];
  for (const auto& [stage, eps, epoch, loss] : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%s,%zu,%.17g\n", stage, format_value(eps).c_str(), epoch, loss);
    text += buf;
  }
  write_text(path, text);
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  return p.parent_path() / (p.stem().string() + suffix);
}

ModelParams load_defense(const DefenseSpec& d, const ConvNetSpec& spec) {
  if (!fs::exists(d.checkpoint)) throw IoError("checkpoint not found: " + d.checkpoint.string());
  return load_checkpoint(d.checkpoint, spec);
}

void write_report(const EvaluationReport& report, const fs::path& out) {
  write_report_csv(report, out);
  write_report_meta(report, fs::path(out.string() + ".meta.json"));
}

}  // namespace

const char* version() noexcept { return OCCLUDOX_VERSION; }

void tune_allocator() noexcept {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 512 << 20);
  mallopt(M_TOP_PAD, 64 << 20);
#endif
}

ExitCode exit_code_for(const std::exception& e) noexcept {
  if (dynamic_cast<const ConfigError*>(&e)) return ExitCode::kConfig;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e)) return ExitCode::kIo;
  if (dynamic_cast<const NumericError*>(&e)) return ExitCode::kNumeric;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return ExitCode::kIo;
  return ExitCode::kFailure;
}

AttackKind parse_attack_kind(const std::string& name) {
  if (name == "pgd-linf") return AttackKind::kPgdLinf;
  if (name == "pgd-l2") return AttackKind::kPgdL2;
  if (name == "roa") return AttackKind::kRoa;
  if (name == "eyeglass") return AttackKind::kEyeglass;
  if (name == "sticker") return AttackKind::kSticker;
  if (name == "patch") return AttackKind::kPatch;
  throw ConfigError("unknown attack '" + name + "' (expected pgd-linf, pgd-l2, roa, eyeglass, sticker or patch)");
}

const char* to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kPgdLinf: return "pgd-linf";
    case AttackKind::kPgdL2: return "pgd-l2";
    case AttackKind::kRoa: return "roa";
    case AttackKind::kEyeglass: return "eyeglass";
    case AttackKind::kSticker: return "sticker";
    case AttackKind::kPatch: return "patch";
  }
  return "?";
}

DefenseKind parse_defense_kind(const std::string& name) {
  if (name == "clean") return DefenseKind::kClean;
  if (name == "at") return DefenseKind::kAt;
  if (name == "cat") return DefenseKind::kCat;
  if (name == "doa-exh") return DefenseKind::kDoaExh;
  if (name == "doa-grad") return DefenseKind::kDoaGrad;
  if (name == "rs") return DefenseKind::kRs;
  throw ConfigError("unknown defense '" + name + "' (expected clean, at, cat, doa-exh, doa-grad or rs)");
}

const char* to_string(DefenseKind kind) {
  switch (kind) {
    case DefenseKind::kClean: return "clean";
    case DefenseKind::kAt: return "at";
    case DefenseKind::kCat: return "cat";
    case DefenseKind::kDoaExh: return "doa-exh";
    case DefenseKind::kDoaGrad: return "doa-grad";
    case DefenseKind::kRs: return "rs";
  }
  return "?";
}

TrainMethod parse_train_method(const std::string& name) {
  if (name == "clean") return TrainMethod::kClean;
  if (name == "at") return TrainMethod::kAt;
  if (name == "cat") return TrainMethod::kCat;
  if (name == "doa") return TrainMethod::kDoa;
  if (name == "rs-noise") return TrainMethod::kRsNoise;
  throw ConfigError("unknown method '" + name + "' (expected clean, at, cat, doa or rs-noise)");
}

const char* to_string(TrainMethod method) {
  switch (method) {
    case TrainMethod::kClean: return "clean";
    case TrainMethod::kAt: return "at";
    case TrainMethod::kCat: return "cat";
    case TrainMethod::kDoa: return "doa";
    case TrainMethod::kRsNoise: return "rs-noise";
  }
  return "?";
}

Mask default_eyeglass_mask(std::size_t height, std::size_t width) {
  Mask m(height, width);
  const std::size_t t = std::max<std::size_t>(1, height / 32);  // frame thickness
  const std::size_t top = height * 9 / 32, bottom = height * 15 / 32;
  const std::size_t l0 = width * 4 / 32, l1 = width * 14 / 32, r0 = width * 18 / 32, r1 = width * 28 / 32;
  for (auto [c0, c1] : {std::pair{l0, l1}, std::pair{r0, r1}}) {
    m.add_rectangle(top, c0, t, c1 - c0);
    m.add_rectangle(bottom - t, c0, t, c1 - c0);
    m.add_rectangle(top, c0, bottom - top, t);
    m.add_rectangle(top, c1 - t, bottom - top, t);
  }
  m.add_rectangle(top + t, l1, t, r0 - l1);  // bridge
  return m;
}

Mask default_sticker_mask(std::size_t height, std::size_t width) {
  Mask m(height, width);
  const std::size_t bar_h = std::max<std::size_t>(1, height * 3 / 32);
  const std::size_t c0 = width * 8 / 32, c1 = width * 24 / 32;
  m.add_rectangle(height * 7 / 32, c0, bar_h, c1 - c0);
  m.add_rectangle(height * 22 / 32, c0, bar_h, c1 - c0);
  return m;
}

const char* AttackSpec::param_name() const noexcept { return kind == AttackKind::kPatch ? "region" : "iterations"; }

std::optional<Mask> AttackSpec::resolve_mask(std::size_t height, std::size_t width) const {
  if (mask.pgm) return load_mask_pgm(*mask.pgm, height, width);
  if (!mask.rectangles.empty()) {
    Mask m(height, width);
    for (const auto& r : mask.rectangles) m.add_rectangle(r[0], r[1], r[2], r[3]);
    return m;
  }
  if (kind == AttackKind::kEyeglass) return default_eyeglass_mask(height, width);
  if (kind == AttackKind::kSticker) return default_sticker_mask(height, width);
  return std::nullopt;
}

ConvNetSpec Config::model_spec() const {
  ConvNetSpec spec = model ? *model : ConvNetSpec::desk_default(data.classes);
  spec.height = spec.width = data.side;
  spec.validate();
  return spec;
}

Config parse_config(const std::string& json_text, const fs::path& base) {
  json raw;
  try {
    raw = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid JSON: ") + e.what(), "$");
  }
  const Node root(raw, "$");
  root.expect_object({"seed", "threads", "fast", "data", "model", "train", "attack", "sweep", "smooth"});
  Config c;
  c.seed = root.has("seed") ? root.at("seed").u64() : c.seed;
  c.threads = root.size("threads", c.threads);
  if (c.threads < 1) root.at("threads").fail("must be >= 1");
  c.fast = root.boolean("fast", c.fast);

  if (root.has("data")) {
    const Node n = root.at("data");
    n.expect_object({"dir", "seed", "classes", "per_class", "side"});
    if (n.has("dir")) c.data.dir = path_field(n.at("dir"), base);
    if (n.has("seed")) c.data.seed = n.at("seed").u64();
    c.data.classes = n.size("classes", c.data.classes);
    c.data.per_class = n.size("per_class", c.data.per_class);
    c.data.side = n.size("side", c.data.side);
    if (c.data.classes < 2 || c.data.classes > 32) n.at("classes").fail("must be in [2, 32]");
    if (c.data.per_class < 1) n.at("per_class").fail("must be >= 1");
    if (c.data.side != 16 && c.data.side != 32 && c.data.side != 64) n.at("side").fail("must be 16, 32 or 64");
  }

  if (root.has("model")) {
    const Node n = root.at("model");
    n.expect_object({"conv", "dense"});
    ConvNetSpec spec = ConvNetSpec::desk_default(c.data.classes);
    if (n.has("conv")) {
      const Node conv = n.at("conv");
      spec.conv.clear();
      for (std::size_t i = 0; i < conv.array_size(); ++i) {
        ConvLayerSpec layer;
        layer.out_channels = conv.index(i).size();
        if (layer.out_channels < 1) conv.index(i).fail("must be >= 1");
        spec.conv.push_back(layer);
      }
    }
    if (n.has("dense")) {
      const Node dense = n.at("dense");
      spec.dense.clear();
      for (std::size_t i = 0; i < dense.array_size(); ++i) {
        spec.dense.push_back(dense.index(i).size());
        if (spec.dense.back() < 1) dense.index(i).fail("must be >= 1");
      }
    }
    spec.height = spec.width = c.data.side;
    try {
      spec.validate();
    } catch (const Error& e) {
      n.fail(e.what());
    }
    c.model = spec;
  }

  if (root.has("train")) {
    const Node n = root.at("train");
    n.expect_object({"method", "epochs", "batch_size", "optimizer", "lr", "momentum", "init", "norm", "epsilon", "step",
                     "iterations", "start_epsilon", "target_epsilon", "roa", "search", "sigma", "out", "log"});
    TrainSpec& t = c.train;
    if (n.has("method")) t.method = parse_enum(n.at("method"), parse_train_method);
    const bool doa = t.method == TrainMethod::kDoa;
    t.epochs = n.size("epochs", doa ? 5 : 10);
    if (t.epochs < 1) n.at("epochs").fail("must be >= 1");
    t.batch_size = n.size("batch_size", t.batch_size);
    if (t.batch_size < 1) n.at("batch_size").fail("must be >= 1");
    t.optimizer = parse_optimizer(n, doa ? 1e-4 : 1e-3);
    if (n.has("init")) t.init = path_field(n.at("init"), base);
    if (n.has("norm")) {
      const std::string norm = n.at("norm").str();
      if (norm == "inf") t.norm = Norm::kInf;
      else if (norm == "2") t.norm = Norm::kTwo;
      else n.at("norm").fail("expected \"inf\" or \"2\"");
    }
    t.epsilon_255 = non_negative(n, "epsilon", t.epsilon_255);
    t.step_255 = n.opt_real("step");
    t.iterations = n.size("iterations", t.iterations);
    t.start_epsilon_255 = n.real("start_epsilon", t.start_epsilon_255);
    t.target_epsilon_255 = n.real("target_epsilon", t.target_epsilon_255);
    if (t.method == TrainMethod::kCat) {
      try {
        curriculum_schedule(t.start_epsilon_255, t.target_epsilon_255);
      } catch (const ConfigError& e) {
        n.at(n.has("target_epsilon") ? "target_epsilon" : "start_epsilon").fail(e.what());
      }
    }
    t.roa = parse_roa(n);
    try {
      t.roa.validate(c.data.side, c.data.side);
    } catch (const Error& e) {
      throw ConfigError(e.what(), n.path() + ".roa");
    }
    if (n.has("search")) t.search = parse_enum(n.at("search"), parse_roa_search);
    t.sigma = non_negative(n, "sigma", t.sigma);
    if (n.has("out")) t.out = path_field(n.at("out"), base);
    else t.out = resolve(base, t.out);
    if (n.has("log")) t.log = path_field(n.at("log"), base);
  } else {
    c.train.out = resolve(base, c.train.out);
    c.train.optimizer.learning_rate = 1e-3;
  }

  c.attack.defense.checkpoint = resolve(base, c.attack.defense.checkpoint);
  c.attack.out = resolve(base, c.attack.out);
  if (root.has("attack")) {
    const Node n = root.at("attack");
    n.expect_object({"defense", "attack", "grid", "out", "dump"});
    if (n.has("defense")) c.attack.defense = parse_defense(n.at("defense"), base, "model");
    c.attack.attack = parse_attack(n.at("attack"), base);
    if (n.has("grid")) c.attack.grid = parse_grid(n.at("grid"));
    if (n.has("out")) c.attack.out = path_field(n.at("out"), base);
    if (n.has("dump")) c.attack.dump = path_field(n.at("dump"), base);
  }

  c.sweep.out = resolve(base, c.sweep.out);
  if (root.has("sweep")) {
    const Node n = root.at("sweep");
    n.expect_object({"defenses", "attack", "grid", "out"});
    const Node defs = n.at("defenses");
    if (defs.array_size() == 0) defs.fail("needs at least one defense");
    for (std::size_t i = 0; i < defs.array_size(); ++i) {
      c.sweep.defenses.push_back(parse_defense(defs.index(i), base, "defense" + std::to_string(i)));
      for (std::size_t k = 0; k < i; ++k) {
        if (c.sweep.defenses[k].id == c.sweep.defenses[i].id) defs.index(i).fail("duplicate defense id");
      }
    }
    c.sweep.attack = parse_attack(n.at("attack"), base);
    if (n.has("grid")) c.sweep.grid = parse_grid(n.at("grid"));
    if (n.has("out")) c.sweep.out = path_field(n.at("out"), base);
  }

  c.smooth.checkpoint = resolve(base, c.smooth.checkpoint);
  c.smooth.out = resolve(base, c.smooth.out);
  if (root.has("smooth")) {
    const Node n = root.at("smooth");
    n.expect_object({"checkpoint", "sigma", "samples", "out"});
    if (n.has("checkpoint")) c.smooth.checkpoint = path_field(n.at("checkpoint"), base);
    c.smooth.sigma = non_negative(n, "sigma", c.smooth.sigma);
    c.smooth.samples = n.size("samples", c.smooth.samples);
    if (c.smooth.samples < 1) n.at("samples").fail("must be >= 1");
    if (n.has("out")) c.smooth.out = path_field(n.at("out"), base);
  }

  c.raw_json = raw.dump();
  c.hash = effective_hash(c, raw);
  return c;
}

Config load_config(const fs::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::string(bytes.begin(), bytes.end()), path.parent_path());
}

void apply_overrides(Config& config, const Overrides& o) {
  if (o.seed) config.seed = *o.seed;
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("--threads must be >= 1");
    config.threads = *o.threads;
  }
  if (o.fast) config.fast = true;
  config.hash = effective_hash(config, json::parse(config.raw_json));
}

std::vector<Real> default_grid(AttackKind kind, bool fast) {
  if (kind == AttackKind::kPatch) return {0.0, 0.05, 0.10, 0.15, 0.20, 0.25};
  if (fast) return {0.0, 10.0, 50.0};
  return {0.0, 10.0, 100.0, 1000.0};
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_index = n;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (i < failed_index) {
            failed_index = i;
            failure = std::current_exception();
          }
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<std::size_t> defense_predictions(const ModelParams& params, const DefenseSpec& defense,
                                             const Dataset& data, std::uint64_t seed, std::size_t threads) {
  std::vector<std::size_t> pred(data.size());
  if (defense.kind == DefenseKind::kRs) {
    parallel_for(data.size(), threads, [&](std::size_t i) {
      const SmoothingConfig cfg{defense.sigma, defense.samples, derive_seed(seed, kSmoothStream, i)};
      pred[i] = smoothed_predict(params, data.image(i), cfg).label;
    });
    return pred;
  }
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (data.size() + kChunk - 1) / kChunk;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t start = c * kChunk, end = std::min(data.size(), start + kChunk);
    std::vector<Tensor> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(data.image(i));
    const auto p = predict_classes(params, stack(rows));
    std::copy(p.begin(), p.end(), pred.begin() + static_cast<std::ptrdiff_t>(start));
  });
  return pred;
}

double prediction_accuracy(std::span<const std::size_t> predictions, const Dataset& data) {
  if (data.size() == 0) throw ContractError("accuracy of an empty dataset");
  if (predictions.size() != data.size()) throw ContractError("prediction count differs from dataset size");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) correct += predictions[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

Dataset attack_eval_set(const Dataset& test, const AttackSpec& attack) {
  if (attack.kind != AttackKind::kPatch) return test;
  Dataset out = test.without_class(attack.patch.target);
  if (out.size() == 0) throw ContractError("no test images outside the patch target class");
  return out;
}

Dataset attack_dataset(const ModelParams& params, const Dataset& eval_set, const AttackSpec& attack, Real strength,
                       const EvalContext& ctx) {
  if (!(strength >= 0.0)) throw ConfigError("attack strength must be >= 0");
  if (strength == 0.0) return eval_set;
  if (attack.kind == AttackKind::kPatch) {
    if (!ctx.train) throw ContractError("patch attack needs training images for its design set");
    PatchConfig cfg = attack.patch;
    cfg.region = strength;
    const Dataset design = patch_design_set(*ctx.train, cfg.target, cfg.design_per_class);
    const Tensor patch = patch_train(params, design, cfg, derive_seed(ctx.seed, kPatchStream, strength_key(strength)));
    return apply_patch_randomly(eval_set, patch, derive_seed(ctx.seed, kPatchPlaceStream, strength_key(strength)));
  }
  const Shape dims = eval_set.image_dims();
  const std::optional<Mask> mask = attack.resolve_mask(dims[1], dims[2]);
  Dataset out = eval_set;
  parallel_for(eval_set.size(), ctx.threads, [&](std::size_t i) {
    const Tensor adv = attack_one(params, eval_set.image(i), eval_set.labels[i], attack, strength,
                                  mask ? &*mask : nullptr, derive_seed(ctx.seed, kAttackStream, i));
    out.images.set_slice(i, adv);
  });
  return out;
}

std::vector<EvaluationRow> evaluate_defense(const ModelParams& params, const DefenseSpec& defense,
                                            const Dataset& test, const AttackSpec& attack,
                                            std::span<const Real> grid, const EvalContext& ctx) {
  const Dataset eval_set = attack_eval_set(test, attack);
  std::vector<EvaluationRow> rows;
  for (Real strength : grid) {
    const auto t0 = std::chrono::steady_clock::now();
    const Dataset attacked = attack_dataset(params, eval_set, attack, strength, ctx);
    if (ctx.dump_dir && strength > 0.0) {
      dump_images(attacked, *ctx.dump_dir / (std::string(attack.param_name()) + "-" + format_value(strength)));
    }
    const auto pred = defense_predictions(params, defense, attacked, ctx.seed, ctx.threads);
    EvaluationRow row{defense.id, to_string(attack.kind), attack.param_name(), strength,
                      prediction_accuracy(pred, attacked), 0.0};
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    logger()->info("{} {} {}={} accuracy={:.4f} ({:.1f}s)", row.defense, row.attack, row.param,
                   format_value(strength), row.accuracy, row.wall_seconds);
    rows.push_back(std::move(row));
  }
  return rows;
}

Splits load_data(const Config& config) {
  if (!config.data.dir) {
    auto s = gen_synthetic_signs(config.data_seed(), config.data.classes, config.data.per_class, config.data.side);
    return {std::move(s.train), std::move(s.val), std::move(s.test)};
  }
  const fs::path& dir = *config.data.dir;
  if (!fs::is_directory(dir)) throw IoError("data directory not found: " + dir.string() + " (run gen-data first)");
  auto load = [&](const char* name, Split split) {
    Dataset d = load_image_dir(dir / name, dir / name / "labels.csv", config.data.classes);
    d.split = split;
    return d;
  };
  return {load("train", Split::kTrain), load("val", Split::kVal), load("test", Split::kTest)};
}

void cmd_gen_data(const Config& config, const fs::path& out_dir, bool force) {
  if (fs::exists(out_dir)) {
    if (!fs::is_directory(out_dir)) throw IoError("output path exists and is not a directory: " + out_dir.string());
    if (!fs::is_empty(out_dir) && !force) {
      throw IoError("output directory is not empty: " + out_dir.string() + " (use --force to overwrite)");
    }
  }
  const auto s = gen_synthetic_signs(config.data_seed(), config.data.classes, config.data.per_class, config.data.side);
  for (const auto& [name, data] : {std::pair{"train", &s.train}, std::pair{"val", &s.val}, std::pair{"test", &s.test}}) {
    const fs::path dir = out_dir / name;
    if (fs::exists(dir)) fs::remove_all(dir);
    save_image_dir(*data, dir);
  }
  logger()->info("wrote {} train / {} val / {} test images to {}", s.train.size(), s.val.size(), s.test.size(),
                 out_dir.string());
}

std::vector<fs::path> cmd_train(const Config& config) {
  const TrainSpec& t = config.train;
  const ConvNetSpec spec = config.model_spec();
  const Splits data = load_data(config);

  TrainConfig cfg;
  cfg.epochs = t.epochs;
  cfg.batch_size = t.batch_size;
  cfg.optimizer = t.optimizer;
  cfg.seed = config.seed;
  if (t.init) cfg.init = load_checkpoint(*t.init, spec);

  std::vector<std::tuple<std::size_t, Real, std::size_t, Real>> log_rows;
  std::size_t stage = 0;
  Real stage_eps = 0.0;
  const EpochCallback on_epoch = [&](std::size_t epoch, Real loss) {
    log_rows.emplace_back(stage, stage_eps, epoch, loss);
    logger()->info("{} stage {} epoch {} loss {:.6f}", to_string(t.method), stage, epoch, loss);
  };

  std::vector<fs::path> written;
  if (!t.out.parent_path().empty()) fs::create_directories(t.out.parent_path());
  switch (t.method) {
    case TrainMethod::kClean:
      save_checkpoint(clean_train(spec, data.train, cfg, on_epoch).params, t.out);
      break;
    case TrainMethod::kAt: {
      stage_eps = t.epsilon_255;
      AttackBudget b = AttackBudget::from_255(t.norm, t.epsilon_255, t.step_255.value_or(t.epsilon_255 / 4.0),
                                              t.iterations);
      save_checkpoint(adversarial_train(spec, data.train, cfg, b, on_epoch).params, t.out);
      break;
    }
    case TrainMethod::kCat: {
      const AttackBudget b = AttackBudget::from_255(t.norm, t.start_epsilon_255, t.start_epsilon_255 / 4.0, t.iterations);
      const auto schedule = curriculum_schedule(t.start_epsilon_255, t.target_epsilon_255);
      stage_eps = schedule.front();
      const EpochCallback staged = [&](std::size_t epoch, Real loss) {
        if (epoch == 0 && !log_rows.empty()) stage_eps = schedule[++stage];
        on_epoch(epoch, loss);
      };
      const auto stages =
          curriculum_adversarial_train(spec, data.train, cfg, b, t.start_epsilon_255, t.target_epsilon_255, staged);
      for (const auto& st : stages) {
        const fs::path p = with_suffix(t.out, ".eps" + format_value(st.epsilon_255) + t.out.extension().string());
        save_checkpoint(st.result.params, p);
        written.push_back(p);
      }
      save_checkpoint(stages.back().result.params, t.out);
      break;
    }
    case TrainMethod::kDoa:
      save_checkpoint(doa_train(spec, data.train, cfg, t.roa, t.search, on_epoch).params, t.out);
      break;
    case TrainMethod::kRsNoise:
      stage_eps = t.sigma;
      save_checkpoint(gaussian_noise_train(spec, data.train, cfg, t.sigma, on_epoch).params, t.out);
      break;
  }
  written.push_back(t.out);
  write_training_log(t.log.value_or(with_suffix(t.out, ".log.csv")), log_rows);
  return written;
}

EvaluationReport cmd_attack(const Config& config) {
  const EvalSpec& e = config.attack;
  const ConvNetSpec spec = config.model_spec();
  const ModelParams params = load_defense(e.defense, spec);
  const Splits data = load_data(config);
  const std::vector<Real> grid = e.grid.empty() ? default_grid(e.attack.kind, config.fast) : e.grid;
  EvalContext ctx{&data.train, config.seed, config.threads, e.dump};
  EvaluationReport report;
  report.rows = evaluate_defense(params, e.defense, data.test, e.attack, grid, ctx);
  report.seed = config.seed;
  report.config_hash = config.hash;
  report.version = version();
  write_report(report, e.out);
  return report;
}

EvaluationReport cmd_sweep(const Config& config) {
  const SweepSpec& s = config.sweep;
  if (s.defenses.empty()) throw ConfigError("sweep needs at least one defense", "$.sweep.defenses");
  const ConvNetSpec spec = config.model_spec();
  // Every checkpoint is loaded before any evaluation starts.
  std::vector<ModelParams> params;
  for (const auto& d : s.defenses) params.push_back(load_defense(d, spec));
  const Splits data = load_data(config);
  const std::vector<Real> grid = s.grid.empty() ? default_grid(s.attack.kind, config.fast) : s.grid;
  EvalContext ctx{&data.train, config.seed, config.threads, std::nullopt};
  EvaluationReport report;
  for (std::size_t i = 0; i < s.defenses.size(); ++i) {
    auto rows = evaluate_defense(params[i], s.defenses[i], data.test, s.attack, grid, ctx);
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  report.seed = config.seed;
  report.config_hash = config.hash;
  report.version = version();
  write_report(report, s.out);
  return report;
}

double cmd_smooth_predict(const Config& config) {
  const SmoothSpec& s = config.smooth;
  const ConvNetSpec spec = config.model_spec();
  const DefenseSpec defense{"rs", DefenseKind::kRs, s.checkpoint, s.sigma, s.samples};
  const ModelParams params = load_defense(defense, spec);
  const Splits data = load_data(config);
  const auto pred = defense_predictions(params, defense, data.test, config.seed, config.threads);
  std::string text = "index,label,prediction\n";
  for (std::size_t i = 0; i < pred.size(); ++i) {
    text += std::to_string(i) + ',' + std::to_string(data.test.labels[i]) + ',' + std::to_string(pred[i]) + '\n';
  }
  write_text(s.out, text);
  const double acc = prediction_accuracy(pred, data.test);
  logger()->info("smoothed accuracy (sigma={}, samples={}): {:.4f}", format_value(s.sigma), s.samples, acc);
  return acc;
}

void cmd_plot(const fs::path& report_csv, const fs::path& out_svg) {
  const auto bytes = read_file_bytes(report_csv);
  const auto rows = parse_report_csv(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  if (rows.empty()) throw FormatError("report " + report_csv.string() + " has no data rows", bytes.size());
  write_text(out_svg, render_svg(rows));
}

}  // namespace occludox::harness
