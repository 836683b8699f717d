#include "occludox/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "occludox/error.hpp"
#include "occludox/pnm.hpp"
#include "occludox/rng.hpp"

namespace occludox {
namespace {

constexpr std::array<std::array<Real, 3>, 8> kPalette = {{
    {0.85, 0.12, 0.12},  // red
    {0.12, 0.70, 0.20},  // green
    {0.15, 0.25, 0.90},  // blue
    {0.92, 0.85, 0.10},  // yellow
    {0.80, 0.20, 0.80},  // magenta
    {0.10, 0.80, 0.80},  // cyan
    {0.97, 0.97, 0.97},  // white
    {0.04, 0.04, 0.04},  // black
}};
constexpr std::array<const char*, 8> kColorNames = {"red", "green", "blue", "yellow", "magenta", "cyan", "white", "black"};
constexpr std::array<const char*, 4> kShapeNames = {"disc", "bars", "triangle", "cross"};
constexpr Real kNoiseAmplitude = 0.05;
constexpr std::uint64_t kImageStream = 1;

bool glyph_contains(std::size_t shape, Real u, Real v) {
  switch (shape) {
    case 0:
      return u * u + v * v <= 0.36;
    case 1:
      return std::abs(v) <= 0.65 && std::abs(u) <= 0.75 &&
             static_cast<long>(std::floor((u + 0.75) / 0.3)) % 2 == 0;
    case 2:
      return v >= -0.7 && v <= 0.6 && std::abs(u) <= (v + 0.7) * 0.55;
    default:
      return (std::abs(u) <= 0.22 && std::abs(v) <= 0.72) || (std::abs(v) <= 0.22 && std::abs(u) <= 0.72);
  }
}

Tensor render_sign(std::size_t cls, std::size_t side, SplitMix64& rng) {
  const std::size_t shape = cls % kShapeNames.size();
  const auto& color = kPalette[(cls / kShapeNames.size()) % kPalette.size()];
  const Real cx = rng.uniform(-0.1, 0.1);
  const Real cy = rng.uniform(-0.1, 0.1);
  const Real sc = rng.uniform(0.85, 1.05);
  const Real base = rng.uniform(0.35, 0.65);
  std::array<Real, 3> bg{};
  for (auto& b : bg) b = base + rng.uniform(-0.05, 0.05);

  Tensor img(Shape{3, side, side});
  const Real s = static_cast<Real>(side);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    for (std::size_t y = 0; y < side; ++y) {
      for (std::size_t x = 0; x < side; ++x) {
        const Real u = (2.0 * (static_cast<Real>(x) + 0.5) / s - 1.0 - cx) / sc;
        const Real v = (2.0 * (static_cast<Real>(y) + 0.5) / s - 1.0 - cy) / sc;
        const Real p = glyph_contains(shape, u, v) ? color[ch] : bg[ch];
        img[(ch * side + y) * side + x] = std::clamp(p + rng.uniform(-kNoiseAmplitude, kNoiseAmplitude), 0.0, 1.0);
      }
    }
  }
  return img;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

}  // namespace

const char* to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

Shape Dataset::image_dims() const {
  if (images.rank() != 4) return {};
  return {images.dim(1), images.dim(2), images.dim(3)};
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.class_names = class_names;
  out.split = split;
  Shape dims{indices.size()};
  const Shape inner = image_dims();
  dims.insert(dims.end(), inner.begin(), inner.end());
  out.images = Tensor(dims);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    out.images.set_slice(k, images.slice(indices[k]));
    out.labels.push_back(labels.at(indices[k]));
  }
  return out;
}

Dataset Dataset::without_class(std::size_t label) const {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < size(); ++i) {
    if (labels[i] != label) keep.push_back(i);
  }
  return subset(keep);
}

void Dataset::validate() const {
  if (images.rank() != 4) throw ContractError("dataset images must be [N,C,H,W]");
  if (images.dim(0) != labels.size()) throw ContractError("dataset image count differs from label count");
  for (std::size_t l : labels) {
    if (l >= class_count()) throw ContractError("dataset label " + std::to_string(l) + " >= class count");
  }
  for (Real v : images.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset pixel outside [0,1]");
  }
}

SplitSizes split_sizes(std::size_t n) {
  const std::size_t train = n * 7 / 10;
  const std::size_t val = n * 2 / 10;
  return {train, val, n - train - val};
}

DatasetSplits gen_synthetic_signs(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t side) {
  if (classes < 2 || classes > 32) throw ConfigError("classes must be in [2, 32], got " + std::to_string(classes));
  if (side != 16 && side != 32 && side != 64) throw ConfigError("side must be 16, 32 or 64, got " + std::to_string(side));
  if (per_class < 1) throw ConfigError("per_class must be >= 1");

  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) {
    names.push_back(std::string(kShapeNames[c % kShapeNames.size()]) + "-" +
                    kColorNames[(c / kShapeNames.size()) % kColorNames.size()]);
  }
  const std::size_t n = classes * per_class;
  const SplitSizes sizes = split_sizes(n);

  auto make = [&](std::size_t begin, std::size_t count, Split split) {
    Dataset d;
    d.class_names = names;
    d.split = split;
    d.images = Tensor(Shape{count, 3, side, side});
    for (std::size_t k = 0; k < count; ++k) {
      const std::size_t i = begin + k;
      SplitMix64 rng(derive_seed(seed, kImageStream, i));
      d.images.set_slice(k, render_sign(i % classes, side, rng));
      d.labels.push_back(i % classes);
    }
    return d;
  };
  return {make(0, sizes.train, Split::kTrain), make(sizes.train, sizes.val, Split::kVal),
          make(sizes.train + sizes.val, sizes.test, Split::kTest)};
}

Dataset load_image_dir(const std::filesystem::path& dir, const std::filesystem::path& labels_csv,
                       std::size_t class_count) {
  std::ifstream in(labels_csv);
  if (!in) throw IoError("cannot open labels file '" + labels_csv.string() + "'");
  std::vector<Tensor> images;
  std::vector<std::size_t> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) {
      throw IoError(labels_csv.string() + ":" + std::to_string(line_no) + ": expected 'filename,label'");
    }
    const std::string name = trim(line.substr(0, comma));
    const std::string label_text = trim(line.substr(comma + 1));
    std::size_t label = 0;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(label_text, &used);
      if (used != label_text.size() || v < 0) throw std::invalid_argument("label");
      label = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw IoError(labels_csv.string() + ":" + std::to_string(line_no) + ": bad label '" + label_text + "'");
    }
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw IoError("image file '" + path.string() + "' listed in labels does not exist");
    Tensor img;
    try {
      img = to_tensor(read_pnm(path));
    } catch (const FormatError& e) {
      throw IoError(std::string("malformed image: ") + e.what());
    }
    if (!images.empty() && img.dims() != images.front().dims()) {
      throw IoError("image '" + path.string() + "' has dims " + to_string(img.dims()) + ", expected " +
                    to_string(images.front().dims()));
    }
    images.push_back(std::move(img));
    labels.push_back(label);
  }
  if (images.empty()) throw IoError("labels file '" + labels_csv.string() + "' lists no images");

  Dataset d;
  d.images = stack(images);
  d.labels = std::move(labels);
  std::size_t k = class_count;
  if (k == 0) k = std::max<std::size_t>(2, *std::max_element(d.labels.begin(), d.labels.end()) + 1);
  for (std::size_t c = 0; c < k; ++c) d.class_names.push_back("class" + std::to_string(c));
  for (std::size_t l : d.labels) {
    if (l >= k) throw IoError("label " + std::to_string(l) + " in '" + labels_csv.string() + "' exceeds class count");
  }
  return d;
}

void save_image_dir(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream csv;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%05zu.ppm", i);
    write_pnm(dir / name, from_tensor(data.image(i)));
    csv << name << ',' << data.labels[i] << '\n';
  }
  const std::string text = csv.str();
  write_file_bytes(dir / "labels.csv", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace occludox
