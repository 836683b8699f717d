#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

enum class Split { kTrain, kVal, kTest };

const char* to_string(Split split);

/// Labelled image batch. Images are [N,C,H,W] with pixels in [0,1].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  Split split = Split::kTrain;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t class_count() const noexcept { return class_names.size(); }
  Shape image_dims() const;
  Tensor image(std::size_t i) const { return images.slice(i); }

  /// Rows `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const;
  /// Every row whose label differs from `label`.
  Dataset without_class(std::size_t label) const;

  /// Throws ContractError when counts disagree, a label is out of range or
  /// a pixel leaves [0,1].
  void validate() const;
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
};

/// Split sizes for `n` rows: floor(0.7 n), floor(0.2 n), remainder.
struct SplitSizes {
  std::size_t train, val, test;
};
SplitSizes split_sizes(std::size_t n);

/// Procedural traffic-sign-like glyphs. Image i has class i % classes, so
/// splitting by index keeps classes balanced. classes in [2,32],
/// side in {16,32,64}, per_class >= 1; ConfigError otherwise.
DatasetSplits gen_synthetic_signs(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t side);

/// Loads binary P6 images listed in a "filename,label" CSV (paths relative to
/// `dir`). Rows keep CSV order; pixels are scaled by 1/255.
Dataset load_image_dir(const std::filesystem::path& dir, const std::filesystem::path& labels_csv,
                       std::size_t class_count = 0);

/// Writes `<dir>/NNNNN.ppm` for each row plus `<dir>/labels.csv`.
void save_image_dir(const Dataset& data, const std::filesystem::path& dir);

}  // namespace occludox
