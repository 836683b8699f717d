#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

/// Per-pixel attackable region, shared by every channel of an image.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t height, std::size_t width, bool fill = false);

  static Mask full(std::size_t height, std::size_t width) { return Mask(height, width, true); }
  /// True exactly inside the rectangle; BoundsError if it leaves the grid.
  static Mask rectangle(std::size_t height, std::size_t width, std::size_t top, std::size_t left, std::size_t rect_h,
                        std::size_t rect_w);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t count() const noexcept { return count_; }
  bool empty() const noexcept { return count_ == 0; }

  bool at(std::size_t row, std::size_t col) const { return cells_[row * width_ + col] != 0; }
  void set(std::size_t row, std::size_t col, bool value);
  /// Adds the rectangle to the mask; BoundsError if it leaves the grid.
  void add_rectangle(std::size_t top, std::size_t left, std::size_t rect_h, std::size_t rect_w);

  /// ShapeError unless the image is [C, height, width].
  void check_fits(const Tensor& image) const;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t count_ = 0;
  std::vector<std::uint8_t> cells_;
};

/// P5 greymap, maxval 255; a pixel >= 128 is attackable. ShapeError when the
/// greymap is not height x width, FormatError on a malformed header.
Mask load_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width);
void save_mask_pgm(const Mask& mask, const std::filesystem::path& path);

}  // namespace occludox
