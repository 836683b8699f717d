#include "occludox/mask.hpp"

#include "occludox/error.hpp"
#include "occludox/pnm.hpp"

namespace occludox {

Mask::Mask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), count_(fill ? height * width : 0), cells_(height * width, fill ? 1 : 0) {}

Mask Mask::rectangle(std::size_t height, std::size_t width, std::size_t top, std::size_t left, std::size_t rect_h,
                     std::size_t rect_w) {
  Mask m(height, width);
  m.add_rectangle(top, left, rect_h, rect_w);
  return m;
}

void Mask::set(std::size_t row, std::size_t col, bool value) {
  if (row >= height_ || col >= width_) throw BoundsError("mask cell outside the grid");
  auto& cell = cells_[row * width_ + col];
  if (static_cast<bool>(cell) != value) {
    count_ = value ? count_ + 1 : count_ - 1;
    cell = value ? 1 : 0;
  }
}

void Mask::add_rectangle(std::size_t top, std::size_t left, std::size_t rect_h, std::size_t rect_w) {
  if (top + rect_h > height_ || left + rect_w > width_) {
    throw BoundsError("rectangle at (" + std::to_string(top) + "," + std::to_string(left) + ") size " +
                      std::to_string(rect_h) + "x" + std::to_string(rect_w) + " leaves a " + std::to_string(height_) +
                      "x" + std::to_string(width_) + " grid");
  }
  for (std::size_t r = top; r < top + rect_h; ++r) {
    for (std::size_t c = left; c < left + rect_w; ++c) set(r, c, true);
  }
}

void Mask::check_fits(const Tensor& image) const {
  if (image.rank() != 3 || image.dim(1) != height_ || image.dim(2) != width_) {
    throw ShapeError("mask " + std::to_string(height_) + "x" + std::to_string(width_) + " does not fit image " +
                     to_string(image.dims()));
  }
}

Mask load_mask_pgm(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  const PnmImage img = read_pnm(path);
  if (img.channels != 1) throw FormatError(path.string() + ": mask must be a P5 greymap", 0);
  if (img.height != height || img.width != width) {
    throw ShapeError("mask '" + path.string() + "' is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                     ", images are " + std::to_string(height) + "x" + std::to_string(width));
  }
  Mask m(height, width);
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      if (img.pixels[r * width + c] >= 128) m.set(r, c, true);
    }
  }
  return m;
}

void save_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  PnmImage img{mask.width(), mask.height(), 1, {}};
  img.pixels.resize(mask.width() * mask.height());
  for (std::size_t r = 0; r < mask.height(); ++r) {
    for (std::size_t c = 0; c < mask.width(); ++c) img.pixels[r * mask.width() + c] = mask.at(r, c) ? 255 : 0;
  }
  write_pnm(path, img);
}

}  // namespace occludox
