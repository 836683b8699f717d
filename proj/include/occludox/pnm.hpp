#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "occludox/tensor.hpp"

namespace occludox {

/// 8-bit binary greymap (P5, channels = 1) or pixmap (P6, channels = 3).
struct PnmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;  // interleaved, row-major
};

/// Strict parser: magic, whitespace/comment separated width, height and
/// maxval 255, exactly one whitespace byte, then width*height*channels bytes.
/// Throws FormatError with the byte offset of the first problem.
PnmImage parse_pnm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_pnm(const PnmImage& image);

/// File wrappers; IoError names the file, FormatError is rethrown with it.
PnmImage read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const PnmImage& image);

/// [C,H,W] with pixels v/255.
Tensor to_tensor(const PnmImage& image);
/// Pixels rounded to the nearest multiple of 1/255 after clipping to [0,1].
PnmImage from_tensor(const Tensor& image);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace occludox
