#include "occludox/pnm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "occludox/error.hpp"

namespace occludox {
namespace {

bool is_space(std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* field) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t v = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      v = v * 10 + (bytes_[pos_] - '0');
      if (v > 1'000'000) throw FormatError(std::string("pnm: ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("pnm: expected ") + field, start);
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::uint8_t peek() const { return bytes_[pos_]; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

PnmImage parse_pnm(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("pnm: expected magic P5 or P6", 0);
  }
  PnmImage img;
  img.channels = bytes[1] == '5' ? 1 : 3;
  HeaderReader r(bytes.subspan(2));
  if (r.at_end() || !is_space(r.peek())) throw FormatError("pnm: expected whitespace after magic", 2);
  img.width = r.number("width");
  img.height = r.number("height");
  const std::size_t maxval_at = r.pos() + 2;
  const std::size_t maxval = r.number("maxval");
  if (maxval != 255) throw FormatError("pnm: maxval must be 255, got " + std::to_string(maxval), maxval_at);
  if (img.width == 0 || img.height == 0) throw FormatError("pnm: zero width or height", 2);
  if (r.at_end() || !is_space(r.peek())) throw FormatError("pnm: expected one whitespace byte before raster", r.pos() + 2);
  r.advance();
  const std::size_t offset = r.pos() + 2;
  const std::size_t need = img.width * img.height * img.channels;
  if (bytes.size() - offset < need) {
    throw FormatError("pnm: raster truncated, need " + std::to_string(need) + " bytes, have " +
                          std::to_string(bytes.size() - offset),
                      bytes.size());
  }
  if (bytes.size() - offset > need) throw FormatError("pnm: trailing bytes after raster", offset + need);
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(offset), bytes.end());
  return img;
}

std::vector<std::uint8_t> encode_pnm(const PnmImage& image) {
  if (image.channels != 1 && image.channels != 3) throw ContractError("pnm: channels must be 1 or 3");
  if (image.pixels.size() != image.width * image.height * image.channels) {
    throw ContractError("pnm: pixel count does not match dims");
  }
  const std::string header = std::string(image.channels == 1 ? "P5" : "P6") + "\n" + std::to_string(image.width) +
                             " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path.string() + "'");
}

PnmImage read_pnm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  try {
    return parse_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.message(), e.offset());
  }
}

void write_pnm(const std::filesystem::path& path, const PnmImage& image) { write_file_bytes(path, encode_pnm(image)); }

Tensor to_tensor(const PnmImage& image) {
  const std::size_t c = image.channels, h = image.height, w = image.width;
  Tensor t(Shape{c, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        t[(ch * h + y) * w + x] = image.pixels[(y * w + x) * c + ch] / 255.0;
      }
    }
  }
  return t;
}

PnmImage from_tensor(const Tensor& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw ShapeError("pnm: image must be [1|3,H,W], got " + to_string(image.dims()));
  }
  PnmImage out{image.dim(2), image.dim(1), image.dim(0), {}};
  const std::size_t c = out.channels, h = out.height, w = out.width;
  out.pixels.resize(c * h * w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const Real v = std::clamp(image[(ch * h + y) * w + x], 0.0, 1.0);
        out.pixels[(y * w + x) * c + ch] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return out;
}

}  // namespace occludox
