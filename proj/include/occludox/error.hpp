#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace occludox {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Class index or element index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// Placement of a patch or rectangle falls outside the image.
class BoundsError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `path()` is the JSON path when known.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, std::string path = {})
      : Error(path.empty() ? what : path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// A file does not follow its binary or text format.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), message_(what), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }
  /// The description without the offset suffix.
  const std::string& message() const noexcept { return message_; }

 private:
  std::string message_;
  std::uint64_t offset_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf showed up where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace occludox
