#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace occludox {

using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& dims);
std::string to_string(const Shape& dims);

/// Dense row-major array of reals. Images are [C,H,W], batches [N,C,H,W].
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, Real fill = 0.0);
  Tensor(Shape dims, std::vector<Real> values);

  static Tensor scalar(Real v) { return Tensor(Shape{1}, v); }

  const Shape& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  Real* data() noexcept { return values_.data(); }
  const Real* data() const noexcept { return values_.data(); }
  std::span<Real> values() noexcept { return values_; }
  std::span<const Real> values() const noexcept { return values_; }

  Real& operator[](std::size_t i) noexcept { return values_[i]; }
  Real operator[](std::size_t i) const noexcept { return values_[i]; }

  /// Same values, new dims. Throws ShapeError if the element count differs.
  Tensor reshaped(Shape dims) const;

  /// Copy of item `index` along the leading axis, with that axis dropped.
  Tensor slice(std::size_t index) const;
  /// Overwrite item `index` along the leading axis with `item`.
  void set_slice(std::size_t index, const Tensor& item);

  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.values_ == b.values_;
  }

 private:
  Shape dims_;
  std::vector<Real> values_;
};

/// Stack equally shaped tensors along a new leading axis.
Tensor stack(std::span<const Tensor> items);

/// Largest absolute elementwise difference; dims must agree.
Real max_abs_diff(const Tensor& a, const Tensor& b);

/// Index of the first maximal element.
std::size_t argmax(std::span<const Real> v);

}  // namespace occludox
