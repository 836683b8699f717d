#include "occludox/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "occludox/error.hpp"

namespace occludox {

std::size_t numel(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

std::string to_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape dims, Real fill) : dims_(std::move(dims)), values_(numel(dims_), fill) {}

Tensor::Tensor(Shape dims, std::vector<Real> values) : dims_(std::move(dims)), values_(std::move(values)) {
  if (numel(dims_) != values_.size()) {
    throw ShapeError("tensor dims " + to_string(dims_) + " do not match " + std::to_string(values_.size()) +
                     " elements");
  }
}

Tensor Tensor::reshaped(Shape dims) const {
  if (numel(dims) != size()) {
    throw ShapeError("cannot reshape " + to_string(dims_) + " to " + to_string(dims));
  }
  return Tensor(std::move(dims), values_);
}

Tensor Tensor::slice(std::size_t index) const {
  if (rank() == 0 || index >= dims_[0]) throw IndexError("slice index out of range");
  Shape inner(dims_.begin() + 1, dims_.end());
  const std::size_t n = numel(inner);
  std::vector<Real> v(values_.begin() + static_cast<std::ptrdiff_t>(index * n),
                      values_.begin() + static_cast<std::ptrdiff_t>((index + 1) * n));
  return Tensor(std::move(inner), std::move(v));
}

void Tensor::set_slice(std::size_t index, const Tensor& item) {
  if (rank() == 0 || index >= dims_[0]) throw IndexError("slice index out of range");
  if (!std::equal(dims_.begin() + 1, dims_.end(), item.dims().begin(), item.dims().end())) {
    throw ShapeError("slice dims " + to_string(item.dims()) + " do not fit " + to_string(dims_));
  }
  std::copy(item.values().begin(), item.values().end(), values_.begin() + static_cast<std::ptrdiff_t>(index * item.size()));
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](Real v) { return std::isfinite(v); });
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) throw ShapeError("cannot stack zero tensors");
  Shape dims{items.size()};
  dims.insert(dims.end(), items[0].dims().begin(), items[0].dims().end());
  Tensor out(dims);
  for (std::size_t i = 0; i < items.size(); ++i) out.set_slice(i, items[i]);
  return out;
}

Real max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("max_abs_diff: dims differ");
  Real m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::size_t argmax(std::span<const Real> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

}  // namespace occludox
