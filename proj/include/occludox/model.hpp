#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "occludox/dataset.hpp"
#include "occludox/tape.hpp"
#include "occludox/tensor.hpp"

namespace occludox {

struct ConvLayerSpec {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool pool = true;

  friend bool operator==(const ConvLayerSpec&, const ConvLayerSpec&) = default;
};

/// conv -> relu [-> 2x2 max-pool] blocks, then relu dense hidden layers,
/// then a dense layer producing `classes` logits.
struct ConvNetSpec {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<ConvLayerSpec> conv;
  std::vector<std::size_t> dense;
  std::size_t classes = 16;

  /// 3x32x32 input, conv 16/32/64 (3x3, pad 1, pool after each), dense to classes.
  static ConvNetSpec desk_default(std::size_t classes = 16);

  Shape input_dims() const { return {channels, height, width}; }
  /// Feature count entering the first dense layer. Throws ShapeError when
  /// the conv stack collapses the image.
  std::size_t flatten_size() const;
  /// Throws ShapeError on inconsistent geometry or fewer than 2 classes.
  void validate() const;

  friend bool operator==(const ConvNetSpec&, const ConvNetSpec&) = default;
};

struct NamedTensor {
  std::string name;
  Tensor value;
};

/// Name and dims of every parameter tensor, in forward order.
std::vector<std::pair<std::string, Shape>> parameter_layout(const ConvNetSpec& spec);

struct ModelParams {
  ConvNetSpec spec;
  std::vector<NamedTensor> tensors;

  std::size_t parameter_count() const;
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  /// Throws ShapeError unless names and dims follow parameter_layout(spec).
  void check_consistent() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);
};

/// Weights uniform in +-sqrt(6 / fan_in) from SplitMix64(seed), drawn tensor by
/// tensor in layout order; biases zero.
ModelParams build_cnn(const ConvNetSpec& spec, std::uint64_t seed);

/// Records the forward pass of `params` on `input` [N,C,H,W] and returns the
/// logits node. When `param_vars` is given, the parameter leaves are created
/// with requires_grad and returned through it.
Var forward(Tape& tape, const ModelParams& params, Var input, std::vector<Var>* param_vars = nullptr);

/// Logits [N, classes] for a batch [N,C,H,W]. Pure.
Tensor predict_logits(const ModelParams& params, const Tensor& batch);

/// Argmax class per row; ties go to the lowest class index.
std::vector<std::size_t> predict_classes(const ModelParams& params, const Tensor& batch);

/// Fraction of argmax-correct rows. ContractError on an empty dataset.
double accuracy(const ModelParams& params, const Dataset& data);

/// Cross-entropy of each row of `batch` against `labels`.
std::vector<Real> example_losses(const ModelParams& params, const Tensor& batch, std::span<const std::size_t> labels);

struct LossGrad {
  Real loss = 0.0;
  Tensor grad;  // same dims as the image
};

/// Cross-entropy of one image [C,H,W] and its gradient w.r.t. the pixels.
LossGrad loss_and_input_grad(const ModelParams& params, const Tensor& image, std::size_t label);

}  // namespace occludox
