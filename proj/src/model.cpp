#include "occludox/model.hpp"

#include <cmath>

#include "occludox/error.hpp"
#include "occludox/ops.hpp"
#include "occludox/rng.hpp"

namespace occludox {
namespace {

constexpr std::size_t kEvalChunk = 64;

}  // namespace

ConvNetSpec ConvNetSpec::desk_default(std::size_t classes) {
  ConvNetSpec s;
  s.conv = {ConvLayerSpec{16}, ConvLayerSpec{32}, ConvLayerSpec{64}};
  s.classes = classes;
  return s;
}

std::size_t ConvNetSpec::flatten_size() const {
  if (channels == 0 || height == 0 || width == 0) throw ShapeError("model input dims must be positive");
  std::size_t c = channels, h = height, w = width;
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const ConvLayerSpec& l = conv[i];
    const std::string where = "conv layer " + std::to_string(i);
    if (l.out_channels == 0 || l.kernel == 0 || l.stride == 0) {
      throw ShapeError(where + ": channels, kernel and stride must be positive");
    }
    if (h + 2 * l.padding < l.kernel || w + 2 * l.padding < l.kernel) {
      throw ShapeError(where + ": kernel larger than padded input");
    }
    h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
    w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
    if (l.pool) {
      h /= 2;
      w /= 2;
    }
    if (h == 0 || w == 0) throw ShapeError(where + ": spatial size collapses to zero");
    c = l.out_channels;
  }
  return c * h * w;
}

void ConvNetSpec::validate() const {
  if (classes < 2) throw ShapeError("model needs at least 2 classes");
  for (std::size_t width_i : dense) {
    if (width_i == 0) throw ShapeError("dense layer width must be positive");
  }
  if (flatten_size() == 0) throw ShapeError("flatten size must be positive");
}

std::vector<std::pair<std::string, Shape>> parameter_layout(const ConvNetSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, Shape>> out;
  std::size_t in_c = spec.channels;
  for (std::size_t i = 0; i < spec.conv.size(); ++i) {
    const auto& l = spec.conv[i];
    const std::string p = "conv" + std::to_string(i);
    out.emplace_back(p + ".weight", Shape{l.out_channels, in_c, l.kernel, l.kernel});
    out.emplace_back(p + ".bias", Shape{l.out_channels});
    in_c = l.out_channels;
  }
  std::size_t in_f = spec.flatten_size();
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    const std::string p = "fc" + std::to_string(i);
    out.emplace_back(p + ".weight", Shape{spec.dense[i], in_f});
    out.emplace_back(p + ".bias", Shape{spec.dense[i]});
    in_f = spec.dense[i];
  }
  out.emplace_back("out.weight", Shape{spec.classes, in_f});
  out.emplace_back("out.bias", Shape{spec.classes});
  return out;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

const Tensor& ModelParams::get(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return t.value;
  }
  throw ContractError("no parameter named '" + name + "'");
}

Tensor& ModelParams::get(const std::string& name) {
  return const_cast<Tensor&>(static_cast<const ModelParams&>(*this).get(name));
}

void ModelParams::check_consistent() const {
  const auto layout = parameter_layout(spec);
  if (layout.size() != tensors.size()) {
    throw ShapeError("model has " + std::to_string(tensors.size()) + " tensors, spec expects " +
                     std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (tensors[i].name != layout[i].first) {
      throw ShapeError("tensor " + std::to_string(i) + " is '" + tensors[i].name + "', spec expects '" +
                       layout[i].first + "'");
    }
    if (tensors[i].value.dims() != layout[i].second) {
      throw ShapeError("tensor '" + tensors[i].name + "' has dims " + to_string(tensors[i].value.dims()) +
                       ", spec expects " + to_string(layout[i].second));
    }
  }
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (!(a.spec == b.spec) || a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    if (a.tensors[i].name != b.tensors[i].name || !(a.tensors[i].value == b.tensors[i].value)) return false;
  }
  return true;
}

ModelParams build_cnn(const ConvNetSpec& spec, std::uint64_t seed) {
  ModelParams params{spec, {}};
  SplitMix64 rng(seed);
  for (auto& [name, dims] : parameter_layout(spec)) {
    Tensor t(dims, 0.0);
    if (dims.size() > 1) {
      std::size_t fan_in = 1;
      for (std::size_t d = 1; d < dims.size(); ++d) fan_in *= dims[d];
      const Real bound = std::sqrt(6.0 / static_cast<Real>(fan_in));
      for (auto& v : t.values()) v = rng.uniform(-bound, bound);
    }
    params.tensors.push_back({name, std::move(t)});
  }
  return params;
}

Var forward(Tape& tape, const ModelParams& params, Var input, std::vector<Var>* param_vars) {
  const ConvNetSpec& spec = params.spec;
  const Tensor& x = input.value();
  if (x.rank() != 4 || x.dim(1) != spec.channels || x.dim(2) != spec.height || x.dim(3) != spec.width) {
    throw ShapeError("model expects [N," + std::to_string(spec.channels) + "," + std::to_string(spec.height) + "," +
                     std::to_string(spec.width) + "] input, got " + to_string(x.dims()));
  }
  const bool train = param_vars != nullptr;
  if (train) param_vars->clear();
  std::size_t next = 0;
  auto take = [&]() {
    if (next >= params.tensors.size()) throw ShapeError("model is missing parameter tensors");
    Var v = tape.leaf(params.tensors[next++].value, train);
    if (train) param_vars->push_back(v);
    return v;
  };

  Var h = input;
  for (const auto& l : spec.conv) {
    Var w = take();
    Var b = take();
    h = relu(conv2d(h, w, b, l.stride, l.padding));
    if (l.pool) h = max_pool2(h);
  }
  h = flatten(h);
  for (std::size_t i = 0; i < spec.dense.size(); ++i) {
    Var w = take();
    Var b = take();
    h = relu(dense(h, w, b));
  }
  Var w = take();
  Var b = take();
  return dense(h, w, b);
}

Tensor predict_logits(const ModelParams& params, const Tensor& batch) {
  Tape tape;
  return forward(tape, params, tape.leaf(batch)).value();
}

std::vector<std::size_t> predict_classes(const ModelParams& params, const Tensor& batch) {
  const Tensor logits = predict_logits(params, batch);
  const std::size_t k = params.spec.classes;
  std::vector<std::size_t> out(logits.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = argmax(logits.values().subspan(r * k, k));
  return out;
}

double accuracy(const ModelParams& params, const Dataset& data) {
  if (data.size() == 0) throw ContractError("accuracy of an empty dataset");
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    std::vector<Tensor> rows;
    for (std::size_t i = start; i < end; ++i) rows.push_back(data.image(i));
    const auto pred = predict_classes(params, stack(rows));
    for (std::size_t i = start; i < end; ++i) correct += pred[i - start] == data.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::vector<Real> example_losses(const ModelParams& params, const Tensor& batch, std::span<const std::size_t> labels) {
  Tape tape;
  Var logits = forward(tape, params, tape.leaf(batch));
  Var ce = cross_entropy(logits, labels);
  return {ce.value().values().begin(), ce.value().values().end()};
}

LossGrad loss_and_input_grad(const ModelParams& params, const Tensor& image, std::size_t label) {
  Shape bdims{1};
  bdims.insert(bdims.end(), image.dims().begin(), image.dims().end());
  Tape tape;
  Var x = tape.leaf(image.reshaped(bdims), true);
  const std::size_t labels[1] = {label};
  Var loss = sum(cross_entropy(forward(tape, params, x), labels));
  Gradients g = tape.backward(loss);
  return {loss.value()[0], g.of(x).reshaped(image.dims())};
}

}  // namespace occludox
