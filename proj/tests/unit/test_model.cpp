#include <array>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "occludox/dataset.hpp"
#include "occludox/error.hpp"
#include "occludox/model.hpp"
#include "oracles.hpp"
#include "toys.hpp"

using namespace occludox;

namespace {

using toys::make_dataset;
using toys::zeroed;

// Logits of build_cnn(desk_default(16), 7) on a SplitMix64(11) uniform image,
// recorded from the nested-loop oracle forward pass.
constexpr std::array<Real, 16> kGoldenLogits = {
    1.9393594024907883,  1.1924387524097944,  -0.27064548936704258, -1.1402679608224873,
    -1.7497733668082582, 2.1201522322633122,  0.18079706372400256,  0.93374556826871835,
    0.3144727280875429,  -1.5890259407984728, -2.0470752075699621,  1.516201637921724,
    -1.0481913094353015, -0.8776589300583123, 0.63289640486853505,  0.97733185724565086};

}  // namespace

TEST_CASE("desk default parameter count") {
  const ConvNetSpec spec = ConvNetSpec::desk_default(16);
  const ModelParams p = build_cnn(spec, 1);
  CHECK(p.parameter_count() == oracle::parameter_count(spec));
  // 448 + 4640 + 18496 conv, 16 * 1024 + 16 dense.
  CHECK(p.parameter_count() == 39984);
  CHECK(spec.flatten_size() == 1024);
}

TEST_CASE("build_cnn: determinism, initializer bounds, zero biases") {
  const ConvNetSpec spec = ConvNetSpec::desk_default(16);
  const ModelParams a = build_cnn(spec, 5), b = build_cnn(spec, 5), c = build_cnn(spec, 6);
  CHECK(a == b);
  CHECK_FALSE(a == c);
  for (const auto& t : a.tensors) {
    if (t.value.rank() == 1) {
      for (Real v : t.value.values()) CHECK(v == 0.0);
    } else {
      const Real bound = std::sqrt(6.0 / static_cast<Real>(t.value.size() / t.value.dim(0)));
      for (Real v : t.value.values()) REQUIRE(std::abs(v) <= bound);
    }
  }
  std::vector<std::string> names;
  for (const auto& t : a.tensors) names.push_back(t.name);
  CHECK(names == std::vector<std::string>{"conv0.weight", "conv0.bias", "conv1.weight", "conv1.bias", "conv2.weight",
                                          "conv2.bias", "out.weight", "out.bias"});
}

TEST_CASE("spec validation") {
  ConvNetSpec s = ConvNetSpec::desk_default(16);
  s.classes = 1;
  CHECK_THROWS_AS(s.validate(), ShapeError);
  ConvNetSpec tiny = ConvNetSpec::desk_default(4);
  tiny.height = tiny.width = 4;  // three pools collapse a 4x4 input
  CHECK_THROWS_AS(tiny.validate(), ShapeError);
  CHECK_THROWS_AS(build_cnn(tiny, 1), ShapeError);
}

TEST_CASE("zero-weight model gives all-zero logits") {
  const ModelParams p = zeroed(build_cnn(ConvNetSpec::desk_default(16), 3));
  SplitMix64 rng(4);
  const Tensor logits = predict_logits(p, oracle::random_tensor({3, 3, 32, 32}, rng, 0.0, 1.0));
  REQUIRE(logits.dims() == Shape{3, 16});
  for (Real v : logits.values()) CHECK(v == 0.0);
}

TEST_CASE("golden logits and the oracle forward pass") {
  const ModelParams p = build_cnn(ConvNetSpec::desk_default(16), 7);
  SplitMix64 rng(11);
  const Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
  const Tensor got = predict_logits(p, x);
  CHECK(max_abs_diff(got, oracle::cnn_logits(p, x)) < 1e-12);
  for (std::size_t i = 0; i < kGoldenLogits.size(); ++i) CHECK(std::abs(got[i] - kGoldenLogits[i]) < 1e-12);
}

TEST_CASE("predict_logits is row-independent") {
  const ModelParams p = build_cnn(ConvNetSpec::desk_default(16), 2);
  SplitMix64 rng(12);
  const Tensor a = oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0), b = oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const Tensor dup = predict_logits(p, stack(std::vector{a, a}));
  CHECK(dup.slice(0) == dup.slice(1));
  // Swapping rows swaps the logit rows exactly.
  const Tensor ab = predict_logits(p, stack(std::vector{a, b})), ba = predict_logits(p, stack(std::vector{b, a}));
  CHECK(ab.slice(0) == ba.slice(1));
  CHECK(ab.slice(1) == ba.slice(0));
  CHECK_THROWS_AS(predict_logits(p, Tensor({1, 3, 16, 16}, 0.0)), ShapeError);
}

TEST_CASE("accuracy") {
  // Identity weights on one-hot pixels predict the labels exactly.
  ModelParams p = zeroed(build_cnn(toys::linear_spec(2, 1, 1, 2), 1));
  p.get("out.weight") = Tensor({2, 2}, {1, 0, 0, 1});
  const Dataset d = make_dataset(Tensor({4, 2, 1, 1}, {1, 0, 0, 1, 0, 1, 1, 0}), {0, 1, 1, 0}, 2);
  CHECK(accuracy(p, d) == 1.0);

  // Zero-weight model ties everywhere and picks class 0.
  const ModelParams z = zeroed(build_cnn(ConvNetSpec::desk_default(4), 1));
  SplitMix64 rng(6);
  const Dataset zeros = make_dataset(oracle::random_tensor({5, 3, 32, 32}, rng, 0.0, 1.0), {0, 0, 0, 0, 0}, 4);
  CHECK(accuracy(z, zeros) == 1.0);
  const Dataset balanced =
      make_dataset(oracle::random_tensor({8, 3, 32, 32}, rng, 0.0, 1.0), {0, 1, 2, 3, 0, 1, 2, 3}, 4);
  CHECK(accuracy(z, balanced) == 0.25);

  const Dataset empty = make_dataset(Tensor({0, 3, 32, 32}, 0.0), {}, 4);
  CHECK_THROWS_AS(accuracy(z, empty), ContractError);
}

TEST_CASE("loss_and_input_grad matches finite differences") {
  ConvNetSpec s = ConvNetSpec::desk_default(4);
  s.height = s.width = 16;
  const ModelParams p = build_cnn(s, 21);
  SplitMix64 rng(22);
  const Tensor img = oracle::random_tensor({3, 16, 16}, rng, 0.0, 1.0);
  const LossGrad lg = loss_and_input_grad(p, img, 2);
  const Tensor logits = predict_logits(p, img.reshaped({1, 3, 16, 16}));
  CHECK(lg.loss == doctest::Approx(oracle::cross_entropy(logits.values(), 2)).epsilon(1e-13));

  const gradcheck::Builder build = [&](Tape& t, std::span<const Var> v) {
    const std::vector<std::size_t> label{2};
    (void)t;
    return mean(cross_entropy(forward(*v[0].tape, p, v[0]), label));
  };
  const auto r = gradcheck::check(build, {img.reshaped({1, 3, 16, 16})}, rng, 40);
  CHECK(r.checked > 20);
  CHECK(r.max_rel < 1e-6);
  // Direct comparison with the analytic gradient from loss_and_input_grad.
  Tape tape;
  const Var x = tape.leaf(img.reshaped({1, 3, 16, 16}), true);
  const std::vector<std::size_t> label{2};
  const auto g = tape.backward(mean(cross_entropy(forward(tape, p, x), label)));
  CHECK(g.of(x).reshaped({3, 16, 16}) == lg.grad);
}
