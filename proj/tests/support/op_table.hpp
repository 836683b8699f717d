#pragma once

// Every differentiable op wrapped as a seeded finite-difference case.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "occludox/ops.hpp"
#include "oracles.hpp"

namespace gradcheck {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>()> make_inputs;
  Builder build;
};

/// Weights and labels are drawn once from `rng`; `make_inputs` keeps
/// drawing from it, so `rng` must outlive the returned cases.
inline std::vector<OpCase> op_cases(occludox::SplitMix64& rng) {
  using namespace occludox;
  using oracle::random_tensor;
  std::vector<OpCase> cases;
  const auto add_case = [&](std::string name, std::function<std::vector<Tensor>()> make, Builder build) {
    cases.push_back({std::move(name), std::move(make), std::move(build)});
  };
  const Tensor w6 = random_tensor({6}, rng);
  add_case("add", [&rng] { return std::vector{random_tensor({6}, rng), random_tensor({6}, rng)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, add(v[0], v[1]), w6); });
  add_case("sub", [&rng] { return std::vector{random_tensor({6}, rng), random_tensor({6}, rng)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, sub(v[0], v[1]), w6); });
  add_case("mul", [&rng] { return std::vector{random_tensor({6}, rng), random_tensor({6}, rng)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, mul(v[0], v[1]), w6); });
  add_case("scale", [&rng] { return std::vector{random_tensor({6}, rng)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, scale(v[0], -1.7), w6); });
  add_case("relu", [&rng] { return std::vector{random_tensor({6}, rng)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, relu(v[0]), w6); });
  add_case("clip", [&rng] { return std::vector{random_tensor({6}, rng, -0.5, 1.5)}; },
           [w6](Tape& t, std::span<const Var> v) { return weighted_sum(t, clip(v[0], 0.0, 1.0), w6); });
  const Tensor w_pool = random_tensor({1, 2, 2, 2}, rng);
  add_case("max_pool2", [&rng] { return std::vector{random_tensor({1, 2, 4, 4}, rng)}; },
           [w_pool](Tape& t, std::span<const Var> v) { return weighted_sum(t, max_pool2(v[0]), w_pool); });
  const Tensor w_flat = random_tensor({2, 6}, rng);
  add_case("flatten", [&rng] { return std::vector{random_tensor({2, 3, 1, 2}, rng)}; },
           [w_flat](Tape& t, std::span<const Var> v) { return weighted_sum(t, flatten(v[0]), w_flat); });
  const Tensor w_dense = random_tensor({3, 4}, rng);
  add_case(
      "dense",
      [&rng] { return std::vector{random_tensor({3, 5}, rng), random_tensor({4, 5}, rng), random_tensor({4}, rng)}; },
      [w_dense](Tape& t, std::span<const Var> v) { return weighted_sum(t, dense(v[0], v[1], v[2]), w_dense); });
  const Tensor w_conv = random_tensor({2, 3, 3, 3}, rng);
  add_case(
      "conv2d",
      [&rng] {
        return std::vector{random_tensor({2, 2, 5, 5}, rng), random_tensor({3, 2, 3, 3}, rng), random_tensor({3}, rng)};
      },
      [w_conv](Tape& t, std::span<const Var> v) { return weighted_sum(t, conv2d(v[0], v[1], v[2], 2, 1), w_conv); });
  const std::vector<std::size_t> labels{2, 0, 3};
  const Tensor w_ce = random_tensor({3}, rng);
  add_case("cross_entropy", [&rng] { return std::vector{random_tensor({3, 4}, rng, -3, 3)}; },
           [labels, w_ce](Tape& t, std::span<const Var> v) { return weighted_sum(t, cross_entropy(v[0], labels), w_ce); });
  add_case("sum", [&rng] { return std::vector{random_tensor({2, 3}, rng)}; },
           [](Tape&, std::span<const Var> v) { return sum(v[0]); });
  add_case("mean", [&rng] { return std::vector{random_tensor({2, 3}, rng)}; },
           [](Tape&, std::span<const Var> v) { return mean(v[0]); });
  return cases;
}

struct OpSummary {
  std::size_t points = 0;
  Result total;
};

/// `points` seeded input draws per op, `coords` coordinates per input each.
inline OpSummary run_op(const OpCase& op, occludox::SplitMix64& rng, std::size_t points, std::size_t coords) {
  OpSummary s;
  for (std::size_t p = 0; p < points; ++p) {
    const Result r = check(op.build, op.make_inputs(), rng, coords);
    s.total.checked += r.checked;
    s.total.skipped += r.skipped;
    s.total.max_rel = std::max(s.total.max_rel, r.max_rel);
    ++s.points;
  }
  return s;
}

}  // namespace gradcheck
