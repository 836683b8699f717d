#include <vector>

#include "doctest.h"
#include "occludox/error.hpp"
#include "occludox/optim.hpp"

using namespace occludox;

namespace {

void step(Tensor& p, const Tensor& g, OptimState& s) {
  Tensor* ps[] = {&p};
  const Tensor* gs[] = {&g};
  optimizer_step(ps, gs, s);
}

}  // namespace

TEST_CASE("zero gradients leave parameters unchanged for every optimiser") {
  for (OptimKind kind : {OptimKind::kSgd, OptimKind::kSgdMomentum, OptimKind::kAdam}) {
    OptimConfig cfg;
    cfg.kind = kind;
    cfg.learning_rate = 0.5;
    OptimState s(cfg);
    Tensor p({3}, {0.25, -1.0, 7.0});
    const Tensor before = p;
    for (int i = 0; i < 3; ++i) step(p, Tensor({3}, 0.0), s);
    CHECK(p == before);
    CHECK(s.step == 3);
  }
}

TEST_CASE("adam first step from a fresh state") {
  OptimConfig cfg;
  cfg.kind = OptimKind::kAdam;
  cfg.learning_rate = 0.1;
  OptimState s(cfg);
  Tensor p({1}, {1.0});
  step(p, Tensor({1}, {1.0}), s);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(p[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(p[0] == doctest::Approx(0.9).epsilon(1e-7));
  REQUIRE(s.first.size() == 1);
  CHECK(s.first[0].dims() == p.dims());
  CHECK(s.second[0].dims() == p.dims());
}

TEST_CASE("sgd-momentum two steps") {
  OptimConfig cfg;
  cfg.kind = OptimKind::kSgdMomentum;
  cfg.learning_rate = 0.1;
  cfg.momentum = 0.4;
  OptimState s(cfg);
  Tensor p({1}, {0.0});
  step(p, Tensor({1}, {1.0}), s);
  CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-15));
  step(p, Tensor({1}, {1.0}), s);
  CHECK(p[0] == doctest::Approx(-0.24).epsilon(1e-15));
  CHECK(s.step == 2);
}

TEST_CASE("plain sgd and ascent mode") {
  OptimConfig cfg;
  cfg.kind = OptimKind::kSgd;
  cfg.learning_rate = 0.5;
  OptimState s(cfg);
  Tensor p({2}, {1.0, 1.0});
  step(p, Tensor({2}, {1.0, -2.0}), s);
  CHECK(p == Tensor({2}, {0.5, 2.0}));

  cfg.ascent = true;
  OptimState up(cfg);
  Tensor q({2}, {1.0, 1.0});
  step(q, Tensor({2}, {1.0, -2.0}), up);
  CHECK(q == Tensor({2}, {1.5, 0.0}));
}

TEST_CASE("optimizer contract errors") {
  OptimState s;
  Tensor p({2}, 0.0);
  Tensor* ps[] = {&p};
  const Tensor* missing[] = {nullptr};
  CHECK_THROWS_AS(optimizer_step(ps, missing, s), ContractError);
  CHECK(s.step == 0);
  const Tensor wrong({3}, 0.0);
  const Tensor* bad[] = {&wrong};
  CHECK_THROWS_AS(optimizer_step(ps, bad, s), ShapeError);

  CHECK(parse_optim_kind("adam") == OptimKind::kAdam);
  CHECK(parse_optim_kind("sgd-momentum") == OptimKind::kSgdMomentum);
  CHECK_THROWS_AS(parse_optim_kind("rmsprop"), ConfigError);
}
