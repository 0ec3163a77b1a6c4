#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "normscale/nonlinearity.hpp"
#include "normscale/rng.hpp"

using namespace normscale;

namespace {
double fd1(const Nonlinearity& g, double z, double h = 1e-6) {
  return (g.g(z + h) - g.g(z - h)) / (2.0 * h);
}
double fd2(const Nonlinearity& g, double z, double h = 1e-5) {
  return (g.dg(z + h) - g.dg(z - h)) / (2.0 * h);
}
}  // namespace

TEST_CASE("identity activation") {
  const auto g = Nonlinearity::identity();
  CHECK(g.g(3.5) == 3.5);
  CHECK(g.dg(-2.0) == 1.0);
  CHECK(g.d2g(7.0) == 0.0);
  CHECK(g.smooth());
}

TEST_CASE("relu values and subgradient convention") {
  const auto g = Nonlinearity::relu();
  CHECK(g.g(2.0) == 2.0);
  CHECK(g.g(-2.0) == 0.0);
  CHECK(g.g(0.0) == 0.0);
  CHECK(g.dg(1e-9) == 1.0);
  CHECK(g.dg(0.0) == 0.0);
  CHECK(g.dg(-1e-9) == 0.0);
  CHECK_FALSE(g.smooth());
  CHECK_THROWS_AS(g.d2g(1.0), unsupported_nonlinearity_error);
}

TEST_CASE("tanh and softplus match finite differences") {
  Rng rng(7);
  for (const auto g : {Nonlinearity::tanh(), Nonlinearity::softplus()}) {
    for (int i = 0; i < 100; ++i) {
      const double z = rng.uniform(-4.0, 4.0);
      CHECK(std::abs(g.dg(z) - fd1(g, z)) < 1e-8);
      CHECK(std::abs(g.d2g(z) - fd2(g, z)) < 1e-7);
    }
  }
}

TEST_CASE("relu derivative matches finite differences away from the kink") {
  const auto g = Nonlinearity::relu();
  Rng rng(8);
  for (int i = 0; i < 100; ++i) {
    double z = rng.uniform(-4.0, 4.0);
    if (std::abs(z) < 1e-3) z += 0.5;
    CHECK(std::abs(g.dg(z) - fd1(g, z)) < 1e-9);
  }
}

TEST_CASE("softplus is stable at extreme inputs") {
  const auto g = Nonlinearity::softplus();
  CHECK(std::isfinite(g.g(800.0)));
  CHECK(g.g(800.0) == 800.0);
  CHECK(g.g(-800.0) >= 0.0);
  CHECK(g.g(-800.0) < 1e-300);
  CHECK(g.dg(800.0) == 1.0);
  CHECK(g.dg(-800.0) >= 0.0);
}

TEST_CASE("sigmoid is symmetric and bounded") {
  CHECK(Nonlinearity::sigmoid(0.0) == 0.5);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const double z = rng.uniform(-30.0, 30.0);
    const double s = Nonlinearity::sigmoid(z);
    CHECK(s > 0.0);
    CHECK(s < 1.0);
    CHECK(std::abs(s + Nonlinearity::sigmoid(-z) - 1.0) < 1e-15);
  }
}
