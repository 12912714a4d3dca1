// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "gnnmoe/theory.hpp"

using namespace gnnmoe;

namespace {

std::vector<double> uniform(std::size_t m) { return std::vector<double>(m, 1.0 / static_cast<double>(m)); }

}  // namespace

TEST(Surrogate, IdenticalDistributionsZeroGain) {
  RoutingInstance inst{{0.2, 0.3, 0.5}, {0.0, 0.0, 0.0}, 0.7, 0.0};
  EXPECT_NEAR(surrogate_value(inst.base, inst), 0.0, 1e-15);
}

TEST(Surrogate, TwoExpertHandValue) {
  RoutingInstance inst{uniform(2), {1.0, 0.0}, 1.0, 0.0};
  EXPECT_NEAR(surrogate_value(uniform(2), inst), -0.5, 1e-15);
}

TEST(Surrogate, ZeroEntriesAndUnsupportedMass) {
  RoutingInstance inst{{0.5, 0.5}, {1.0, 0.0}, 0.5, 0.3};
  // π = (1, 0): −u₁ + (1/η) log 2
  EXPECT_NEAR(surrogate_value({1.0, 0.0}, inst), -1.0 + 2.0 * std::log(2.0), 1e-14);
  RoutingInstance degenerate{{1.0, 0.0}, {0.0, 0.0}, 0.5, 0.0};
  EXPECT_TRUE(std::isinf(surrogate_value({0.5, 0.5}, degenerate)));
}

TEST(Surrogate, StrictlyConvexAlongChords) {
  RngState rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    RoutingInstance inst = random_instance(rng);
    std::vector<double> a(4), b(4);
    double sa = 0.0, sb = 0.0;
    for (std::size_t g = 0; g < 4; ++g) {
      sa += (a[g] = rng.uniform(0.05, 1.0));
      sb += (b[g] = rng.uniform(0.05, 1.0));
    }
    for (std::size_t g = 0; g < 4; ++g) {
      a[g] /= sa;
      b[g] /= sb;
    }
    auto at = [&](double t) {
      std::vector<double> p(4);
      for (std::size_t g = 0; g < 4; ++g) p[g] = (1 - t) * a[g] + t * b[g];
      return surrogate_value(p, inst);
    };
    for (double t : {0.25, 0.5, 0.75}) {
      const double h = 0.1;
      EXPECT_GT(at(t - h) + at(t + h) - 2.0 * at(t), 0.0);
    }
  }
}

TEST(MirrorDescent, ZeroGainUniformStaysUniform) {
  for (double lambda : {0.0, 0.5, 1.5}) {
    auto pi = mirror_descent_update({uniform(4), {0, 0, 0, 0}, 0.6, lambda});
    for (double p : pi) EXPECT_NEAR(p, 0.25, 1e-15);
  }
}

TEST(MirrorDescent, HandEvaluatedCases) {
  auto a = mirror_descent_update({uniform(2), {1.0, 0.0}, 0.5, 1.0});
  const double e = std::exp(1.0);
  EXPECT_NEAR(a[0], e / (e + 1.0), 1e-15);
  EXPECT_NEAR(a[0], 0.7311, 5e-5);
  EXPECT_NEAR(a[1], 0.2689, 5e-5);

  auto b = mirror_descent_update({{0.8, 0.2}, {0.0, 0.0}, 0.5, 1.0});
  EXPECT_NEAR(b[0], 0.64 / 0.68, 1e-15);
  EXPECT_NEAR(b[0], 0.9412, 5e-5);
  EXPECT_NEAR(b[1], 0.0588, 5e-5);
}

TEST(MirrorDescent, DomainErrors) {
  EXPECT_THROW(mirror_descent_update({uniform(2), {1.0, 0.0}, 0.5, 2.0}), DomainError);
  EXPECT_THROW(mirror_descent_update({uniform(2), {1.0, 0.0}, 0.5, 3.0}), DomainError);
  EXPECT_THROW(mirror_descent_update({{0.5, 0.6}, {1.0, 0.0}, 0.5, 0.0}), DomainError);
  EXPECT_THROW(mirror_descent_update({{1.0, 0.0}, {1.0, 0.0}, 0.5, 0.0}), DomainError);
  EXPECT_THROW(mirror_descent_update({{1.0}, {1.0}, 0.5, 0.0}), DomainError);
  EXPECT_THROW(mirror_descent_update({uniform(2), {1.0}, 0.5, 0.0}), DimensionError);
}

TEST(MirrorDescent, TemperatureIdentity) {
  for (const auto& c : closed_form_suite(20, 3, 20)) EXPECT_LT(c.softmax_gap, 1e-12);
}

TEST(SimplexGrid, EnumeratesEveryCompositionOnce) {
  SimplexGrid grid{3, 4};
  std::set<std::vector<double>> seen;
  std::size_t count = 0;
  grid.for_each([&](const std::vector<double>& p) {
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    seen.insert(p);
    ++count;
  });
  EXPECT_EQ(count, 15u);
  EXPECT_EQ(seen.size(), 15u);
  EXPECT_EQ(grid.size(), 15u);
  EXPECT_EQ((SimplexGrid{4, 100}).size(), 176851u);
}

TEST(BruteForce, MatchesHandCases) {
  RoutingInstance a{uniform(2), {1.0, 0.0}, 0.5, 1.0};
  EXPECT_LT(l1_distance(brute_force_argmin(a, {2, 100}), mirror_descent_update(a)), 1e-6);
  RoutingInstance b{{0.8, 0.2}, {0.0, 0.0}, 0.5, 1.0};
  EXPECT_LT(l1_distance(brute_force_argmin(b, {2, 100}), mirror_descent_update(b)), 1e-6);
  RoutingInstance c{uniform(4), {0, 0, 0, 0}, 0.5, 0.4};
  for (double p : brute_force_argmin(c, {4, 50})) EXPECT_NEAR(p, 0.25, 1e-6);
}

TEST(BruteForce, SmallStepStaysNearBase) {
  RoutingInstance inst{{0.1, 0.2, 0.3, 0.4}, {1.0, -1.0, 2.0, 0.5}, 1e-3, 0.0};
  EXPECT_LT(l1_distance(brute_force_argmin(inst, {4, 100}), inst.base), 1e-2);
}

TEST(BruteForce, AgreesWithClosedFormOnRandomInstances) {
  for (const auto& c : closed_form_suite(25, 11, 60)) EXPECT_LT(c.l1, 1e-3);
}

TEST(Threshold, HandValueAndLimits) {
  EXPECT_NEAR(epsilon_topk_threshold(4, 1, 0.1, 0.5, 2.0), 2.0 + 2.0 / std::log(0.1 / 3.0), 1e-15);
  EXPECT_NEAR(epsilon_topk_threshold(4, 1, 0.1, 0.5, 2.0), 1.4120, 5e-5);
  EXPECT_NEAR(epsilon_topk_threshold(4, 1, 0.1, 0.5, 1e-12), 2.0, 1e-9);
  const double a = epsilon_topk_threshold(4, 1, 0.05, 0.5, 2.0);
  const double b = epsilon_topk_threshold(4, 1, 0.1, 0.5, 2.0);
  const double c = epsilon_topk_threshold(4, 1, 0.2, 0.5, 2.0);
  EXPECT_GT(a, b);
  EXPECT_GT(b, c);
}

TEST(Threshold, PreconditionViolations) {
  EXPECT_THROW(epsilon_topk_threshold(4, 0, 0.1, 0.5, 1.0), DomainError);
  EXPECT_THROW(epsilon_topk_threshold(4, 4, 0.1, 0.5, 1.0), DomainError);
  EXPECT_THROW(epsilon_topk_threshold(4, 2, 1.0, 0.5, 1.0), DomainError);
  EXPECT_THROW(epsilon_topk_threshold(4, 1, 0.1, 0.5, 0.0), DomainError);
  EXPECT_THROW(epsilon_topk_threshold(4, 1, 0.1, 0.0, 1.0), DomainError);
}

TEST(Threshold, LambdaSweepCrossCheck) {
  // The smallest λ on a fine grid with tail ≤ ε lands within a grid step of
  // θ, with a uniform base and exactly one gap of δ below the leader.
  const double eta = 0.5, eps = 0.1, delta = 2.0;
  const std::vector<double> u{delta, 0.0, 0.0, 0.0};
  const double theta = epsilon_topk_threshold(4, 1, eps, eta, delta);
  double first = -1.0;
  for (double lambda = 0.0; lambda < 1.0 / eta; lambda += 1e-4) {
    if (tail_mass(mirror_descent_update({uniform(4), u, eta, lambda}), u, 1) <= eps) {
      first = lambda;
      break;
    }
  }
  // The bound (m−k)/k·e^{−ηδ/(1−ηλ)} is exact for this instance up to the normalization.
  EXPECT_GE(first, 0.0);
  EXPECT_LE(first, theta + 1e-4);
}

TEST(TailMass, HandCases) {
  const std::vector<double> u{0.1, 3.0, -1.0, 2.0};
  EXPECT_EQ(tail_mass({0.0, 1.0, 0.0, 0.0}, u, 1), 0.0);
  EXPECT_DOUBLE_EQ(tail_mass(uniform(4), u, 1), 0.75);
  EXPECT_DOUBLE_EQ(tail_mass(uniform(4), u, 3), 0.25);
  EXPECT_DOUBLE_EQ(tail_mass({0.1, 0.2, 0.3, 0.4}, u, 2), 0.4);
}

TEST(TailMass, TiesGoToLowerIndex) {
  EXPECT_EQ(top_k_indices({1.0, 2.0, 2.0, 0.0}, 1), (std::vector<std::size_t>{1}));
  EXPECT_DOUBLE_EQ(tail_mass({0.1, 0.2, 0.3, 0.4}, {1.0, 2.0, 2.0, 0.0}, 1), 0.8);
  EXPECT_DOUBLE_EQ(gain_gap({1.0, 3.0, 2.0, 0.0}, 1), 1.0);
  EXPECT_DOUBLE_EQ(gain_gap({1.0, 3.0, 2.0, 0.0}, 3), 1.0);
}

TEST(SoftTopK, NoViolationsAboveThreshold) {
  for (const auto& c : threshold_suite(50, 4)) {
    EXPECT_GE(c.delta, 1.0);
    EXPECT_LT(c.theta, 1.0 / c.instance.eta);
    EXPECT_EQ(c.samples, 20u);
    EXPECT_EQ(c.violations, 0u) << "k=" << c.k << " eps=" << c.eps << " worst=" << c.worst_tail;
  }
}

TEST(Sharpening, DecreasingEntropyConstantArgmax) {
  auto r = verify_sharpening(uniform(4), {3, 2, 1, 0}, 0.5, {0.0, 0.5, 1.0, 1.5, 1.9});
  EXPECT_FALSE(r.skipped);
  EXPECT_TRUE(r.strictly_decreasing);
  EXPECT_TRUE(r.argmax_constant);
  for (std::size_t a : r.argmaxes) EXPECT_EQ(a, 0u);
}

TEST(Sharpening, ConstantLogitsAreSkipped) {
  auto r = verify_sharpening(uniform(4), {1, 1, 1, 1}, 0.5, {0.0, 0.5, 1.0});
  EXPECT_TRUE(r.skipped);
  for (double h : r.entropies) EXPECT_NEAR(h, std::log(4.0), 1e-12);
}

TEST(Sharpening, GridChecks) {
  EXPECT_THROW(verify_sharpening(uniform(4), {3, 2, 1, 0}, 0.5, {0.0, 2.0}), DomainError);
  EXPECT_THROW(verify_sharpening(uniform(4), {3, 2, 1, 0}, 0.5, {1.0, 0.5}), DomainError);
}

TEST(Sharpening, RandomSuite) {
  for (const auto& c : sharpening_suite(100, 5)) {
    EXPECT_FALSE(c.report.skipped);
    EXPECT_TRUE(c.report.strictly_decreasing);
    EXPECT_TRUE(c.report.argmax_constant);
  }
}
