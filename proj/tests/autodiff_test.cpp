// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "gnnmoe/autodiff.hpp"
#include "gnnmoe/gradcheck.hpp"
#include "test_util.hpp"

using namespace gnnmoe;
using gnnmoe::test_util::random_matrix;
using gnnmoe::test_util::random_sparse;

TEST(Matmul, IdentityIsNeutral) {
  Tape t;
  DenseMatrix m{{1, 2, 3}, {4, 5, 6}};
  Var out = ad::matmul(t.constant(DenseMatrix::identity(2)), t.constant(m));
  EXPECT_EQ(out.value(), m);
}

TEST(Matmul, HandEvaluated) {
  Tape t;
  Var out = ad::matmul(t.constant({{1, 2}, {3, 4}}), t.constant({{1}, {1}}));
  EXPECT_EQ(out.value(), (DenseMatrix{{3}, {7}}));
}

TEST(Matmul, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::matmul(t.constant(DenseMatrix(2, 3)), t.constant(DenseMatrix(2, 3))), DimensionError);
}

TEST(Matmul, GradCheck) {
  RngState rng(1);
  auto f = [](Tape&, std::span<const Var> in) { return ad::sum(ad::matmul(in[0], in[1])); };
  EXPECT_LT(grad_check(f, {random_matrix(2, 3, rng), random_matrix(3, 2, rng)}), 1e-5);
}

TEST(Spmm, IdentitySparseIsNeutral) {
  RngState rng(2);
  Tape t;
  DenseMatrix h = random_matrix(4, 3, rng);
  SparseMatrix eye = SparseMatrix::identity(4);
  EXPECT_EQ(ad::spmm(eye, t.constant(h)).value(), h);
}

TEST(Spmm, MatchesDenseProductOnRandomInstances) {
  RngState rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    SparseMatrix s = random_sparse(5, 5, 0.4, rng);
    DenseMatrix d = random_matrix(5, 3, rng);
    Tape t;
    Var sparse_out = ad::spmm(s, t.constant(d));
    Var dense_out = ad::matmul(t.constant(s.to_dense()), t.constant(d));
    EXPECT_LE(max_abs_diff(sparse_out.value(), dense_out.value()), 1e-12);
  }
}

TEST(Spmm, GradientMatchesDenseOracle) {
  RngState rng(4);
  SparseMatrix s = random_sparse(5, 5, 0.5, rng);
  DenseMatrix d = random_matrix(5, 3, rng), w = random_matrix(5, 3, rng);
  DenseMatrix g_sparse, g_dense;
  {
    Tape t;
    Var x = t.leaf(d);
    t.backward(ad::sum(ad::hadamard(ad::spmm(s, x), t.constant(w))));
    g_sparse = x.grad();
  }
  {
    Tape t;
    Var x = t.leaf(d);
    t.backward(ad::sum(ad::hadamard(ad::matmul(t.constant(s.to_dense()), x), t.constant(w))));
    g_dense = x.grad();
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < g_dense.size(); ++i)
    worst = std::max(worst, std::abs(g_sparse[i] - g_dense[i]) / std::max(1e-8, std::abs(g_dense[i])));
  EXPECT_LT(worst, 1e-10);
}

TEST(Spmm, ShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::spmm(SparseMatrix::identity(3), t.constant(DenseMatrix(4, 2))), DimensionError);
}

TEST(Elementwise, ReluValues) {
  Tape t;
  EXPECT_EQ(ad::relu(t.constant({{-1, 2}})).value(), (DenseMatrix{{0, 2}}));
}

TEST(Elementwise, AnalyticValuesAtZero) {
  Tape t;
  Var z = t.constant(DenseMatrix(1, 1, 0.0));
  EXPECT_DOUBLE_EQ(ad::swish(z).scalar(), 0.0);
  EXPECT_DOUBLE_EQ(ad::sigmoid(z).scalar(), 0.5);
  EXPECT_DOUBLE_EQ(ad::gelu(z).scalar(), 0.0);
  EXPECT_DOUBLE_EQ(ad::leaky_relu(t.constant({{-1.0}})).scalar(), -0.2);
}

TEST(Elementwise, LogDomainAndShapeErrors) {
  Tape t;
  EXPECT_THROW(ad::log(t.constant({{1.0, 0.0}})), DomainError);
  EXPECT_THROW(ad::add(t.constant(DenseMatrix(2, 2)), t.constant(DenseMatrix(2, 3))), DimensionError);
  EXPECT_THROW(ad::hadamard(t.constant(DenseMatrix(1, 2)), t.constant(DenseMatrix(2, 1))), DimensionError);
}

TEST(Elementwise, GradCheckEveryKind) {
  RngState rng(5);
  const DenseMatrix a = random_matrix(3, 3, rng), b = random_matrix(3, 3, rng);
  DenseMatrix positive = random_matrix(3, 3, rng);
  for (double& v : positive.data()) v = std::abs(v) + 0.1;
  DenseMatrix w = random_matrix(3, 3, rng);
  auto probe = [w](Var y) { return ad::sum(ad::hadamard(y, y.tape()->constant(w))); };

  using K = ad::Elementwise;
  for (K k : {K::Add, K::Sub, K::Hadamard}) {
    auto f = [&](Tape&, std::span<const Var> in) { return probe(ad::elementwise(k, in[0], in[1])); };
    EXPECT_LT(grad_check(f, {a, b}), 1e-4) << static_cast<int>(k);
  }
  for (K k : {K::Scale, K::Relu, K::LeakyRelu, K::Sigmoid, K::Swish, K::Gelu, K::Exp}) {
    auto f = [&](Tape&, std::span<const Var> in) { return probe(ad::elementwise(k, in[0], 1.7)); };
    EXPECT_LT(grad_check(f, {a}), 1e-4) << static_cast<int>(k);
  }
  auto flog = [&](Tape&, std::span<const Var> in) { return probe(ad::elementwise(K::Log, in[0])); };
  EXPECT_LT(grad_check(flog, {positive}), 1e-4);
}

TEST(Softmax, ZeroRowIsUniform) {
  Tape t;
  for (double tau : {0.1, 1.0, 7.0}) {
    Var y = ad::rowwise_softmax(t.constant(DenseMatrix(1, 4)), tau);
    for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.25);
  }
}

TEST(Softmax, LogWeightsRecoverProbabilities) {
  Tape t;
  Var y = ad::rowwise_softmax(t.constant({{std::log(1.0), std::log(3.0)}}), 1.0);
  EXPECT_NEAR(y.value()(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(y.value()(0, 1), 0.75, 1e-15);
}

TEST(Softmax, RowsAreDistributionsAndArgmaxIgnoresTemperature) {
  RngState rng(6);
  DenseMatrix a = random_matrix(20, 5, rng);
  for (double tau : {0.05, 0.5, 1.0, 3.0, 40.0}) {
    Tape t;
    Var y = ad::rowwise_softmax(t.constant(a), tau);
    for (std::size_t r = 0; r < a.rows(); ++r) {
      double s = 0.0;
      for (double v : y.value().row(r)) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
      EXPECT_EQ(ad::detail::argmax_row(y.value().row(r)), ad::detail::argmax_row(a.row(r)));
    }
  }
}

TEST(Softmax, NonPositiveTemperatureThrows) {
  Tape t;
  EXPECT_THROW(ad::rowwise_softmax(t.constant(DenseMatrix(1, 2)), 0.0), DomainError);
  EXPECT_THROW(ad::rowwise_softmax(t.constant(DenseMatrix(1, 2)), -1.0), DomainError);
}

TEST(Softmax, GradCheck) {
  RngState rng(7);
  DenseMatrix w = random_matrix(3, 4, rng);
  auto f = [&](Tape& t, std::span<const Var> in) {
    return ad::sum(ad::hadamard(ad::rowwise_softmax(in[0], 0.7), t.constant(w)));
  };
  EXPECT_LT(grad_check(f, {random_matrix(3, 4, rng)}), 1e-4);
}

TEST(TopKSoftmax, KeepsOnlyTopEntries) {
  Tape t;
  Var y = ad::rowwise_topk_softmax(t.constant({{0.0, 3.0, 1.0, 2.0}}), 2);
  EXPECT_EQ(y.value()(0, 0), 0.0);
  EXPECT_EQ(y.value()(0, 2), 0.0);
  EXPECT_NEAR(y.value()(0, 1), std::exp(1.0) / (std::exp(1.0) + 1.0), 1e-15);
  Var one = ad::rowwise_topk_softmax(t.constant({{0.0, 3.0, 1.0, 2.0}}), 1);
  EXPECT_EQ(one.value(), (DenseMatrix{{0, 1, 0, 0}}));
}

TEST(TopKSoftmax, GradCheck) {
  RngState rng(8);
  DenseMatrix w = random_matrix(4, 4, rng);
  auto f = [&](Tape& t, std::span<const Var> in) {
    return ad::sum(ad::hadamard(ad::rowwise_topk_softmax(in[0], 2), t.constant(w)));
  };
  EXPECT_LT(grad_check(f, {random_matrix(4, 4, rng)}), 1e-4);
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  Tape t;
  Var y = ad::layer_norm(t.constant({{3, 3, 3}}), t.constant({{1, 1, 1}}), t.constant(DenseMatrix(1, 3)));
  for (double v : y.value().data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, UnitVarianceRow) {
  Tape t;
  Var y = ad::layer_norm(t.constant({{1, -1}}), t.constant({{1, 1}}), t.constant(DenseMatrix(1, 2)));
  // population variance 1, so only eps perturbs the result
  EXPECT_NEAR(y.value()(0, 0), 1.0, 1e-5);
  EXPECT_NEAR(y.value()(0, 1), -1.0, 1e-5);
}

TEST(LayerNorm, StandardizesRows) {
  RngState rng(9);
  Tape t;
  Var y = ad::layer_norm(t.constant(random_matrix(6, 8, rng)), t.constant(DenseMatrix(1, 8, 1.0)),
                         t.constant(DenseMatrix(1, 8)));
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (double v : y.value().row(r)) mu += v;
    mu /= 8;
    for (double v : y.value().row(r)) var += (v - mu) * (v - mu);
    EXPECT_NEAR(mu, 0.0, 1e-12);
    EXPECT_NEAR(var / 8, 1.0, 1e-4);
  }
}

TEST(LayerNorm, GainShapeMismatchThrows) {
  Tape t;
  EXPECT_THROW(ad::layer_norm(t.constant(DenseMatrix(2, 3)), t.constant(DenseMatrix(1, 2)), t.constant(DenseMatrix(1, 3))),
               DimensionError);
}

TEST(LayerNorm, GradCheck) {
  RngState rng(10);
  DenseMatrix w = random_matrix(2, 4, rng);
  auto f = [&](Tape& t, std::span<const Var> in) {
    return ad::sum(ad::hadamard(ad::layer_norm(in[0], in[1], in[2]), t.constant(w)));
  };
  EXPECT_LT(grad_check(f, {random_matrix(2, 4, rng), random_matrix(1, 4, rng), random_matrix(1, 4, rng)}), 1e-4);
}

TEST(Dropout, RateZeroAndEvalAreIdentity) {
  RngState rng(11);
  DenseMatrix a = random_matrix(5, 5, rng);
  Tape t;
  EXPECT_EQ(ad::dropout(t.constant(a), 0.0, rng, true).value(), a);
  EXPECT_EQ(ad::dropout(t.constant(a), 0.7, rng, false).value(), a);
}

TEST(Dropout, SurvivingFractionConcentrates) {
  RngState rng(12);
  Tape t;
  Var y = ad::dropout(t.constant(DenseMatrix(1000, 100, 1.0)), 0.5, rng, true);
  std::size_t alive = 0;
  for (double v : y.value().data()) {
    if (v != 0.0) {
      EXPECT_DOUBLE_EQ(v, 2.0);
      ++alive;
    }
  }
  const double frac = static_cast<double>(alive) / 1e5;
  EXPECT_GE(frac, 0.49);
  EXPECT_LE(frac, 0.51);
}

TEST(Dropout, RateOneThrows) {
  RngState rng(0);
  Tape t;
  EXPECT_THROW(ad::dropout(t.constant(DenseMatrix(1, 1)), 1.0, rng, true), DomainError);
}

TEST(MeanRows, Values) {
  Tape t;
  EXPECT_EQ(ad::mean_rows(t.constant({{4, 5}})).value(), (DenseMatrix{{4, 5}}));
  EXPECT_EQ(ad::mean_rows(t.constant({{0, 2}, {2, 0}})).value(), (DenseMatrix{{1, 1}}));
  EXPECT_THROW(ad::mean_rows(t.constant(DenseMatrix(0, 3))), DimensionError);
}

TEST(MeanRows, GradCheck) {
  RngState rng(13);
  DenseMatrix w = random_matrix(1, 3, rng);
  auto f = [&](Tape& t, std::span<const Var> in) { return ad::sum(ad::hadamard(ad::mean_rows(in[0]), t.constant(w))); };
  EXPECT_LT(grad_check(f, {random_matrix(4, 3, rng)}), 1e-6);
}

TEST(CrossEntropy, UniformLogits) {
  Tape t;
  DenseMatrix y{{0, 0, 1, 0}};
  std::vector<std::size_t> mask{0};
  EXPECT_NEAR(ad::softmax_cross_entropy(t.constant(DenseMatrix(1, 4)), y, mask).scalar(), std::log(4.0), 1e-15);
}

TEST(CrossEntropy, SaturatedMargin) {
  Tape t;
  DenseMatrix y{{1, 0, 0}};
  std::vector<std::size_t> mask{0};
  EXPECT_LT(ad::softmax_cross_entropy(t.constant({{30, 0, 0}}), y, mask).scalar(), 1e-9);
}

TEST(CrossEntropy, HandEvaluated) {
  Tape t;
  DenseMatrix y{{1, 0}};
  std::vector<std::size_t> mask{0};
  const double expected = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));
  EXPECT_NEAR(ad::softmax_cross_entropy(t.constant({{1, 0}}), y, mask).scalar(), expected, 1e-15);
  EXPECT_NEAR(expected, 0.3133, 5e-5);
}

TEST(CrossEntropy, MaskedGradientAndErrors) {
  RngState rng(14);
  DenseMatrix y(5, 3);
  for (std::size_t r = 0; r < 5; ++r) y(r, r % 3) = 1.0;
  std::vector<std::size_t> mask{0, 2, 3};
  auto f = [&](Tape&, std::span<const Var> in) { return ad::softmax_cross_entropy(in[0], y, mask); };
  DenseMatrix logits = random_matrix(5, 3, rng);
  EXPECT_LT(grad_check(f, {logits}), 1e-4);
  Tape t;
  Var l = t.leaf(logits);
  t.backward(ad::softmax_cross_entropy(l, y, mask));
  for (double v : l.grad().row(1)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(ad::softmax_cross_entropy(l, y, std::span<const std::size_t>{}), DomainError);
}

TEST(GumbelSoftmax, HardOutputIsOneHot) {
  RngState rng(15);
  Tape t;
  Var y = ad::gumbel_softmax(t.leaf(random_matrix(6, 3, rng)), 1.0, true, rng, true);
  for (std::size_t r = 0; r < 6; ++r) {
    double s = 0.0;
    for (double v : y.value().row(r)) {
      EXPECT_TRUE(v == 0.0 || v == 1.0);
      s += v;
    }
    EXPECT_EQ(s, 1.0);
  }
}

TEST(GumbelSoftmax, EvalSelectsArgmax) {
  RngState rng(16);
  Tape t;
  Var y = ad::gumbel_softmax(t.leaf({{0, 5, 1}}), 1.0, true, rng, false);
  EXPECT_EQ(y.value(), (DenseMatrix{{0, 1, 0}}));
}

TEST(GumbelSoftmax, SamplingFrequencyMatchesSoftmax) {
  // Gumbel-max sampling reproduces softmax(logits) exactly; here p(1) = 3/4.
  RngState rng(17);
  Tape t;
  DenseMatrix l(100000, 2);
  for (std::size_t r = 0; r < l.rows(); ++r) l(r, 1) = std::log(3.0);
  Var logits = t.constant(std::move(l));
  Var y = ad::gumbel_softmax(logits, 1.0, true, rng, true);
  double picked = 0.0;
  for (std::size_t r = 0; r < 100000; ++r) picked += y.value()(r, 1);
  EXPECT_GE(picked / 1e5, 0.73);
  EXPECT_LE(picked / 1e5, 0.77);
}

TEST(GumbelSoftmax, StraightThroughGradientEqualsSoftGradient) {
  RngState base(18);
  DenseMatrix logits = random_matrix(3, 4, base), probe = random_matrix(3, 4, base);
  DenseMatrix g_hard, g_soft;
  for (bool hard : {true, false}) {
    Tape t;
    RngState rng(99);
    Var l = t.leaf(logits);
    Var y = ad::gumbel_softmax(l, 0.5, hard, rng, true);
    t.backward(ad::sum(ad::hadamard(y, t.constant(probe))));
    (hard ? g_hard : g_soft) = l.grad();
  }
  EXPECT_EQ(g_hard, g_soft);
  EXPECT_GT(std::abs(g_hard[0]) + std::abs(g_hard[1]), 0.0);
}

TEST(GumbelSoftmax, NonPositiveTemperatureThrows) {
  RngState rng(0);
  Tape t;
  EXPECT_THROW(ad::gumbel_softmax(t.leaf(DenseMatrix(1, 3)), 0.0, true, rng, true), DomainError);
}

TEST(Backward, SumOfParameterGivesOnes) {
  Parameter p("w", DenseMatrix{{1, 2}, {3, 4}});
  Tape t;
  t.backward(ad::sum(t.param(p)));
  EXPECT_EQ(p.grad, DenseMatrix(2, 2, 1.0));
}

TEST(Backward, HalfSquaredNormGivesParameter) {
  Parameter p("w", DenseMatrix{{1, -2}, {0.5, 4}});
  Tape t;
  Var w = t.param(p);
  t.backward(ad::scale(ad::sum(ad::hadamard(w, w)), 0.5));
  EXPECT_EQ(p.grad, p.value);
}

TEST(Backward, UnreachableNodesHaveZeroGradAndLossMustBeScalar) {
  Tape t;
  Var a = t.leaf({{1, 2}});
  Var b = t.leaf({{3, 4}});
  Var loss = ad::sum(a);
  t.backward(loss);
  EXPECT_EQ(b.grad(), DenseMatrix(1, 2));
  EXPECT_THROW(t.backward(a), DimensionError);
}

TEST(GradCheckHarness, LinearConstantAndComposite) {
  RngState rng(19);
  DenseMatrix c = random_matrix(3, 3, rng);
  auto linear = [&](Tape& t, std::span<const Var> in) { return ad::sum(ad::hadamard(in[0], t.constant(c))); };
  EXPECT_LT(grad_check(linear, {random_matrix(3, 3, rng)}), 1e-9);

  auto constant = [](Tape& t, std::span<const Var>) { return t.constant(DenseMatrix(1, 1, 4.0)); };
  EXPECT_EQ(grad_check(constant, {random_matrix(2, 2, rng)}), 0.0);

  DenseMatrix w = random_matrix(4, 5, rng);
  auto composite = [&](Tape& t, std::span<const Var> in) {
    Var h = ad::relu(ad::matmul(in[0], in[1]));
    Var n = ad::layer_norm(h, t.constant(DenseMatrix(1, 5, 1.0)), t.constant(DenseMatrix(1, 5)));
    return ad::sum(ad::hadamard(n, t.constant(w)));
  };
  EXPECT_LT(grad_check(composite, {random_matrix(4, 3, rng), random_matrix(3, 5, rng)}), 1e-4);
}

TEST(Determinism, SameSeedSameStream) {
  auto run = [] {
    RngState rng(1234);
    Tape t;
    Var x = t.leaf(DenseMatrix(8, 8, 1.0));
    Var d = ad::dropout(x, 0.3, rng, true);
    Var g = ad::gumbel_softmax(d, 0.5, false, rng, true);
    return g.value();
  };
  EXPECT_EQ(run(), run());
}

TEST(Determinism, ForkedStreamsIndependentOfOrder) {
  RngState root(5);
  RngState a1 = root.fork(1), b1 = root.fork(2);
  const double x = a1.uniform(), y = b1.uniform();
  RngState b2 = root.fork(2), a2 = root.fork(1);
  EXPECT_EQ(b2.uniform(), y);
  EXPECT_EQ(a2.uniform(), x);
  EXPECT_NE(x, y);
}
