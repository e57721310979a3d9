#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "twohop/tensor_ops.hpp"

using namespace twohop;

namespace {

DenseMatrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  DenseMatrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

ProbabilityDistribution random_distribution(std::size_t n, std::mt19937_64& rng, bool with_zeros = false) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector p(n);
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = (with_zeros && i % 3 == 0) ? 0.0 : u(rng) + 1e-3;
    s += p[i];
  }
  for (double& x : p) x /= s;
  return ProbabilityDistribution::from_probs(p);
}

}  // namespace

TEST(Matmul, IdentityAndProjector) {
  const DenseMatrix a(2, 2, {1, 2, 3, 4});
  EXPECT_EQ(matmul(DenseMatrix::identity(2), a), a);
  const DenseMatrix proj(2, 2, {1, 0, 0, 0});
  EXPECT_EQ(matmul(proj, DenseMatrix(2, 2, {5, 6, 7, 8})), DenseMatrix(2, 2, {5, 6, 0, 0}));
}

TEST(Matmul, MatchesTripleLoopOnRandomShapes) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = trial == 0 ? 3 : dim(rng), k = trial == 0 ? 4 : dim(rng), m = trial == 0 ? 2 : dim(rng);
    const auto a = random_matrix(n, k, rng), b = random_matrix(k, m, rng);
    const auto c = matmul(a, b);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        long double s = 0;
        for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a(i, t)) * b(t, j);
        EXPECT_NEAR(c(i, j), static_cast<double>(s), 1e-12 * std::max(1.0L, std::fabs(s)));
      }
  }
}

TEST(Matmul, ShapeMismatchRejected) {
  EXPECT_THROW(matmul(DenseMatrix(2, 3), DenseMatrix(2, 3)), InvalidInput);
}

TEST(Softmax, KnownValues) {
  const Vector zero{0.0, 0.0};
  const auto p = softmax(zero);
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  for (double c : {-7.0, 0.0, 3.5, 1e6}) {
    const Vector same(4, c);
    const auto q = softmax(same);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(q[i], 0.25);
  }
  const Vector pm{1.0, -1.0};
  const auto r = softmax(pm);
  EXPECT_NEAR(r[0], std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(r[0], 0.88080, 1e-4);
  EXPECT_NEAR(r[1], 0.11920, 1e-4);
}

TEST(Softmax, NormalizedAndShiftInvariant) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 4.0);
  for (int trial = 0; trial < 200; ++trial) {
    Vector z(17);
    for (double& x : z) x = n(rng);
    const auto p = softmax(z);
    double s = 0;
    for (std::size_t i = 0; i < p.size(); ++i) s += p[i];
    EXPECT_NEAR(s, 1.0, 1e-12);
    Vector shifted = z;
    const double c = n(rng) * 10;
    for (double& x : shifted) x += c;
    const auto q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
    const auto lp = log_softmax(z);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(std::exp(lp[i]), p[i], 1e-12);
  }
}

TEST(Softmax, NonFiniteRejected) {
  const Vector bad{0.0, NAN};
  EXPECT_THROW(softmax(bad), InvalidInput);
  const Vector inf{0.0, INFINITY};
  EXPECT_THROW(log_softmax(inf), InvalidInput);
}

TEST(LayerNorm, KnownValues) {
  const Vector ones(2, 1.0), zeros(2, 0.0);
  const Vector constant(5, 3.0), g5(5, 1.0), s5(5, 0.0);
  for (double v : layer_norm(constant, g5, s5, 1e-5)) EXPECT_EQ(v, 0.0);
  const Vector x{1.0, 0.0};
  const auto y = layer_norm(x, ones, zeros, 0.0);
  EXPECT_DOUBLE_EQ(y[0], 1.0);
  EXPECT_DOUBLE_EQ(y[1], -1.0);
  const Vector shift{0.25, -2.0};
  const auto z = layer_norm(Vector{4.0, -9.0}, zeros, shift, 1e-5);
  EXPECT_EQ(z, shift);
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(2.0, 5.0);
  for (int trial = 0; trial < 100; ++trial) {
    Vector x(13);
    for (double& v : x) v = n(rng);
    const auto y = layer_norm(x, Vector(13, 1.0), Vector(13, 0.0), 1e-300);
    double mean = 0, var = 0;
    for (double v : y) mean += v / 13.0;
    for (double v : y) var += (v - mean) * (v - mean) / 13.0;
    EXPECT_LE(std::abs(mean), 1e-12);
    EXPECT_NEAR(var, 1.0, 1e-9);
  }
}

TEST(LayerNorm, LengthMismatchRejected) {
  EXPECT_THROW(layer_norm(Vector{1, 2}, Vector{1}, Vector{0, 0}, 1e-5), InvalidInput);
}

TEST(RmsNorm, KnownValues) {
  const auto a = rms_norm(Vector{1.0, 1.0}, Vector{1.0, 1.0}, 0.0);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
  EXPECT_DOUBLE_EQ(a[1], 1.0);
  const auto b = rms_norm(Vector{2.0, 0.0}, Vector{1.0, 1.0}, 0.0);
  EXPECT_NEAR(b[0], std::sqrt(2.0), 1e-15);
  EXPECT_EQ(b[1], 0.0);
  for (double v : rms_norm(Vector{3.0, -1.0, 2.0}, Vector(3, 0.0), 1e-5)) EXPECT_EQ(v, 0.0);
}

TEST(CrossEntropy, KnownValues) {
  const auto onehot = ProbabilityDistribution::from_probs({0.0, 1.0, 0.0});
  EXPECT_EQ(cross_entropy(onehot, onehot), 0.0);
  const auto u = ProbabilityDistribution::uniform(4);
  EXPECT_NEAR(cross_entropy(u, u), std::log(4.0), 1e-15);
  EXPECT_NEAR(cross_entropy(u, u), 1.38629, 1e-5);
  const auto q = ProbabilityDistribution::from_probs({0.5, 0.5});
  const auto p = ProbabilityDistribution::from_probs({0.75, 0.25});
  EXPECT_NEAR(cross_entropy(q, p), std::log(2.0), 1e-15);
  EXPECT_NEAR(cross_entropy(q, p), 0.69315, 1e-5);
}

TEST(CrossEntropy, ZeroProbabilityUsesFloor) {
  const auto q = ProbabilityDistribution::from_probs({1.0, 0.0});
  const auto p = ProbabilityDistribution::from_probs({0.5, 0.5});
  const double h = cross_entropy(q, p);
  EXPECT_TRUE(std::isfinite(h));
  EXPECT_NEAR(h, -0.5 * std::log(kLogFloor), 1e-9);
}

TEST(CrossEntropy, SelfEqualsShannonEntropy) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const auto p = random_distribution(11, rng, trial % 2 == 0);
    double h = 0;
    for (std::size_t i = 0; i < p.size(); ++i)
      if (p[i] > 0) h -= p[i] * std::log(p[i]);
    EXPECT_NEAR(cross_entropy(p, p), h, 1e-12);
    EXPECT_NEAR(entropy(p), h, 1e-12);
  }
}

TEST(ProbabilityDistribution, RejectsOffSimplex) {
  EXPECT_THROW(ProbabilityDistribution::from_probs({0.5, 0.6}), InvalidInput);
  EXPECT_THROW(ProbabilityDistribution::from_probs({1.5, -0.5}), InvalidInput);
  EXPECT_THROW(ProbabilityDistribution::from_probs({}), InvalidInput);
}
