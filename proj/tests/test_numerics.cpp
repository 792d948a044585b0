#include "adplan/numerics.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace adplan;

namespace {

DenseMatrix random_spd(std::size_t n, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  DenseMatrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g(i, j) = normal(rng);
  DenseMatrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += g(k, i) * g(k, j);
      a(i, j) = s + (i == j ? 1e-6 : 0.0);
    }
  return a;
}

} // namespace

TEST(DenseMatrix, RejectsNonFinite) {
  EXPECT_THROW(DenseMatrix(1, 1, std::vector<double>{std::nan("")}), InvalidInput);
  EXPECT_THROW(DenseMatrix(2, 2, std::vector<double>{1.0, 2.0}), InvalidInput);
}

TEST(Cholesky, Identity) {
  const LowerTriangular l = cholesky(DenseMatrix::identity(3));
  EXPECT_EQ(l.dense(), DenseMatrix::identity(3));
}

TEST(Cholesky, HandFactor) {
  const LowerTriangular l = cholesky(DenseMatrix{{4, 2}, {2, 5}});
  EXPECT_DOUBLE_EQ(l(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(l(1, 0), 1.0);
  EXPECT_DOUBLE_EQ(l(1, 1), 2.0);
  EXPECT_EQ(l.reconstruct(), (DenseMatrix{{4, 2}, {2, 5}}));
}

TEST(Cholesky, Indefinite) { EXPECT_THROW(cholesky(DenseMatrix{{1, 2}, {2, 1}}), NotPositiveDefinite); }

TEST(Cholesky, RejectsAsymmetric) {
  EXPECT_THROW(cholesky(DenseMatrix{{1, 0.5}, {0.2, 1}}), InvalidInput);
  EXPECT_THROW(cholesky(DenseMatrix(2, 3)), InvalidInput);
}

TEST(Cholesky, RoundTripRandom) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + trial % 8;
    const DenseMatrix a = random_spd(n, rng);
    const DenseMatrix back = cholesky(a).reconstruct();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        ASSERT_NEAR(back(i, j), a(i, j), 1e-10 * (1.0 + a.max_abs())) << "trial " << trial;
  }
}

TEST(Cholesky, JitterHandlesSingular) {
  // rank one
  const DenseMatrix a{{1, 1}, {1, 1}};
  EXPECT_THROW(cholesky(a), NotPositiveDefinite);
  const LowerTriangular l = cholesky_jittered(a);
  const DenseMatrix back = l.reconstruct();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(back(i, j), a(i, j), 1e-8);
  EXPECT_EQ(cholesky_jittered(DenseMatrix(3, 3)).reconstruct(), DenseMatrix(3, 3));
}

TEST(SolveLinear, Identity) {
  const Vector b{1.5, -2.0, 3.25};
  EXPECT_EQ(solve_linear(DenseMatrix::identity(3), b), b);
}

TEST(SolveLinear, Diagonal) {
  const Vector x = solve_linear(DenseMatrix{{2, 0}, {0, 4}}, Vector{2, 8});
  EXPECT_DOUBLE_EQ(x[0], 1.0);
  EXPECT_DOUBLE_EQ(x[1], 2.0);
}

TEST(SolveLinear, RecoversKnownSolution) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    DenseMatrix a(20, 20);
    for (std::size_t i = 0; i < 20; ++i)
      for (std::size_t j = 0; j < 20; ++j)
        a(i, j) = normal(rng);
    Vector x(20);
    for (double &v : x)
      v = normal(rng);
    const Vector b = a.multiply(x);
    const Vector got = solve_linear(a, b);
    double err = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      err = std::max(err, std::abs(got[i] - x[i]));
      scale = std::max(scale, std::abs(x[i]));
    }
    EXPECT_LE(err, 1e-8 * scale);
  }
}

TEST(SolveLinear, Singular) {
  EXPECT_THROW(solve_linear(DenseMatrix{{1, 2}, {2, 4}}, Vector{1, 2}), SingularSystem);
}

TEST(NormCdf, KnownValues) {
  EXPECT_EQ(norm_cdf(0.0), 0.5);
  EXPECT_NEAR(norm_cdf(-1.6448536269514722), 0.05, 1e-10);
  EXPECT_NEAR(norm_cdf(1.959963984540054), 0.975, 1e-12);
}

TEST(NormCdf, SymmetryAndMonotone) {
  double prev = 0.0;
  for (double x = -8.0; x <= 8.0; x += 0.01) {
    EXPECT_NEAR(norm_cdf(x), 1.0 - norm_cdf(-x), 1e-14);
    EXPECT_GE(norm_cdf(x), prev);
    prev = norm_cdf(x);
  }
}

TEST(NormQuantile, KnownValues) {
  EXPECT_EQ(norm_quantile(0.5), 0.0);
  EXPECT_NEAR(norm_quantile(0.05), -1.6448536, 1e-6);
  for (double p : {1e-10, 1e-4, 0.01, 0.05, 0.1, 0.3, 0.7, 0.95, 0.999})
    EXPECT_NEAR(norm_quantile(p), oracle::norm_quantile(p), 1e-9) << p;
}

TEST(NormQuantile, InverseOfCdf) {
  for (double x = -6.0; x <= 6.0; x += 0.05)
    EXPECT_NEAR(norm_quantile(norm_cdf(x)), x, 1e-8) << x;
  double prev = -1e300;
  for (double p = 0.001; p < 1.0; p += 0.001) {
    EXPECT_GE(norm_quantile(p), prev);
    prev = norm_quantile(p);
  }
}

TEST(NormQuantile, Domain) {
  EXPECT_THROW(norm_quantile(0.0), InvalidInput);
  EXPECT_THROW(norm_quantile(1.0), InvalidInput);
  EXPECT_THROW(norm_quantile(std::nan("")), InvalidInput);
}

TEST(BinomialTail, Examples) {
  EXPECT_EQ(binomial_tail_leq(10, 10, 0.3), 1.0);
  EXPECT_NEAR(binomial_tail_leq(10, 1, 0.1), 0.7360989291, 1e-10);
  EXPECT_NEAR(binomial_tail_leq(1, 0, 0.5), 0.5, 1e-15);
}

TEST(BinomialTail, MatchesExactArithmetic) {
  for (const oracle::Fraction a : {oracle::Fraction{1, 20}, oracle::Fraction{1, 10}, oracle::Fraction{3, 10}})
    for (long n : {1L, 7L, 30L, 120L}) {
      const auto tails = oracle::binomial_tails(n, 20, a);
      for (long m = 0; m < static_cast<long>(tails.size()); ++m)
        EXPECT_NEAR(binomial_tail_leq(n, m, a.value()), tails[m], 1e-12) << n << " " << m;
    }
}

TEST(BinomialTail, ComplementSumsToOne) {
  for (long n : {5L, 40L, 200L})
    for (double p : {0.05, 0.5, 0.9})
      for (long m = 0; m < n; m += 3) {
        double rest = 0.0;
        for (long i = m + 1; i <= n; ++i)
          rest += binomial_pmf(n, i, p);
        EXPECT_NEAR(binomial_tail_leq(n, m, p) + rest, 1.0, 1e-10);
      }
}

TEST(ClopperPearson, AllSuccesses) {
  // 0.01^(1/100000)
  EXPECT_NEAR(clopper_pearson_lower(100000, 100000, 0.99), 0.9999539493585035, 1e-12);
  EXPECT_NEAR(clopper_pearson_lower(100000, 100000, 0.99), 0.99995, 1e-5);
}

TEST(ClopperPearson, NoSuccesses) { EXPECT_EQ(clopper_pearson_lower(0, 50, 0.99), 0.0); }

TEST(ClopperPearson, MatchesBisection) {
  EXPECT_NEAR(clopper_pearson_lower(9, 10, 0.99), oracle::clopper_pearson_lower(9, 10, 0.99), 1e-9);
  for (long n : {10L, 57L, 400L})
    for (long s = 1; s < n; s += n / 7 + 1)
      for (double conf : {0.9, 0.99})
        EXPECT_NEAR(clopper_pearson_lower(s, n, conf), oracle::clopper_pearson_lower(s, n, conf), 1e-9)
            << s << "/" << n;
}

TEST(ClopperPearson, Domain) {
  EXPECT_THROW(clopper_pearson_lower(1, 0, 0.99), InvalidInput);
  EXPECT_THROW(clopper_pearson_lower(5, 4, 0.99), InvalidInput);
  EXPECT_THROW(clopper_pearson_lower(1, 4, 1.0), InvalidInput);
}
