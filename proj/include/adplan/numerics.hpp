#pragma once

// Dense linear algebra and scalar statistical kernels.
//
// Everything here is sized for planning problems with a few dozen viewer
// types and campaigns, so all storage is dense and row-major.

#include "adplan/errors.hpp"

#include <boost/math/distributions/binomial.hpp>

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

namespace adplan {

using Vector = std::vector<double>;

class DenseMatrix {
public:
  DenseMatrix() = default;

  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (std::isnan(fill))
      throw InvalidInput("DenseMatrix: NaN fill value");
  }

  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw InvalidInput("DenseMatrix: data length " + std::to_string(data_.size()) +
                         " does not match " + std::to_string(rows_) + "x" +
                         std::to_string(cols_));
    for (double v : data_)
      if (std::isnan(v))
        throw InvalidInput("DenseMatrix: NaN entry");
  }

  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto &r : rows) {
      if (r.size() != cols_)
        throw InvalidInput("DenseMatrix: ragged initializer");
      for (double v : r) {
        if (std::isnan(v))
          throw InvalidInput("DenseMatrix: NaN entry");
        data_.push_back(v);
      }
    }
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i)
      m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double &operator()(std::size_t i, std::size_t j) noexcept { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept { return data_[i * cols_ + j]; }

  std::span<const double> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<double> row(std::size_t i) noexcept { return {data_.data() + i * cols_, cols_}; }

  const std::vector<double> &data() const noexcept { return data_; }

  double max_abs() const noexcept {
    double m = 0.0;
    for (double v : data_)
      m = std::max(m, std::abs(v));
    return m;
  }

  double trace() const noexcept {
    double t = 0.0;
    for (std::size_t i = 0; i < std::min(rows_, cols_); ++i)
      t += (*this)(i, i);
    return t;
  }

  Vector multiply(std::span<const double> x) const {
    Vector y(rows_, 0.0);
    for (std::size_t i = 0; i < rows_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < cols_; ++j)
        acc += (*this)(i, j) * x[j];
      y[i] = acc;
    }
    return y;
  }

  /// Principal submatrix on the given (ordered) index set.
  DenseMatrix submatrix(std::span<const std::size_t> idx) const {
    DenseMatrix s(idx.size(), idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a)
      for (std::size_t b = 0; b < idx.size(); ++b)
        s(a, b) = (*this)(idx[a], idx[b]);
    return s;
  }

  bool symmetric(double rel_tol = 1e-12) const noexcept {
    if (!square())
      return false;
    const double scale = std::max(1.0, max_abs());
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = i + 1; j < cols_; ++j)
        if (std::abs((*this)(i, j) - (*this)(j, i)) > rel_tol * scale)
          return false;
    return true;
  }

  friend bool operator==(const DenseMatrix &, const DenseMatrix &) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Packed lower-triangular factor; row i holds entries (i,0..i).
class LowerTriangular {
public:
  LowerTriangular() = default;
  explicit LowerTriangular(std::size_t dim) : dim_(dim), data_(dim * (dim + 1) / 2, 0.0) {}

  std::size_t dim() const noexcept { return dim_; }

  double &operator()(std::size_t i, std::size_t j) noexcept { return data_[i * (i + 1) / 2 + j]; }
  double operator()(std::size_t i, std::size_t j) const noexcept {
    return j > i ? 0.0 : data_[i * (i + 1) / 2 + j];
  }

  /// y = L x
  Vector multiply(std::span<const double> x) const {
    Vector y(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j <= i; ++j)
        acc += (*this)(i, j) * x[j];
      y[i] = acc;
    }
    return y;
  }

  /// y = L^T x
  Vector multiply_transposed(std::span<const double> x) const {
    Vector y(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        y[j] += (*this)(i, j) * x[i];
    return y;
  }

  DenseMatrix dense() const {
    DenseMatrix m(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        m(i, j) = (*this)(i, j);
    return m;
  }

  /// L L^T
  DenseMatrix reconstruct() const {
    DenseMatrix m(dim_, dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j <= i; ++j) {
        double acc = 0.0;
        for (std::size_t k = 0; k <= j; ++k)
          acc += (*this)(i, k) * (*this)(j, k);
        m(i, j) = acc;
        m(j, i) = acc;
      }
    return m;
  }

private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

inline LowerTriangular cholesky(const DenseMatrix &m) {
  if (!m.square())
    throw InvalidInput("cholesky: matrix is not square");
  if (!m.symmetric(1e-12))
    throw InvalidInput("cholesky: matrix is not symmetric");
  const std::size_t n = m.rows();
  LowerTriangular l(n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k)
      d -= l(j, k) * l(j, k);
    if (!(d > 0.0))
      throw NotPositiveDefinite("cholesky: non-positive pivot " + std::to_string(d) +
                                " at column " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k)
        s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

/// Cholesky with diagonal jitter: on failure add eps*I with
/// eps = 1e-10*trace/n, retrying up to three times with eps scaled by 100.
/// An all-zero matrix yields an all-zero factor.
inline LowerTriangular cholesky_jittered(const DenseMatrix &m) {
  const std::size_t n = m.rows();
  if (m.max_abs() == 0.0)
    return LowerTriangular(n);
  try {
    return cholesky(m);
  } catch (const NotPositiveDefinite &) {
  }
  double eps = 1e-10 * std::max(m.trace(), 0.0) / static_cast<double>(std::max<std::size_t>(n, 1));
  if (!(eps > 0.0))
    eps = 1e-10 * m.max_abs();
  std::string last;
  for (int attempt = 0; attempt < 3; ++attempt, eps *= 100.0) {
    DenseMatrix j = m;
    for (std::size_t i = 0; i < n; ++i)
      j(i, i) += eps;
    try {
      return cholesky(j);
    } catch (const NotPositiveDefinite &e) {
      last = e.what();
    }
  }
  throw NotPositiveDefinite("cholesky_jittered: factorization failed after 3 jitter attempts (" +
                            last + ")");
}

/// LU factorization with partial pivoting. Rejects pivots below
/// 1e-14 * max|a| as singular.
class LuFactorization {
public:
  explicit LuFactorization(DenseMatrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
    if (!lu_.square())
      throw InvalidInput("LuFactorization: matrix is not square");
    const std::size_t n = lu_.rows();
    const double tol = 1e-14 * lu_.max_abs();
    for (std::size_t i = 0; i < n; ++i)
      perm_[i] = i;
    for (std::size_t k = 0; k < n; ++k) {
      std::size_t p = k;
      double best = std::abs(lu_(k, k));
      for (std::size_t i = k + 1; i < n; ++i)
        if (std::abs(lu_(i, k)) > best) {
          best = std::abs(lu_(i, k));
          p = i;
        }
      if (!(best > tol))
        throw SingularSystem("solve_linear: singular pivot at column " + std::to_string(k));
      if (p != k) {
        auto rk = lu_.row(k);
        auto rp = lu_.row(p);
        std::swap_ranges(rk.begin(), rk.end(), rp.begin());
        std::swap(perm_[k], perm_[p]);
      }
      const double pivot = lu_(k, k);
      auto rk = lu_.row(k);
      for (std::size_t i = k + 1; i < n; ++i) {
        const double f = lu_(i, k) / pivot;
        lu_(i, k) = f;
        if (f == 0.0)
          continue;
        auto ri = lu_.row(i);
        for (std::size_t j = k + 1; j < n; ++j)
          ri[j] -= f * rk[j];
      }
    }
  }

  std::size_t dim() const noexcept { return lu_.rows(); }

  Vector solve(std::span<const double> b) const {
    const std::size_t n = lu_.rows();
    if (b.size() != n)
      throw InvalidInput("LuFactorization::solve: dimension mismatch");
    Vector x(n);
    for (std::size_t i = 0; i < n; ++i)
      x[i] = b[perm_[i]];
    for (std::size_t i = 0; i < n; ++i) {
      double s = x[i];
      for (std::size_t j = 0; j < i; ++j)
        s -= lu_(i, j) * x[j];
      x[i] = s;
    }
    for (std::size_t k = n; k-- > 0;) {
      double s = x[k];
      for (std::size_t j = k + 1; j < n; ++j)
        s -= lu_(k, j) * x[j];
      x[k] = s / lu_(k, k);
    }
    return x;
  }

private:
  DenseMatrix lu_;
  std::vector<std::size_t> perm_;
};

inline Vector solve_linear(const DenseMatrix &a, std::span<const double> b) {
  if (!a.square() || a.rows() != b.size())
    throw InvalidInput("solve_linear: dimension mismatch");
  Vector x = LuFactorization(a).solve(b);
#ifndef NDEBUG
  {
    const std::size_t n = a.rows();
    double xnorm = 0.0, res = 0.0;
    for (double v : x)
      xnorm = std::max(xnorm, std::abs(v));
    const Vector ax = a.multiply(x);
    for (std::size_t i = 0; i < n; ++i)
      res = std::max(res, std::abs(ax[i] - b[i]));
    // backward-stability bound; well-conditioned systems meet 1e-8*(1+|b|)
    assert(res <= 1e-8 * (1.0 + static_cast<double>(n) * a.max_abs() * xnorm));
  }
#endif
  return x;
}

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Inverse standard normal CDF. Rational approximation (Acklam) refined by
/// Halley steps against norm_cdf.
inline double norm_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw InvalidInput("norm_quantile: p must lie in (0,1), got " + std::to_string(p));

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;

  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }

  for (int it = 0; it < 2; ++it) {
    // Work with the smaller tail to keep the residual accurate.
    const double e = x < 0.0 ? norm_cdf(x) - p : (1.0 - p) - norm_cdf(-x);
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x = x - u / (1.0 + 0.5 * x * u);
  }
  return x;
}

/// P(Binomial(n,p) <= m).
inline double binomial_tail_leq(long long n, long long m, double p) {
  if (n < 0 || m < 0 || m > n || !(p >= 0.0 && p <= 1.0))
    throw InvalidInput("binomial_tail_leq: require 0 <= m <= n and p in [0,1]");
  if (m == n)
    return 1.0;
  if (p == 0.0)
    return 1.0;
  if (p == 1.0)
    return 0.0;
  boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  return boost::math::cdf(dist, static_cast<double>(m));
}

/// P(Binomial(n,p) = i).
inline double binomial_pmf(long long n, long long i, double p) {
  if (i < 0 || i > n)
    return 0.0;
  boost::math::binomial_distribution<double> dist(static_cast<double>(n), p);
  return boost::math::pdf(dist, static_cast<double>(i));
}

/// log C(n, k)
inline double log_binomial_coefficient(long long n, long long k) {
  if (k < 0 || k > n)
    return -std::numeric_limits<double>::infinity();
  return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
         std::lgamma(static_cast<double>(n - k) + 1.0);
}

/// One-sided exact (Clopper-Pearson) lower confidence bound on a binomial
/// proportion after `successes` out of `trials`.
inline double clopper_pearson_lower(long long successes, long long trials, double confidence) {
  if (trials <= 0)
    throw InvalidInput("clopper_pearson_lower: trials must be positive");
  if (successes < 0 || successes > trials)
    throw InvalidInput("clopper_pearson_lower: successes out of range");
  if (!(confidence > 0.0 && confidence < 1.0))
    throw InvalidInput("clopper_pearson_lower: confidence must lie in (0,1)");
  if (successes == 0)
    return 0.0;
  if (successes == trials)
    return std::pow(1.0 - confidence, 1.0 / static_cast<double>(trials));
  using boost::math::binomial_distribution;
  return binomial_distribution<double>::find_lower_bound_on_p(
      static_cast<double>(trials), static_cast<double>(successes), 1.0 - confidence,
      binomial_distribution<double>::clopper_pearson_exact_interval);
}

} // namespace adplan
