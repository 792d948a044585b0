#pragma once

// Reference computations shared by the unit and acceptance tests. None of
// them calls into the code under test except where noted.

#include "adplan/ipm.hpp"
#include "adplan/model.hpp"
#include "adplan/numerics.hpp"
#include "adplan/sample_approx.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using boost::multiprecision::cpp_int;
using Big = boost::multiprecision::cpp_bin_float_50;

/// alpha as the exact fraction num/den (alpha in {1/20, 1/10} in practice).
struct Fraction {
  long num;
  long den;
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline cpp_int choose(long n, long k) {
  if (k < 0 || k > n)
    return 0;
  cpp_int c = 1;
  for (long i = 1; i <= k; ++i)
    c = c * (n - k + i) / i;
  return c;
}

inline cpp_int ipow(long base, long e) {
  cpp_int r = 1;
  for (long i = 0; i < e; ++i)
    r *= base;
  return r;
}

/// P(Binomial(n, a) <= m) in exact integer arithmetic.
inline double binomial_tail_leq(long n, long m, Fraction a) {
  cpp_int num = 0;
  for (long i = 0; i <= m; ++i)
    num += choose(n, i) * ipow(a.num, i) * ipow(a.den - a.num, n - i);
  return static_cast<double>(Big(num) / Big(ipow(a.den, n)));
}

/// Cumulative tails P(Bin(n, a) <= m) for m = 0..max_m, exactly.
inline std::vector<double> binomial_tails(long n, long max_m, Fraction a) {
  std::vector<double> out;
  const Big den = Big(ipow(a.den, n));
  cpp_int num = 0;
  for (long i = 0; i <= std::min(max_m, n); ++i) {
    num += choose(n, i) * ipow(a.num, i) * ipow(a.den - a.num, n - i);
    out.push_back(static_cast<double>(Big(num) / den));
  }
  return out;
}

/// 1 - C(n,d) (1-a)^(n-d) exactly.
inline double ub_confidence(long n, long d, Fraction a) {
  const Big tail = Big(choose(n, d) * ipow(a.den - a.num, n - d)) / Big(ipow(a.den, n - d));
  return static_cast<double>(Big(1) - tail);
}

/// P(Binomial(n,p) >= s) by direct summation in long double.
inline long double upper_tail(long n, long s, long double p) {
  long double total = 0.0L;
  for (long i = s; i <= n; ++i) {
    const long double logc = std::lgamma(static_cast<long double>(n) + 1) -
                             std::lgamma(static_cast<long double>(i) + 1) -
                             std::lgamma(static_cast<long double>(n - i) + 1);
    total += std::exp(logc + i * std::log(p) + (n - i) * std::log1p(-p));
  }
  return total;
}

/// Clopper-Pearson lower bound by bisection: p with P(Bin(n,p) >= s) = 1 - confidence.
inline double clopper_pearson_lower(long s, long n, double confidence) {
  if (s == 0)
    return 0.0;
  long double lo = 0.0L, hi = 1.0L;
  for (int it = 0; it < 200; ++it) {
    const long double mid = 0.5L * (lo + hi);
    if (upper_tail(n, s, mid) < 1.0L - confidence)
      lo = mid;
    else
      hi = mid;
  }
  return static_cast<double>(0.5L * (lo + hi));
}

/// Standard normal quantile by bisection on erfc.
inline double norm_quantile(double p) {
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Box-constrained QP: minimize x^T Q x + c^T x over lo <= x <= hi.

struct BoxQp {
  adplan::DenseMatrix q;
  adplan::Vector c;
  adplan::Vector lo, hi;

  double objective(const adplan::Vector &x) const {
    double f = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      f += c[i] * x[i];
      for (std::size_t j = 0; j < x.size(); ++j)
        f += x[i] * q(i, j) * x[j];
    }
    return f;
  }
};

/// Random strictly convex box QP of dimension n.
inline BoxQp random_box_qp(std::size_t n, std::mt19937_64 &rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  adplan::DenseMatrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g(i, j) = normal(rng);
  BoxQp qp{adplan::DenseMatrix(n, n), adplan::Vector(n), adplan::Vector(n), adplan::Vector(n)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += g(k, i) * g(k, j);
      qp.q(i, j) = s + (i == j ? 0.1 : 0.0);
    }
  for (std::size_t i = 0; i < n; ++i) {
    qp.c[i] = 4.0 * normal(rng);
    qp.lo[i] = -unif(rng) - 0.1;
    qp.hi[i] = unif(rng) + 0.1;
  }
  return qp;
}

/// Projected coordinate descent: each coordinate is minimized exactly and
/// clipped to its box, sweeping until nothing moves.
inline adplan::Vector projected_descent(const BoxQp &qp) {
  const std::size_t n = qp.c.size();
  adplan::Vector x(n);
  for (std::size_t i = 0; i < n; ++i)
    x[i] = 0.5 * (qp.lo[i] + qp.hi[i]);
  for (int sweep = 0; sweep < 200000; ++sweep) {
    double moved = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double g = qp.c[i];
      for (std::size_t j = 0; j < n; ++j)
        if (j != i)
          g += 2.0 * qp.q(i, j) * x[j];
      const double xi = std::clamp(-g / (2.0 * qp.q(i, i)), qp.lo[i], qp.hi[i]);
      moved = std::max(moved, std::abs(xi - x[i]));
      x[i] = xi;
    }
    if (moved < 1e-15)
      break;
  }
  return x;
}

inline adplan::ipm::ConeProgram to_program(const BoxQp &qp) {
  const std::size_t n = qp.c.size();
  adplan::ipm::ConeProgram prog(n);
  prog.quad() = qp.q;
  prog.linear() = qp.c;
  adplan::Vector start(n);
  for (std::size_t i = 0; i < n; ++i) {
    prog.set_bounds(i, qp.lo[i], qp.hi[i]);
    start[i] = 0.5 * (qp.lo[i] + qp.hi[i]);
  }
  prog.set_start(start);
  return prog;
}

// ---------------------------------------------------------------------------
// Random SOC programs: convex quadratic objective, random linear rows and SOC
// rows built around a known interior point.

struct SocProgram {
  adplan::ipm::ConeProgram prog;
  adplan::Vector interior;
};

inline SocProgram random_soc_program(std::size_t n, std::mt19937_64 &rng, bool infeasible_start) {
  using namespace adplan;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  ipm::ConeProgram prog(n);
  DenseMatrix g(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      g(i, j) = normal(rng);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += g(k, i) * g(k, j);
      prog.quad()(i, j) = s / static_cast<double>(n) + (i == j ? 0.01 : 0.0);
    }
    prog.linear()[i] = 2.0 * normal(rng);
  }
  Vector interior(n);
  for (std::size_t i = 0; i < n; ++i) {
    interior[i] = 0.2 + 0.6 * unif(rng);
    prog.set_bounds(i, 0.0, 1.0);
  }
  // a couple of linear rows with slack at the interior point
  for (int r = 0; r < 2; ++r) {
    ipm::LinearConstraint row;
    double at = 0.0, at_small = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = normal(rng);
      row.coeffs.emplace_back(i, a);
      at += a * interior[i];
      at_small += a * 0.02;
    }
    row.bound = std::max(at, at_small) + 0.1 + unif(rng);
    prog.add_linear(row);
  }
  // SOC rows: mean^T x - scale ||L^T x|| >= threshold
  const int nsoc = 1 + static_cast<int>(unif(rng) * 2.0);
  for (int q = 0; q < nsoc; ++q) {
    ipm::SocConstraint soc;
    soc.vars.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      soc.vars[i] = i;
    soc.mean.resize(n);
    for (double &m : soc.mean)
      m = 1.0 + unif(rng);
    LowerTriangular l(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j <= i; ++j)
        l(i, j) = 0.3 * normal(rng);
    soc.factor = l;
    soc.scale = 0.5 + unif(rng);
    const Vector ltx = l.multiply_transposed(interior);
    double norm = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      norm += ltx[i] * ltx[i];
      mean += soc.mean[i] * interior[i];
    }
    soc.threshold = mean - soc.scale * std::sqrt(norm) - 0.05 - 0.2 * unif(rng);
    prog.add_soc(soc);
  }
  Vector start = interior;
  if (infeasible_start)
    for (double &x : start)
      x = 0.02; // small proportions leave every SOC row violated
  prog.set_start(start);
  return {std::move(prog), interior};
}

/// Largest violation of the program's rows, bounds and SOC constraints at x.
inline double max_violation(const adplan::ipm::ConeProgram &prog, const adplan::Vector &x) {
  double worst = 0.0;
  for (const auto &row : prog.linear_ineqs()) {
    double ax = 0.0;
    for (const auto &[j, a] : row.coeffs)
      ax += a * x[j];
    worst = std::max(worst, ax - row.bound);
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    worst = std::max(worst, prog.bounds()[i].lo - x[i]);
    worst = std::max(worst, x[i] - prog.bounds()[i].hi);
  }
  for (const auto &soc : prog.socs()) {
    adplan::Vector xs(soc.vars.size());
    double mean = 0.0;
    for (std::size_t a = 0; a < soc.vars.size(); ++a) {
      xs[a] = x[soc.vars[a]];
      mean += soc.mean[a] * xs[a];
    }
    const adplan::Vector ltx = soc.factor.multiply_transposed(xs);
    double norm = 0.0;
    for (double v : ltx)
      norm += v * v;
    worst = std::max(worst, soc.threshold - (mean - soc.scale * std::sqrt(norm)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Sample approximation by enumerating every set of scenarios to discard and
// solving the robust QP over the rest.

inline double exhaustive_sa(const adplan::Instance &instance, const adplan::ScenarioSet &scenarios,
                            std::size_t discard) {
  using namespace adplan;
  const std::size_t n = scenarios.size();
  std::vector<bool> keep(n, true);
  std::fill(keep.begin(), keep.begin() + static_cast<std::ptrdiff_t>(discard), false);
  double best = std::numeric_limits<double>::infinity();
  do {
    std::vector<double> data;
    std::size_t rows = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (keep[i]) {
        const auto s = scenarios.scenario(i);
        data.insert(data.end(), s.begin(), s.end());
        ++rows;
      }
    ScenarioSet subset;
    subset.samples = DenseMatrix(rows, scenarios.samples.cols(), std::move(data));
    const SolveReport r = solve_robust_sa(instance, subset);
    if (r.status == "optimal")
      best = std::min(best, r.objective);
  } while (std::next_permutation(keep.begin(), keep.end()));
  return best;
}

} // namespace oracle
