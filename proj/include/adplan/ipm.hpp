#pragma once

// Primal-dual interior-point solver for convex quadratic programs with linear
// inequalities and second-order-cone constraints.
//
// Every constraint block is an affine map s = G x + c of the decision vector
// that must lie in a cone (the nonnegative ray for linear rows, the Lorentz
// cone for SOC rows). Primal iterates stay strictly feasible, so s is always
// recomputed from x. Complementarity uses the Jordan product of the cone
// algebra with Nesterov-Todd scaling; the Newton system is reduced to the
// x-block only and dual steps are recovered in closed form. One step length is
// shared by primal and dual blocks.
//
// Starts that violate goal-type constraints go through a Big-M phase: an extra
// slack variable relaxes every such constraint and is penalized with big_m in
// the objective until the x-part becomes strictly feasible on its own.

#include "adplan/errors.hpp"
#include "adplan/model.hpp"
#include "adplan/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace adplan::ipm {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// a^T x <= bound, with a stored sparsely.
struct LinearConstraint {
  std::vector<std::pair<std::size_t, double>> coeffs;
  double bound = 0.0;
  /// Goal-type rows may be relaxed by the Big-M phase; the start must satisfy
  /// every other row strictly.
  bool relaxable = false;
};

/// mean^T x_S - scale * ||factor^T x_S||_2 >= threshold over the variable subset S.
struct SocConstraint {
  std::vector<std::size_t> vars;
  LowerTriangular factor;
  double scale = 0.0;
  Vector mean;
  double threshold = 0.0;
};

struct VariableBounds {
  double lo = -kInf;
  double hi = kInf;
};

/// Minimize x^T Q x + c^T x + constant subject to linear, SOC and bound rows.
class ConeProgram {
public:
  explicit ConeProgram(std::size_t num_vars)
      : num_vars_(num_vars), quad_(num_vars, num_vars), linear_(num_vars, 0.0), bounds_(num_vars) {
    if (num_vars == 0)
      throw InvalidInput("ConeProgram: num_vars must be positive");
  }

  std::size_t num_vars() const noexcept { return num_vars_; }

  const DenseMatrix &quad() const noexcept { return quad_; }
  DenseMatrix &quad() noexcept { return quad_; }
  const Vector &linear() const noexcept { return linear_; }
  Vector &linear() noexcept { return linear_; }
  double constant() const noexcept { return constant_; }
  void set_constant(double c) noexcept { constant_ = c; }

  /// Adds weight * sum_j (x_j - mean(x_S))^2 / |S| to the objective.
  void add_variance_term(std::span<const std::size_t> vars, double weight) {
    const double m = static_cast<double>(vars.size());
    if (vars.empty() || weight == 0.0)
      return;
    for (std::size_t a = 0; a < vars.size(); ++a)
      for (std::size_t b = 0; b < vars.size(); ++b)
        quad_(vars[a], vars[b]) += (weight / m) * ((a == b ? 1.0 : 0.0) - 1.0 / m);
  }

  void add_linear(LinearConstraint row) {
    for (const auto &[j, a] : row.coeffs)
      if (j >= num_vars_)
        throw InvalidInput("ConeProgram: linear row references variable out of range");
    linear_ineqs_.push_back(std::move(row));
  }

  /// SOC rows with scale 0 degenerate to the linear row mean^T x >= threshold.
  void add_soc(SocConstraint soc) {
    if (!(soc.scale >= 0.0))
      throw InvalidInput("ConeProgram: SOC scale must be non-negative");
    if (soc.factor.dim() != soc.vars.size() || soc.mean.size() != soc.vars.size())
      throw InvalidInput("ConeProgram: SOC dimensions disagree");
    for (std::size_t j : soc.vars)
      if (j >= num_vars_)
        throw InvalidInput("ConeProgram: SOC references variable out of range");
    if (soc.scale == 0.0) {
      LinearConstraint row;
      for (std::size_t a = 0; a < soc.vars.size(); ++a)
        row.coeffs.emplace_back(soc.vars[a], -soc.mean[a]);
      row.bound = -soc.threshold;
      row.relaxable = true;
      linear_ineqs_.push_back(std::move(row));
      return;
    }
    socs_.push_back(std::move(soc));
  }

  void set_bounds(std::size_t j, double lo, double hi) {
    if (!(lo < hi))
      throw InvalidInput("ConeProgram: empty bound interval");
    bounds_[j] = {lo, hi};
  }

  const std::vector<LinearConstraint> &linear_ineqs() const noexcept { return linear_ineqs_; }
  const std::vector<SocConstraint> &socs() const noexcept { return socs_; }
  const std::vector<VariableBounds> &bounds() const noexcept { return bounds_; }

  const Vector &start() const noexcept { return start_; }
  void set_start(Vector x0) {
    if (x0.size() != num_vars_)
      throw InvalidInput("ConeProgram: start has wrong dimension");
    start_ = std::move(x0);
  }

  double objective(std::span<const double> x) const {
    double v = constant_;
    for (std::size_t i = 0; i < num_vars_; ++i) {
      double qi = 0.0;
      const auto row = quad_.row(i);
      for (std::size_t j = 0; j < num_vars_; ++j)
        qi += row[j] * x[j];
      v += x[i] * qi + linear_[i] * x[i];
    }
    return v;
  }

private:
  std::size_t num_vars_;
  DenseMatrix quad_;
  Vector linear_;
  double constant_ = 0.0;
  std::vector<LinearConstraint> linear_ineqs_;
  std::vector<SocConstraint> socs_;
  std::vector<VariableBounds> bounds_;
  Vector start_;
};

struct IpmSettings {
  double epsilon_rel = 1e-9;
  double t_multiplier = 10.0;
  int max_iters = 200;
  double boundary_fraction = 0.99;
  double big_m = 1e7;
  /// When set, receives "iter,t,objective,kkt_residual,step" lines.
  std::ostream *log = nullptr;

  void validate() const {
    if (!(epsilon_rel > 0.0 && t_multiplier > 0.0 && max_iters > 0 && boundary_fraction > 0.0 &&
          boundary_fraction < 1.0 && big_m > 0.0))
      throw InvalidInput("IpmSettings: all settings must be positive and boundary_fraction < 1");
  }
};

enum class Status { optimal, infeasible, iteration_limit, numerical_failure };

inline const char *to_string(Status s) {
  switch (s) {
  case Status::optimal:
    return "optimal";
  case Status::infeasible:
    return "infeasible";
  case Status::iteration_limit:
    return "iteration_limit";
  case Status::numerical_failure:
    return "numerical_failure";
  }
  return "unknown";
}

/// Dual variables in solver layout: `lp` holds the linear rows in program
/// order followed by one entry per finite lower bound and then per finite
/// upper bound (variable order, lower before upper); `soc` holds one
/// Lorentz-cone vector per SOC row.
struct Duals {
  Vector lp;
  std::vector<Vector> soc;
};

struct IpmResult {
  Status status = Status::numerical_failure;
  Vector x;
  double objective = 0.0;
  double kkt_residual = kInf;
  int iterations = 0;
  Duals duals;
  double t = 0.0;
};

namespace detail {

struct Row {
  std::vector<std::pair<std::size_t, double>> a;
  double b = 0.0;
  bool relaxable = false;
};

struct Cone {
  std::vector<std::size_t> vars;
  Vector mean;
  double threshold = 0.0;
  DenseMatrix g1; // scale * factor^T, |S| x |S|
};

struct Compiled {
  std::size_t n = 0;
  std::vector<Row> rows;
  std::vector<Cone> cones;
};

inline Compiled compile(const ConeProgram &prog) {
  Compiled c;
  c.n = prog.num_vars();
  for (const auto &r : prog.linear_ineqs())
    c.rows.push_back({r.coeffs, r.bound, r.relaxable});
  for (std::size_t j = 0; j < c.n; ++j)
    if (std::isfinite(prog.bounds()[j].lo))
      c.rows.push_back({{{j, -1.0}}, -prog.bounds()[j].lo, false});
  for (std::size_t j = 0; j < c.n; ++j)
    if (std::isfinite(prog.bounds()[j].hi))
      c.rows.push_back({{{j, 1.0}}, prog.bounds()[j].hi, false});
  for (const auto &s : prog.socs()) {
    Cone k;
    k.vars = s.vars;
    k.mean = s.mean;
    k.threshold = s.threshold;
    const std::size_t m = s.vars.size();
    k.g1 = DenseMatrix(m, m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t col = r; col < m; ++col)
        k.g1(r, col) = s.scale * s.factor(col, r);
    c.cones.push_back(std::move(k));
  }
  return c;
}

inline double row_slack(const Row &r, std::span<const double> x) {
  double s = r.b;
  for (const auto &[j, a] : r.a)
    s -= a * x[j];
  return s;
}

inline Vector cone_slack(const Cone &k, std::span<const double> x) {
  const std::size_t m = k.vars.size();
  Vector s(m + 1, 0.0);
  double s0 = -k.threshold;
  for (std::size_t a = 0; a < m; ++a)
    s0 += k.mean[a] * x[k.vars[a]];
  s[0] = s0;
  for (std::size_t r = 0; r < m; ++r) {
    double acc = 0.0;
    for (std::size_t col = r; col < m; ++col)
      acc += k.g1(r, col) * x[k.vars[col]];
    s[r + 1] = acc;
  }
  return s;
}

inline double tail_norm(std::span<const double> v) {
  double ss = 0.0;
  for (std::size_t i = 1; i < v.size(); ++i)
    ss += v[i] * v[i];
  return std::sqrt(ss);
}

/// sqrt(v0^2 - |v1|^2), the Lorentz "J-norm".
inline double jnorm(std::span<const double> v) {
  const double t = tail_norm(v);
  return std::sqrt(std::max((v[0] - t) * (v[0] + t), 0.0));
}

inline bool cone_interior(std::span<const double> v) { return v[0] > tail_norm(v); }

/// Jordan product u o v = (u^T v, u0 v1 + v0 u1).
inline Vector jordan(std::span<const double> u, std::span<const double> v) {
  Vector r(u.size());
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    dot += u[i] * v[i];
  r[0] = dot;
  for (std::size_t i = 1; i < u.size(); ++i)
    r[i] = u[0] * v[i] + v[0] * u[i];
  return r;
}

/// Solves l o y = r for y.
inline Vector jordan_divide(std::span<const double> l, std::span<const double> r) {
  const std::size_t m = l.size();
  double l1r1 = 0.0, l1l1 = 0.0;
  for (std::size_t i = 1; i < m; ++i) {
    l1r1 += l[i] * r[i];
    l1l1 += l[i] * l[i];
  }
  Vector y(m);
  y[0] = (l[0] * r[0] - l1r1) / (l[0] * l[0] - l1l1);
  for (std::size_t i = 1; i < m; ++i)
    y[i] = (r[i] - y[0] * l[i]) / l[0];
  return y;
}

/// Largest a >= 0 with v + a*d in the closed Lorentz cone (inf if unbounded).
inline double cone_step(std::span<const double> v, std::span<const double> d) {
  double A = d[0] * d[0], B = v[0] * d[0], C = v[0] * v[0];
  for (std::size_t i = 1; i < v.size(); ++i) {
    A -= d[i] * d[i];
    B -= v[i] * d[i];
    C -= v[i] * v[i];
  }
  double amax = kInf;
  if (d[0] < 0.0)
    amax = -v[0] / d[0];
  C = std::max(C, 0.0);
  // q(a) = A a^2 + 2 B a + C, q(0) = C >= 0
  if (A == 0.0) {
    if (B < 0.0)
      amax = std::min(amax, -C / (2.0 * B));
  } else {
    const double disc = B * B - A * C;
    if (disc >= 0.0) {
      const double sq = std::sqrt(disc);
      // roots via the numerically stable pair
      const double qq = -(B + std::copysign(sq, B));
      double r1 = qq != 0.0 ? qq / A : kInf;
      double r2 = qq != 0.0 ? C / qq : kInf;
      for (double r : {r1, r2})
        if (r > 0.0 && std::isfinite(r))
          amax = std::min(amax, r);
      if (C == 0.0 && B < 0.0)
        amax = 0.0;
    }
  }
  return amax;
}

/// Nesterov-Todd scaling for a Lorentz block: returns W^{-1} and W^{-2}
/// (dense, symmetric) and lambda = W z = W^{-1} s.
struct SocScaling {
  DenseMatrix winv;
  DenseMatrix winv2;
  Vector lambda;
};

inline SocScaling nt_scaling(std::span<const double> s, std::span<const double> z) {
  const std::size_t m = s.size();
  const double aa = jnorm(s);
  const double bb = jnorm(z);
  const double beta = std::sqrt(aa / bb);
  double sz = 0.0;
  for (std::size_t i = 0; i < m; ++i)
    sz += s[i] * z[i];
  const double cc = std::sqrt((sz / (aa * bb) + 1.0) / 2.0);
  Vector v(m);
  v[0] = (s[0] / aa + z[0] / bb) / (2.0 * cc);
  for (std::size_t i = 1; i < m; ++i)
    v[i] = (s[i] / aa - z[i] / bb) / (2.0 * cc);
  v[0] += 1.0;
  const double nv = 1.0 / std::sqrt(2.0 * v[0]);
  for (double &x : v)
    x *= nv;

  // W^{-1} = (2 J v v^T J - J) / beta
  Vector jv = v;
  for (std::size_t i = 1; i < m; ++i)
    jv[i] = -jv[i];
  SocScaling sc;
  sc.winv = DenseMatrix(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double jij = (i == j) ? (i == 0 ? 1.0 : -1.0) : 0.0;
      sc.winv(i, j) = (2.0 * jv[i] * jv[j] - jij) / beta;
    }
  sc.winv2 = DenseMatrix(m, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < m; ++k)
        acc += sc.winv(i, k) * sc.winv(k, j);
      sc.winv2(i, j) = acc;
    }
  sc.lambda = sc.winv.multiply(s);
  return sc;
}

/// Quantities of the perturbed KKT system at a primal-dual point.
struct Residuals {
  Vector rd;                 // stationarity: grad f - G^T z
  double stationarity = 0.0; // |rd|_inf
  double primal = 0.0;       // max cone violation of s
  double complementarity = 0.0; // max |s o z - e/t|
  double slack_complementarity = 0.0; // |y z_y - 1/t| of the Big-M slack
};

} // namespace detail

/// Proportions g_k / sum_{v in V_k} mu_v, with each viewer type's column
/// shrunk by 1/max(1, column sum + 1e-6) so every supply budget holds strictly.
inline Vector proportional_start(const Instance &instance) {
  Vector p(instance.decision_count(), 0.0);
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    double supply = 0.0;
    for (std::size_t v : instance.campaign_viewers(k))
      supply += instance.mu()[v];
    for (std::size_t v : instance.campaign_viewers(k))
      p[instance.pair_index(v, k)] = instance.goals()[k] / supply;
  }
  for (std::size_t v = 0; v < instance.num_viewer_types(); ++v) {
    double used = 0.0;
    for (std::size_t k : instance.viewer_campaigns(v))
      used += p[instance.pair_index(v, k)];
    const double shrink = 1.0 / std::max(1.0, used + 1e-6);
    for (std::size_t k : instance.viewer_campaigns(v))
      p[instance.pair_index(v, k)] *= shrink;
  }
  return p;
}

/// Smallest y >= 0 such that every relaxable row (goal rows and SOC rows)
/// holds at x with margin 1 once relaxed by y.
inline double big_m_slack(const ConeProgram &prog, std::span<const double> x) {
  const detail::Compiled c = detail::compile(prog);
  double need = 0.0;
  for (const auto &r : c.rows)
    if (r.relaxable)
      need = std::max(need, 1.0 - detail::row_slack(r, x));
  for (const auto &k : c.cones) {
    const Vector s = detail::cone_slack(k, x);
    need = std::max(need, 1.0 - (s[0] - detail::tail_norm(s)));
  }
  return need;
}

struct StartPoint {
  Vector x0;
  double big_m_slack = 0.0;
};

/// Start for a program whose leading variables are the instance's
/// proportions; trailing variables keep the values of prog.start() (or 0).
inline StartPoint initial_point(const ConeProgram &prog, const Instance &instance) {
  const std::size_t d = instance.decision_count();
  if (prog.num_vars() < d)
    throw InvalidInput("initial_point: program has fewer variables than targeting pairs");
  StartPoint sp;
  sp.x0 = prog.start().size() == prog.num_vars() ? prog.start() : Vector(prog.num_vars(), 0.0);
  const Vector p = proportional_start(instance);
  std::copy(p.begin(), p.end(), sp.x0.begin());
  sp.big_m_slack = big_m_slack(prog, sp.x0);
  return sp;
}

/// Maximum absolute residual of the t-perturbed KKT conditions of `prog`
/// (t = inf gives the unperturbed conditions). Duals use the Duals layout
/// and must be strictly inside their cones.
inline double kkt_residual(const ConeProgram &prog, std::span<const double> x, const Duals &duals,
                           double t) {
  const detail::Compiled c = detail::compile(prog);
  if (x.size() != c.n || duals.lp.size() != c.rows.size() || duals.soc.size() != c.cones.size())
    throw InvalidInput("kkt_residual: dimension mismatch");
  for (double z : duals.lp)
    if (!(z > 0.0))
      throw InvalidInput("kkt_residual: duals must be strictly positive");
  for (const auto &z : duals.soc)
    if (!detail::cone_interior(z))
      throw InvalidInput("kkt_residual: SOC duals must lie in the cone interior");

  const double mu_t = std::isinf(t) ? 0.0 : 1.0 / t;
  Vector rd(c.n, 0.0);
  for (std::size_t i = 0; i < c.n; ++i) {
    double qi = 0.0;
    for (std::size_t j = 0; j < c.n; ++j)
      qi += prog.quad()(i, j) * x[j];
    rd[i] = 2.0 * qi + prog.linear()[i];
  }
  double primal = 0.0, comp = 0.0;
  for (std::size_t r = 0; r < c.rows.size(); ++r) {
    const double s = detail::row_slack(c.rows[r], x);
    primal = std::max(primal, -s);
    comp = std::max(comp, std::abs(s * duals.lp[r] - mu_t));
    for (const auto &[j, a] : c.rows[r].a)
      rd[j] += a * duals.lp[r];
  }
  for (std::size_t q = 0; q < c.cones.size(); ++q) {
    const auto &k = c.cones[q];
    const Vector s = detail::cone_slack(k, x);
    const Vector &z = duals.soc[q];
    primal = std::max(primal, detail::tail_norm(s) - s[0]);
    const Vector sz = detail::jordan(s, z);
    comp = std::max(comp, std::abs(sz[0] - mu_t));
    for (std::size_t i = 1; i < sz.size(); ++i)
      comp = std::max(comp, std::abs(sz[i]));
    const std::size_t m = k.vars.size();
    for (std::size_t a = 0; a < m; ++a) {
      double g = k.mean[a] * z[0];
      for (std::size_t r = 0; r <= a; ++r)
        g += k.g1(r, a) * z[r + 1];
      rd[k.vars[a]] -= g;
    }
  }
  double stat = 0.0;
  for (double v : rd)
    stat = std::max(stat, std::abs(v));
  return std::max({stat, primal, comp});
}

namespace detail {

class Solver {
public:
  Solver(const ConeProgram &prog, const IpmSettings &settings)
      : prog_(prog), set_(settings), c_(compile(prog)) {}

  IpmResult run() {
    set_.validate();
    const Vector &x0 = prog_.start();
    if (x0.size() != c_.n)
      throw InvalidInput("ipm::solve: program has no start point of the right dimension");

    for (const auto &r : c_.rows)
      if (!r.relaxable && !(row_slack(r, x0) > 0.0))
        throw InvalidInput("ipm::solve: start point violates a non-relaxable constraint");

    double min_relax = kInf;
    for (const auto &r : c_.rows)
      if (r.relaxable)
        min_relax = std::min(min_relax, row_slack(r, x0));
    for (const auto &k : c_.cones) {
      const Vector s = cone_slack(k, x0);
      min_relax = std::min(min_relax, s[0] - tail_norm(s));
    }

    phase1_ = min_relax <= 1e-8;
    x_ = x0;
    if (phase1_) {
      x_.push_back(big_m_slack(prog_, x0));
    }
    init_duals();
    return iterate();
  }

private:
  std::size_t nx() const noexcept { return c_.n + (phase1_ ? 1 : 0); }
  double y() const noexcept { return phase1_ ? x_[c_.n] : 0.0; }

  double lp_slack(std::size_t r) const {
    double s = row_slack(c_.rows[r], x_);
    if (phase1_ && c_.rows[r].relaxable)
      s += x_[c_.n];
    return s;
  }
  Vector soc_slack(std::size_t q) const {
    Vector s = cone_slack(c_.cones[q], x_);
    if (phase1_)
      s[0] += x_[c_.n];
    return s;
  }

  void init_duals() {
    zl_.assign(c_.rows.size(), 0.0);
    double relax_sum = 0.0;
    for (std::size_t r = 0; r < c_.rows.size(); ++r) {
      zl_[r] = 1.0 / lp_slack(r);
      if (c_.rows[r].relaxable)
        relax_sum += zl_[r];
    }
    zc_.assign(c_.cones.size(), {});
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      const Vector s = soc_slack(q);
      const double det = (s[0] - tail_norm(s)) * (s[0] + tail_norm(s));
      Vector z(s.size());
      z[0] = s[0] / det;
      for (std::size_t i = 1; i < s.size(); ++i)
        z[i] = -s[i] / det;
      relax_sum += z[0];
      zc_[q] = std::move(z);
    }
    zy_ = phase1_ ? std::max(set_.big_m - relax_sum, 1.0 / y()) : 0.0;
  }

  double objective_original() const { return prog_.objective(std::span<const double>(x_.data(), c_.n)); }

  Residuals residuals(double mu_t) const {
    Residuals res;
    const std::size_t n = nx();
    res.rd.assign(n, 0.0);
    for (std::size_t i = 0; i < c_.n; ++i) {
      double qi = 0.0;
      const auto row = prog_.quad().row(i);
      for (std::size_t j = 0; j < c_.n; ++j)
        qi += row[j] * x_[j];
      res.rd[i] = 2.0 * qi + prog_.linear()[i];
    }
    if (phase1_) {
      res.rd[c_.n] = set_.big_m - zy_;
      const double sy = y();
      res.primal = std::max(res.primal, -sy);
      res.slack_complementarity = std::abs(sy * zy_ - mu_t);
    }
    for (std::size_t r = 0; r < c_.rows.size(); ++r) {
      const double s = lp_slack(r);
      res.primal = std::max(res.primal, -s);
      res.complementarity = std::max(res.complementarity, std::abs(s * zl_[r] - mu_t));
      for (const auto &[j, a] : c_.rows[r].a)
        res.rd[j] += a * zl_[r];
      if (phase1_ && c_.rows[r].relaxable)
        res.rd[c_.n] -= zl_[r];
    }
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      const auto &k = c_.cones[q];
      const Vector s = soc_slack(q);
      const Vector &z = zc_[q];
      res.primal = std::max(res.primal, tail_norm(s) - s[0]);
      const Vector sz = jordan(s, z);
      res.complementarity = std::max(res.complementarity, std::abs(sz[0] - mu_t));
      for (std::size_t i = 1; i < sz.size(); ++i)
        res.complementarity = std::max(res.complementarity, std::abs(sz[i]));
      const std::size_t m = k.vars.size();
      for (std::size_t a = 0; a < m; ++a) {
        double g = k.mean[a] * z[0];
        for (std::size_t r = 0; r <= a; ++r)
          g += k.g1(r, a) * z[r + 1];
        res.rd[k.vars[a]] -= g;
      }
      if (phase1_)
        res.rd[c_.n] -= z[0];
    }
    for (double v : res.rd)
      res.stationarity = std::max(res.stationarity, std::abs(v));
    return res;
  }

  /// Largest |s o z| entry over all blocks.
  double gap_max() const {
    double g = 0.0;
    if (phase1_)
      g = std::max(g, std::abs(y() * zy_));
    for (std::size_t r = 0; r < c_.rows.size(); ++r)
      g = std::max(g, std::abs(lp_slack(r) * zl_[r]));
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      const Vector sz = jordan(soc_slack(q), zc_[q]);
      for (double v : sz)
        g = std::max(g, std::abs(v));
    }
    return g;
  }

  // Dense G rows of a cone block over the full variable vector (size nx).
  void cone_rows(std::size_t q, std::vector<std::vector<std::pair<std::size_t, double>>> &rows) const {
    const auto &k = c_.cones[q];
    const std::size_t m = k.vars.size();
    rows.assign(m + 1, {});
    for (std::size_t a = 0; a < m; ++a)
      rows[0].emplace_back(k.vars[a], k.mean[a]);
    if (phase1_)
      rows[0].emplace_back(c_.n, 1.0);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t col = r; col < m; ++col)
        if (k.g1(r, col) != 0.0)
          rows[r + 1].emplace_back(k.vars[col], k.g1(r, col));
  }

  struct Direction {
    Vector dx;
    Vector dzl;
    std::vector<Vector> dzc;
    double dzy = 0.0;
  };

  bool newton(double mu_t, const Residuals &res, Direction &dir) {
    const std::size_t n = nx();
    DenseMatrix h(n, n);
    for (std::size_t i = 0; i < c_.n; ++i)
      for (std::size_t j = 0; j < c_.n; ++j)
        h(i, j) = 2.0 * prog_.quad()(i, j);
    Vector rhs(n);
    for (std::size_t i = 0; i < n; ++i)
      rhs[i] = -res.rd[i];

    // Linear rows: s = b - a^T x (+ y), G = (-a, +1).
    std::vector<double> lp_w(c_.rows.size()), lp_rc(c_.rows.size());
    for (std::size_t r = 0; r < c_.rows.size(); ++r) {
      const double s = lp_slack(r);
      const double w2 = zl_[r] / s;
      const double rc = (mu_t - s * zl_[r]) / s; // W^{-1} d
      lp_w[r] = w2;
      lp_rc[r] = rc;
      const auto &a = c_.rows[r].a;
      const bool rel = phase1_ && c_.rows[r].relaxable;
      for (const auto &[i, ai] : a) {
        for (const auto &[j, aj] : a)
          h(i, j) += w2 * ai * aj;
        if (rel) {
          h(i, c_.n) -= w2 * ai;
          h(c_.n, i) -= w2 * ai;
        }
        rhs[i] -= ai * rc;
      }
      if (rel) {
        h(c_.n, c_.n) += w2;
        rhs[c_.n] += rc;
      }
    }
    if (phase1_) {
      const double s = y();
      h(c_.n, c_.n) += zy_ / s;
      rhs[c_.n] += (mu_t - s * zy_) / s;
    }

    std::vector<SocScaling> scal(c_.cones.size());
    std::vector<Vector> winv_d(c_.cones.size());
    std::vector<std::vector<std::pair<std::size_t, double>>> grows;
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      const Vector s = soc_slack(q);
      scal[q] = nt_scaling(s, zc_[q]);
      const Vector &lam = scal[q].lambda;
      Vector rc = jordan(lam, lam);
      for (double &v : rc)
        v = -v;
      rc[0] += mu_t;
      const Vector d = jordan_divide(lam, rc);
      winv_d[q] = scal[q].winv.multiply(d);
      cone_rows(q, grows);
      const std::size_t m1 = grows.size();
      // H += G^T W^{-2} G ; rhs += G^T W^{-1} d
      for (std::size_t a = 0; a < m1; ++a) {
        for (const auto &[i, gi] : grows[a]) {
          rhs[i] += gi * winv_d[q][a];
          for (std::size_t b = 0; b < m1; ++b) {
            const double wab = scal[q].winv2(a, b);
            if (wab == 0.0)
              continue;
            for (const auto &[j, gj] : grows[b])
              h(i, j) += gi * wab * gj;
          }
        }
      }
    }

    // symmetric diagonal equilibration: barrier terms near the boundary make
    // diagonal entries differ by many orders of magnitude
    Vector dscale(n);
    for (std::size_t i = 0; i < n; ++i)
      dscale[i] = h(i, i) > 0.0 ? 1.0 / std::sqrt(h(i, i)) : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j)
        h(i, j) *= dscale[i] * dscale[j];
      rhs[i] *= dscale[i];
    }

    Vector dx;
    bool ok = false;
    for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
      try {
        if (attempt == 1)
          for (std::size_t i = 0; i < n; ++i)
            h(i, i) += 1e-12;
        LuFactorization lu(h);
        dx = lu.solve(rhs);
        // one step of iterative refinement
        const Vector hx = h.multiply(dx);
        Vector r(n);
        for (std::size_t i = 0; i < n; ++i)
          r[i] = rhs[i] - hx[i];
        const Vector corr = lu.solve(r);
        for (std::size_t i = 0; i < n; ++i)
          dx[i] += corr[i];
        ok = std::all_of(dx.begin(), dx.end(), [](double v) { return std::isfinite(v); });
      } catch (const SingularSystem &) {
      }
    }
    if (!ok)
      return false;
    for (std::size_t i = 0; i < n; ++i)
      dx[i] *= dscale[i];

    dir.dx = dx;
    dir.dzl.assign(c_.rows.size(), 0.0);
    for (std::size_t r = 0; r < c_.rows.size(); ++r) {
      double ds = 0.0;
      for (const auto &[j, a] : c_.rows[r].a)
        ds -= a * dx[j];
      if (phase1_ && c_.rows[r].relaxable)
        ds += dx[c_.n];
      dir.dzl[r] = lp_rc[r] - lp_w[r] * ds;
    }
    if (phase1_) {
      const double s = y();
      dir.dzy = (mu_t - s * zy_) / s - (zy_ / s) * dx[c_.n];
    }
    dir.dzc.assign(c_.cones.size(), {});
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      cone_rows(q, grows);
      Vector ds(grows.size(), 0.0);
      for (std::size_t a = 0; a < grows.size(); ++a)
        for (const auto &[j, g] : grows[a])
          ds[a] += g * dx[j];
      const Vector w2ds = scal[q].winv2.multiply(ds);
      Vector dz(ds.size());
      for (std::size_t a = 0; a < ds.size(); ++a)
        dz[a] = winv_d[q][a] - w2ds[a];
      dir.dzc[q] = std::move(dz);
    }
    return true;
  }

  double step_length(const Direction &dir) const {
    double amax = kInf;
    for (std::size_t r = 0; r < c_.rows.size(); ++r) {
      double ds = 0.0;
      for (const auto &[j, a] : c_.rows[r].a)
        ds -= a * dir.dx[j];
      if (phase1_ && c_.rows[r].relaxable)
        ds += dir.dx[c_.n];
      if (ds < 0.0)
        amax = std::min(amax, -lp_slack(r) / ds);
      if (dir.dzl[r] < 0.0)
        amax = std::min(amax, -zl_[r] / dir.dzl[r]);
    }
    if (phase1_) {
      if (dir.dx[c_.n] < 0.0)
        amax = std::min(amax, -y() / dir.dx[c_.n]);
      if (dir.dzy < 0.0)
        amax = std::min(amax, -zy_ / dir.dzy);
    }
    std::vector<std::vector<std::pair<std::size_t, double>>> grows;
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      cone_rows(q, grows);
      Vector ds(grows.size(), 0.0);
      for (std::size_t a = 0; a < grows.size(); ++a)
        for (const auto &[j, g] : grows[a])
          ds[a] += g * dir.dx[j];
      amax = std::min(amax, cone_step(soc_slack(q), ds));
      amax = std::min(amax, cone_step(zc_[q], dir.dzc[q]));
    }
    return std::min(1.0, set_.boundary_fraction * amax);
  }

  // Leave the Big-M phase once x alone is strictly feasible.
  void maybe_switch_phase() {
    if (!phase1_)
      return;
    const double yy = y();
    for (std::size_t r = 0; r < c_.rows.size(); ++r)
      if (c_.rows[r].relaxable && !(lp_slack(r) - yy > 0.0))
        return;
    for (std::size_t q = 0; q < c_.cones.size(); ++q) {
      Vector s = soc_slack(q);
      s[0] -= yy;
      if (!cone_interior(s))
        return;
    }
    phase1_ = false;
    x_.pop_back();
    zy_ = 0.0;
  }

  IpmResult finish(Status st, int iters, double err, double t) {
    IpmResult out;
    out.status = st;
    out.x.assign(x_.begin(), x_.begin() + static_cast<std::ptrdiff_t>(c_.n));
    out.objective = objective_original();
    out.kkt_residual = err;
    out.iterations = iters;
    out.duals.lp = zl_;
    out.duals.soc = zc_;
    out.t = t;
    return out;
  }

  // No further progress possible: accept a loosely converged point, and treat
  // a Big-M slack that is still clearly positive as infeasibility.
  IpmResult stalled(int iter, double err, double loose, double t) {
    if (phase1_) {
      if (y() > 1e-6)
        return finish(Status::infeasible, iter, err, t);
      if (y() <= 1e-9 && err <= loose) {
        phase1_ = false;
        x_.pop_back();
        return finish(Status::optimal, iter, err, t);
      }
      return finish(Status::numerical_failure, iter, err, t);
    }
    if (err <= loose)
      return finish(Status::optimal, iter, err, t);
    return finish(Status::numerical_failure, iter, err, t);
  }

  IpmResult iterate() {
    double t = 0.0;
    double best_err = kInf;
    int since_best = 0;
    double best_y = phase1_ ? y() : 0.0;
    int since_best_y = 0;
    for (int iter = 0; iter <= set_.max_iters; ++iter) {
      const double gap = gap_max();
      const Residuals res0 = residuals(0.0);
      const double err = std::max({res0.stationarity, res0.primal, res0.complementarity});
      const double obj = objective_original();
      const double tol = std::max(set_.epsilon_rel * std::abs(obj), 1e-12);
      const double loose = set_.epsilon_rel * (1.0 + std::abs(obj));

      if (!phase1_ && err <= tol)
        return finish(Status::optimal, iter, err, t);
      if (phase1_) {
        // z_y ~ big_m keeps y z_y far above tol long after x has converged,
        // so the slack's own complementarity only counts via y itself
        if (err <= tol) {
          if (y() <= 1e-9) {
            phase1_ = false;
            x_.pop_back();
            return finish(Status::optimal, iter, err, t);
          }
          return finish(Status::infeasible, iter, err, t);
        }
        if (y() < 0.99 * best_y) {
          best_y = y();
          since_best_y = 0;
        } else if (++since_best_y >= 20 && y() > 1e-6) {
          return finish(Status::infeasible, iter, err, t);
        }
      }
      if (iter == set_.max_iters)
        break;

      if (err < 0.999 * best_err) {
        best_err = err;
        since_best = 0;
      } else if (++since_best >= 30) {
        return stalled(iter, err, loose, t);
      }

      t = std::max(t, set_.t_multiplier / std::max(gap, 1e-300));
      const double mu_t = 1.0 / t;
      const Residuals res = residuals(mu_t);
      Direction dir;
      if (!newton(mu_t, res, dir)) {
        return stalled(iter, err, loose, t);
      }
      const double alpha = step_length(dir);
      if (set_.log)
        *set_.log << iter << ',' << t << ',' << obj << ',' << err << ',' << alpha << '\n';
      if (!(alpha > 1e-14)) {
        return stalled(iter, err, loose, t);
      }
      for (std::size_t i = 0; i < x_.size(); ++i)
        x_[i] += alpha * dir.dx[i];
      for (std::size_t r = 0; r < zl_.size(); ++r)
        zl_[r] += alpha * dir.dzl[r];
      for (std::size_t q = 0; q < zc_.size(); ++q)
        for (std::size_t a = 0; a < zc_[q].size(); ++a)
          zc_[q][a] += alpha * dir.dzc[q][a];
      if (phase1_)
        zy_ += alpha * dir.dzy;
      maybe_switch_phase();
    }
    const Residuals res0 = residuals(0.0);
    const double err = std::max({res0.stationarity, res0.primal, res0.complementarity});
    if (phase1_) {
      phase1_ = false;
      x_.pop_back();
    }
    return finish(Status::iteration_limit, set_.max_iters, err, t);
  }

  const ConeProgram &prog_;
  IpmSettings set_;
  Compiled c_;
  bool phase1_ = false;
  Vector x_;
  Vector zl_;
  std::vector<Vector> zc_;
  double zy_ = 0.0;
};

} // namespace detail

/// Solves `prog` from prog.start(). Non-relaxable rows must hold strictly at
/// the start; relaxable rows that do not are handled by the Big-M phase.
inline IpmResult solve(const ConeProgram &prog, const IpmSettings &settings = {}) {
  return detail::Solver(prog, settings).run();
}

} // namespace adplan::ipm
