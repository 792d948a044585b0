#pragma once

// Convex approximations of the joint chance constraint.
//
// Each campaign's chance constraint is replaced by
//     mu_k^T p_k - u_k * sqrt(p_k^T Sigma_k p_k) >= h_k
// with (u_k, h_k) chosen per bound kind:
//     df_lower      u = 0                        h = (1 - alpha) g   (Markov)
//     df_upper      u = sqrt((1 - a_k) / a_k)    h = g               (one-sided Chebyshev)
//     normal_lower  u = -n_alpha                 h = g
//     normal_upper  u = -n_{a_k}                 h = g
// where n_a is the a-quantile of the standard normal and the a_k form a risk
// budget summing to at most alpha (Bonferroni).

#include "adplan/errors.hpp"
#include "adplan/ipm.hpp"
#include "adplan/model.hpp"
#include "adplan/numerics.hpp"
#include "adplan/report.hpp"

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace adplan {

enum class BoundKind { df_lower, df_upper, normal_lower, normal_upper };

inline const char *to_string(BoundKind k) {
  switch (k) {
  case BoundKind::df_lower:
    return "df_lower";
  case BoundKind::df_upper:
    return "df_upper";
  case BoundKind::normal_lower:
    return "normal_lower";
  case BoundKind::normal_upper:
    return "normal_upper";
  }
  return "unknown";
}

inline bool is_upper(BoundKind k) { return k == BoundKind::df_upper || k == BoundKind::normal_upper; }
inline bool is_normal(BoundKind k) {
  return k == BoundKind::normal_lower || k == BoundKind::normal_upper;
}

/// Per-campaign split of the joint tolerance.
class RiskBudget {
public:
  RiskBudget(Vector alpha_k, double alpha) : alpha_k_(std::move(alpha_k)) {
    double total = 0.0;
    for (double a : alpha_k_) {
      if (!(a > 0.0 && a < 0.5))
        throw InvalidInput("RiskBudget: every alpha_k must lie in (0, 0.5)");
      total += a;
    }
    if (total > alpha + 1e-12)
      throw InvalidInput("RiskBudget: alpha_k sum " + std::to_string(total) + " exceeds alpha " +
                         std::to_string(alpha));
  }

  static RiskBudget uniform(const Instance &instance) {
    const double a = instance.alpha() / static_cast<double>(instance.num_campaigns());
    return RiskBudget(Vector(instance.num_campaigns(), a), instance.alpha());
  }

  const Vector &values() const noexcept { return alpha_k_; }
  double operator[](std::size_t k) const noexcept { return alpha_k_[k]; }
  std::size_t size() const noexcept { return alpha_k_.size(); }

private:
  Vector alpha_k_;
};

struct CaParameters {
  Vector u;
  Vector h;
};

inline CaParameters ca_parameters(BoundKind kind, const Instance &instance,
                                  const std::optional<RiskBudget> &budget) {
  const std::size_t nk = instance.num_campaigns();
  if (is_upper(kind)) {
    if (!budget)
      throw InvalidInput(std::string("ca_parameters: ") + to_string(kind) + " requires a risk budget");
    if (budget->size() != nk)
      throw InvalidInput("ca_parameters: risk budget has the wrong length");
  }
  CaParameters out{Vector(nk), Vector(nk)};
  for (std::size_t k = 0; k < nk; ++k) {
    const double g = instance.goals()[k];
    switch (kind) {
    case BoundKind::df_lower:
      out.u[k] = 0.0;
      out.h[k] = (1.0 - instance.alpha()) * g;
      break;
    case BoundKind::df_upper: {
      const double a = (*budget)[k];
      out.u[k] = std::sqrt((1.0 - a) / a);
      out.h[k] = g;
      break;
    }
    case BoundKind::normal_lower:
      out.u[k] = -norm_quantile(instance.alpha());
      out.h[k] = g;
      break;
    case BoundKind::normal_upper:
      out.u[k] = -norm_quantile((*budget)[k]);
      out.h[k] = g;
      break;
    }
  }
  return out;
}

/// Builds the convex approximation program for the given (u, h).
inline ipm::ConeProgram compile_ca(const Instance &instance, const CaParameters &params) {
  ipm::ConeProgram prog = allocation_program(instance);
  const double scale = goal_scale(instance);
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    ipm::SocConstraint soc;
    for (std::size_t v : instance.campaign_viewers(k))
      soc.vars.push_back(instance.pair_index(v, k));
    soc.mean = instance.campaign_mu(k);
    for (double &m : soc.mean)
      m *= scale;
    LowerTriangular f = cholesky_jittered(instance.campaign_sigma(k));
    for (std::size_t i = 0; i < f.dim(); ++i)
      for (std::size_t j = 0; j <= i; ++j)
        f(i, j) *= scale;
    soc.factor = std::move(f);
    soc.scale = params.u[k];
    soc.threshold = params.h[k] * scale;
    prog.add_soc(std::move(soc));
  }
  prog.set_start(ipm::initial_point(prog, instance).x0);
  return prog;
}

inline std::string assumption_of(BoundKind kind) {
  return is_normal(kind) ? "normal" : "distribution_free";
}

inline SolveReport solve_ca(const Instance &instance, BoundKind kind,
                            const std::optional<RiskBudget> &budget,
                            const ipm::IpmSettings &settings = {}) {
  Stopwatch clock;
  const CaParameters params = ca_parameters(kind, instance, budget);
  const ipm::ConeProgram prog = compile_ca(instance, params);
  const ipm::IpmResult res = ipm::solve(prog, settings);

  SolveReport rep;
  rep.bound_kind = to_string(kind);
  rep.assumption = assumption_of(kind);
  rep.status = ipm::to_string(res.status);
  rep.iterations = res.iterations;
  if (budget)
    rep.alpha_budget = budget->values();
  if (res.status == ipm::Status::optimal) {
    rep.allocation.assign(res.x.begin(),
                          res.x.begin() + static_cast<std::ptrdiff_t>(instance.decision_count()));
    rep.objective = objective_value(instance, rep.allocation);
  } else if (res.status == ipm::Status::infeasible) {
    rep.objective = std::numeric_limits<double>::infinity();
    rep.message = is_upper(kind)
                      ? "the conservative approximation admits no allocation"
                      : "infeasible under the " + rep.assumption + " assumption";
  }
  rep.wall_time_seconds = clock.seconds();
  return rep;
}

namespace detail {
inline void campaign_moments(std::span<const double> p_k, const DenseMatrix &sigma_k,
                             std::span<const double> mu_k, double &variance, double &mean) {
  const Vector sp = sigma_k.multiply(p_k);
  variance = 0.0;
  mean = 0.0;
  for (std::size_t i = 0; i < p_k.size(); ++i) {
    variance += p_k[i] * sp[i];
    mean += p_k[i] * mu_k[i];
  }
  variance = std::max(variance, 0.0);
}
} // namespace detail

/// Smallest a_k for which the Chebyshev row still holds at p_k:
/// var / (var + (mean - g)^2).
inline double chebyshev_alpha_hat(std::span<const double> p_k, const DenseMatrix &sigma_k,
                                  std::span<const double> mu_k, double g_k) {
  double var, mean;
  detail::campaign_moments(p_k, sigma_k, mu_k, var, mean);
  const double surplus = mean - g_k;
  if (!(surplus > 0.0))
    throw InvalidInput("chebyshev_alpha_hat: allocation has no mean surplus over the goal");
  return var / (var + surplus * surplus);
}

/// P(p_k^T S_k <= g_k) under normal supply.
inline double normal_alpha_hat(std::span<const double> p_k, const DenseMatrix &sigma_k,
                               std::span<const double> mu_k, double g_k) {
  double var, mean;
  detail::campaign_moments(p_k, sigma_k, mu_k, var, mean);
  const double surplus = mean - g_k;
  if (var == 0.0) {
    if (surplus > 0.0)
      return 0.0;
    throw InvalidInput("normal_alpha_hat: deterministic supply without surplus");
  }
  return norm_cdf(-surplus / std::sqrt(var));
}

/// Floor applied to tightened a_k so that u_k stays finite when a campaign's
/// allocated supply has zero variance.
inline constexpr double kMinAlphaK = 1e-12;
/// A row counts as slack when a_k - alpha_hat_k exceeds this fraction of a_k.
/// Interior-point solutions sit a relative ~1e-7 inside binding rows, so an
/// absolute threshold would mark every binding row as slack.
inline constexpr double kSlackTolerance = 1e-4;

/// Iterative risk-budget refinement for the upper bounds: start from
/// a_k = alpha/|K|, tighten the a_k of rows with slack to their alpha_hat and
/// spread the recovered budget evenly over rows that were never slack.
/// Returns the best iterate; `trace` records every solve.
inline SolveReport refine_upper_bound(const Instance &instance, BoundKind kind,
                                      const ipm::IpmSettings &settings = {}, int max_rounds = 50) {
  if (!is_upper(kind))
    throw InvalidInput("refine_upper_bound: kind must be df_upper or normal_upper");
  Stopwatch clock;
  const std::size_t nk = instance.num_campaigns();
  Vector alpha_k(nk, instance.alpha() / static_cast<double>(nk));

  SolveReport current = solve_ca(instance, kind, RiskBudget(alpha_k, instance.alpha()), settings);
  std::vector<TraceEntry> trace{{alpha_k, current.objective, current.status}};
  int total_iters = current.iterations;
  if (current.status != "optimal") {
    current.trace = trace;
    current.bound_kind = std::string(to_string(kind)) + "_alg";
    current.wall_time_seconds = clock.seconds();
    return current;
  }
  SolveReport best = current;

  std::vector<DenseMatrix> sigma_k(nk);
  std::vector<Vector> mu_k(nk);
  for (std::size_t k = 0; k < nk; ++k) {
    sigma_k[k] = instance.campaign_sigma(k);
    mu_k[k] = instance.campaign_mu(k);
  }

  std::vector<bool> slack_seen(nk, false);
  double z = current.objective;
  double z_old = std::numeric_limits<double>::infinity();
  int rounds = 0;
  std::string warning;
  while (z_old - z > 1e-6 * (1.0 + std::abs(z)) && rounds < max_rounds) {
    ++rounds;
    double s = 0.0;
    for (std::size_t k = 0; k < nk; ++k) {
      const std::span<const double> p(current.allocation.data() + instance.campaign_offset(k),
                                      instance.campaign_viewers(k).size());
      double hat = kind == BoundKind::df_upper
                       ? chebyshev_alpha_hat(p, sigma_k[k], mu_k[k], instance.goals()[k])
                       : normal_alpha_hat(p, sigma_k[k], mu_k[k], instance.goals()[k]);
      hat = std::max(hat, kMinAlphaK);
      if (alpha_k[k] - hat > kSlackTolerance * alpha_k[k]) {
        s += alpha_k[k] - hat;
        alpha_k[k] = hat;
        slack_seen[k] = true;
      }
    }
    std::size_t seen = 0;
    for (bool b : slack_seen)
      seen += b ? 1 : 0;
    if (s > 0.0 && seen < nk)
      for (std::size_t k = 0; k < nk; ++k)
        if (!slack_seen[k])
          alpha_k[k] += s / static_cast<double>(nk - seen);
    z_old = z;
    if (s == 0.0)
      break; // budget unchanged, the re-solve would repeat the last one

    SolveReport next = solve_ca(instance, kind, RiskBudget(alpha_k, instance.alpha()), settings);
    total_iters += next.iterations;
    trace.push_back({alpha_k, next.objective, next.status});
    if (next.status != "optimal") {
      warning = "refinement solve failed (" + next.status + "); returning best iterate";
      break;
    }
    current = std::move(next);
    z = current.objective;
    if (z < best.objective)
      best = current;
  }

  best.bound_kind = std::string(to_string(kind)) + "_alg";
  best.trace = std::move(trace);
  best.iterations = total_iters;
  if (!warning.empty()) {
    best.status = "warning";
    best.message = warning;
  }
  best.wall_time_seconds = clock.seconds();
  return best;
}

} // namespace adplan
