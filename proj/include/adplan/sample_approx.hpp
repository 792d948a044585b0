#pragma once

// Scenario-based bounds.
//
// The sample approximation requires every campaign goal to be met in at least
// ceil((1 - xi) N) of N sampled supply scenarios. With xi > 0 it is a mixed
// integer QP solved exactly by best-first branch-and-bound over the scenario
// indicators; with xi = 0 (robust version) it is a convex QP.
//
// Confidence that the optimum lands on the right side of the chance
// constrained optimum:
//   lower: P(z_SA <= z_CC)  >= sum_{i <= floor(xi N)} C(N,i) a^i (1-a)^(N-i)
//   upper: P(z_RSA >= z_CC) >= 1 - C(N,d) (1-a)^(N-d),  d = number of p_vk

#include "adplan/errors.hpp"
#include "adplan/ipm.hpp"
#include "adplan/model.hpp"
#include "adplan/numerics.hpp"
#include "adplan/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <ostream>
#include <queue>
#include <set>
#include <string>
#include <vector>

namespace adplan {

/// floor(xi * n), robust to xi = m/n round-off.
inline std::size_t discard_count(std::size_t n, double xi) {
  return static_cast<std::size_t>(std::floor(xi * static_cast<double>(n) + 1e-9));
}

/// Scenarios that must be satisfied: N - floor(xi N) = ceil((1 - xi) N).
inline std::size_t required_count(std::size_t n, double xi) { return n - discard_count(n, xi); }

inline double lb_confidence(std::size_t n, double xi, double alpha) {
  if (n == 0)
    throw InvalidInput("lb_confidence: n must be positive");
  if (!(xi >= 0.0 && xi < 1.0))
    throw InvalidInput("lb_confidence: xi must lie in [0,1)");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidInput("lb_confidence: alpha must lie in (0,1)");
  return binomial_tail_leq(static_cast<long long>(n), static_cast<long long>(discard_count(n, xi)),
                           alpha);
}

/// May be negative, which means the bound is vacuous.
inline double ub_confidence(std::size_t n, std::size_t d, double alpha) {
  if (n <= d)
    throw InvalidInput("ub_confidence: need more scenarios than decision variables");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InvalidInput("ub_confidence: alpha must lie in (0,1)");
  const double log_tail = log_binomial_coefficient(static_cast<long long>(n), static_cast<long long>(d)) +
                          static_cast<double>(n - d) * std::log1p(-alpha);
  return -std::expm1(log_tail);
}

struct SaParams {
  std::size_t n_lower = 100;
  double xi = 0.0;
  std::size_t n_upper = 1;
  double target_confidence = 0.99;
  double lower_confidence = 0.0;
  double upper_confidence = 0.0;

  /// Checks the joint-confidence invariant for a problem with d decisions.
  bool valid(double alpha, std::size_t d) const {
    if (n_upper <= d)
      return false;
    const double lb = lb_confidence(n_lower, xi, alpha);
    const double ub = ub_confidence(n_upper, d, alpha);
    return lb + ub - 1.0 >= target_confidence - 1e-12;
  }
};

/// Splits the failure budget evenly between the two sides: n_upper is the
/// smallest N whose upper confidence reaches (1 + target)/2 and xi = m/n_lower
/// with the smallest m whose lower confidence reaches it.
inline SaParams choose_parameters(double alpha, std::size_t d, double target_confidence,
                                  std::size_t n_lower = 100) {
  if (!(alpha > 0.0 && alpha < 0.5))
    throw InvalidInput("choose_parameters: alpha must lie in (0, 0.5)");
  if (d == 0)
    throw InvalidInput("choose_parameters: d must be positive");
  if (!(target_confidence > 0.0 && target_confidence < 1.0))
    throw InvalidInput("choose_parameters: target must lie in (0,1)");
  if (n_lower == 0)
    throw InvalidInput("choose_parameters: n_lower must be positive");
  const double side = (1.0 + target_confidence) / 2.0;
  constexpr std::size_t kMaxN = 10'000'000;

  SaParams out;
  out.target_confidence = target_confidence;
  out.n_lower = n_lower;

  std::size_t lo = d, hi = d + 1;
  while (ub_confidence(hi, d, alpha) < side) {
    lo = hi;
    if (hi >= kMaxN)
      throw ParameterSearchError("choose_parameters: no N <= 1e7 reaches the upper-bound confidence");
    hi = std::min(kMaxN, hi * 2);
  }
  while (hi - lo > 1) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (ub_confidence(mid, d, alpha) >= side)
      hi = mid;
    else
      lo = mid;
  }
  out.n_upper = hi;
  out.upper_confidence = ub_confidence(hi, d, alpha);

  for (std::size_t m = 0; m < n_lower; ++m) {
    const double xi = static_cast<double>(m) / static_cast<double>(n_lower);
    const double lb = lb_confidence(n_lower, xi, alpha);
    if (lb >= side) {
      out.xi = xi;
      out.lower_confidence = lb;
      return out;
    }
  }
  throw ParameterSearchError("choose_parameters: no discard count reaches the lower-bound confidence with n_lower = " +
                             std::to_string(n_lower));
}

/// Branch-and-bound node: scenario indicators pinned to one and to zero.
struct BnbNode {
  std::set<std::size_t> fixed_one;
  std::set<std::size_t> fixed_zero;
  double relaxation_bound = std::numeric_limits<double>::infinity();
  std::optional<Vector> relaxation_solution;
};

struct NodeResult {
  ipm::IpmResult ipm;
  Vector p;         // proportions
  Vector x;         // all N scenario indicators (fixed ones filled in)
};

namespace detail {

inline void check_scenarios(const Instance &instance, const ScenarioSet &scenarios) {
  if (scenarios.size() == 0)
    throw InvalidInput("scenario set is empty");
  if (scenarios.samples.cols() != instance.num_viewer_types())
    throw InvalidInput("scenario dimension does not match the instance");
}

/// Goal row of campaign k in scenario i: -S_k^i . p (+ g x terms) <= rhs.
inline ipm::LinearConstraint scenario_row(const Instance &instance, const ScenarioSet &scenarios,
                                          std::size_t i, std::size_t k, double scale) {
  ipm::LinearConstraint row;
  const auto s = scenarios.scenario(i);
  for (std::size_t v : instance.campaign_viewers(k))
    row.coeffs.emplace_back(instance.pair_index(v, k), -s[v] * scale);
  row.bound = -instance.goals()[k] * scale;
  row.relaxable = true;
  return row;
}

/// True if some campaign cannot reach its goal in scenario i even when it
/// receives all positive supply of its viewer types.
inline bool scenario_hopeless(const Instance &instance, const ScenarioSet &scenarios, std::size_t i) {
  const auto s = scenarios.scenario(i);
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    double best = 0.0;
    for (std::size_t v : instance.campaign_viewers(k))
      best += std::max(s[v], 0.0);
    if (best < instance.goals()[k])
      return true;
  }
  return false;
}

inline ipm::ConeProgram robust_program(const Instance &instance, const ScenarioSet &scenarios,
                                       const std::vector<std::size_t> &enforced) {
  ipm::ConeProgram prog = allocation_program(instance);
  const double scale = goal_scale(instance);
  for (std::size_t i : enforced)
    for (std::size_t k = 0; k < instance.num_campaigns(); ++k)
      prog.add_linear(scenario_row(instance, scenarios, i, k, scale));
  prog.set_start(ipm::initial_point(prog, instance).x0);
  return prog;
}

inline NodeResult solve_robust_subset(const Instance &instance, const ScenarioSet &scenarios,
                                      const std::vector<std::size_t> &enforced,
                                      const ipm::IpmSettings &settings) {
  NodeResult out;
  for (std::size_t i : enforced)
    if (scenario_hopeless(instance, scenarios, i)) {
      out.ipm.status = ipm::Status::infeasible;
      out.ipm.objective = std::numeric_limits<double>::infinity();
      return out;
    }
  out.ipm = ipm::solve(robust_program(instance, scenarios, enforced), settings);
  if (out.ipm.status == ipm::Status::optimal) {
    out.p = out.ipm.x;
    out.ipm.objective = objective_value(instance, out.p);
  }
  return out;
}

} // namespace detail

inline SolveReport solve_robust_sa(const Instance &instance, const ScenarioSet &scenarios,
                                   const ipm::IpmSettings &settings = {}) {
  detail::check_scenarios(instance, scenarios);
  Stopwatch clock;
  std::vector<std::size_t> all(scenarios.size());
  for (std::size_t i = 0; i < all.size(); ++i)
    all[i] = i;
  const NodeResult r = detail::solve_robust_subset(instance, scenarios, all, settings);

  SolveReport rep;
  rep.bound_kind = "sa_upper";
  rep.assumption = "sample";
  rep.status = ipm::to_string(r.ipm.status);
  rep.iterations = r.ipm.iterations;
  rep.scenarios = scenarios.size();
  rep.xi = 0.0;
  rep.seed = scenarios.seed;
  if (r.ipm.status == ipm::Status::optimal) {
    rep.allocation = r.p;
    rep.objective = objective_value(instance, rep.allocation);
  } else if (r.ipm.status == ipm::Status::infeasible) {
    rep.objective = std::numeric_limits<double>::infinity();
    rep.message = "some sampled scenario cannot be covered";
  }
  rep.wall_time_seconds = clock.seconds();
  return rep;
}

/// Continuous relaxation of the sample approximation at a node: indicators in
/// [0,1], pinned ones fixed, and sum x = ceil((1 - xi) N) enforced by
/// eliminating the last free indicator.
inline NodeResult node_relax(const Instance &instance, const ScenarioSet &scenarios, double xi,
                             const BnbNode &node, const ipm::IpmSettings &settings = {}) {
  detail::check_scenarios(instance, scenarios);
  const std::size_t n = scenarios.size();
  for (std::size_t i : node.fixed_one)
    if (node.fixed_zero.count(i) || i >= n)
      throw InvalidInput("node_relax: inconsistent node fixings");
  for (std::size_t i : node.fixed_zero)
    if (i >= n)
      throw InvalidInput("node_relax: fixing out of range");

  const std::size_t required = required_count(n, xi);
  std::vector<std::size_t> free;
  for (std::size_t i = 0; i < n; ++i)
    if (!node.fixed_one.count(i) && !node.fixed_zero.count(i))
      free.push_back(i);

  NodeResult out;
  const long long rem = static_cast<long long>(required) - static_cast<long long>(node.fixed_one.size());
  if (rem < 0 || rem > static_cast<long long>(free.size())) {
    out.ipm.status = ipm::Status::infeasible;
    out.ipm.objective = std::numeric_limits<double>::infinity();
    return out;
  }

  if (rem == 0 || rem == static_cast<long long>(free.size())) {
    std::vector<std::size_t> enforced(node.fixed_one.begin(), node.fixed_one.end());
    if (rem > 0)
      enforced.insert(enforced.end(), free.begin(), free.end());
    std::sort(enforced.begin(), enforced.end());
    out = detail::solve_robust_subset(instance, scenarios, enforced, settings);
    if (out.ipm.status == ipm::Status::optimal) {
      out.x.assign(n, 0.0);
      for (std::size_t i : enforced)
        out.x[i] = 1.0;
    }
    return out;
  }

  const std::size_t d = instance.decision_count();
  const std::size_t nfree = free.size();
  const std::size_t last = free.back();
  const double remd = static_cast<double>(rem);
  const double scale = goal_scale(instance);
  ipm::ConeProgram prog = allocation_program(instance, nfree - 1);

  for (std::size_t i : node.fixed_one)
    for (std::size_t k = 0; k < instance.num_campaigns(); ++k)
      prog.add_linear(detail::scenario_row(instance, scenarios, i, k, scale));
  for (std::size_t a = 0; a + 1 < nfree; ++a) {
    prog.set_bounds(d + a, 0.0, 1.0);
    for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
      ipm::LinearConstraint row = detail::scenario_row(instance, scenarios, free[a], k, scale);
      row.coeffs.emplace_back(d + a, instance.goals()[k] * scale);
      row.bound = 0.0;
      prog.add_linear(std::move(row));
    }
  }
  // x_last = rem - sum of the other free indicators
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    ipm::LinearConstraint row = detail::scenario_row(instance, scenarios, last, k, scale);
    for (std::size_t a = 0; a + 1 < nfree; ++a)
      row.coeffs.emplace_back(d + a, -instance.goals()[k] * scale);
    row.bound = -instance.goals()[k] * scale * remd;
    prog.add_linear(std::move(row));
  }
  {
    ipm::LinearConstraint nonneg, upper;
    for (std::size_t a = 0; a + 1 < nfree; ++a) {
      nonneg.coeffs.emplace_back(d + a, 1.0);
      upper.coeffs.emplace_back(d + a, -1.0);
    }
    nonneg.bound = remd;
    upper.bound = 1.0 - remd;
    prog.add_linear(std::move(nonneg));
    prog.add_linear(std::move(upper));
  }
  Vector start(d + nfree - 1, remd / static_cast<double>(nfree));
  prog.set_start(std::move(start));
  prog.set_start(ipm::initial_point(prog, instance).x0);

  out.ipm = ipm::solve(prog, settings);
  if (out.ipm.status != ipm::Status::optimal)
    return out;
  out.p.assign(out.ipm.x.begin(), out.ipm.x.begin() + static_cast<std::ptrdiff_t>(d));
  out.ipm.objective = objective_value(instance, out.p);
  out.x.assign(n, 0.0);
  for (std::size_t i : node.fixed_one)
    out.x[i] = 1.0;
  double used = 0.0;
  for (std::size_t a = 0; a + 1 < nfree; ++a) {
    out.x[free[a]] = out.ipm.x[d + a];
    used += out.ipm.x[d + a];
  }
  out.x[last] = remd - used;
  return out;
}

/// Smallest fulfillment ratio of scenario i under p: min_k (S_k^i . p_k) / g_k.
inline double fulfillment_ratio(const Instance &instance, std::span<const double> p,
                                std::span<const double> scenario) {
  double worst = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    double got = 0.0;
    const std::size_t off = instance.campaign_offset(k);
    const auto &vk = instance.campaign_viewers(k);
    for (std::size_t j = 0; j < vk.size(); ++j)
      got += scenario[vk[j]] * p[off + j];
    worst = std::min(worst, got / instance.goals()[k]);
  }
  return worst;
}

/// The unfixed scenario farthest from being satisfied on a percentage basis
/// (ties go to the smallest index).
inline std::size_t branch_select(const Instance &instance, std::span<const double> p,
                                 const ScenarioSet &scenarios,
                                 const std::vector<std::size_t> &unfixed) {
  if (unfixed.empty())
    throw InvalidInput("branch_select: no unfixed scenario");
  std::size_t best = unfixed.front();
  double best_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t i : unfixed) {
    const double r = fulfillment_ratio(instance, p, scenarios.scenario(i));
    if (r < best_ratio || (r == best_ratio && i < best)) {
      best_ratio = r;
      best = i;
    }
  }
  return best;
}

struct BnbOptions {
  std::size_t node_limit = 1'000'000;
  double integrality_tolerance = 1e-6;
  double prune_tolerance = 1e-9;
  /// When set, receives "node_id,parent,fixed1,fixed0,bound,status" lines.
  std::ostream *node_log = nullptr;
};

/// Exact optimum of the sample approximation by best-first branch-and-bound.
inline SolveReport solve_sa(const Instance &instance, const ScenarioSet &scenarios, double xi,
                            const ipm::IpmSettings &settings = {}, const BnbOptions &options = {}) {
  detail::check_scenarios(instance, scenarios);
  if (!(xi >= 0.0 && xi < 1.0))
    throw InvalidInput("solve_sa: xi must lie in [0,1)");
  const std::size_t n = scenarios.size();
  const std::size_t required = required_count(n, xi);
  if (required == 0)
    throw InvalidInput("solve_sa: ceil((1 - xi) N) must be at least one");

  Stopwatch clock;
  SolveReport rep;
  rep.bound_kind = "sa_lower";
  rep.assumption = "sample";
  rep.scenarios = n;
  rep.xi = xi;
  rep.seed = scenarios.seed;

  struct Open {
    double bound;
    std::size_t seq;
    std::size_t id;
    BnbNode node;
    Vector p;
  };
  struct Cmp {
    bool operator()(const Open &a, const Open &b) const {
      if (a.bound != b.bound)
        return a.bound > b.bound;
      return a.seq > b.seq;
    }
  };
  std::priority_queue<Open, std::vector<Open>, Cmp> open;

  double incumbent = std::numeric_limits<double>::infinity();
  Vector incumbent_p;
  std::size_t solved = 0, seq = 0, failures = 0;
  int ipm_iters = 0;
  const double tol = options.integrality_tolerance;

  auto log = [&](std::size_t id, long long parent, const BnbNode &node, double bound,
                 const char *status) {
    if (options.node_log)
      *options.node_log << id << ',' << parent << ',' << node.fixed_one.size() << ','
                        << node.fixed_zero.size() << ',' << bound << ',' << status << '\n';
  };

  // Solves a node, updates the incumbent or queues it.
  auto evaluate = [&](BnbNode node, long long parent) {
    const std::size_t id = solved++;
    const NodeResult r = node_relax(instance, scenarios, xi, node, settings);
    ipm_iters += r.ipm.iterations;
    if (r.ipm.status == ipm::Status::infeasible) {
      log(id, parent, node, r.ipm.objective, "infeasible");
      return;
    }
    if (r.ipm.status != ipm::Status::optimal) {
      ++failures;
      log(id, parent, node, r.ipm.objective, "failed");
      return;
    }
    const double bound = r.ipm.objective;
    node.relaxation_bound = bound;
    node.relaxation_solution = r.x;

    bool integral = true;
    std::size_t ones = 0;
    for (double xv : r.x) {
      if (std::abs(xv) > tol && std::abs(xv - 1.0) > tol)
        integral = false;
      ones += xv > 0.5 ? 1 : 0;
    }
    if (integral && ones == required) {
      bool verified = true;
      for (std::size_t i = 0; i < n && verified; ++i)
        if (r.x[i] > 0.5 && fulfillment_ratio(instance, r.p, scenarios.scenario(i)) < 1.0 - 1e-6)
          verified = false;
      if (verified) {
        if (bound < incumbent) {
          incumbent = bound;
          incumbent_p = r.p;
        }
        log(id, parent, node, bound, "integral");
        return;
      }
    }
    // the relaxed allocation may already cover enough scenarios on its own
    std::size_t covered = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (fulfillment_ratio(instance, r.p, scenarios.scenario(i)) >= 1.0 - 1e-9)
        ++covered;
    if (covered >= required && bound < incumbent) {
      incumbent = bound;
      incumbent_p = r.p;
    }
    if (bound >= incumbent - options.prune_tolerance) {
      log(id, parent, node, bound, "pruned");
      return;
    }
    log(id, parent, node, bound, "open");
    open.push({bound, seq++, id, std::move(node), r.p});
  };

  evaluate(BnbNode{}, -1);
  bool limit_hit = false;
  while (!open.empty()) {
    if (solved >= options.node_limit) {
      limit_hit = true;
      break;
    }
    Open top = open.top();
    open.pop();
    if (top.bound >= incumbent - options.prune_tolerance)
      continue;
    std::vector<std::size_t> unfixed;
    for (std::size_t i = 0; i < n; ++i)
      if (!top.node.fixed_one.count(i) && !top.node.fixed_zero.count(i))
        unfixed.push_back(i);
    if (unfixed.empty())
      continue;
    const std::size_t j = branch_select(instance, top.p, scenarios, unfixed);
    BnbNode one = top.node, zero = top.node;
    one.fixed_one.insert(j);
    zero.fixed_zero.insert(j);
    one.relaxation_solution.reset();
    zero.relaxation_solution.reset();
    evaluate(std::move(one), static_cast<long long>(top.id));
    evaluate(std::move(zero), static_cast<long long>(top.id));
  }

  double best_open = incumbent;
  while (!open.empty()) {
    best_open = std::min(best_open, open.top().bound);
    open.pop();
  }

  rep.nodes = solved;
  rep.iterations = ipm_iters;
  rep.proven_optimal = !limit_hit && failures == 0;
  rep.best_bound = best_open;
  if (std::isfinite(incumbent)) {
    rep.allocation = incumbent_p;
    rep.objective = incumbent;
    rep.status = limit_hit ? "node_limit" : (failures ? "warning" : "optimal");
    if (limit_hit)
      rep.message = "node limit reached; incumbent not proven optimal";
    else if (failures)
      rep.message = std::to_string(failures) + " node relaxations failed numerically";
  } else if (limit_hit) {
    rep.status = "node_limit";
    rep.message = "node limit reached without an incumbent";
  } else {
    rep.status = failures ? "numerical_failure" : "infeasible";
    rep.objective = std::numeric_limits<double>::infinity();
    rep.message = failures ? "node relaxations failed" : "no allocation satisfies enough scenarios";
  }
  rep.wall_time_seconds = clock.seconds();
  return rep;
}

} // namespace adplan
