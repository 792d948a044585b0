#pragma once

// Solver reports shared by the convex and scenario-based bounds.

#include "adplan/ipm.hpp"
#include "adplan/model.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace adplan {

/// One iterate of the risk-budget refinement loop.
struct TraceEntry {
  Vector alpha_budget;
  double objective = 0.0;
  std::string status;
};

struct SolveReport {
  std::string bound_kind;
  /// optimal, infeasible, iteration_limit, numerical_failure, node_limit or warning
  std::string status;
  /// Assumption under which the bound holds (distribution_free, normal, sample).
  std::string assumption;
  double objective = std::numeric_limits<double>::quiet_NaN();
  Vector allocation;
  Vector alpha_budget;
  int iterations = 0;
  std::vector<TraceEntry> trace;
  double wall_time_seconds = 0.0;
  std::optional<FulfillmentEstimate> fulfillment;
  std::optional<std::uint64_t> seed;
  std::string message;

  // scenario bounds only
  std::optional<std::size_t> scenarios;
  std::optional<double> xi;
  std::optional<double> confidence;
  std::optional<bool> proven_optimal;
  std::optional<std::size_t> nodes;
  std::optional<double> best_bound;

  bool ok() const { return status == "optimal" || status == "warning"; }
  double objective_x1000() const { return objective * 1000.0; }
};

class Stopwatch {
public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_;
};

/// Program over the instance's proportions: the representativeness
/// objective (campaign means eliminated), p >= 0 and the supply budgets.
inline ipm::ConeProgram allocation_program(const Instance &instance, std::size_t extra_vars = 0) {
  const std::size_t d = instance.decision_count();
  ipm::ConeProgram prog(d + extra_vars);
  for (std::size_t k = 0; k < instance.num_campaigns(); ++k) {
    std::vector<std::size_t> idx;
    for (std::size_t v : instance.campaign_viewers(k))
      idx.push_back(instance.pair_index(v, k));
    prog.add_variance_term(idx, instance.weights()[k]);
  }
  for (std::size_t i = 0; i < d; ++i)
    prog.set_bounds(i, 0.0, ipm::kInf);
  for (std::size_t v = 0; v < instance.num_viewer_types(); ++v) {
    const auto &kv = instance.viewer_campaigns(v);
    // a single-campaign budget p <= 1 is still a row; bounds stay one-sided
    ipm::LinearConstraint row;
    for (std::size_t k : kv)
      row.coeffs.emplace_back(instance.pair_index(v, k), 1.0);
    row.bound = 1.0;
    prog.add_linear(std::move(row));
  }
  return prog;
}

/// Goals and supplies are divided by the largest goal before solving so that
/// constraint rows are O(1) and the Big-M penalty is dimensionless.
inline double goal_scale(const Instance &instance) {
  double g = 0.0;
  for (double v : instance.goals())
    g = std::max(g, v);
  return 1.0 / g;
}

} // namespace adplan
