#include "adplan/convex_bounds.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace adplan;

namespace {

Instance symmetric_pair(double alpha = 0.1) {
  return Instance({{true, true}}, {1000, 1000}, DenseMatrix{{1e4, 0}, {0, 1e4}}, {1000}, {1}, alpha);
}

// Goals close to the available supply so the chance rows bind.
GenSpec tight_spec() {
  GenSpec s;
  s.campaigns_min = 3;
  s.campaigns_max = 5;
  s.viewers_min = 5;
  s.viewers_max = 8;
  s.mu_min = 50.0;
  s.mu_max = 500.0;
  s.goal_ratio_min = 0.75;
  s.goal_ratio_max = 0.85;
  return s;
}

double upper_tol(double a) { return 1e-8 * (1.0 + std::abs(a)); }

} // namespace

TEST(CaParameters, DfLower) {
  const Instance inst({{true}}, {1000}, DenseMatrix{{10}}, {100}, {1}, 0.1);
  const CaParameters p = ca_parameters(BoundKind::df_lower, inst, std::nullopt);
  EXPECT_EQ(p.u[0], 0.0);
  EXPECT_DOUBLE_EQ(p.h[0], 90.0);
}

TEST(CaParameters, DfUpper) {
  const Instance inst({{true}}, {1000}, DenseMatrix{{10}}, {100}, {1}, 0.1);
  const CaParameters p = ca_parameters(BoundKind::df_upper, inst, RiskBudget({0.1}, 0.1));
  EXPECT_EQ(p.u[0], 3.0);
  EXPECT_EQ(p.h[0], 100.0);
}

TEST(CaParameters, NormalLower) {
  const Instance inst({{true}}, {1000}, DenseMatrix{{10}}, {100}, {1}, 0.05);
  const CaParameters p = ca_parameters(BoundKind::normal_lower, inst, std::nullopt);
  EXPECT_NEAR(p.u[0], 1.6448536, 1e-6);
  EXPECT_NEAR(p.u[0], -oracle::norm_quantile(0.05), 1e-9);
}

TEST(CaParameters, UpperKindsNeedBudget) {
  const Instance inst = symmetric_pair();
  EXPECT_THROW(ca_parameters(BoundKind::df_upper, inst, std::nullopt), InvalidInput);
  EXPECT_THROW(ca_parameters(BoundKind::normal_upper, inst, std::nullopt), InvalidInput);
  EXPECT_THROW(ca_parameters(BoundKind::normal_upper, inst, RiskBudget({0.05, 0.05}, 0.1)), InvalidInput);
}

TEST(CaParameters, UpperMonotoneInAlphaK) {
  const Instance inst = symmetric_pair();
  for (BoundKind kind : {BoundKind::df_upper, BoundKind::normal_upper}) {
    double prev = -1.0;
    for (double a = 0.099; a > 1e-4; a *= 0.7) {
      const double u = ca_parameters(kind, inst, RiskBudget({a}, 0.1)).u[0];
      EXPECT_GT(u, prev);
      EXPECT_GE(u, 0.0);
      prev = u;
    }
  }
}

TEST(RiskBudget, Invariants) {
  EXPECT_THROW(RiskBudget({0.06, 0.06}, 0.1), InvalidInput);
  EXPECT_THROW(RiskBudget({0.0, 0.05}, 0.1), InvalidInput);
  EXPECT_NO_THROW(RiskBudget({0.05, 0.05}, 0.1));
  const Instance inst = generate_instance(GenSpec{}, 3);
  const RiskBudget u = RiskBudget::uniform(inst);
  double total = 0.0;
  for (double a : u.values())
    total += a;
  EXPECT_NEAR(total, inst.alpha(), 1e-15);
}

TEST(SolveCa, SingletonCampaignsAllZero) {
  const Instance inst({{true, false}, {false, true}}, {1000, 2000}, DenseMatrix{{100, 0}, {0, 400}}, {100, 150},
                      {1, 1}, 0.1);
  for (BoundKind kind : {BoundKind::df_lower, BoundKind::df_upper, BoundKind::normal_lower, BoundKind::normal_upper}) {
    const auto budget = is_upper(kind) ? std::optional<RiskBudget>(RiskBudget::uniform(inst)) : std::nullopt;
    const SolveReport r = solve_ca(inst, kind, budget);
    ASSERT_EQ(r.status, "optimal") << to_string(kind);
    EXPECT_EQ(r.objective, 0.0) << to_string(kind);
  }
}

TEST(SolveCa, SymmetricNormalLower) {
  const SolveReport r = solve_ca(symmetric_pair(), BoundKind::normal_lower, std::nullopt);
  ASSERT_EQ(r.status, "optimal");
  EXPECT_EQ(r.bound_kind, "normal_lower");
  EXPECT_EQ(r.assumption, "normal");
  EXPECT_NEAR(r.objective, 0.0, 1e-9);
  // 2000 phi - n * 141.42 phi = 1000 at the optimum
  const double n = -oracle::norm_quantile(0.1);
  const double phi = 1000.0 / (2000.0 - n * std::sqrt(2e4));
  EXPECT_NEAR(phi, 0.5497, 1e-3);
  ASSERT_EQ(r.allocation.size(), 2u);
  EXPECT_NEAR(r.allocation[0], r.allocation[1], 1e-6);
  EXPECT_GE(r.allocation[0], phi - 1e-6);
  EXPECT_LE(r.allocation[0], 1.0 + 1e-9);
}

TEST(SolveCa, SymmetricDfLower) {
  const SolveReport r = solve_ca(symmetric_pair(), BoundKind::df_lower, std::nullopt);
  ASSERT_EQ(r.status, "optimal");
  EXPECT_EQ(r.assumption, "distribution_free");
  EXPECT_NEAR(r.objective, 0.0, 1e-9);
  EXPECT_NEAR(r.allocation[0], r.allocation[1], 1e-6);
  EXPECT_GE(r.allocation[0], 0.45 - 1e-6);
}

TEST(SolveCa, EqualAllocationWhenSymmetric) {
  // every proportion equal and just enough for the normal row
  const Instance inst({{true, true, true}}, {500, 500, 500}, DenseMatrix{{50, 0, 0}, {0, 50, 0}, {0, 0, 50}}, {600},
                      {1}, 0.05);
  const SolveReport r = solve_ca(inst, BoundKind::normal_upper, RiskBudget::uniform(inst));
  ASSERT_EQ(r.status, "optimal");
  EXPECT_NEAR(r.allocation[0], r.allocation[1], 1e-6);
  EXPECT_NEAR(r.allocation[1], r.allocation[2], 1e-6);
}

TEST(SolveCa, InfeasibleReported) {
  // goal above total supply
  const Instance inst({{true, true}}, {100, 100}, DenseMatrix{{10, 0}, {0, 10}}, {500}, {1}, 0.1);
  for (BoundKind kind : {BoundKind::df_lower, BoundKind::normal_upper}) {
    const auto budget = is_upper(kind) ? std::optional<RiskBudget>(RiskBudget::uniform(inst)) : std::nullopt;
    const SolveReport r = solve_ca(inst, kind, budget);
    EXPECT_EQ(r.status, "infeasible") << to_string(kind);
    EXPECT_FALSE(r.message.empty());
  }
}

TEST(AlphaHat, ChebyshevExamples) {
  const DenseMatrix one{{1}};
  EXPECT_NEAR(chebyshev_alpha_hat(Vector{1.0}, one, Vector{13.0}, 10.0), 0.1, 1e-15);
  EXPECT_NEAR(chebyshev_alpha_hat(Vector{1.0}, one, Vector{11.0}, 10.0), 0.5, 1e-15);
  EXPECT_EQ(chebyshev_alpha_hat(Vector{1.0}, DenseMatrix{{0}}, Vector{11.0}, 10.0), 0.0);
  EXPECT_THROW(chebyshev_alpha_hat(Vector{1.0}, one, Vector{10.0}, 10.0), InvalidInput);
}

TEST(AlphaHat, NormalExamples) {
  const DenseMatrix one{{1}};
  EXPECT_NEAR(normal_alpha_hat(Vector{1.0}, one, Vector{10.0}, 10.0), 0.5, 1e-15);
  EXPECT_NEAR(normal_alpha_hat(Vector{2.0}, DenseMatrix{{4}}, Vector{5.0 + 2.0 * 1.6448536269514722}, 10.0), 0.05,
              1e-6);
  EXPECT_EQ(normal_alpha_hat(Vector{1.0}, DenseMatrix{{0}}, Vector{11.0}, 10.0), 0.0);
  EXPECT_THROW(normal_alpha_hat(Vector{1.0}, DenseMatrix{{0}}, Vector{9.0}, 10.0), InvalidInput);
}

TEST(Nesting, LowerBelowUpper) {
  const GenSpec spec = tight_spec();
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const Instance inst = generate_instance(spec, seed);
    const SolveReport dl = solve_ca(inst, BoundKind::df_lower, std::nullopt);
    const SolveReport du = solve_ca(inst, BoundKind::df_upper, RiskBudget::uniform(inst));
    const SolveReport da = refine_upper_bound(inst, BoundKind::df_upper);
    const SolveReport nl = solve_ca(inst, BoundKind::normal_lower, std::nullopt);
    const SolveReport nu = solve_ca(inst, BoundKind::normal_upper, RiskBudget::uniform(inst));
    const SolveReport na = refine_upper_bound(inst, BoundKind::normal_upper);
    ASSERT_EQ(dl.status, "optimal") << seed;
    ASSERT_EQ(nl.status, "optimal") << seed;
    if (du.status == "optimal") {
      EXPECT_LE(dl.objective, du.objective + upper_tol(du.objective)) << seed;
      ++compared;
    }
    if (nu.status == "optimal")
      EXPECT_LE(nl.objective, nu.objective + upper_tol(nu.objective)) << seed;
    if (da.ok()) {
      EXPECT_LE(dl.objective, da.objective + upper_tol(da.objective)) << seed;
      EXPECT_LE(da.objective, du.objective + upper_tol(du.objective)) << seed;
    }
    if (na.ok()) {
      EXPECT_LE(nl.objective, na.objective + upper_tol(na.objective)) << seed;
      EXPECT_LE(na.objective, nu.objective + upper_tol(nu.objective)) << seed;
    }
    // normal rows are weaker than Chebyshev rows at the same alpha_k
    if (du.status == "optimal" && nu.status == "optimal")
      EXPECT_LE(nu.objective, du.objective + upper_tol(du.objective)) << seed;
  }
  EXPECT_GT(compared, 0);
}

TEST(Refine, TraceMonotoneAndBudgetValid) {
  const GenSpec spec = tight_spec();
  for (std::uint64_t seed = 100; seed < 115; ++seed) {
    const Instance inst = generate_instance(spec, seed);
    for (BoundKind kind : {BoundKind::df_upper, BoundKind::normal_upper}) {
      const SolveReport r = refine_upper_bound(inst, kind);
      if (!r.ok())
        continue;
      EXPECT_EQ(r.bound_kind, std::string(to_string(kind)) + "_alg");
      ASSERT_FALSE(r.trace.empty());
      double best = r.trace.front().objective;
      for (std::size_t i = 0; i < r.trace.size(); ++i) {
        const TraceEntry &e = r.trace[i];
        double total = 0.0;
        for (double a : e.alpha_budget) {
          EXPECT_GT(a, 0.0);
          total += a;
        }
        EXPECT_LE(total, inst.alpha() + 1e-12) << seed;
        if (i > 0 && e.status == "optimal") {
          EXPECT_LE(e.objective, r.trace[i - 1].objective + upper_tol(r.trace[i - 1].objective)) << seed;
          best = std::min(best, e.objective);
        }
      }
      EXPECT_EQ(r.objective, best);
      EXPECT_LE(r.objective, r.trace.front().objective);
      EXPECT_LE(static_cast<int>(r.trace.size()), 51);
    }
  }
}

TEST(Refine, NoSlackMeansSingleSolve) {
  // one campaign: its only row binds at the optimum, nothing to redistribute
  const Instance inst({{true, true}}, {1000, 800}, DenseMatrix{{400, 0}, {0, 300}}, {1500}, {1}, 0.1);
  const SolveReport r = refine_upper_bound(inst, BoundKind::normal_upper);
  ASSERT_EQ(r.status, "optimal");
  const SolveReport u = solve_ca(inst, BoundKind::normal_upper, RiskBudget::uniform(inst));
  EXPECT_NEAR(r.objective, u.objective, upper_tol(u.objective));
  EXPECT_LE(r.trace.size(), 2u);
}

TEST(Refine, RejectsLowerKinds) {
  EXPECT_THROW(refine_upper_bound(symmetric_pair(), BoundKind::df_lower), InvalidInput);
}

TEST(MonteCarlo, NormalUpperFulfillment) {
  const GenSpec spec = tight_spec();
  const std::uint64_t trials = 100000;
  int checked = 0;
  for (std::uint64_t seed = 200; seed < 220; ++seed) {
    const Instance inst = generate_instance(spec, seed);
    const SolveReport r = solve_ca(inst, BoundKind::normal_upper, RiskBudget::uniform(inst));
    if (r.status != "optimal")
      continue;
    ++checked;
    const FulfillmentEstimate est =
        estimate_fulfillment(inst, Allocation(inst, r.allocation), trials, 0.99, derive_seed(seed, Stream::evaluation, 0));
    EXPECT_GE(est.point_estimate, 1.0 - inst.alpha() - 3.0 * std::sqrt(inst.alpha() / trials)) << seed;
  }
  EXPECT_GE(checked, 10);
}
