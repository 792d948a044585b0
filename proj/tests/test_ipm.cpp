#include "adplan/ipm.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace adplan;
using ipm::Status;

namespace {

ipm::ConeProgram shifted_square() {
  // (x - 0.5)^2 = x^2 - x + 0.25
  ipm::ConeProgram prog(1);
  prog.quad()(0, 0) = 1.0;
  prog.linear()[0] = -1.0;
  prog.set_constant(0.25);
  prog.set_bounds(0, 0.0, 1.0);
  prog.set_start({0.3});
  return prog;
}

} // namespace

TEST(Ipm, InteriorOptimum) {
  const ipm::IpmResult r = ipm::solve(shifted_square());
  ASSERT_EQ(r.status, Status::optimal);
  EXPECT_NEAR(r.x[0], 0.5, 1e-8);
  EXPECT_NEAR(r.objective, 0.0, 1e-8);
}

TEST(Ipm, ActiveBound) {
  // minimize (x - 2)^2 on [0, 1]
  ipm::ConeProgram prog(1);
  prog.quad()(0, 0) = 1.0;
  prog.linear()[0] = -4.0;
  prog.set_constant(4.0);
  prog.set_bounds(0, 0.0, 1.0);
  prog.set_start({0.5});
  const ipm::IpmResult r = ipm::solve(prog);
  ASSERT_EQ(r.status, Status::optimal);
  EXPECT_NEAR(r.x[0], 1.0, 1e-8);
  EXPECT_NEAR(r.objective, 1.0, 1e-7);
}

TEST(Ipm, Deterministic) {
  std::mt19937_64 rng(4);
  const auto sp = oracle::random_soc_program(6, rng, true);
  const ipm::IpmResult a = ipm::solve(sp.prog);
  const ipm::IpmResult b = ipm::solve(sp.prog);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Ipm, MatchesBoxQpOracle) {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + trial % 9;
    const oracle::BoxQp qp = oracle::random_box_qp(n, rng);
    const ipm::IpmResult r = ipm::solve(oracle::to_program(qp));
    ASSERT_EQ(r.status, Status::optimal) << "trial " << trial;
    const double want = qp.objective(oracle::projected_descent(qp));
    EXPECT_NEAR(r.objective, want, 1e-6) << "trial " << trial;
  }
}

TEST(Ipm, RandomSocKktAndFeasibility) {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto sp = oracle::random_soc_program(2 + trial % 7, rng, trial % 2 == 1);
    const ipm::IpmResult r = ipm::solve(sp.prog);
    ASSERT_EQ(r.status, Status::optimal) << "trial " << trial;
    EXPECT_LE(r.kkt_residual, 1e-9 * (1.0 + std::abs(r.objective))) << "trial " << trial;
    EXPECT_LE(oracle::max_violation(sp.prog, r.x), 1e-8) << "trial " << trial;
    EXPECT_NEAR(r.objective, sp.prog.objective(r.x), 1e-9 * (1.0 + std::abs(r.objective)));
  }
}

TEST(Ipm, NoFeasiblePointBeatsOptimum) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto sp = oracle::random_soc_program(4, rng, false);
    const ipm::IpmResult r = ipm::solve(sp.prog);
    ASSERT_EQ(r.status, Status::optimal);
    int checked = 0;
    for (int s = 0; s < 2000; ++s) {
      Vector x(4);
      for (double &v : x)
        v = unif(rng);
      if (oracle::max_violation(sp.prog, x) > 0.0)
        continue;
      ++checked;
      EXPECT_GE(sp.prog.objective(x), r.objective - 1e-9);
    }
    EXPECT_GE(sp.prog.objective(sp.interior), r.objective - 1e-9);
    (void)checked;
  }
}

TEST(Ipm, DetectsInfeasible) {
  // x in [0, 1] but x >= 2 required
  ipm::ConeProgram prog(1);
  prog.quad()(0, 0) = 1.0;
  prog.set_bounds(0, 0.0, 1.0);
  ipm::SocConstraint row;
  row.vars = {0};
  row.mean = {1.0};
  row.factor = LowerTriangular(1);
  row.scale = 0.0;
  row.threshold = 2.0;
  prog.add_soc(row);
  prog.set_start({0.5});
  EXPECT_EQ(ipm::solve(prog).status, Status::infeasible);
}

TEST(Ipm, DetectsInfeasibleSoc) {
  std::mt19937_64 rng(5);
  auto sp = oracle::random_soc_program(3, rng, true);
  ipm::SocConstraint soc = sp.prog.socs().front();
  soc.threshold = 1e3; // unreachable with x in [0,1]^n
  sp.prog.add_soc(soc);
  EXPECT_EQ(ipm::solve(sp.prog).status, Status::infeasible);
}

TEST(Ipm, IterationLimit) {
  std::mt19937_64 rng(8);
  const auto sp = oracle::random_soc_program(5, rng, true);
  ipm::IpmSettings s;
  s.max_iters = 2;
  EXPECT_EQ(ipm::solve(sp.prog, s).status, Status::iteration_limit);
}

TEST(Ipm, RejectsBadSettingsAndStart) {
  ipm::IpmSettings s;
  s.boundary_fraction = 1.0;
  EXPECT_THROW(ipm::solve(shifted_square(), s), InvalidInput);
  ipm::ConeProgram prog(2);
  EXPECT_THROW(ipm::solve(prog), InvalidInput);
  EXPECT_THROW(prog.set_bounds(0, 1.0, 1.0), InvalidInput);
}

TEST(Ipm, LogFormat) {
  std::ostringstream log;
  ipm::IpmSettings s;
  s.log = &log;
  const ipm::IpmResult r = ipm::solve(shifted_square(), s);
  std::istringstream in(log.str());
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 4) << line;
    EXPECT_EQ(line.substr(0, line.find(',')), std::to_string(lines));
    ++lines;
  }
  EXPECT_GE(lines, r.iterations);
  EXPECT_LE(lines, r.iterations + 1);
}

TEST(ProportionalStart, SingleViewer) {
  const Instance inst({{true}}, {1000}, DenseMatrix{{100}}, {600}, {1}, 0.1);
  const Vector p = ipm::proportional_start(inst);
  EXPECT_DOUBLE_EQ(p[0], 0.6);
  EXPECT_NEAR(1.0 - p[0], 0.4, 1e-15);
}

TEST(ProportionalStart, OverfullColumnRescaled) {
  const Instance inst({{true}, {true}}, {1000}, DenseMatrix{{100}}, {600, 800}, {1, 1}, 0.1);
  const Vector p = ipm::proportional_start(inst);
  EXPECT_DOUBLE_EQ(p[0], 0.6 / (1.4 + 1e-6));
  EXPECT_DOUBLE_EQ(p[1], 0.8 / (1.4 + 1e-6));
  EXPECT_LT(p[0] + p[1], 1.0);
}

TEST(BigMSlack, ZeroWhenMarginHolds) {
  ipm::ConeProgram prog(1);
  prog.set_bounds(0, 0.0, 10.0);
  ipm::SocConstraint row;
  row.vars = {0};
  row.mean = {1.0};
  row.factor = LowerTriangular(1);
  row.factor(0, 0) = 1.0;
  row.scale = 0.5;
  row.threshold = 1.0;
  prog.add_soc(row);
  // x = 5: 5 - 0.5 * 5 = 2.5 >= 1 + 1
  EXPECT_EQ(ipm::big_m_slack(prog, Vector{5.0}), 0.0);
  EXPECT_GT(ipm::big_m_slack(prog, Vector{1.0}), 0.0);
}

TEST(KktResidual, CentralPathPoint) {
  // minimize x^2 with x >= 1: 2x = z and (x - 1) z = 1/t hold at x = 2, z = 4, t = 1/4
  ipm::ConeProgram prog(1);
  prog.quad()(0, 0) = 1.0;
  prog.set_bounds(0, 1.0, ipm::kInf);
  EXPECT_LE(ipm::kkt_residual(prog, Vector{2.0}, ipm::Duals{{4.0}, {}}, 0.25), 1e-10);
  EXPECT_NEAR(ipm::kkt_residual(prog, Vector{2.0}, ipm::Duals{{4.0}, {}}, ipm::kInf), 4.0, 1e-12);
  EXPECT_THROW(ipm::kkt_residual(prog, Vector{2.0}, ipm::Duals{{0.0}, {}}, 0.25), InvalidInput);
  EXPECT_THROW(ipm::kkt_residual(prog, Vector{2.0, 1.0}, ipm::Duals{{4.0}, {}}, 0.25), InvalidInput);
}

TEST(KktResidual, SocDualMustBeInterior) {
  std::mt19937_64 rng(3);
  const auto sp = oracle::random_soc_program(2, rng, false);
  const ipm::IpmResult r = ipm::solve(sp.prog);
  ASSERT_EQ(r.status, Status::optimal);
  ipm::Duals bad = r.duals;
  bad.soc.front() = Vector(bad.soc.front().size(), 0.0);
  EXPECT_THROW(ipm::kkt_residual(sp.prog, r.x, bad, r.t), InvalidInput);
  EXPECT_LE(ipm::kkt_residual(sp.prog, r.x, r.duals, r.t), 1e-6);
}
