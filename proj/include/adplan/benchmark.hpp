#pragma once

// Named bounds and the seeded benchmark runner behind the command-line tool.

#include "adplan/convex_bounds.hpp"
#include "adplan/errors.hpp"
#include "adplan/io.hpp"
#include "adplan/model.hpp"
#include "adplan/report.hpp"
#include "adplan/sample_approx.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace adplan {

/// Bad run configuration (exit status 1).
class ConfigError : public InvalidInput {
public:
  using InvalidInput::InvalidInput;
};

inline constexpr std::array<const char *, 8> kBoundNames = {
    "sa_lower",    "sa_upper",     "df_lower",             "df_upper_uniform",
    "df_upper_alg", "normal_lower", "normal_upper_uniform", "normal_upper_alg"};

inline std::optional<std::size_t> bound_index(const std::string &name) {
  for (std::size_t i = 0; i < kBoundNames.size(); ++i)
    if (name == kBoundNames[i])
      return i;
  return std::nullopt;
}

struct SolveOptions {
  /// Seeds scenario sampling for the sample bounds.
  std::uint64_t seed = 0;
  double target_confidence = 0.99;
  std::size_t n_lower = 100;
  BnbOptions bnb;
  ipm::IpmSettings ipm;
  /// Replaces sampling for sa_lower (xi chosen for its size) and sa_upper.
  std::optional<ScenarioSet> scenarios;
};

/// Runs one of the eight named bounds.
inline SolveReport solve_named(const Instance &instance, const std::string &name,
                               const SolveOptions &opt = {}) {
  const auto idx = bound_index(name);
  if (!idx)
    throw InvalidInput("unknown bound '" + name + "'");
  opt.ipm.validate();
  if (name == "sa_lower" || name == "sa_upper") {
    Stopwatch clock;
    const std::size_t n_lower = opt.scenarios && name == "sa_lower" ? opt.scenarios->size() : opt.n_lower;
    const SaParams params =
        choose_parameters(instance.alpha(), instance.decision_count(), opt.target_confidence, n_lower);
    SolveReport rep;
    if (name == "sa_lower") {
      const ScenarioSet set =
          opt.scenarios ? *opt.scenarios
                        : sample_supply(instance, params.n_lower, derive_seed(opt.seed, Stream::sa_lower, 0));
      rep = solve_sa(instance, set, params.xi, opt.ipm, opt.bnb);
      rep.confidence = params.lower_confidence;
    } else {
      const ScenarioSet set =
          opt.scenarios ? *opt.scenarios
                        : sample_supply(instance, params.n_upper, derive_seed(opt.seed, Stream::sa_upper, 0));
      rep = solve_robust_sa(instance, set, opt.ipm);
      if (set.size() > instance.decision_count())
        rep.confidence = std::max(0.0, ub_confidence(set.size(), instance.decision_count(), instance.alpha()));
    }
    rep.wall_time_seconds = clock.seconds();
    return rep;
  }
  if (name == "df_lower")
    return solve_ca(instance, BoundKind::df_lower, std::nullopt, opt.ipm);
  if (name == "normal_lower")
    return solve_ca(instance, BoundKind::normal_lower, std::nullopt, opt.ipm);
  if (name == "df_upper_uniform")
    return solve_ca(instance, BoundKind::df_upper, RiskBudget::uniform(instance), opt.ipm);
  if (name == "normal_upper_uniform")
    return solve_ca(instance, BoundKind::normal_upper, RiskBudget::uniform(instance), opt.ipm);
  if (name == "df_upper_alg")
    return refine_upper_bound(instance, BoundKind::df_upper, opt.ipm);
  return refine_upper_bound(instance, BoundKind::normal_upper, opt.ipm);
}

/// Outcomes that leave a table cell without a result. Infeasibility and node
/// limits are results; "warning" keeps its result but still marks the run as
/// partial.
inline bool is_failure(const SolveReport &rep) {
  return rep.status == "numerical_failure" || rep.status == "iteration_limit" || rep.status.empty();
}

/// bound_kind written into reports: the uniform-budget upper bounds are the
/// plain convex approximations.
inline std::string report_kind(const std::string &name) {
  const std::string suffix = "_uniform";
  if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
    return name.substr(0, name.size() - suffix.size());
  return name;
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  std::uint64_t master_seed = 20120101;
  std::size_t num_problems = 10;
  std::vector<double> alpha_schedule;
  std::vector<std::string> bounds_to_run;
  std::uint64_t mc_trials = 100000;
  double confidence = 0.99;
  ipm::IpmSettings ipm;
  std::string output_dir = "benchmark_out";
  std::size_t n_lower = 100;
  std::size_t sa_node_limit = 200;
  unsigned workers = 1;
  GenSpec generator;

  /// First half of the problems at alpha = 0.1, the rest at 0.05.
  static std::vector<double> default_alpha_schedule(std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i)
      out[i] = i < (n + 1) / 2 ? 0.1 : 0.05;
    return out;
  }

  void validate() const {
    if (num_problems == 0)
      throw ConfigError("config: num_problems must be positive");
    if (alpha_schedule.size() != num_problems)
      throw ConfigError("config: alpha_schedule has " + std::to_string(alpha_schedule.size()) +
                        " entries but num_problems is " + std::to_string(num_problems));
    for (std::size_t i = 0; i < alpha_schedule.size(); ++i)
      if (!(alpha_schedule[i] > 0.0 && alpha_schedule[i] < 0.5))
        throw ConfigError("config: alpha_schedule[" + std::to_string(i) + "] = " +
                          std::to_string(alpha_schedule[i]) + " violates the requirement alpha in (0, 0.5)");
    for (const auto &b : bounds_to_run)
      if (!bound_index(b))
        throw ConfigError("config: unknown bound '" + b + "' in bounds_to_run");
    if (mc_trials == 0)
      throw ConfigError("config: mc_trials must be positive");
    if (!(confidence > 0.0 && confidence < 1.0))
      throw ConfigError("config: confidence must lie in (0, 1)");
    if (n_lower == 0 || sa_node_limit == 0 || workers == 0)
      throw ConfigError("config: n_lower, sa_node_limit and workers must be positive");
    try {
      ipm.validate();
    } catch (const InvalidInput &e) {
      throw ConfigError(std::string("config: ipm: ") + e.what());
    }
  }
};

namespace bench_detail {

template <class T> T get_field(const Json &j, const std::string &name) {
  try {
    return j.get<T>();
  } catch (const nlohmann::json::exception &) {
    throw ConfigError("config: field '" + name + "' has the wrong type");
  }
}

inline void reject_unknown(const Json &j, const std::vector<std::string> &known, const std::string &where) {
  for (const auto &[key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("config: unknown field '" + where + key + "'");
}

} // namespace bench_detail

inline RunConfig run_config_from_json(const Json &j) {
  using bench_detail::get_field;
  if (!j.is_object())
    throw ConfigError("config: expected a JSON object");
  bench_detail::reject_unknown(j,
                               {"master_seed", "num_problems", "alpha_schedule", "bounds_to_run", "mc_trials",
                                "confidence", "ipm", "output_dir", "n_lower", "sa_node_limit", "workers",
                                "generator"},
                               "");
  RunConfig c;
  if (j.contains("master_seed"))
    c.master_seed = get_field<std::uint64_t>(j["master_seed"], "master_seed");
  if (j.contains("num_problems"))
    c.num_problems = get_field<std::size_t>(j["num_problems"], "num_problems");
  if (j.contains("alpha_schedule"))
    c.alpha_schedule = get_field<std::vector<double>>(j["alpha_schedule"], "alpha_schedule");
  else
    c.alpha_schedule = RunConfig::default_alpha_schedule(c.num_problems);
  if (j.contains("bounds_to_run"))
    c.bounds_to_run = get_field<std::vector<std::string>>(j["bounds_to_run"], "bounds_to_run");
  else
    c.bounds_to_run.assign(kBoundNames.begin(), kBoundNames.end());
  if (j.contains("mc_trials"))
    c.mc_trials = get_field<std::uint64_t>(j["mc_trials"], "mc_trials");
  if (j.contains("confidence"))
    c.confidence = get_field<double>(j["confidence"], "confidence");
  if (j.contains("output_dir"))
    c.output_dir = get_field<std::string>(j["output_dir"], "output_dir");
  if (j.contains("n_lower"))
    c.n_lower = get_field<std::size_t>(j["n_lower"], "n_lower");
  if (j.contains("sa_node_limit"))
    c.sa_node_limit = get_field<std::size_t>(j["sa_node_limit"], "sa_node_limit");
  if (j.contains("workers"))
    c.workers = get_field<unsigned>(j["workers"], "workers");
  if (j.contains("ipm")) {
    const Json &s = j["ipm"];
    if (!s.is_object())
      throw ConfigError("config: field 'ipm' must be an object");
    bench_detail::reject_unknown(s, {"epsilon_rel", "t_multiplier", "max_iters", "boundary_fraction", "big_m"},
                                 "ipm.");
    if (s.contains("epsilon_rel"))
      c.ipm.epsilon_rel = get_field<double>(s["epsilon_rel"], "ipm.epsilon_rel");
    if (s.contains("t_multiplier"))
      c.ipm.t_multiplier = get_field<double>(s["t_multiplier"], "ipm.t_multiplier");
    if (s.contains("max_iters"))
      c.ipm.max_iters = get_field<int>(s["max_iters"], "ipm.max_iters");
    if (s.contains("boundary_fraction"))
      c.ipm.boundary_fraction = get_field<double>(s["boundary_fraction"], "ipm.boundary_fraction");
    if (s.contains("big_m"))
      c.ipm.big_m = get_field<double>(s["big_m"], "ipm.big_m");
  }
  if (j.contains("generator")) {
    const Json &g = j["generator"];
    if (!g.is_object())
      throw ConfigError("config: field 'generator' must be an object");
    bench_detail::reject_unknown(g,
                                 {"campaigns_min", "campaigns_max", "viewers_min", "viewers_max",
                                  "targeting_probability", "mu_min", "mu_max", "variance_ratio_min",
                                  "variance_ratio_max", "goal_ratio_min", "goal_ratio_max", "weight"},
                                 "generator.");
    auto size_field = [&](const char *name, std::size_t &out) {
      if (g.contains(name))
        out = get_field<std::size_t>(g[name], std::string("generator.") + name);
    };
    auto real_field = [&](const char *name, double &out) {
      if (g.contains(name))
        out = get_field<double>(g[name], std::string("generator.") + name);
    };
    size_field("campaigns_min", c.generator.campaigns_min);
    size_field("campaigns_max", c.generator.campaigns_max);
    size_field("viewers_min", c.generator.viewers_min);
    size_field("viewers_max", c.generator.viewers_max);
    real_field("targeting_probability", c.generator.targeting_probability);
    real_field("mu_min", c.generator.mu_min);
    real_field("mu_max", c.generator.mu_max);
    real_field("variance_ratio_min", c.generator.variance_ratio_min);
    real_field("variance_ratio_max", c.generator.variance_ratio_max);
    real_field("goal_ratio_min", c.generator.goal_ratio_min);
    real_field("goal_ratio_max", c.generator.goal_ratio_max);
    real_field("weight", c.generator.weight);
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Runner

struct Cell {
  std::string bound;
  SolveReport report;
  bool failed = false;
  std::string error;
};

struct ProblemResult {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double alpha = 0.0;
  std::size_t num_campaigns = 0, num_viewer_types = 0, decision_count = 0;
  std::string instance_file;
  std::optional<SaParams> sa_params;
  std::vector<Cell> cells;
  std::string error;

  const Cell *cell(const std::string &bound) const {
    for (const auto &c : cells)
      if (c.bound == bound)
        return &c;
    return nullptr;
  }
};

struct NestingCheck {
  std::size_t problem = 0;
  std::string family;
  bool ok = true;
  std::string detail;
};

struct BenchmarkResult {
  std::vector<ProblemResult> problems;
  std::vector<NestingCheck> nesting;
  /// cells without a result or with a warning
  std::size_t failures = 0;
  double total_seconds = 0.0;

  int exit_code() const {
    const bool nested = std::all_of(nesting.begin(), nesting.end(), [](const auto &n) { return n.ok; });
    return failures == 0 && nested ? 0 : 2;
  }
};

inline std::uint64_t problem_seed(std::uint64_t master, std::size_t index) {
  return derive_seed(master, Stream::instance, index);
}

inline std::string problem_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "problem_%02zu.json", index + 1);
  return buf;
}

inline ProblemResult run_problem(const RunConfig &config, std::size_t index) {
  ProblemResult out;
  out.index = index;
  out.seed = problem_seed(config.master_seed, index);
  out.alpha = config.alpha_schedule[index];
  GenSpec spec = config.generator;
  spec.alpha = out.alpha;
  const Instance instance = generate_instance(spec, out.seed);
  out.num_campaigns = instance.num_campaigns();
  out.num_viewer_types = instance.num_viewer_types();
  out.decision_count = instance.decision_count();
  out.instance_file = problem_file_name(index);
  write_instance(instance, (std::filesystem::path(config.output_dir) / out.instance_file).string());

  SolveOptions opt;
  opt.seed = out.seed;
  opt.target_confidence = config.confidence;
  opt.n_lower = config.n_lower;
  opt.bnb.node_limit = config.sa_node_limit;
  opt.ipm = config.ipm;
  opt.ipm.log = nullptr;

  for (const auto &name : config.bounds_to_run) {
    Cell cell;
    cell.bound = name;
    try {
      if ((name == "sa_lower" || name == "sa_upper") && !out.sa_params)
        out.sa_params = choose_parameters(instance.alpha(), instance.decision_count(), config.confidence,
                                          config.n_lower);
      cell.report = solve_named(instance, name, opt);
      if (!cell.report.allocation.empty()) {
        const Allocation alloc(instance, cell.report.allocation);
        cell.report.fulfillment =
            estimate_fulfillment(instance, alloc, config.mc_trials, config.confidence,
                                 derive_seed(out.seed, Stream::evaluation, *bound_index(name)));
      }
      cell.report.seed = out.seed;
      cell.failed = is_failure(cell.report);
    } catch (const std::exception &e) {
      cell.failed = true;
      cell.error = e.what();
      cell.report.bound_kind = report_kind(name);
      cell.report.status = "numerical_failure";
      cell.report.message = e.what();
    }
    out.cells.push_back(std::move(cell));
  }
  return out;
}

/// lower <= alg <= uniform within 1e-8 (relative to the magnitude) for each
/// family, over the cells that were run and did not fail.
inline std::vector<NestingCheck> nesting_checks(const ProblemResult &p) {
  std::vector<NestingCheck> out;
  const std::array<std::array<const char *, 3>, 2> families = {
      {{"df_lower", "df_upper_alg", "df_upper_uniform"},
       {"normal_lower", "normal_upper_alg", "normal_upper_uniform"}}};
  const std::array<const char *, 2> names = {"distribution_free", "normal"};
  for (std::size_t f = 0; f < families.size(); ++f) {
    std::vector<std::pair<const char *, double>> chain;
    for (const char *b : families[f]) {
      const Cell *c = p.cell(b);
      if (c && !c->failed && c->report.status != "node_limit")
        chain.emplace_back(b, c->report.objective);
    }
    if (chain.size() < 2)
      continue;
    NestingCheck check;
    check.problem = p.index;
    check.family = names[f];
    for (std::size_t i = 0; i + 1 < chain.size(); ++i) {
      const double a = chain[i].second, b = chain[i + 1].second;
      if (std::isnan(a) || std::isnan(b))
        continue;
      const double slack = 1e-8 * (1.0 + (std::isfinite(a) ? std::abs(a) : 0.0));
      if (!(a <= b + slack)) {
        check.ok = false;
        check.detail = std::string(chain[i].first) + " > " + chain[i + 1].first;
      }
    }
    out.push_back(std::move(check));
  }
  return out;
}

inline std::string format_cell(double v) {
  if (std::isnan(v))
    return "";
  if (std::isinf(v))
    return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.5f", v);
  return buf;
}

/// CSV with problem, alpha and (objective x1000, PF lower bound, seconds)
/// per bound. Cells of bounds that were not run stay empty.
inline std::string table_csv(const std::vector<ProblemResult> &problems,
                             const std::vector<std::string> &bounds) {
  std::string out = "problem,alpha";
  for (const auto &b : bounds)
    out += "," + b + "_obj_x1000," + b + "_pf_hat," + b + "_time_s";
  out += '\n';
  for (const auto &p : problems) {
    out += std::to_string(p.index + 1) + "," + format_cell(p.alpha);
    for (const auto &b : bounds) {
      const Cell *c = p.cell(b);
      if (!c || c->failed) {
        out += ",,,";
        continue;
      }
      out += "," + format_cell(c->report.objective_x1000());
      out += "," + (c->report.fulfillment ? format_cell(c->report.fulfillment->lower_confidence) : std::string());
      out += "," + format_cell(c->report.wall_time_seconds);
    }
    out += '\n';
  }
  return out;
}

inline Json sa_params_json(const SaParams &s) {
  return {{"n_lower", s.n_lower},
          {"xi", s.xi},
          {"n_upper", s.n_upper},
          {"target_confidence", s.target_confidence},
          {"lower_confidence", s.lower_confidence},
          {"upper_confidence", s.upper_confidence}};
}

/// Everything except wall-clock times, so equal seeds give identical bytes.
inline Json results_json(const RunConfig &config, const BenchmarkResult &res) {
  Json j;
  j["master_seed"] = config.master_seed;
  j["num_problems"] = config.num_problems;
  j["alpha_schedule"] = config.alpha_schedule;
  j["bounds_to_run"] = config.bounds_to_run;
  j["mc_trials"] = config.mc_trials;
  j["confidence"] = config.confidence;
  j["n_lower"] = config.n_lower;
  j["sa_node_limit"] = config.sa_node_limit;
  Json problems = Json::array();
  for (const auto &p : res.problems) {
    Json pj;
    pj["problem"] = p.index + 1;
    pj["seed"] = p.seed;
    pj["alpha"] = p.alpha;
    pj["num_campaigns"] = p.num_campaigns;
    pj["num_viewer_types"] = p.num_viewer_types;
    pj["decision_count"] = p.decision_count;
    pj["instance_file"] = p.instance_file;
    if (p.sa_params)
      pj["sa_params"] = sa_params_json(*p.sa_params);
    if (!p.error.empty())
      pj["error"] = p.error;
    Json cells = Json::object();
    for (const auto &c : p.cells) {
      Json cj = to_json(c.report);
      cj.erase("wall_time_seconds");
      cj["failed"] = c.failed;
      cells[c.bound] = std::move(cj);
    }
    pj["cells"] = std::move(cells);
    problems.push_back(std::move(pj));
  }
  j["problems"] = std::move(problems);
  Json nest = Json::array();
  for (const auto &n : res.nesting) {
    Json nj = {{"problem", n.problem + 1}, {"family", n.family}, {"ok", n.ok}};
    if (!n.detail.empty())
      nj["detail"] = n.detail;
    nest.push_back(std::move(nj));
  }
  j["nesting_check"] = std::move(nest);
  j["failed_cells"] = res.failures;
  return j;
}

inline Json timings_json(const BenchmarkResult &res) {
  Json j;
  Json problems = Json::array();
  for (const auto &p : res.problems) {
    Json pj;
    pj["problem"] = p.index + 1;
    Json cells = Json::object();
    for (const auto &c : p.cells)
      cells[c.bound] = c.report.wall_time_seconds;
    pj["wall_time_seconds"] = std::move(cells);
    problems.push_back(std::move(pj));
  }
  j["problems"] = std::move(problems);
  j["total_seconds"] = res.total_seconds;
  return j;
}

inline std::vector<std::string> requested(const RunConfig &config, std::initializer_list<const char *> family) {
  std::vector<std::string> out;
  for (const char *b : family)
    if (std::find(config.bounds_to_run.begin(), config.bounds_to_run.end(), b) != config.bounds_to_run.end())
      out.emplace_back(b);
  return out;
}

/// Runs every problem, writes instance files, tables, results.json and
/// timings.json into config.output_dir. Problems run on config.workers
/// threads; output is assembled in problem order.
inline BenchmarkResult run_benchmark(const RunConfig &config,
                                     const std::function<void(const ProblemResult &)> &progress = {}) {
  config.validate();
  Stopwatch clock;
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(config.output_dir, ec);
  if (ec || !fs::is_directory(config.output_dir))
    throw ConfigError("cannot create output directory " + config.output_dir);

  BenchmarkResult res;
  res.problems.resize(config.num_problems);
  std::atomic<std::size_t> next{0};
  std::mutex progress_mutex;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (std::size_t i; (i = next++) < config.num_problems;) {
      try {
        res.problems[i] = run_problem(config, i);
      } catch (const InvalidInput &) {
        // writing the instance file is the only step outside per-cell handling
        std::lock_guard lock(progress_mutex);
        if (!fatal)
          fatal = std::current_exception();
        return;
      }
      if (progress) {
        std::lock_guard lock(progress_mutex);
        progress(res.problems[i]);
      }
    }
  };
  const unsigned nthreads = std::min<unsigned>(config.workers, static_cast<unsigned>(config.num_problems));
  if (nthreads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < nthreads; ++t)
      pool.emplace_back(worker);
    for (auto &t : pool)
      t.join();
  }
  if (fatal)
    std::rethrow_exception(fatal);

  for (const auto &p : res.problems) {
    for (const auto &c : p.cells)
      res.failures += c.failed || c.report.status == "warning" ? 1 : 0;
    for (auto &n : nesting_checks(p))
      res.nesting.push_back(std::move(n));
  }
  res.total_seconds = clock.seconds();

  if (config.bounds_to_run.empty())
    return res;
  const fs::path dir(config.output_dir);
  const auto sa = requested(config, {"sa_lower", "sa_upper"});
  const auto df = requested(config, {"df_lower", "df_upper_uniform", "df_upper_alg"});
  const auto normal = requested(config, {"normal_lower", "normal_upper_uniform", "normal_upper_alg"});
  if (!sa.empty())
    io_detail::write_file((dir / "table_sa.csv").string(), table_csv(res.problems, sa));
  if (!df.empty())
    io_detail::write_file((dir / "table_df.csv").string(), table_csv(res.problems, df));
  if (!normal.empty())
    io_detail::write_file((dir / "table_normal.csv").string(), table_csv(res.problems, normal));
  io_detail::write_file((dir / "results.json").string(), results_json(config, res).dump(2) + "\n");
  io_detail::write_file((dir / "timings.json").string(), timings_json(res).dump(2) + "\n");
  return res;
}

} // namespace adplan
