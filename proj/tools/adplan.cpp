// adplan: generate instances, solve bounds, evaluate allocations and run the
// seeded benchmark.

#include "adplan/benchmark.hpp"
#include "adplan/io.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace {

using namespace adplan;

enum class Verbosity { quiet, info, debug };

Verbosity verbosity() {
  const char *v = std::getenv("ADPLAN_LOG");
  if (!v)
    return Verbosity::info;
  const std::string s(v);
  if (s == "quiet" || s == "0")
    return Verbosity::quiet;
  if (s == "debug" || s == "2")
    return Verbosity::debug;
  return Verbosity::info;
}

void note(const std::string &msg) {
  if (verbosity() != Verbosity::quiet)
    std::cerr << "adplan: " << msg << '\n';
}

void emit(const Json &j, const std::string &out) {
  const std::string text = j.dump(2) + "\n";
  std::cout << text;
  if (!out.empty()) {
    std::ofstream f(out);
    if (!f)
      throw InvalidInput("cannot write " + out);
    f << text;
  }
}

std::unique_ptr<std::ofstream> open_log(const std::string &path, const char *header) {
  if (path.empty())
    return nullptr;
  auto f = std::make_unique<std::ofstream>(path);
  if (!*f)
    throw InvalidInput("cannot write " + path);
  *f << header << '\n';
  return f;
}

struct GenerateArgs {
  std::uint64_t seed = 1;
  std::optional<double> alpha;
  std::string out = "instance.json";
  std::size_t scenarios = 0;
  std::string scenario_out;
  std::string config;
};

int run_generate(const GenerateArgs &a) {
  GenSpec spec;
  if (!a.config.empty()) {
    Json j = parse_json(io_detail::read_file(a.config), a.config);
    Json cfg = {{"generator", j.contains("generator") ? j["generator"] : Json::object()}};
    spec = run_config_from_json(cfg).generator;
  }
  if (a.alpha)
    spec.alpha = *a.alpha;
  if (!(spec.alpha > 0.0 && spec.alpha < 0.5))
    throw InvalidInput("--alpha = " + std::to_string(spec.alpha) + " violates the requirement alpha in (0, 0.5)");
  const Instance inst = generate_instance(spec, a.seed);
  write_instance(inst, a.out);
  note("wrote " + a.out + " (" + std::to_string(inst.num_campaigns()) + " campaigns, " +
       std::to_string(inst.num_viewer_types()) + " viewer types)");
  if (a.scenarios > 0) {
    const std::string path = a.scenario_out.empty() ? a.out + ".scenarios.csv" : a.scenario_out;
    write_scenarios(sample_supply(inst, a.scenarios, derive_seed(a.seed, Stream::scenarios, 0)), path);
    note("wrote " + path);
  }
  return 0;
}

struct SolveArgs {
  std::string instance;
  std::string bound;
  std::uint64_t seed = 1;
  std::optional<double> alpha;
  std::uint64_t trials = 0;
  double confidence = 0.99;
  std::size_t n_lower = 100;
  std::size_t node_limit = 1'000'000;
  std::string scenarios;
  std::string out;
  std::string ipm_log;
  std::string node_log;
  std::string config;
};

int run_solve(const SolveArgs &a) {
  Instance inst = read_instance(a.instance);
  if (a.alpha) {
    if (!(*a.alpha > 0.0 && *a.alpha < 0.5))
      throw InvalidInput("--alpha = " + std::to_string(*a.alpha) + " violates the requirement alpha in (0, 0.5)");
    inst = inst.with_alpha(*a.alpha);
  }
  SolveOptions opt;
  opt.seed = a.seed;
  opt.target_confidence = a.confidence;
  opt.n_lower = a.n_lower;
  opt.bnb.node_limit = a.node_limit;
  if (!a.config.empty()) {
    Json j = parse_json(io_detail::read_file(a.config), a.config);
    Json cfg = Json::object();
    for (const char *key : {"ipm", "n_lower", "sa_node_limit"})
      if (j.contains(key))
        cfg[key] = j[key];
    const RunConfig rc = run_config_from_json(cfg);
    opt.ipm = rc.ipm;
    if (j.contains("n_lower"))
      opt.n_lower = rc.n_lower;
    if (j.contains("sa_node_limit"))
      opt.bnb.node_limit = rc.sa_node_limit;
  }
  if (!a.scenarios.empty()) {
    ScenarioSet set = read_scenarios(a.scenarios);
    set.seed = a.seed;
    opt.scenarios = std::move(set);
  }
  auto ipm_log = open_log(a.ipm_log, "iter,t,objective,kkt_residual,step");
  auto node_log = open_log(a.node_log, "node_id,parent,fixed1,fixed0,bound,status");
  opt.ipm.log = ipm_log.get();
  opt.bnb.node_log = node_log.get();

  SolveReport rep = solve_named(inst, a.bound, opt);
  if (!rep.seed)
    rep.seed = a.seed;
  if (a.trials > 0 && !rep.allocation.empty())
    rep.fulfillment = estimate_fulfillment(inst, Allocation(inst, rep.allocation), a.trials, a.confidence,
                                           derive_seed(a.seed, Stream::evaluation, 0));
  emit(to_json(rep), a.out);
  if (!rep.ok()) {
    note(a.bound + ": " + rep.status + (rep.message.empty() ? "" : " (" + rep.message + ")"));
    return 2;
  }
  return 0;
}

struct EvaluateArgs {
  std::string instance;
  std::string allocation;
  std::uint64_t seed = 1;
  std::uint64_t trials = 100000;
  double confidence = 0.99;
  std::string out;
};

int run_evaluate(const EvaluateArgs &a) {
  const Instance inst = read_instance(a.instance);
  const Json j = parse_json(io_detail::read_file(a.allocation), a.allocation);
  const Json &arr = j.is_object() && j.contains("allocation") ? j["allocation"] : j;
  if (!arr.is_array())
    throw InvalidInput(a.allocation + ": expected an allocation array or a report with an 'allocation' field");
  Vector p;
  for (const auto &x : arr) {
    if (!x.is_number())
      throw InvalidInput(a.allocation + ": allocation entries must be numbers");
    p.push_back(x.get<double>());
  }
  const Allocation alloc(inst, p);
  const FulfillmentEstimate est =
      estimate_fulfillment(inst, alloc, a.trials, a.confidence, derive_seed(a.seed, Stream::evaluation, 0));
  emit(Json{{"objective", objective_value(inst, alloc)},
            {"objective_x1000", 1000.0 * objective_value(inst, alloc)},
            {"successes", est.successes},
            {"trials", est.trials},
            {"pf_estimate", est.point_estimate},
            {"pf_lower_confidence", est.lower_confidence},
            {"confidence", est.confidence_level},
            {"seed", a.seed}},
       a.out);
  return 0;
}

struct BenchmarkArgs {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::uint64_t> trials;
};

int run_bench(const BenchmarkArgs &a) {
  Json j = a.config.empty() ? Json::object() : parse_json(io_detail::read_file(a.config), a.config);
  if (!j.is_object())
    throw ConfigError("config: expected a JSON object");
  if (a.seed)
    j["master_seed"] = *a.seed;
  if (!a.out.empty())
    j["output_dir"] = a.out;
  if (a.trials)
    j["mc_trials"] = *a.trials;
  const RunConfig config = run_config_from_json(j);
  const BenchmarkResult res = run_benchmark(config, [](const ProblemResult &p) {
    std::size_t failed = 0;
    for (const auto &c : p.cells)
      failed += c.failed ? 1 : 0;
    note("problem " + std::to_string(p.index + 1) + ": " + std::to_string(p.cells.size()) + " bounds, " +
         std::to_string(failed) + " failed");
  });
  for (const auto &n : res.nesting)
    if (!n.ok)
      note("nesting check failed for problem " + std::to_string(n.problem + 1) + " (" + n.family + "): " +
           n.detail);
  note("outputs in " + config.output_dir);
  return res.exit_code();
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Chance-constrained display ad allocation bounds"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto *g = app.add_subcommand("generate", "Write a random instance (and optional scenarios)");
  g->add_option("--seed", gen.seed, "Instance seed");
  g->add_option("--alpha", gen.alpha, "Joint un-fulfillment tolerance");
  g->add_option("--out", gen.out, "Instance JSON path");
  g->add_option("--scenarios", gen.scenarios, "Also sample this many supply scenarios");
  g->add_option("--scenario-out", gen.scenario_out, "Scenario CSV path");
  g->add_option("--config", gen.config, "JSON with a 'generator' block");

  SolveArgs sol;
  auto *s = app.add_subcommand("solve", "Solve one bound and print the report JSON");
  s->add_option("instance", sol.instance, "Instance JSON")->required();
  s->add_option("--bound", sol.bound, "Bound name")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>(kBoundNames.begin(), kBoundNames.end())));
  s->add_option("--seed", sol.seed, "Seed for scenarios and evaluation");
  s->add_option("--alpha", sol.alpha, "Override the instance alpha");
  s->add_option("--trials", sol.trials, "Monte Carlo trials for fulfillment (0 = skip)");
  s->add_option("--confidence", sol.confidence, "Confidence level");
  s->add_option("--n-lower", sol.n_lower, "Scenarios for the sample lower bound");
  s->add_option("--node-limit", sol.node_limit, "Branch-and-bound node limit");
  s->add_option("--scenarios", sol.scenarios, "Scenario CSV for sa_lower / sa_upper");
  s->add_option("--out", sol.out, "Also write the report here");
  s->add_option("--ipm-log", sol.ipm_log, "Interior-point iteration log CSV");
  s->add_option("--node-log", sol.node_log, "Branch-and-bound node log CSV");
  s->add_option("--config", sol.config, "JSON with ipm / n_lower / sa_node_limit overrides");

  EvaluateArgs ev;
  auto *e = app.add_subcommand("evaluate", "Estimate the probability of fulfillment of an allocation");
  e->add_option("instance", ev.instance, "Instance JSON")->required();
  e->add_option("allocation", ev.allocation, "Report JSON or allocation array")->required();
  e->add_option("--seed", ev.seed, "Sampling seed");
  e->add_option("--trials", ev.trials, "Monte Carlo trials");
  e->add_option("--confidence", ev.confidence, "Confidence level");
  e->add_option("--out", ev.out, "Also write the result here");

  BenchmarkArgs bm;
  auto *b = app.add_subcommand("benchmark", "Run the seeded benchmark");
  b->add_option("--config", bm.config, "RunConfig JSON");
  b->add_option("--seed", bm.seed, "Override master_seed");
  b->add_option("--out", bm.out, "Override output_dir");
  b->add_option("--trials", bm.trials, "Override mc_trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*g)
      return run_generate(gen);
    if (*s)
      return run_solve(sol);
    if (*e)
      return run_evaluate(ev);
    return run_bench(bm);
  } catch (const ParameterSearchError &err) {
    std::cerr << "adplan: " << err.what() << '\n';
    return 2;
  } catch (const NumericalError &err) {
    std::cerr << "adplan: " << err.what() << '\n';
    return 2;
  } catch (const std::exception &err) {
    std::cerr << "adplan: error: " << err.what() << '\n';
    return 1;
  }
}
