#pragma once

// File formats: instance JSON, scenario CSV, solve-report JSON.

#include "adplan/errors.hpp"
#include "adplan/model.hpp"
#include "adplan/report.hpp"
#include "adplan/report_schema.inc"

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

namespace adplan {

using Json = nlohmann::ordered_json;

/// Malformed input files; the message carries line and column when known.
class ParseError : public InvalidInput {
public:
  using InvalidInput::InvalidInput;
};

namespace io_detail {

inline std::string read_file(const std::string &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw InvalidInput("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw InvalidInput("cannot write " + path);
  out << text;
  if (!out)
    throw InvalidInput("write failed for " + path);
}

/// Converts nlohmann's byte offset into line:column.
inline std::pair<std::size_t, std::size_t> line_col(const std::string &text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i + 1 < byte && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  return {line, col};
}

inline Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

} // namespace io_detail

/// Parses JSON text; syntax errors become ParseError("<source>:line:col: ...").
inline Json parse_json(const std::string &text, const std::string &source = "<input>") {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    const auto [line, col] = io_detail::line_col(text, e.byte);
    std::string what = e.what();
    const auto pos = what.find("syntax error");
    throw ParseError(source + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " +
                     (pos == std::string::npos ? what : what.substr(pos)));
  }
}

// ---------------------------------------------------------------------------
// Instance

inline Json to_json(const Instance &instance) {
  Json j;
  j["num_viewer_types"] = instance.num_viewer_types();
  j["num_campaigns"] = instance.num_campaigns();
  Json targeting = Json::array();
  for (const auto &row : instance.targeting()) {
    Json r = Json::array();
    for (bool b : row)
      r.push_back(b ? 1 : 0);
    targeting.push_back(std::move(r));
  }
  j["targeting"] = std::move(targeting);
  j["mu"] = instance.mu();
  Json sigma = Json::array();
  for (std::size_t i = 0; i < instance.sigma().rows(); ++i) {
    const auto row = instance.sigma().row(i);
    sigma.push_back(Vector(row.begin(), row.end()));
  }
  j["sigma"] = std::move(sigma);
  j["goals"] = instance.goals();
  j["weights"] = instance.weights();
  j["alpha"] = instance.alpha();
  return j;
}

namespace io_detail {

inline const Json &field(const Json &j, const char *name) {
  if (!j.is_object())
    throw InvalidInput("instance: expected a JSON object");
  const auto it = j.find(name);
  if (it == j.end())
    throw InvalidInput(std::string("instance: missing field '") + name + "'");
  return *it;
}

inline Vector numbers(const Json &j, const char *name) {
  if (!j.is_array())
    throw InvalidInput(std::string("instance: field '") + name + "' must be an array of numbers");
  Vector out;
  for (const auto &x : j) {
    if (!x.is_number())
      throw InvalidInput(std::string("instance: field '") + name + "' must be an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

} // namespace io_detail

inline Instance instance_from_json(const Json &j) {
  using io_detail::field;
  using io_detail::numbers;
  const Json &nv_j = field(j, "num_viewer_types");
  const Json &nk_j = field(j, "num_campaigns");
  if (!nv_j.is_number_unsigned() || !nk_j.is_number_unsigned())
    throw InvalidInput("instance: num_viewer_types and num_campaigns must be non-negative integers");
  const std::size_t nv = nv_j.get<std::size_t>();
  const std::size_t nk = nk_j.get<std::size_t>();

  const Json &tj = field(j, "targeting");
  if (!tj.is_array() || tj.size() != nk)
    throw InvalidInput("instance: field 'targeting' must have num_campaigns rows");
  std::vector<std::vector<bool>> targeting;
  for (const auto &row : tj) {
    if (!row.is_array() || row.size() != nv)
      throw InvalidInput("instance: every 'targeting' row must have num_viewer_types entries");
    std::vector<bool> r;
    for (const auto &c : row) {
      if (!c.is_number_integer() || (c.get<long long>() != 0 && c.get<long long>() != 1))
        throw InvalidInput("instance: 'targeting' entries must be 0 or 1");
      r.push_back(c.get<long long>() == 1);
    }
    targeting.push_back(std::move(r));
  }

  Vector mu = numbers(field(j, "mu"), "mu");
  if (mu.size() != nv)
    throw InvalidInput("instance: field 'mu' must have num_viewer_types entries");

  const Json &sj = field(j, "sigma");
  if (!sj.is_array() || sj.size() != nv)
    throw InvalidInput("instance: field 'sigma' must be num_viewer_types x num_viewer_types");
  Vector flat;
  for (const auto &row : sj) {
    Vector r = numbers(row, "sigma");
    if (r.size() != nv)
      throw InvalidInput("instance: field 'sigma' must be num_viewer_types x num_viewer_types");
    flat.insert(flat.end(), r.begin(), r.end());
  }

  Vector goals = numbers(field(j, "goals"), "goals");
  Vector weights = numbers(field(j, "weights"), "weights");
  const Json &aj = field(j, "alpha");
  if (!aj.is_number())
    throw InvalidInput("instance: field 'alpha' must be a number");
  const double alpha = aj.get<double>();
  if (!(alpha > 0.0 && alpha < 0.5))
    throw InvalidInput("instance: field 'alpha' = " + std::to_string(alpha) +
                       " violates the requirement alpha in (0, 0.5)");
  return Instance(std::move(targeting), std::move(mu), DenseMatrix(nv, nv, std::move(flat)),
                  std::move(goals), std::move(weights), alpha);
}

inline Instance read_instance(const std::string &path) {
  return instance_from_json(parse_json(io_detail::read_file(path), path));
}

inline void write_instance(const Instance &instance, const std::string &path) {
  io_detail::write_file(path, to_json(instance).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Scenarios

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string scenarios_to_csv(const ScenarioSet &set) {
  std::string out;
  const std::size_t nv = set.samples.cols();
  for (std::size_t v = 0; v < nv; ++v) {
    out += (v ? ",v" : "v");
    out += std::to_string(v);
  }
  out += '\n';
  for (std::size_t i = 0; i < set.size(); ++i) {
    const auto row = set.scenario(i);
    for (std::size_t v = 0; v < nv; ++v) {
      if (v)
        out += ',';
      out += format_g17(row[v]);
    }
    out += '\n';
  }
  return out;
}

inline ScenarioSet scenarios_from_csv(const std::string &text, const std::string &source = "<input>") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw ParseError(source + ": empty scenario file");
  if (!line.empty() && line.back() == '\r')
    line.pop_back();
  std::size_t nv = 0;
  {
    std::istringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) {
      if (cell != "v" + std::to_string(nv))
        throw ParseError(source + ":1: expected header column v" + std::to_string(nv) + ", got '" +
                         cell + "'");
      ++nv;
    }
  }
  if (nv == 0)
    throw ParseError(source + ":1: empty header");
  Vector data;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    if (line.empty())
      continue;
    std::istringstream ls(line);
    std::string cell;
    std::size_t count = 0;
    while (std::getline(ls, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception &) {
        used = 0;
      }
      if (used == 0 || used != cell.size() || !std::isfinite(v))
        throw ParseError(source + ":" + std::to_string(lineno) + ":" + std::to_string(count + 1) +
                         ": not a finite number: '" + cell + "'");
      data.push_back(v);
      ++count;
    }
    if (count != nv)
      throw ParseError(source + ":" + std::to_string(lineno) + ": expected " + std::to_string(nv) +
                       " values, got " + std::to_string(count));
    ++rows;
  }
  if (rows == 0)
    throw ParseError(source + ": no scenarios");
  ScenarioSet set;
  set.samples = DenseMatrix(rows, nv, std::move(data));
  return set;
}

inline ScenarioSet read_scenarios(const std::string &path) {
  return scenarios_from_csv(io_detail::read_file(path), path);
}

inline void write_scenarios(const ScenarioSet &set, const std::string &path) {
  io_detail::write_file(path, scenarios_to_csv(set));
}

// ---------------------------------------------------------------------------
// Schema validation (the subset of JSON Schema used by the bundled schema:
// type, enum, required, properties, additionalProperties, items, minimum,
// maximum)

namespace io_detail {

inline bool type_matches(const Json &value, const std::string &type) {
  if (type == "null")
    return value.is_null();
  if (type == "boolean")
    return value.is_boolean();
  if (type == "integer")
    return value.is_number_integer();
  if (type == "number")
    return value.is_number();
  if (type == "string")
    return value.is_string();
  if (type == "array")
    return value.is_array();
  if (type == "object")
    return value.is_object();
  return false;
}

inline void validate(const Json &value, const Json &schema, const std::string &path,
                     std::vector<std::string> &errors) {
  if (const auto it = schema.find("type"); it != schema.end()) {
    bool ok = false;
    if (it->is_string())
      ok = type_matches(value, it->get<std::string>());
    else
      for (const auto &t : *it)
        ok = ok || type_matches(value, t.get<std::string>());
    if (!ok) {
      errors.push_back(path + ": expected type " + it->dump());
      return;
    }
  }
  if (const auto it = schema.find("enum"); it != schema.end()) {
    bool found = false;
    for (const auto &e : *it)
      found = found || e == value;
    if (!found)
      errors.push_back(path + ": value " + value.dump() + " not in " + it->dump());
  }
  if (value.is_number()) {
    const double v = value.get<double>();
    if (const auto it = schema.find("minimum"); it != schema.end() && v < it->get<double>())
      errors.push_back(path + ": below minimum " + it->dump());
    if (const auto it = schema.find("maximum"); it != schema.end() && v > it->get<double>())
      errors.push_back(path + ": above maximum " + it->dump());
  }
  if (value.is_object()) {
    if (const auto it = schema.find("required"); it != schema.end())
      for (const auto &name : *it)
        if (!value.contains(name.get<std::string>()))
          errors.push_back(path + ": missing required field '" + name.get<std::string>() + "'");
    const auto props = schema.find("properties");
    const auto extra = schema.find("additionalProperties");
    for (const auto &[key, sub] : value.items()) {
      if (props != schema.end() && props->contains(key))
        validate(sub, (*props)[key], path + "." + key, errors);
      else if (extra != schema.end() && extra->is_boolean() && !extra->get<bool>())
        errors.push_back(path + ": unexpected field '" + key + "'");
    }
  }
  if (value.is_array())
    if (const auto it = schema.find("items"); it != schema.end())
      for (std::size_t i = 0; i < value.size(); ++i)
        validate(value[i], *it, path + "[" + std::to_string(i) + "]", errors);
}

} // namespace io_detail

inline const Json &report_schema() {
  static const Json schema = Json::parse(kReportSchemaText);
  return schema;
}

/// Returns the list of violations (empty when valid).
inline std::vector<std::string> validate_against_schema(const Json &value, const Json &schema) {
  std::vector<std::string> errors;
  io_detail::validate(value, schema, "$", errors);
  return errors;
}

/// Serializes a report and validates it against the bundled schema; throws
/// std::logic_error if the emitted document is not schema-valid.
inline Json to_json(const SolveReport &rep) {
  using io_detail::finite_or_null;
  Json j;
  j["bound_kind"] = rep.bound_kind;
  j["status"] = rep.status;
  if (!rep.assumption.empty())
    j["assumption"] = rep.assumption;
  j["objective"] = finite_or_null(rep.objective);
  j["objective_x1000"] = finite_or_null(rep.objective_x1000());
  j["allocation"] = rep.allocation;
  j["alpha_budget"] = rep.alpha_budget;
  j["iterations"] = rep.iterations;
  j["wall_time_seconds"] = rep.wall_time_seconds;
  if (rep.fulfillment) {
    j["pf_estimate"] = rep.fulfillment->point_estimate;
    j["pf_lower_confidence"] = rep.fulfillment->lower_confidence;
    j["mc_trials"] = rep.fulfillment->trials;
  } else {
    j["pf_estimate"] = nullptr;
    j["pf_lower_confidence"] = nullptr;
  }
  j["seed"] = rep.seed ? Json(*rep.seed) : Json(nullptr);
  if (!rep.message.empty())
    j["message"] = rep.message;
  if (!rep.trace.empty()) {
    Json t = Json::array();
    for (const auto &e : rep.trace)
      t.push_back({{"alpha_budget", e.alpha_budget},
                   {"objective", finite_or_null(e.objective)},
                   {"status", e.status}});
    j["trace"] = std::move(t);
  }
  if (rep.scenarios)
    j["scenarios"] = *rep.scenarios;
  if (rep.xi)
    j["xi"] = *rep.xi;
  if (rep.confidence)
    j["confidence"] = *rep.confidence;
  if (rep.proven_optimal)
    j["proven_optimal"] = *rep.proven_optimal;
  if (rep.nodes)
    j["nodes"] = *rep.nodes;
  if (rep.best_bound)
    j["best_bound"] = finite_or_null(*rep.best_bound);

  const auto errors = validate_against_schema(j, report_schema());
  if (!errors.empty())
    throw std::logic_error("solve report violates its schema: " + errors.front());
  return j;
}

} // namespace adplan
