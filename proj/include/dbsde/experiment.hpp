#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "dbsde/bsde_solver.hpp"
#include "dbsde/claims.hpp"
#include "dbsde/closed_form.hpp"
#include "dbsde/default_model.hpp"
#include "dbsde/error.hpp"
#include "dbsde/hedging.hpp"
#include "dbsde/market_model.hpp"
#include "dbsde/scenario.hpp"
#include "dbsde/time_grid.hpp"

namespace dbsde {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kOutputDirEnv = "DBSDE_OUTPUT_DIR";

struct OracleTolerance {
  double abs = 5e-3;
  double rel = 1e-2;
};

/// One experiment: model, claim, discretization, solver settings and outputs.
struct ExperimentConfig {
  std::string name = "experiment";
  MarketParams market;
  double eps = 1e-4;  // (M2) eigenvalue bounds
  double cap = 1e2;
  IntensityModel intensity;
  MeasureChange measure;
  PayoffSpec claim;
  std::vector<double> nodes;
  std::size_t paths = 100000;
  std::uint64_t seed = 1;
  SolverConfig solver;
  bool run_picard = true;
  bool run_replication = true;
  bool run_apriori = true;
  double apriori_gamma_offset = 0.1;  // gamma = 1 + 3K + K^2 + offset
  OracleTolerance oracle;
  std::string output_dir;  // empty: $DBSDE_OUTPUT_DIR, then ./results
  bool write_json = true;
  bool write_csv = false;
  std::size_t csv_paths = 1000;

  TimeGrid grid() const { return TimeGrid(nodes); }
};

namespace config_detail {

/// Collects every problem found while reading a document instead of stopping
/// at the first one.
class Reader {
 public:
  std::vector<std::string> problems;

  void fail(const std::string& where, const std::string& what) { problems.push_back(where + ": " + what); }

  const Json* child(const Json& obj, const std::string& where, const char* key, bool required) {
    if (!obj.is_object()) {
      fail(where, "expected an object");
      return nullptr;
    }
    auto it = obj.find(key);
    if (it == obj.end()) {
      if (required) fail(where + "." + key, "missing");
      return nullptr;
    }
    return &*it;
  }

  std::optional<double> number(const Json& v, const std::string& where) {
    if (!v.is_number()) {
      fail(where, "expected a number");
      return std::nullopt;
    }
    return v.get<double>();
  }

  template <typename Int>
  std::optional<Int> integer(const Json& v, const std::string& where) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail(where, "expected a non-negative integer");
      return std::nullopt;
    }
    return v.get<Int>();
  }

  std::optional<Vector> vector(const Json& v, const std::string& where, std::size_t dim) {
    if (v.is_number()) return Vector::Constant(static_cast<Eigen::Index>(dim), v.get<double>());
    if (!v.is_array()) {
      fail(where, "expected a number or an array of numbers");
      return std::nullopt;
    }
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      auto x = number(v[i], where + "[" + std::to_string(i) + "]");
      if (!x) return std::nullopt;
      out[static_cast<Eigen::Index>(i)] = *x;
    }
    return out;
  }

  std::optional<Matrix> matrix(const Json& v, const std::string& where, std::size_t dim) {
    const auto m = static_cast<Eigen::Index>(dim);
    if (v.is_number()) return Matrix(Matrix::Identity(m, m) * v.get<double>());
    if (!v.is_array() || v.empty()) {
      fail(where, "expected a number or a matrix (array of rows)");
      return std::nullopt;
    }
    Matrix out(static_cast<Eigen::Index>(v.size()), 0);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string at = where + "[" + std::to_string(i) + "]";
      auto row = vector(v[i], at, dim);
      if (!row || !v[i].is_array()) {
        if (row) fail(at, "expected an array of numbers");
        return std::nullopt;
      }
      if (i == 0) out.resize(static_cast<Eigen::Index>(v.size()), row->size());
      if (row->size() != out.cols()) {
        fail(at, "rows must have equal length");
        return std::nullopt;
      }
      out.row(static_cast<Eigen::Index>(i)) = row->transpose();
    }
    return out;
  }

  /// A constant, or a list of [time, value] pairs. `is_piecewise` tells the two
  /// apart for value types that are themselves arrays.
  template <typename T, typename ParseValue, typename IsPiecewise>
  std::optional<PiecewiseConstant<T>> curve(const Json& v, const std::string& where, ParseValue parse,
                                            IsPiecewise is_piecewise) {
    if (!is_piecewise(v)) {
      auto value = parse(v, where);
      if (!value) return std::nullopt;
      return PiecewiseConstant<T>(std::move(*value));
    }
    std::vector<typename PiecewiseConstant<T>::Piece> pieces;
    for (std::size_t j = 0; j < v.size(); ++j) {
      const std::string at = where + "[" + std::to_string(j) + "]";
      if (!v[j].is_array() || v[j].size() != 2) {
        fail(at, "expected a [time, value] pair");
        return std::nullopt;
      }
      auto t = number(v[j][0], at + "[0]");
      auto value = parse(v[j][1], at + "[1]");
      if (!t || !value) return std::nullopt;
      pieces.emplace_back(*t, std::move(*value));
    }
    try {
      return PiecewiseConstant<T>(std::move(pieces));
    } catch (const std::invalid_argument& e) {
      fail(where, e.what());
      return std::nullopt;
    }
  }

  std::optional<ScalarCurve> scalar_curve(const Json& v, const std::string& where) {
    return curve<double>(
        v, where, [this](const Json& x, const std::string& w) { return number(x, w); },
        [](const Json& x) { return x.is_array(); });
  }
};

/// [[t, value], ...] as opposed to a constant vector of numbers.
inline bool pair_list(const Json& v) { return v.is_array() && !v.empty() && v[0].is_array(); }

}  // namespace config_detail

/// Every reason `cfg` cannot be run. Empty means valid.
inline std::vector<std::string> config_violations(const ExperimentConfig& cfg) {
  std::vector<std::string> out;
  for (const auto& v : validate(cfg.market, cfg.eps, cfg.cap)) {
    std::ostringstream os;
    os << "market (" << v.condition << ") at t=" << v.time << ": " << v.message;
    out.push_back(os.str());
  }
  for (const auto& v : cfg.intensity.violations(cfg.market.horizon)) out.push_back("intensity: " + v);
  if (!(cfg.measure.psi > -1.0)) out.push_back("measure.psi: must be > -1");
  for (const auto& v : cfg.claim.violations(cfg.market.dim)) out.push_back("claim: " + v);

  const std::string grid_problem = TimeGrid::violation(cfg.nodes);
  if (!grid_problem.empty()) {
    out.push_back("grid: " + grid_problem);
  } else {
    const TimeGrid grid(cfg.nodes);
    if (std::abs(grid.horizon() - cfg.market.horizon) > 1e-12 * std::max(1.0, cfg.market.horizon))
      out.push_back("grid: last node must equal the market horizon T");
    for (double t : cfg.market.breakpoints())
      if (!grid.contains(t)) out.push_back("grid: market breakpoint t=" + std::to_string(t) + " is not a grid node");
    for (double t : cfg.intensity.lambda.breakpoints())
      if (t <= cfg.market.horizon && !grid.contains(t))
        out.push_back("grid: intensity breakpoint t=" + std::to_string(t) + " is not a grid node");
  }

  const auto& s = cfg.solver;
  if (s.cells == 0) out.push_back("solver.cells: must be >= 1");
  if (s.ridge < 0.0 || !std::isfinite(s.ridge)) out.push_back("solver.ridge: must be finite and >= 0");
  if (s.inner_passes == 0) out.push_back("solver.inner_passes: must be >= 1");
  if (!(s.picard.tolerance > 0.0)) out.push_back("solver.picard.tolerance: must be > 0");
  if (s.picard.max_iters == 0) out.push_back("solver.picard.max_iters: must be >= 1");
  if (s.picard.gamma && !(*s.picard.gamma >= 0.0)) out.push_back("solver.picard.gamma: must be >= 0");
  const double cells = std::pow(static_cast<double>(std::max<std::size_t>(1, s.cells)),
                                static_cast<double>(cfg.market.dim));
  const double needed = 10.0 * static_cast<double>(PolynomialBasis::count(cfg.market.dim, s.degree)) * cells;
  if (static_cast<double>(cfg.paths) < needed) {
    std::ostringstream os;
    os << "paths: need at least " << needed << " (10 per regression coefficient), got " << cfg.paths;
    out.push_back(os.str());
  }
  if (!(cfg.apriori_gamma_offset > 0.0)) out.push_back("checks.apriori_gamma_offset: must be > 0");
  if (!(cfg.oracle.abs >= 0.0) || !(cfg.oracle.rel >= 0.0)) out.push_back("oracle: tolerances must be >= 0");
  return out;
}

/// Reads and validates a config document. Throws ConfigError listing every
/// problem found.
inline ExperimentConfig parse_config(const Json& doc) {
  config_detail::Reader rd;
  ExperimentConfig cfg;
  if (!doc.is_object()) throw ConfigError({"config: expected a JSON object"});

  if (const Json* v = rd.child(doc, "config", "schema_version", true)) {
    if (!v->is_number_integer() || v->get<int>() != kSchemaVersion)
      rd.fail("config.schema_version", "unsupported (expected " + std::to_string(kSchemaVersion) + ")");
  }
  if (const Json* v = rd.child(doc, "config", "name", false)) {
    if (v->is_string()) cfg.name = v->get<std::string>();
    else rd.fail("config.name", "expected a string");
  }

  // market
  if (const Json* mk = rd.child(doc, "config", "market", true)) {
    auto& p = cfg.market;
    if (const Json* v = rd.child(*mk, "market", "horizon", true))
      if (auto x = rd.number(*v, "market.horizon")) p.horizon = *x;
    if (const Json* v = rd.child(*mk, "market", "dim", false))
      if (auto x = rd.integer<std::size_t>(*v, "market.dim")) p.dim = *x;
    const std::size_t m = std::max<std::size_t>(1, p.dim);
    if (const Json* v = rd.child(*mk, "market", "r", true))
      if (auto c = rd.scalar_curve(*v, "market.r")) p.r = std::move(*c);
    if (const Json* v = rd.child(*mk, "market", "mu", true)) {
      auto c = rd.curve<Vector>(
          *v, "market.mu", [&](const Json& x, const std::string& w) { return rd.vector(x, w, m); },
          config_detail::pair_list);
      if (c) p.mu = std::move(*c);
    }
    if (const Json* v = rd.child(*mk, "market", "sigma", true)) {
      // Pieces are [t, matrix]; for m = 1 the matrix may be a bare number.
      auto is_pairs = [m](const Json& x) {
        if (!x.is_array() || x.empty() || !x[0].is_array() || x[0].size() != 2) return false;
        return x[0][1].is_array() || m == 1;
      };
      auto c = rd.curve<Matrix>(
          *v, "market.sigma", [&](const Json& x, const std::string& w) { return rd.matrix(x, w, m); }, is_pairs);
      if (c) p.sigma = std::move(*c);
    }
    if (const Json* v = rd.child(*mk, "market", "s0_init", false))
      if (auto x = rd.number(*v, "market.s0_init")) p.s0_init = *x;
    if (const Json* v = rd.child(*mk, "market", "s_init", true))
      if (auto x = rd.vector(*v, "market.s_init", m)) p.s_init = *x;
    if (const Json* v = rd.child(*mk, "market", "eps", false))
      if (auto x = rd.number(*v, "market.eps")) cfg.eps = *x;
    if (const Json* v = rd.child(*mk, "market", "cap", false))
      if (auto x = rd.number(*v, "market.cap")) cfg.cap = *x;
  }

  // intensity
  if (const Json* in = rd.child(doc, "config", "intensity", true)) {
    if (const Json* v = rd.child(*in, "intensity", "lambda", true))
      if (auto c = rd.scalar_curve(*v, "intensity.lambda")) cfg.intensity.lambda = std::move(*c);
    if (const Json* v = rd.child(*in, "intensity", "bound", false)) {
      if (auto x = rd.number(*v, "intensity.bound")) cfg.intensity.bound = *x;
    } else {
      cfg.intensity.bound = std::max(1.0, cfg.intensity.lambda.sup(cfg.market.horizon, [](double x) { return x; }));
    }
  }

  if (const Json* ms = rd.child(doc, "config", "measure", false))
    if (const Json* v = rd.child(*ms, "measure", "psi", true))
      if (auto x = rd.number(*v, "measure.psi")) cfg.measure.psi = *x;

  // claim: {"V": {"call": K} | {"put": K} | {"digital": K} | {"constant": c}, "C": schedule}
  if (const Json* cl = rd.child(doc, "config", "claim", true)) {
    if (const Json* v = rd.child(*cl, "claim", "V", true)) {
      if (!v->is_object() || v->size() != 1) {
        rd.fail("claim.V", "expected one of {\"constant\": c}, {\"call\": K}, {\"put\": K}, {\"digital\": K}");
      } else {
        const auto& [kind, level] = *v->items().begin();
        static const std::map<std::string, PayoffKind> kinds{{"constant", PayoffKind::Constant},
                                                             {"call", PayoffKind::Call},
                                                             {"put", PayoffKind::Put},
                                                             {"digital", PayoffKind::Digital}};
        auto it = kinds.find(kind);
        if (it == kinds.end()) rd.fail("claim.V", "unknown payoff kind '" + kind + "'");
        else cfg.claim.kind = it->second;
        if (auto x = rd.number(level, "claim.V." + kind)) cfg.claim.level = *x;
      }
    }
    if (const Json* v = rd.child(*cl, "claim", "C", false))
      if (auto c = rd.scalar_curve(*v, "claim.C")) cfg.claim.compensation = std::move(*c);
    if (const Json* v = rd.child(*cl, "claim", "asset", false))
      if (auto x = rd.integer<std::size_t>(*v, "claim.asset")) cfg.claim.asset = *x;
  }

  // grid: {"N": steps} or {"nodes": [...]}
  if (const Json* gr = rd.child(doc, "config", "grid", true)) {
    const Json* n = rd.child(*gr, "grid", "N", false);
    const Json* nodes = rd.child(*gr, "grid", "nodes", false);
    if ((n == nullptr) == (nodes == nullptr)) {
      rd.fail("grid", "give exactly one of N or nodes");
    } else if (n) {
      if (auto steps = rd.integer<std::size_t>(*n, "grid.N")) {
        if (*steps == 0 || !(cfg.market.horizon > 0.0)) {
          rd.fail("grid", "TimeGrid invariant violated: need N >= 1 and T > 0");
        } else {
          const TimeGrid g = TimeGrid::uniform(cfg.market.horizon, *steps);
          cfg.nodes.assign(g.nodes().begin(), g.nodes().end());
        }
      }
    } else if (!nodes->is_array()) {
      rd.fail("grid.nodes", "expected an array of times");
    } else {
      for (std::size_t k = 0; k < nodes->size(); ++k)
        if (auto t = rd.number((*nodes)[k], "grid.nodes[" + std::to_string(k) + "]")) cfg.nodes.push_back(*t);
    }
  }

  if (const Json* v = rd.child(doc, "config", "paths", true))
    if (auto x = rd.integer<std::size_t>(*v, "paths")) cfg.paths = *x;
  if (const Json* v = rd.child(doc, "config", "seed", true))
    if (auto x = rd.integer<std::uint64_t>(*v, "seed")) cfg.seed = *x;

  if (const Json* sv = rd.child(doc, "config", "solver", false)) {
    auto& s = cfg.solver;
    if (const Json* v = rd.child(*sv, "solver", "degree", false))
      if (auto x = rd.integer<std::size_t>(*v, "solver.degree")) s.degree = *x;
    if (const Json* v = rd.child(*sv, "solver", "cells", false))
      if (auto x = rd.integer<std::size_t>(*v, "solver.cells")) s.cells = *x;
    if (const Json* v = rd.child(*sv, "solver", "ridge", false))
      if (auto x = rd.number(*v, "solver.ridge")) s.ridge = *x;
    if (const Json* v = rd.child(*sv, "solver", "inner_passes", false))
      if (auto x = rd.integer<std::size_t>(*v, "solver.inner_passes")) s.inner_passes = *x;
    if (const Json* pc = rd.child(*sv, "solver", "picard", false)) {
      if (const Json* v = rd.child(*pc, "solver.picard", "max_iters", false))
        if (auto x = rd.integer<std::size_t>(*v, "solver.picard.max_iters")) s.picard.max_iters = *x;
      if (const Json* v = rd.child(*pc, "solver.picard", "tolerance", false))
        if (auto x = rd.number(*v, "solver.picard.tolerance")) s.picard.tolerance = *x;
      if (const Json* v = rd.child(*pc, "solver.picard", "gamma", false); v && !v->is_null())
        if (auto x = rd.number(*v, "solver.picard.gamma")) s.picard.gamma = *x;
    }
  }

  if (const Json* ck = rd.child(doc, "config", "checks", false)) {
    auto flag = [&](const char* key, bool& target) {
      if (const Json* v = rd.child(*ck, "checks", key, false)) {
        if (v->is_boolean()) target = v->get<bool>();
        else rd.fail(std::string("checks.") + key, "expected true or false");
      }
    };
    flag("picard", cfg.run_picard);
    flag("replication", cfg.run_replication);
    flag("apriori", cfg.run_apriori);
    if (const Json* v = rd.child(*ck, "checks", "apriori_gamma_offset", false))
      if (auto x = rd.number(*v, "checks.apriori_gamma_offset")) cfg.apriori_gamma_offset = *x;
  }

  if (const Json* oc = rd.child(doc, "config", "oracle", false)) {
    if (const Json* v = rd.child(*oc, "oracle", "abs_tol", false))
      if (auto x = rd.number(*v, "oracle.abs_tol")) cfg.oracle.abs = *x;
    if (const Json* v = rd.child(*oc, "oracle", "rel_tol", false))
      if (auto x = rd.number(*v, "oracle.rel_tol")) cfg.oracle.rel = *x;
  }

  if (const Json* oc = rd.child(doc, "config", "outputs", false)) {
    if (const Json* v = rd.child(*oc, "outputs", "dir", false)) {
      if (v->is_string()) cfg.output_dir = v->get<std::string>();
      else rd.fail("outputs.dir", "expected a string");
    }
    if (const Json* v = rd.child(*oc, "outputs", "formats", false)) {
      cfg.write_json = cfg.write_csv = false;
      if (!v->is_array()) rd.fail("outputs.formats", "expected an array drawn from [\"json\", \"csv\"]");
      else
        for (const auto& f : *v) {
          if (f == "json") cfg.write_json = true;
          else if (f == "csv") cfg.write_csv = true;
          else rd.fail("outputs.formats", "unknown format " + f.dump());
        }
    }
    if (const Json* v = rd.child(*oc, "outputs", "csv_paths", false))
      if (auto x = rd.integer<std::size_t>(*v, "outputs.csv_paths")) cfg.csv_paths = *x;
  }

  if (rd.problems.empty()) rd.problems = config_violations(cfg);
  if (!rd.problems.empty()) throw ConfigError(std::move(rd.problems));
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"config: cannot read " + path.string()});
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError({"config: malformed JSON in " + path.string() + ": " + e.what()});
  }
  return parse_config(doc);
}

/// Closed-form case when the configuration admits one.
inline std::optional<LyonCase> oracle_case(const ExperimentConfig& cfg) {
  LyonCase c{cfg.market, cfg.intensity, cfg.measure, cfg.claim};
  if (!c.supported()) return std::nullopt;
  return c;
}

namespace experiment_detail {

inline Json stats_json(const ErrorStats& s) {
  return Json{{"count", s.count}, {"mean", s.mean}, {"rms", s.rms}, {"rms_se", s.rms_se}, {"max_abs", s.max_abs}};
}

inline Json component_json(const ComponentDiscrepancy& d) {
  return Json{{"sup_abs", d.sup_abs}, {"rms_abs", d.rms_abs}, {"sup_rel", d.sup_rel}, {"rms_rel", d.rms_rel}};
}

inline std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace experiment_detail

/// Everything a run produces, before anything touches the disk.
struct RunArtifacts {
  Json summary;
  std::string csv;  // empty unless requested
};

struct OracleComparison {
  double y0 = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool match = false;
};

inline OracleComparison compare_with_oracle(const ExperimentConfig& cfg, double y0, double oracle_y0) {
  OracleComparison o;
  o.y0 = oracle_y0;
  o.abs_error = std::abs(y0 - oracle_y0);
  o.rel_error = oracle_y0 != 0.0 ? o.abs_error / std::abs(oracle_y0) : o.abs_error;
  o.match = o.abs_error <= cfg.oracle.abs || o.rel_error <= cfg.oracle.rel;
  return o;
}

/// Solves, cross-checks and hedges one configuration. Pure function of `cfg`.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg) {
  using experiment_detail::component_json;
  using experiment_detail::stats_json;
  const TimeGrid grid = cfg.grid();
  const ScenarioSet sc = build_scenarios(cfg.market, cfg.intensity, grid, cfg.paths, cfg.seed);
  const BsdeProblem problem{cfg.claim, defaultable_driver(cfg.market, cfg.intensity, cfg.measure), grid};
  const BsdeSolution sol = solve_backward(problem, sc, cfg.solver);

  Json s;
  s["schema_version"] = kSchemaVersion;
  s["name"] = cfg.name;
  s["paths"] = cfg.paths;
  s["seed"] = cfg.seed;
  s["grid"] = Json{{"steps", grid.steps()}, {"horizon", grid.horizon()}};
  s["driver"] = Json{{"K1", problem.driver.k1()}, {"K2", problem.driver.k2}, {"K", problem.driver.k()}};
  s["y0"] = Json{{"value", sol.y0}, {"se", sol.y0_se}};

  std::size_t defaults = 0;
  for (std::size_t p = 0; p < sc.n_paths(); ++p) defaults += sc.defaults_before_horizon(p) ? 1 : 0;
  const double freq = static_cast<double>(defaults) / static_cast<double>(sc.n_paths());
  s["default_frequency"] = Json{{"value", freq},
                                {"se", std::sqrt(freq * (1.0 - freq) / static_cast<double>(sc.n_paths()))},
                                {"model", default_probability(cfg.intensity, grid.horizon())}};

  if (cfg.run_picard) {
    const PicardResult pic = picard_solve(problem, sc, cfg.solver);
    s["picard"] = Json{{"gamma", pic.gamma},
                       {"iterations", pic.iterations},
                       {"converged", pic.converged},
                       {"y0", Json{{"value", pic.solution.y0}, {"se", pic.solution.y0_se}}},
                       {"distances", pic.distances},
                       {"norms", pic.norms},
                       {"ratios", pic.ratios}};
  } else {
    s["picard"] = nullptr;
  }

  if (auto lc = oracle_case(cfg)) {
    const DiscrepancyReport rep = lyon_vs_solver(*lc, sol, sc);
    const OracleComparison cmp = compare_with_oracle(cfg, sol.y0, rep.y0_oracle);
    s["oracle"] = Json{{"available", true},
                       {"y0", cmp.y0},
                       {"abs_error", cmp.abs_error},
                       {"rel_error", cmp.rel_error},
                       {"abs_tol", cfg.oracle.abs},
                       {"rel_tol", cfg.oracle.rel},
                       {"match", cmp.match},
                       {"nodes", rep.nodes},
                       {"Y", component_json(rep.y)},
                       {"Z", component_json(rep.z)},
                       {"U", component_json(rep.u)}};
  } else {
    s["oracle"] = Json{{"available", false}};
  }

  if (cfg.run_replication) {
    const ZeroCouponModel zc = zc_price_and_loadings(cfg.market, cfg.intensity, cfg.measure, grid);
    const Strategy st = extract_strategy(sol, sc, zc, cfg.market);
    const ReplicationReport rep = replicate_forward(st, sc, zc, cfg.market, cfg.claim);
    s["replication"] = Json{{"all", stats_json(rep.all)},
                            {"survival", stats_json(rep.survival)},
                            {"defaulted", stats_json(rep.defaulted)},
                            {"mean_se", rep.mean_se},
                            {"rms_over_y0", sol.y0 != 0.0 ? rep.all.rms / std::abs(sol.y0) : 0.0}};
  } else {
    s["replication"] = nullptr;
  }

  if (cfg.run_apriori) {
    const double k = problem.driver.k();
    const double gamma = 1.0 + 3.0 * k + k * k + cfg.apriori_gamma_offset;
    const AprioriCheck ap = apriori_bound_check(problem, sol, sc, gamma);
    s["apriori"] = Json{{"gamma", gamma}, {"lhs", ap.lhs}, {"lhs_se", ap.lhs_se}, {"rhs", ap.rhs},
                        {"satisfied", ap.satisfied}};
  } else {
    s["apriori"] = nullptr;
  }

  RunArtifacts out{std::move(s), {}};
  if (cfg.write_csv) {
    using experiment_detail::fmt;
    std::string csv = "path,node,t,Y";
    for (std::size_t i = 0; i < sc.dim(); ++i) csv += ",Z" + std::to_string(i);
    csv += ",U,H\n";
    const std::size_t rows = std::min(cfg.csv_paths, sc.n_paths());
    for (std::size_t p = 0; p < rows; ++p) {
      for (std::size_t k = 0; k <= sc.steps(); ++k) {
        csv += std::to_string(p) + "," + std::to_string(k) + "," + fmt(grid[k]) + "," + fmt(sol.y(p, k));
        for (std::size_t i = 0; i < sc.dim(); ++i) csv += "," + fmt(sol.z(p, k, i));
        csv += "," + fmt(sol.u(p, k)) + "," + std::to_string(sc.defaults.h(p, k)) + "\n";
      }
    }
    out.csv = std::move(csv);
  }
  return out;
}

/// Output directory: explicit override, then the config, then $DBSDE_OUTPUT_DIR,
/// then ./results.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg, const std::string& override_dir = {}) {
  if (!override_dir.empty()) return override_dir;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return "results";
}

inline std::string summary_text(const Json& summary) { return summary.dump(2) + "\n"; }

/// Writes the requested artifacts; returns the files written.
inline std::vector<std::filesystem::path> write_artifacts(const ExperimentConfig& cfg, const RunArtifacts& art,
                                                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  auto put = [&](const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw PreconditionError("cannot write " + file.string());
    out << text;
    written.push_back(file);
  };
  if (cfg.write_json) put(dir / (cfg.name + ".summary.json"), summary_text(art.summary));
  if (cfg.write_csv) put(dir / (cfg.name + ".nodes.csv"), art.csv);
  return written;
}

struct ScheduleEntry {
  std::size_t steps = 0;
  std::size_t paths = 0;
};

/// Schedule document: [{"N": 10, "paths": 100000}, ...] or {"schedule": [...]}.
/// `paths` defaults to the base config's.
inline std::vector<ScheduleEntry> parse_schedule(const Json& doc, std::size_t default_paths) {
  const Json& rows = doc.is_object() && doc.contains("schedule") ? doc["schedule"] : doc;
  std::vector<std::string> problems;
  std::vector<ScheduleEntry> out;
  if (!rows.is_array() || rows.empty()) throw ConfigError({"schedule: expected a non-empty array of {N, paths}"});
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const std::string at = "schedule[" + std::to_string(j) + "]";
    const Json& r = rows[j];
    ScheduleEntry e{0, default_paths};
    if (!r.is_object() || !r.contains("N") || !r["N"].is_number_unsigned() || r["N"].get<std::size_t>() == 0) {
      problems.push_back(at + ".N: expected a positive integer");
      continue;
    }
    e.steps = r["N"].get<std::size_t>();
    if (r.contains("paths")) {
      if (!r["paths"].is_number_unsigned() || r["paths"].get<std::size_t>() == 0) {
        problems.push_back(at + ".paths: expected a positive integer");
        continue;
      }
      e.paths = r["paths"].get<std::size_t>();
    }
    out.push_back(e);
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

inline std::vector<ScheduleEntry> load_schedule(const std::filesystem::path& path, std::size_t default_paths) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"schedule: cannot read " + path.string()});
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError({"schedule: malformed JSON in " + path.string() + ": " + e.what()});
  }
  return parse_schedule(doc, default_paths);
}

struct ConvergenceRow {
  std::size_t steps = 0;
  std::size_t paths = 0;
  double y0 = 0.0;
  double y0_se = 0.0;
  double abs_error = 0.0;
  double replication_rms = 0.0;
  double replication_rms_se = 0.0;
  double wall_seconds = 0.0;
};

struct ConvergenceTable {
  double oracle_y0 = 0.0;
  std::vector<ConvergenceRow> rows;
  bool monotone = true;  // error non-increasing between consecutive rows, within 2 combined s.e.
};

/// Re-solves the base configuration on every (N, paths) of the schedule. Rows
/// sharing a path count reuse one simulation on the finest common grid, so the
/// errors differ by discretization rather than by sampling noise.
inline ConvergenceTable convergence_study(const ExperimentConfig& base, const std::vector<ScheduleEntry>& schedule) {
  const auto lc = oracle_case(base);
  if (!lc) throw PreconditionError("convergence study needs a configuration with a closed-form oracle");
  if (schedule.empty()) throw PreconditionError("convergence schedule is empty");
  ConvergenceTable table;
  table.oracle_y0 = lyon_value(*lc, 0.0, base.market.s_init[0]).y_pre;

  std::map<std::size_t, std::size_t> finest;  // paths -> lcm of N
  for (const auto& e : schedule) {
    auto& l = finest[e.paths];
    l = l == 0 ? e.steps : std::lcm(l, e.steps);
  }
  std::map<std::size_t, ScenarioSet> fine;
  for (const auto& e : schedule) {
    const auto t0 = std::chrono::steady_clock::now();
    auto it = fine.find(e.paths);
    if (it == fine.end()) {
      const TimeGrid g = TimeGrid::uniform(base.market.horizon, finest[e.paths]);
      it = fine.emplace(e.paths, build_scenarios(base.market, base.intensity, g, e.paths, base.seed)).first;
    }
    const std::size_t factor = it->second.steps() / e.steps;
    const ScenarioSet sc = coarsen(it->second, base.intensity, factor);
    require_breakpoints_on_grid(base.market.breakpoints(), sc.grid, "market");
    const BsdeProblem problem{base.claim, defaultable_driver(base.market, base.intensity, base.measure), sc.grid};
    const BsdeSolution sol = solve_backward(problem, sc, base.solver);
    ConvergenceRow row;
    row.steps = e.steps;
    row.paths = e.paths;
    row.y0 = sol.y0;
    row.y0_se = sol.y0_se;
    row.abs_error = std::abs(sol.y0 - table.oracle_y0);
    const ZeroCouponModel zc = zc_price_and_loadings(base.market, base.intensity, base.measure, sc.grid);
    const ReplicationReport rep =
        replicate_forward(extract_strategy(sol, sc, zc, base.market), sc, zc, base.market, base.claim);
    row.replication_rms = rep.all.rms;
    row.replication_rms_se = rep.all.rms_se;
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    table.rows.push_back(row);
  }
  for (std::size_t j = 1; j < table.rows.size(); ++j) {
    const auto& a = table.rows[j - 1];
    const auto& b = table.rows[j];
    const double noise = 2.0 * std::hypot(a.y0_se, b.y0_se);
    if (b.abs_error > a.abs_error + noise) table.monotone = false;
  }
  return table;
}

inline std::string convergence_csv(const ConvergenceTable& t) {
  using experiment_detail::fmt;
  std::string out = "N,paths,y0,y0_se,abs_error,replication_rms,replication_rms_se,wall_seconds\n";
  for (const auto& r : t.rows)
    out += std::to_string(r.steps) + "," + std::to_string(r.paths) + "," + fmt(r.y0) + "," + fmt(r.y0_se) + "," +
           fmt(r.abs_error) + "," + fmt(r.replication_rms) + "," + fmt(r.replication_rms_se) + "," +
           fmt(r.wall_seconds) + "\n";
  return out;
}

/// Machine-readable failure record.
inline Json error_record(const std::exception& e) {
  Json err;
  if (const auto* de = dynamic_cast<const Error*>(&e)) {
    err["kind"] = de->kind() == ErrorKind::Validation ? "validation" : "numerical";
    err["code"] = de->code();
  } else {
    err["kind"] = "internal";
    err["code"] = "internal";
  }
  err["message"] = e.what();
  if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) err["violations"] = ce->violations();
  return Json{{"error", err}};
}

}  // namespace dbsde
