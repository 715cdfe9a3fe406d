// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dbsde/experiment.hpp"

using namespace dbsde;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(DBSDE_SOURCE_DIR) / "configs";

int failures = 0;

void report(bool ok, const std::string& id, const std::string& what, const std::string& detail) {
  std::printf("[%s] %s %s | %s\n", ok ? "PASS" : "FAIL", id.c_str(), what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string num(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

double get(const Json& j, const char* a, const char* b) { return j.at(a).at(b).get<double>(); }

struct Mean {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;
  void add(double x) {
    sum += x;
    sum_sq += x * x;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double se() const {
    const double m = mean();
    const double var = (sum_sq / static_cast<double>(n) - m * m) * static_cast<double>(n) / (n - 1.0);
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

std::vector<fs::path> shipped_configs() {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(kConfigs)) {
    const auto name = e.path().filename().string();
    if (e.path().extension() == ".json" && name.rfind("schedule", 0) != 0) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

int main() try {
  std::map<std::string, ExperimentConfig> configs;
  std::map<std::string, Json> summaries;
  std::map<std::string, std::string> texts;
  double zc_seconds = 0.0;
  for (const auto& path : shipped_configs()) {
    const auto cfg = load_config(path);
    const auto start = std::chrono::steady_clock::now();
    const auto art = run_experiment(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (cfg.name == "zero_coupon") zc_seconds = secs;
    configs.emplace(cfg.name, cfg);
    summaries.emplace(cfg.name, art.summary);
    texts.emplace(cfg.name, summary_text(art.summary));
    std::printf("ran %s in %.1f s\n", cfg.name.c_str(), secs);
  }

  // C1 survival claim
  {
    const auto& s = summaries.at("zero_coupon");
    const auto& c = configs.at("zero_coupon");
    const double y0 = get(s, "y0", "value");
    const double err = std::abs(y0 - std::exp(-0.1));
    const bool shape = c.paths == 100000 && c.grid().steps() == 50 && c.grid().horizon() == 1.0;
    report(shape && err <= 5e-3 && zc_seconds <= 60.0, "C1", "zero-coupon Y0 within 5e-3 of exp(-0.1), runtime <= 60 s",
           "y0=" + num(y0) + " se=" + num(get(s, "y0", "se")) + " abs_err=" + num(err) + " runtime_s=" + num(zc_seconds));
  }

  // C2 with interest
  {
    const auto& s = summaries.at("zero_coupon_rate");
    const double y0 = get(s, "y0", "value");
    const double err = std::abs(y0 - std::exp(-0.12));
    report(err <= 5e-3, "C2", "zero-coupon with r=0.02 within 5e-3 of exp(-0.12)",
           "y0=" + num(y0) + " abs_err=" + num(err));
  }

  // C3, C4 against the closed form computed independently here
  {
    const double bs = bs::call(100.0, 100.0, 0.0, 0.2, 1.0).value;
    const double y3 = get(summaries.at("bs_call"), "y0", "value");
    const double rel3 = std::abs(y3 / bs - 1.0);
    report(rel3 <= 0.01, "C3", "Black-Scholes limit within 1% relative",
           "y0=" + num(y3) + " bs=" + num(bs) + " rel_err=" + num(rel3));
    const double target = std::exp(-0.1) * bs;
    const double y4 = get(summaries.at("defaultable_call"), "y0", "value");
    const double rel4 = std::abs(y4 / target - 1.0);
    report(rel4 <= 0.01, "C4", "survival-discounted call within 1% relative",
           "y0=" + num(y4) + " oracle=" + num(target) + " rel_err=" + num(rel4));
  }

  // C5 contraction on the criterion-1 configuration
  {
    const auto& c = configs.at("zero_coupon");
    const auto& pic = summaries.at("zero_coupon").at("picard");
    const double k = summaries.at("zero_coupon").at("driver").at("K").get<double>();
    const double gamma = pic.at("gamma").get<double>();
    double worst = 0.0;
    for (const auto& r : pic.at("ratios")) worst = std::max(worst, r.get<double>());
    const auto iters = pic.at("iterations").get<std::size_t>();
    const bool ok = pic.at("converged").get<bool>() && iters <= 6 && worst <= 0.6 &&
                    c.solver.picard.tolerance == 1e-4 && gamma == 4.0 * k * k + 2.0 * k + 1.0;
    report(ok, "C5", "Picard ratios <= 0.6 and convergence within 6 iterations at tol 1e-4",
           "gamma=" + num(gamma) + " iterations=" + std::to_string(iters) + " max_ratio=" + num(worst));
  }

  // C6 backward induction vs Picard
  {
    bool ok = true;
    std::string detail;
    for (const char* name : {"zero_coupon", "zero_coupon_rate", "bs_call", "defaultable_call"}) {
      const auto& s = summaries.at(name);
      const double diff = std::abs(get(s, "y0", "value") - s.at("picard").at("y0").at("value").get<double>());
      const double se = std::hypot(get(s, "y0", "se"), s.at("picard").at("y0").at("se").get<double>());
      ok = ok && diff <= 2.0 * se;
      detail += std::string(name) + ":" + num(diff) + "/" + num(se) + " ";
    }
    report(ok, "C6", "solve_backward and picard_solve agree within 2 combined standard errors",
           detail + "(diff/combined_se)");
  }

  // C7 replication
  {
    const auto& rep = summaries.at("zero_coupon").at("replication").at("all");
    const double max_abs = rep.at("max_abs").get<double>();
    report(max_abs <= 1e-10, "C7a", "static bond hedge replicates the zero-coupon exactly",
           "max_abs_error=" + num(max_abs));

    const auto& base = configs.at("defaultable_call");
    const auto schedule = load_schedule(kConfigs / "schedule_hedge.json", base.paths);
    const auto table = convergence_study(base, schedule);
    const auto& first = table.rows.front();
    const auto& last = table.rows.back();
    std::string detail;
    for (const auto& r : table.rows)
      detail += "N=" + std::to_string(r.steps) + ":rms=" + num(r.replication_rms) + "(" +
                num(100.0 * r.replication_rms / r.y0) + "%) ";
    const bool at_100 = last.steps == 100 && first.steps == 25;
    const double pct = last.replication_rms / last.y0;
    report(at_100 && pct <= 0.02, "C7b", "defaultable call RMS terminal error <= 2% of Y0 at N=100",
           detail + "rms/y0=" + num(pct));
    // halving from N=25 to N=100: ratio of 0.5 within two standard errors
    const double ratio = last.replication_rms / first.replication_rms;
    const double ratio_se = ratio * std::hypot(last.replication_rms_se / last.replication_rms,
                                               first.replication_rms_se / first.replication_rms);
    bool decreasing = true;
    for (std::size_t j = 1; j < table.rows.size(); ++j)
      decreasing = decreasing && table.rows[j].replication_rms < table.rows[j - 1].replication_rms;
    report(at_100 && decreasing && ratio <= 0.5 + 2.0 * ratio_se, "C7c",
           "RMS error halves from N=25 to N=100 under common random numbers",
           "rms100/rms25=" + num(ratio) + " se=" + num(ratio_se));
  }

  // C8 compensated default martingale
  {
    const auto& c = configs.at("zero_coupon");
    const auto grid = c.grid();
    const auto paths = sample_default(c.intensity, grid, c.paths, c.seed);
    std::vector<Mean> step(grid.steps());
    Mean total, survive;
    for (std::size_t p = 0; p < paths.n_paths; ++p) {
      double sum = 0.0;
      for (std::size_t k = 0; k < grid.steps(); ++k) {
        step[k].add(paths.dm(p, k));
        sum += paths.dm(p, k);
      }
      total.add(sum);
      survive.add(paths.alive(p, grid.steps()) ? 1.0 : 0.0);
    }
    double worst = 0.0;
    for (const auto& m : step) worst = std::max(worst, std::abs(m.mean()) / m.se());
    const double z_total = std::abs(total.mean()) / total.se();
    const double target = std::exp(-cumulative_hazard(c.intensity, grid.horizon()));
    const double z_surv = std::abs(survive.mean() - target) / survive.se();
    report(worst <= 4.0 && z_total <= 4.0 && z_surv <= 3.0, "C8",
           "dM means within 4 se of 0, survival frequency within 3 se of exp(-Lambda_T)",
           "max_node_z=" + num(worst) + " sum_z=" + num(z_total) + " survival=" + num(survive.mean()) +
               " target=" + num(target) + " z=" + num(z_surv));
  }

  // C9 a-priori bound on every shipped configuration
  {
    bool ok = true;
    std::string detail;
    for (const auto& [name, s] : summaries) {
      const auto& ap = s.at("apriori");
      const double k = s.at("driver").at("K").get<double>();
      const bool sat = ap.at("satisfied").get<bool>() &&
                       std::abs(ap.at("gamma").get<double>() - (1.0 + 3.0 * k + k * k + 0.1)) < 1e-12;
      ok = ok && sat;
      detail += name + ":" + num(ap.at("lhs").get<double>()) + "<=" + num(ap.at("rhs").get<double>()) + " ";
    }
    report(ok, "C9", "a-priori bound satisfied on every shipped config with gamma = 1+3K+K^2+0.1", detail);
  }

  // C10 exactness
  {
    const auto& c = configs.at("recovery_call");
    const auto grid = c.grid();
    const auto sc = build_scenarios(c.market, c.intensity, grid, c.paths, c.seed);
    const auto driver = defaultable_driver(c.market, c.intensity, c.measure);

    const auto zero = solve_backward(BsdeProblem{PayoffSpec::constant(0.0), driver, grid}, sc, c.solver);
    const bool zero_ok = std::all_of(zero.Y.begin(), zero.Y.end(), [](double v) { return v == 0.0; }) &&
                         std::all_of(zero.Z.begin(), zero.Z.end(), [](double v) { return v == 0.0; }) &&
                         std::all_of(zero.U.begin(), zero.U.end(), [](double v) { return v == 0.0; });

    const auto sol = solve_backward(BsdeProblem{c.claim, driver, grid}, sc, c.solver);
    std::size_t stopped_nodes = 0, stopped_bad = 0;
    for (std::size_t p = 0; p < sc.n_paths(); ++p) {
      const double xi = terminal_payoff(c.claim, sc, p);
      for (std::size_t k = 0; k <= grid.steps(); ++k) {
        if (sc.alive(p, k) && k < grid.steps()) continue;
        ++stopped_nodes;
        bool ok = sol.y(p, k) == xi && sol.u(p, k) == 0.0;
        for (std::size_t i = 0; i < sol.dim; ++i) ok = ok && sol.z(p, k, i) == 0.0;
        if (!ok) ++stopped_bad;
      }
    }

    const auto zc = zc_price_and_loadings(c.market, c.intensity, c.measure, grid);
    const auto st = extract_strategy(sol, sc, zc, c.market);
    double worst_decomp = 0.0;
    for (std::size_t p = 0; p < sc.n_paths(); ++p)
      for (std::size_t k = 0; k < grid.steps() && sc.alive(p, k); ++k) {
        double w = st.b(p, k) * zc.rho_pre[k] + st.d(p, k) * riskless_value(c.market, grid[k]);
        for (std::size_t i = 0; i < sc.dim(); ++i) w += st.a(p, k, i) * sc.assets.s(p, k, i);
        worst_decomp = std::max(worst_decomp, std::abs(w - sol.y(p, k)));
      }

    bool drift_exact = true;
    for (std::size_t k = 0; k <= grid.steps(); ++k) {
      const double carry = zc.r[k] + zc.theta[k].dot(zc.c[k]);
      drift_exact = drift_exact && zc.a_pre[k] == carry + c.measure.psi * zc.lambda[k] && zc.a_post[k] == carry;
    }
    report(zero_ok && stopped_bad == 0 && stopped_nodes > 0 && worst_decomp <= 1e-10 && drift_exact, "C10",
           "zero claim, stopped convention, wealth decomposition and bond drift identity are exact",
           std::string("zero_triple=") + (zero_ok ? "exact" : "nonzero") + " stopped_nodes=" +
               std::to_string(stopped_nodes) + " violations=" + std::to_string(stopped_bad) +
               " max_decomposition_error=" + num(worst_decomp) + " drift_identity=" + (drift_exact ? "exact" : "off"));
  }

  // C11 determinism
  {
    bool ok = true;
    std::string detail;
    for (const auto& [name, cfg] : configs) {
      const bool same = summary_text(run_experiment(cfg).summary) == texts.at(name);
      ok = ok && same;
      detail += name + (same ? ":identical " : ":differs ");
    }
    report(ok, "C11", "repeated runs give byte-identical summaries", detail);
  }

  std::printf("%d criterion check(s) failed\n", failures);
  return failures == 0 ? 0 : 1;
} catch (const std::exception& e) {
  std::printf("[FAIL] acceptance aborted: %s\n", e.what());
  return 1;
}
