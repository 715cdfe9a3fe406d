#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/market_model.hpp"
#include "dbsde/piecewise.hpp"
#include "dbsde/scenario.hpp"

namespace dbsde {

enum class PayoffKind { Constant, Call, Put, Digital };

/// xi = V(S_T) 1{tau > T} + C(tau) 1{tau <= T}, with V applied to one asset
/// and C a deterministic compensation schedule.
struct PayoffSpec {
  PayoffKind kind = PayoffKind::Constant;
  double level = 0.0;  // constant value or strike
  ScalarCurve compensation{0.0};
  std::size_t asset = 0;

  static PayoffSpec constant(double value, ScalarCurve c = ScalarCurve(0.0)) {
    return {PayoffKind::Constant, value, std::move(c), 0};
  }
  static PayoffSpec call(double strike, ScalarCurve c = ScalarCurve(0.0)) {
    return {PayoffKind::Call, strike, std::move(c), 0};
  }
  static PayoffSpec put(double strike, ScalarCurve c = ScalarCurve(0.0)) {
    return {PayoffKind::Put, strike, std::move(c), 0};
  }
  static PayoffSpec digital(double strike, ScalarCurve c = ScalarCurve(0.0)) {
    return {PayoffKind::Digital, strike, std::move(c), 0};
  }

  /// Survival payoff V as a function of the terminal asset value.
  double survival_value(double spot) const {
    switch (kind) {
      case PayoffKind::Constant: return level;
      case PayoffKind::Call: return std::max(spot - level, 0.0);
      case PayoffKind::Put: return std::max(level - spot, 0.0);
      case PayoffKind::Digital: return spot > level ? 1.0 : 0.0;
    }
    return 0.0;
  }

  double compensation_at(double t) const { return compensation(t); }

  std::vector<std::string> violations(std::size_t dim) const {
    std::vector<std::string> out;
    if (kind != PayoffKind::Constant && !(level > 0.0)) out.push_back("strike must be positive");
    if (asset >= dim) out.push_back("payoff asset index out of range");
    for (const auto& [t, c] : compensation.pieces())
      if (!std::isfinite(c) || c < 0.0) out.push_back("compensation schedule must be non-negative");
    return out;
  }
};

/// The one-scenario view a payoff needs.
struct PathOutcome {
  double s_terminal = 0.0;
  double tau = kNoDefault;
};

inline PathOutcome outcome(const ScenarioSet& sc, std::size_t path, std::size_t asset = 0) {
  return {sc.assets.s(path, sc.steps(), asset), sc.tau(path)};
}

inline double terminal_payoff(const PayoffSpec& spec, const PathOutcome& o, double horizon) {
  if (o.tau > horizon) return spec.survival_value(o.s_terminal);
  return spec.compensation_at(o.tau);
}

inline double terminal_payoff(const PayoffSpec& spec, const ScenarioSet& sc, std::size_t path) {
  return terminal_payoff(spec, outcome(sc, path, spec.asset), sc.grid.horizon());
}

/// R_{T∧tau} xi, discounting to the exact default time.
inline double discounted_payoff(const PayoffSpec& spec, const PathOutcome& o, const MarketParams& p) {
  const double stop = std::min(o.tau, p.horizon);
  return discount_factor(p, stop) * terminal_payoff(spec, o, p.horizon);
}

inline double discounted_payoff(const PayoffSpec& spec, const ScenarioSet& sc, std::size_t path,
                                const MarketParams& p) {
  return discounted_payoff(spec, outcome(sc, path, spec.asset), p);
}

/// xi for every path.
inline std::vector<double> terminal_payoffs(const PayoffSpec& spec, const ScenarioSet& sc) {
  std::vector<double> xi(sc.n_paths());
  for (std::size_t p = 0; p < xi.size(); ++p) xi[p] = terminal_payoff(spec, sc, p);
  return xi;
}

}  // namespace dbsde
