#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dbsde/bsde_solver.hpp"
#include "dbsde/claims.hpp"
#include "dbsde/default_model.hpp"
#include "dbsde/error.hpp"
#include "dbsde/hedging.hpp"
#include "dbsde/market_model.hpp"

namespace dbsde {

// Black-Scholes helpers. Oracle-side only: the solver never calls these.
namespace bs {

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

struct Quote {
  double value = 0.0;
  double delta = 0.0;
};

/// European call under constant rate and volatility, time to expiry `tte`.
inline Quote call(double spot, double strike, double rate, double vol, double tte) {
  if (tte <= 0.0) return {std::max(spot - strike, 0.0), spot > strike ? 1.0 : 0.0};
  const double sd = vol * std::sqrt(tte);
  const double df = std::exp(-rate * tte);
  if (sd <= 0.0) {
    const double fwd_intrinsic = spot - strike * df;
    return {std::max(fwd_intrinsic, 0.0), fwd_intrinsic > 0.0 ? 1.0 : 0.0};
  }
  const double d1 = (std::log(spot / strike) + (rate + 0.5 * vol * vol) * tte) / sd;
  const double d2 = d1 - sd;
  return {spot * norm_cdf(d1) - strike * df * norm_cdf(d2), norm_cdf(d1)};
}

}  // namespace bs

/// Constant-coefficient, one-asset configuration for which the hedge of a
/// defaultable claim is available in closed form.
struct LyonCase {
  MarketParams params;
  IntensityModel model;
  MeasureChange mc;
  DefaultableClaim claim;

  /// Throws UnsupportedCase when the configuration is outside the closed form.
  void validate() const {
    if (params.dim != 1) throw UnsupportedCase("closed form needs a single risky asset");
    if (!params.r.is_constant() || !params.mu.is_constant() || !params.sigma.is_constant())
      throw UnsupportedCase("closed form needs constant market coefficients");
    if (!model.lambda.is_constant()) throw UnsupportedCase("closed form needs a constant intensity");
    if (claim.kind != PayoffKind::Constant && claim.kind != PayoffKind::Call)
      throw UnsupportedCase("closed form supports constant and call survival payoffs only");
    mc.validate();
  }

  bool supported() const {
    try {
      validate();
      return true;
    } catch (const UnsupportedCase&) {
      return false;
    } catch (const InvalidMeasureChange&) {
      return false;
    }
  }

  double rate() const { return params.r(0.0); }
  double vol() const { return params.sigma(0.0)(0, 0); }
  /// Default intensity under P^psi.
  double risk_neutral_intensity() const { return (1.0 + mc.psi) * model.lambda(0.0); }
};

struct LyonTriple {
  double y_pre = 0.0;
  double z = 0.0;
  double u = 0.0;
};

/// Pre-default (Y, Z, U) at (t, spot):
///   Y = R_t^{-1} ∫_t^T R_s C(s) l e^{-l(s-t)} ds + e^{-l(T-t)} BS(t, spot; V)
///   Z = e^{-l(T-t)} dBS/dS sigma spot,   U = C(t) - Y
/// with l = (1+psi) lambda. A deterministic C contributes nothing to Z.
inline LyonTriple lyon_value(const LyonCase& c, double t, double spot) {
  c.validate();
  const double horizon = c.params.horizon;
  if (!(t < horizon) || t < 0.0) throw PreconditionError("closed form evaluated outside [0, T)");
  const double r = c.rate();
  const double l = c.risk_neutral_intensity();
  const double vol = c.vol();

  // Compensation leg over each piece of C intersected with [t, T].
  double comp_leg = 0.0;
  const auto& pieces = c.claim.compensation.pieces();
  const double decay = r + l;
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    const double a = std::max(t, pieces[j].first);
    const double b = j + 1 < pieces.size() ? std::min(horizon, pieces[j + 1].first) : horizon;
    if (!(b > a) || l == 0.0) continue;
    const double ea = (a - t), eb = (b - t);
    const double mass = decay > 0.0 ? (std::exp(-decay * ea) - std::exp(-decay * eb)) / decay : eb - ea;
    comp_leg += pieces[j].second * l * mass;
  }

  const double tte = horizon - t;
  bs::Quote quote;
  if (c.claim.kind == PayoffKind::Constant)
    quote = {c.claim.level * std::exp(-r * tte), 0.0};
  else
    quote = bs::call(spot, c.claim.level, r, vol, tte);
  const double survival = std::exp(-l * tte);

  LyonTriple out;
  out.y_pre = comp_leg + survival * quote.value;
  out.z = survival * quote.delta * vol * spot;
  out.u = c.claim.compensation_at(t) - out.y_pre;
  return out;
}

struct ComponentDiscrepancy {
  double sup_abs = 0.0;
  double rms_abs = 0.0;
  double sup_rel = 0.0;  // sup |diff| / sup |oracle|
  double rms_rel = 0.0;  // rms diff / rms oracle
};

struct DiscrepancyReport {
  double y0_oracle = 0.0;
  double y0_solver = 0.0;
  double y0_abs = 0.0;
  double y0_rel = 0.0;
  std::size_t nodes = 0;  // (path, node) pairs compared
  ComponentDiscrepancy y, z, u;
};

/// Node-by-node comparison of the closed form against a solver output on
/// pre-default nodes t_k < T∧tau.
inline DiscrepancyReport lyon_vs_solver(const LyonCase& c, const BsdeSolution& sol, const ScenarioSet& sc) {
  c.validate();
  if (std::abs(sc.grid.horizon() - c.params.horizon) > 1e-12)
    throw ConfigMismatch("scenario horizon differs from the closed-form case");
  if (sol.n_paths != sc.n_paths() || sol.steps != sc.steps() || sol.dim != 1 || sc.dim() != 1)
    throw ConfigMismatch("solution and scenarios have different shapes");
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();

  struct Acc {
    double sup = 0.0, sq = 0.0, ref_sup = 0.0, ref_sq = 0.0;
    void add(double est, double ref) {
      const double d = est - ref;
      sup = std::max(sup, std::abs(d));
      sq += d * d;
      ref_sup = std::max(ref_sup, std::abs(ref));
      ref_sq += ref * ref;
    }
    ComponentDiscrepancy done(std::size_t count) const {
      ComponentDiscrepancy out;
      if (count == 0) return out;
      out.sup_abs = sup;
      out.rms_abs = std::sqrt(sq / static_cast<double>(count));
      out.sup_rel = ref_sup > 0.0 ? sup / ref_sup : sup;
      const double ref_rms = std::sqrt(ref_sq / static_cast<double>(count));
      out.rms_rel = ref_rms > 0.0 ? out.rms_abs / ref_rms : out.rms_abs;
      return out;
    }
  };
  Acc ay, az, au;
  std::size_t count = 0;
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t k = 0; k < N; ++k) {
      if (!sc.alive(p, k)) break;
      const LyonTriple ref = lyon_value(c, sc.grid[k], sc.assets.s(p, k));
      ay.add(sol.y(p, k), ref.y_pre);
      az.add(sol.z(p, k), ref.z);
      au.add(sol.u(p, k), ref.u);
      ++count;
    }
  }
  DiscrepancyReport out;
  out.y0_oracle = lyon_value(c, 0.0, c.params.s_init[0]).y_pre;
  out.y0_solver = sol.y0;
  out.y0_abs = std::abs(out.y0_solver - out.y0_oracle);
  out.y0_rel = out.y0_oracle != 0.0 ? out.y0_abs / std::abs(out.y0_oracle) : out.y0_abs;
  out.nodes = count;
  out.y = ay.done(count);
  out.z = az.done(count);
  out.u = au.done(count);
  return out;
}

}  // namespace dbsde
