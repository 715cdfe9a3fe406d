#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "dbsde/bsde_solver.hpp"
#include "dbsde/claims.hpp"
#include "dbsde/default_model.hpp"
#include "dbsde/market_model.hpp"
#include "dbsde/scenario.hpp"

namespace dbsde {

/// Claim paying V on survival to T and C(tau) at default before T.
using DefaultableClaim = PayoffSpec;

/// Equivalent martingale measure P^psi: Brownian drift removed through theta,
/// default intensity scaled by (1 + psi).
struct MeasureChange {
  double psi = 0.0;

  void validate() const {
    if (!(psi > -1.0)) {
      std::ostringstream os;
      os << "measure change requires psi > -1 (got " << psi << ")";
      throw InvalidMeasureChange(os.str());
    }
  }
};

/// Risk premium as a step function on the union of coefficient breakpoints.
inline PiecewiseConstant<Vector> risk_premium_curve(const MarketParams& params) {
  std::vector<PiecewiseConstant<Vector>::Piece> pieces;
  for (double t : params.breakpoints()) pieces.emplace_back(t, risk_premium(params, t));
  return PiecewiseConstant<Vector>(std::move(pieces));
}

/// Wealth generator f(t, y, z, u) = -r_t y - theta_t z + (1 - H_{t-}) psi lambda_t u.
/// K2 bounds r, |theta| and |psi| lambda over [0, T]; f(t, 0, 0, 0) = 0.
inline Driver defaultable_driver(const MarketParams& params, const IntensityModel& model, const MeasureChange& mc) {
  mc.validate();
  const auto theta = risk_premium_curve(params);
  const double psi = mc.psi;
  const double horizon = params.horizon;
  const double r_max = params.r.sup(horizon, [](double v) { return std::abs(v); });
  const double theta_max = theta.sup(horizon, [](const Vector& v) { return v.norm(); });
  const double lambda_max = model.lambda.sup(horizon, [](double v) { return v; });
  const double k2 = std::max({r_max, theta_max, std::abs(psi) * lambda_max});

  auto rate = params.r;
  auto intensity = model.lambda;
  DriverFunction f = [theta, rate, intensity, psi](double t, double y, std::span<const double> z, double u,
                                                   bool pre_default) {
    const Vector& th = theta(t);
    double tz = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) tz += th[static_cast<Eigen::Index>(i)] * z[i];
    double out = -rate(t) * y - tz;
    if (pre_default) out += psi * intensity(t) * u;
    return out;
  };
  return Driver{std::move(f), k2, model};
}

/// Defaultable zero-coupon bond with deterministic coefficients:
/// rho_t = exp(-∫_t^T (r + (1+psi) lambda) ds) before default, 0 after.
/// With deterministic r and lambda the Brownian loading c vanishes, and the
/// drift is a_t = r_t + theta_t c_t + (1 - H_{t-}) psi lambda_t.
struct ZeroCouponModel {
  double psi = 0.0;
  std::vector<double> rho_pre;  // per node
  std::vector<Vector> c;        // per node, Brownian loading
  std::vector<double> r;        // per node
  std::vector<double> lambda;   // per node
  std::vector<Vector> theta;    // per node
  std::vector<double> a_pre;    // drift before default, per node
  std::vector<double> a_post;   // drift after default, per node

  /// rho_{t_k} on a path, zero once default has happened.
  double rho(const ScenarioSet& sc, std::size_t path, std::size_t k) const {
    return sc.alive(path, k) ? rho_pre[k] : 0.0;
  }
  double a(std::size_t k, bool defaulted_before) const { return defaulted_before ? a_post[k] : a_pre[k]; }
};

inline ZeroCouponModel zc_price_and_loadings(const MarketParams& params, const IntensityModel& model,
                                             const MeasureChange& mc, const TimeGrid& grid) {
  mc.validate();
  const std::size_t N = grid.steps();
  const double horizon = grid.horizon();
  const auto m = static_cast<Eigen::Index>(params.dim);
  ZeroCouponModel zc;
  zc.psi = mc.psi;
  zc.rho_pre.resize(N + 1);
  zc.c.assign(N + 1, Vector::Zero(m));
  zc.r.resize(N + 1);
  zc.lambda.resize(N + 1);
  zc.theta.resize(N + 1);
  zc.a_pre.resize(N + 1);
  zc.a_post.resize(N + 1);
  for (std::size_t k = 0; k <= N; ++k) {
    const double t = grid[k];
    const double yield = params.r.integral(t, horizon) + (1.0 + mc.psi) * model.lambda.integral(t, horizon);
    zc.rho_pre[k] = std::exp(-yield);
    zc.r[k] = params.r(t);
    zc.lambda[k] = model.lambda(t);
    zc.theta[k] = risk_premium(params, t);
    const double carry = zc.r[k] + zc.theta[k].dot(zc.c[k]);
    zc.a_pre[k] = carry + mc.psi * zc.lambda[k];
    zc.a_post[k] = carry;
  }
  return zc;
}

/// Holdings per path and node: alpha units of each risky asset, beta
/// defaultable bonds, delta riskless units. Zero on nodes at or after T∧tau.
struct Strategy {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  std::size_t dim = 1;
  double initial_wealth = 0.0;
  std::vector<double> alpha;  // [path][node][component]
  std::vector<double> beta;   // [path][node]
  std::vector<double> delta;  // [path][node]

  static Strategy zeros(std::size_t n, std::size_t N, std::size_t m) {
    Strategy s;
    s.n_paths = n;
    s.steps = N;
    s.dim = m;
    s.alpha.assign(n * (N + 1) * m, 0.0);
    s.beta.assign(n * (N + 1), 0.0);
    s.delta.assign(n * (N + 1), 0.0);
    return s;
  }
  double& a(std::size_t p, std::size_t k, std::size_t i = 0) { return alpha[(p * (steps + 1) + k) * dim + i]; }
  double a(std::size_t p, std::size_t k, std::size_t i = 0) const { return alpha[(p * (steps + 1) + k) * dim + i]; }
  double& b(std::size_t p, std::size_t k) { return beta[p * (steps + 1) + k]; }
  double b(std::size_t p, std::size_t k) const { return beta[p * (steps + 1) + k]; }
  double& d(std::size_t p, std::size_t k) { return delta[p * (steps + 1) + k]; }
  double d(std::size_t p, std::size_t k) const { return delta[p * (steps + 1) + k]; }
};

/// Reads the replicating portfolio off (Y, Z, U):
///   beta = -U / rho_{t-},  sigma^T (alpha ∘ S) = Z - beta c rho_{t-},
///   delta = (Y - alpha·S - beta rho_{t-}) / S0.
inline Strategy extract_strategy(const BsdeSolution& sol, const ScenarioSet& sc, const ZeroCouponModel& zc,
                                 const MarketParams& params) {
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  const std::size_t m = sc.dim();
  if (sol.n_paths != n || sol.steps != N || sol.dim != m || zc.rho_pre.size() != N + 1)
    throw ConfigMismatch("solution, scenarios and zero-coupon model have different shapes");

  std::vector<Eigen::FullPivLU<Matrix>> vol_t(N);
  std::vector<double> riskless(N);
  for (std::size_t k = 0; k < N; ++k) {
    const Matrix vol = params.sigma(sc.grid[k]);
    vol_t[k] = Eigen::FullPivLU<Matrix>(vol.transpose());
    if (!vol_t[k].isInvertible()) {
      std::ostringstream os;
      os << "sigma is singular at t=" << sc.grid[k];
      throw InvalidMarket(os.str());
    }
    riskless[k] = riskless_value(params, sc.grid[k]);
    if (!(zc.rho_pre[k] > 0.0)) {
      std::ostringstream os;
      os << "defaultable bond price vanishes before default at t=" << sc.grid[k];
      throw DegenerateBond(os.str());
    }
  }

  Strategy st = Strategy::zeros(n, N, m);
  st.initial_wealth = sol.y0;
  parallel::for_each_index(n, [&](std::size_t p) {
    Vector z(static_cast<Eigen::Index>(m));
    for (std::size_t k = 0; k < N; ++k) {
      if (!sc.alive(p, k)) break;
      const double rho = zc.rho_pre[k];
      const double beta = -sol.u(p, k) / rho;
      for (std::size_t i = 0; i < m; ++i)
        z[static_cast<Eigen::Index>(i)] = sol.z(p, k, i) - beta * zc.c[k][static_cast<Eigen::Index>(i)] * rho;
      const Vector exposure = vol_t[k].solve(z);  // alpha_i S_i
      double risky = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double s = sc.assets.s(p, k, i);
        if (!(s > 0.0)) throw InvalidMarket("asset price must be positive to extract holdings");
        const double units = exposure[static_cast<Eigen::Index>(i)] / s;
        st.a(p, k, i) = units;
        risky += units * s;
      }
      st.b(p, k) = beta;
      st.d(p, k) = (sol.y(p, k) - risky - beta * rho) / riskless[k];
    }
  });
  return st;
}

/// Terminal error statistics of a forward-simulated hedge.
struct ErrorStats {
  std::size_t count = 0;
  double mean = 0.0;
  double rms = 0.0;
  double rms_se = 0.0;  // delta-method standard error of rms
  double max_abs = 0.0;
};

struct ReplicationReport {
  ErrorStats all;
  ErrorStats survival;
  ErrorStats defaulted;
  double mean_se = 0.0;  // standard error of the mean error
};

namespace detail {
struct ErrorAccumulator {
  std::size_t count = 0;
  double sum = 0.0, sum_sq = 0.0, sum_quad = 0.0, max_abs = 0.0;
  void add(double e) {
    ++count;
    sum += e;
    sum_sq += e * e;
    sum_quad += e * e * e * e;
    max_abs = std::max(max_abs, std::abs(e));
  }
  void merge(const ErrorAccumulator& o) {
    count += o.count;
    sum += o.sum;
    sum_sq += o.sum_sq;
    sum_quad += o.sum_quad;
    max_abs = std::max(max_abs, o.max_abs);
  }
  ErrorStats stats() const {
    ErrorStats s;
    s.count = count;
    if (count == 0) return s;
    s.mean = sum / static_cast<double>(count);
    const double n = static_cast<double>(count);
    const double ms = sum_sq / n;
    s.rms = std::sqrt(ms);
    s.max_abs = max_abs;
    if (count > 1 && s.rms > 0.0) {
      const double var_sq = std::max(0.0, (sum_quad / n - ms * ms) * n / (n - 1.0));
      s.rms_se = std::sqrt(var_sq / n) / (2.0 * s.rms);
    }
    return s;
  }
};
}  // namespace detail

/// Runs the self-financing wealth X forward from the strategy's initial
/// wealth. At each node the riskless position is whatever the current wealth
/// leaves after the risky and bond holdings. If default happens inside
/// (t_k, t_{k+1}] the bond jumps to zero, the riskless leg accrues to the exact
/// tau, and the risky leg is marked at the geometric interpolation of the
/// asset between the two nodes (the grid does not observe S_tau). The
/// terminal wealth is compared with xi at T∧tau.
inline ReplicationReport replicate_forward(const Strategy& st, const ScenarioSet& sc, const ZeroCouponModel& zc,
                                           const MarketParams& params, const DefaultableClaim& claim) {
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  const std::size_t m = sc.dim();
  if (st.n_paths != n || st.steps != N || st.dim != m)
    throw ConfigMismatch("strategy and scenarios have different shapes");
  std::vector<double> riskless(N + 1);
  for (std::size_t k = 0; k <= N; ++k) riskless[k] = riskless_value(params, sc.grid[k]);

  std::vector<double> error(n);
  std::vector<std::uint8_t> defaulted(n);
  parallel::for_each_index(n, [&](std::size_t p) {
    double wealth = st.initial_wealth;
    const double tau = sc.tau(p);
    bool stopped = false;
    for (std::size_t k = 0; k < N && !stopped; ++k) {
      const double rho = zc.rho_pre[k];
      double risky_now = 0.0;
      for (std::size_t i = 0; i < m; ++i) risky_now += st.a(p, k, i) * sc.assets.s(p, k, i);
      const double cash = wealth - risky_now - st.b(p, k) * rho;
      if (tau <= sc.grid[k + 1]) {
        const double w = (tau - sc.grid[k]) / sc.grid.dt(k);
        double risky = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double s0 = sc.assets.s(p, k, i), s1 = sc.assets.s(p, k + 1, i);
          risky += st.a(p, k, i) * s0 * std::pow(s1 / s0, w);
        }
        wealth = risky + cash * riskless_value(params, tau) / riskless[k];
        stopped = true;
      } else {
        double risky = 0.0;
        for (std::size_t i = 0; i < m; ++i) risky += st.a(p, k, i) * sc.assets.s(p, k + 1, i);
        wealth = risky + st.b(p, k) * zc.rho_pre[k + 1] + cash * riskless[k + 1] / riskless[k];
      }
    }
    error[p] = wealth - terminal_payoff(claim, sc, p);
    defaulted[p] = sc.defaults_before_horizon(p) ? 1 : 0;
  });

  const std::size_t chunks = parallel::chunk_count(n);
  std::vector<detail::ErrorAccumulator> all(chunks), surv(chunks), dflt(chunks);
  parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    for (std::size_t p = b; p < e; ++p) {
      all[c].add(error[p]);
      (defaulted[p] ? dflt[c] : surv[c]).add(error[p]);
    }
  });
  detail::ErrorAccumulator a, s, d;
  for (std::size_t c = 0; c < chunks; ++c) {
    a.merge(all[c]);
    s.merge(surv[c]);
    d.merge(dflt[c]);
  }
  ReplicationReport report{a.stats(), s.stats(), d.stats(), 0.0};
  if (n > 1) {
    const double var = (a.sum_sq - a.sum * a.sum / static_cast<double>(n)) / static_cast<double>(n - 1);
    report.mean_se = std::sqrt(std::max(0.0, var) / static_cast<double>(n));
  }
  return report;
}

}  // namespace dbsde
