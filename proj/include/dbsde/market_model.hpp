#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/parallel.hpp"
#include "dbsde/piecewise.hpp"
#include "dbsde/rng.hpp"
#include "dbsde/time_grid.hpp"

namespace dbsde {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Default-free market: riskless asset dS0 = r S0 dt and m risky assets
/// dS^i = mu^i S^i dt + S^i (sigma^i, dW). All coefficients are deterministic
/// step functions of time.
struct MarketParams {
  double horizon = 1.0;
  std::size_t dim = 1;
  ScalarCurve r{0.0};
  PiecewiseConstant<Vector> mu{Vector::Zero(1)};
  PiecewiseConstant<Matrix> sigma{Matrix::Identity(1, 1) * 0.2};
  double s0_init = 1.0;
  Vector s_init = Vector::Constant(1, 100.0);

  /// One-asset market with constant coefficients.
  static MarketParams constant(double horizon, double rate, double drift, double vol,
                               double spot = 100.0) {
    MarketParams p;
    p.horizon = horizon;
    p.dim = 1;
    p.r = ScalarCurve(rate);
    p.mu = PiecewiseConstant<Vector>(Vector::Constant(1, drift));
    p.sigma = PiecewiseConstant<Matrix>(Matrix::Constant(1, 1, vol));
    p.s_init = Vector::Constant(1, spot);
    return p;
  }

  /// Union of the coefficient breakpoints lying in [0, T].
  std::vector<double> breakpoints() const {
    std::vector<double> out;
    auto add = [&](const std::vector<double>& b) {
      for (double t : b)
        if (t <= horizon) out.push_back(t);
    };
    add(r.breakpoints());
    add(mu.breakpoints());
    add(sigma.breakpoints());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

/// One failed admissibility condition.
struct MarketViolation {
  std::string condition;  // "M1", "M2", "M3" or "shape"
  double time = 0.0;
  std::string message;
};

/// Checks boundedness of r and mu (M1), eps*I <= sigma sigma* <= cap*I (M2)
/// and invertibility of sigma (M3) at every breakpoint. Violations are data.
inline std::vector<MarketViolation> validate(const MarketParams& p, double eps, double cap) {
  std::vector<MarketViolation> out;
  auto fail = [&](std::string c, double t, std::string msg) {
    out.push_back({std::move(c), t, std::move(msg)});
  };
  const auto m = static_cast<Eigen::Index>(p.dim);
  if (p.dim == 0) fail("shape", 0.0, "dimension m must be positive");
  if (!(p.horizon > 0.0) || !std::isfinite(p.horizon)) fail("shape", 0.0, "horizon T must be positive");
  if (!(p.s0_init > 0.0)) fail("shape", 0.0, "riskless initial value must be positive");
  if (p.s_init.size() != m) {
    fail("shape", 0.0, "s_init must have m components");
  } else {
    for (Eigen::Index i = 0; i < m; ++i)
      if (!(p.s_init[i] > 0.0)) fail("shape", 0.0, "risky initial values must be positive");
  }
  if (!(eps > 0.0 && eps < cap)) fail("M2", 0.0, "bounds must satisfy 0 < eps < cap");

  for (const auto& [t, rate] : p.r.pieces()) {
    if (t > p.horizon) break;
    if (!std::isfinite(rate) || rate < 0.0) fail("M1", t, "rate must be finite and non-negative");
  }
  for (const auto& [t, drift] : p.mu.pieces()) {
    if (t > p.horizon) break;
    if (drift.size() != m) fail("shape", t, "mu must have m components");
    else if (!drift.allFinite()) fail("M1", t, "drift must be bounded");
  }
  for (const auto& [t, vol] : p.sigma.pieces()) {
    if (t > p.horizon) break;
    if (vol.rows() != m || vol.cols() != m) {
      fail("shape", t, "sigma must be m x m");
      continue;
    }
    if (!vol.allFinite()) {
      fail("M2", t, "sigma must be bounded");
      continue;
    }
    const Matrix cov = vol * vol.transpose();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (lo < eps || hi > cap) {
      std::ostringstream os;
      os << "eigenvalues of sigma sigma* in [" << lo << ", " << hi << "] outside [" << eps << ", "
         << cap << "]";
      fail("M2", t, os.str());
    }
    Eigen::JacobiSVD<Matrix> svd(vol);
    const double smin = svd.singularValues().minCoeff();
    const double smax = svd.singularValues().maxCoeff();
    if (!(smin > 1e-14 * std::max(1.0, smax))) fail("M3", t, "sigma is singular");
  }
  return out;
}

/// Risk premium theta_t = sigma_t^{-1} (mu_t - r_t 1).
inline Vector risk_premium(const MarketParams& p, double t) {
  const Matrix& vol = p.sigma(t);
  Eigen::FullPivLU<Matrix> lu(vol);
  if (!lu.isInvertible()) {
    std::ostringstream os;
    os << "sigma is singular at t=" << t;
    throw InvalidMarket(os.str());
  }
  const Vector excess = p.mu(t) - Vector::Constant(static_cast<Eigen::Index>(p.dim), p.r(t));
  return lu.solve(excess);
}

/// R_t = exp(-∫_0^t r_s ds).
inline double discount_factor(const MarketParams& p, double t) { return std::exp(-p.r.integral(0.0, t)); }

/// Riskless asset S0_t = S0_0 / R_t.
inline double riskless_value(const MarketParams& p, double t) { return p.s0_init / discount_factor(p, t); }

/// Brownian increments and asset values on a grid, path-major.
struct AssetPaths {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  std::size_t dim = 1;
  std::vector<double> dW;  // [path][step][component]
  std::vector<double> S;   // [path][node][component]

  double dw(std::size_t path, std::size_t k, std::size_t i = 0) const {
    return dW[(path * steps + k) * dim + i];
  }
  double s(std::size_t path, std::size_t k, std::size_t i = 0) const {
    return S[(path * (steps + 1) + k) * dim + i];
  }
};

/// Throws InvalidGrid unless every coefficient breakpoint in [0, T] is a node.
inline void require_breakpoints_on_grid(const std::vector<double>& breakpoints, const TimeGrid& grid,
                                        const char* what) {
  for (double t : breakpoints) {
    if (!grid.contains(t)) {
      std::ostringstream os;
      os << what << " breakpoint t=" << t << " is not a grid node";
      throw InvalidGrid(os.str());
    }
  }
}

/// Simulates W and S with the exact log-normal step
/// S_{k+1} = S_k exp((mu - diag(sigma sigma*)/2) dt + sigma dW).
inline AssetPaths simulate_assets(const MarketParams& p, const TimeGrid& grid, std::size_t n_paths,
                                  std::uint64_t seed) {
  if (std::abs(grid.horizon() - p.horizon) > 1e-12 * std::max(1.0, p.horizon))
    throw InvalidGrid("grid horizon differs from market horizon");
  require_breakpoints_on_grid(p.breakpoints(), grid, "market");

  const std::size_t N = grid.steps();
  const std::size_t m = p.dim;
  AssetPaths out;
  out.n_paths = n_paths;
  out.steps = N;
  out.dim = m;
  out.dW.assign(n_paths * N * m, 0.0);
  out.S.assign(n_paths * (N + 1) * m, 0.0);

  // Per-step drift and loading, shared read-only by all paths.
  std::vector<Vector> log_drift(N);
  std::vector<Matrix> vol(N);
  for (std::size_t k = 0; k < N; ++k) {
    const double t = grid[k];
    vol[k] = p.sigma(t);
    const Matrix cov = vol[k] * vol[k].transpose();
    log_drift[k] = (p.mu(t) - 0.5 * cov.diagonal()) * grid.dt(k);
  }

  parallel::for_each_index(n_paths, [&](std::size_t path) {
    auto engine = path_engine(seed, Stream::Brownian, path);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector dw(static_cast<Eigen::Index>(m));
    Vector logs = p.s_init.array().log().matrix();
    double* s_row = &out.S[path * (N + 1) * m];
    double* w_row = &out.dW[path * N * m];
    for (std::size_t i = 0; i < m; ++i) s_row[i] = p.s_init[static_cast<Eigen::Index>(i)];
    for (std::size_t k = 0; k < N; ++k) {
      const double sq = std::sqrt(grid.dt(k));
      for (std::size_t i = 0; i < m; ++i) dw[static_cast<Eigen::Index>(i)] = sq * normal(engine);
      logs += log_drift[k] + vol[k] * dw;
      for (std::size_t i = 0; i < m; ++i) {
        w_row[k * m + i] = dw[static_cast<Eigen::Index>(i)];
        s_row[(k + 1) * m + i] = std::exp(logs[static_cast<Eigen::Index>(i)]);
      }
    }
  });
  return out;
}

}  // namespace dbsde
