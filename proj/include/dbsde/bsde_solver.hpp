#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <vector>

#include "dbsde/claims.hpp"
#include "dbsde/default_model.hpp"
#include "dbsde/error.hpp"
#include "dbsde/regression.hpp"
#include "dbsde/rng.hpp"
#include "dbsde/scenario.hpp"

namespace dbsde {

/// f(t, y, z, u, pre_default).
using DriverFunction =
    std::function<double(double t, double y, std::span<const double> z, double u, bool pre_default)>;

/// BSDE generator with its Lipschitz data. The u-dependence is weighted by the
/// default intensity, so the driver carries the intensity it was built for.
struct Driver {
  DriverFunction f;
  double k2 = 0.0;  // Lipschitz constant in (y, z)
  IntensityModel intensity;

  double k1() const noexcept { return intensity.bound; }
  double k() const noexcept { return std::max(k1(), k2); }

  double operator()(double t, double y, std::span<const double> z, double u, bool pre_default) const {
    return f(t, y, z, u, pre_default);
  }

  static Driver zero(IntensityModel intensity) {
    return Driver{[](double, double, std::span<const double>, double, bool) { return 0.0; }, 0.0,
                  std::move(intensity)};
  }
};

/// Random spot-check of |f(s,y,z,u) - f(s,y',z',u')| <= K2(|dy| + |dz|) + w_s |du|
/// with w_s = max(lambda_s, K2). Returns the number of violating samples.
inline std::size_t lipschitz_violations(const Driver& d, std::size_t dim, double horizon,
                                        std::size_t samples = 2000, std::uint64_t seed = 7) {
  auto engine = path_engine(seed, Stream::Diagnostics, 0);
  std::uniform_real_distribution<double> time(0.0, horizon);
  std::normal_distribution<double> normal(0.0, 2.0);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> z1(dim), z2(dim);
  std::size_t bad = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double t = time(engine);
    const bool pre = coin(engine);
    const double y1 = normal(engine), y2 = normal(engine);
    const double u1 = normal(engine), u2 = normal(engine);
    double dz = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      z1[i] = normal(engine);
      z2[i] = normal(engine);
      dz += (z1[i] - z2[i]) * (z1[i] - z2[i]);
    }
    const double lhs = std::abs(d(t, y1, z1, u1, pre) - d(t, y2, z2, u2, pre));
    const double weight = std::max(d.intensity.lambda(t), d.k2);
    const double rhs = d.k2 * (std::abs(y1 - y2) + std::sqrt(dz)) + weight * std::abs(u1 - u2);
    if (lhs > rhs * (1.0 + 1e-12) + 1e-14) ++bad;
  }
  return bad;
}

/// Terminal claim plus generator on a fixed grid.
struct BsdeProblem {
  PayoffSpec claim;
  Driver driver;
  TimeGrid grid;
};

struct PicardConfig {
  std::size_t max_iters = 20;
  double tolerance = 1e-4;            // relative gamma-norm distance between iterates
  std::optional<double> gamma;        // defaults to 4K^2 + 2K + 1
};

struct SolverConfig {
  std::size_t degree = 2;             // polynomial degree in log-asset state
  std::size_t cells = 20;             // equal-probability cells per state coordinate
  double ridge = 1e-8;
  std::size_t inner_passes = 1;       // fixed-point passes for the implicit Y
  PicardConfig picard;
};

inline double default_gamma(double k) { return 4.0 * k * k + 2.0 * k + 1.0; }

/// Per-path, per-node (Y, Z, U). On nodes with t_k >= T∧tau the triple is
/// (xi, 0, 0).
struct BsdeSolution {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  std::size_t dim = 1;
  std::vector<double> Y;  // [path][node]
  std::vector<double> Z;  // [path][node][component]
  std::vector<double> U;  // [path][node]
  double y0 = 0.0;
  double y0_se = 0.0;     // standard error of y0 from the pathwise representation

  static BsdeSolution zeros(std::size_t n, std::size_t N, std::size_t m) {
    BsdeSolution s;
    s.n_paths = n;
    s.steps = N;
    s.dim = m;
    s.Y.assign(n * (N + 1), 0.0);
    s.Z.assign(n * (N + 1) * m, 0.0);
    s.U.assign(n * (N + 1), 0.0);
    return s;
  }

  double y(std::size_t p, std::size_t k) const { return Y[p * (steps + 1) + k]; }
  double u(std::size_t p, std::size_t k) const { return U[p * (steps + 1) + k]; }
  double z(std::size_t p, std::size_t k, std::size_t i = 0) const { return Z[(p * (steps + 1) + k) * dim + i]; }
  std::span<const double> z_row(std::size_t p, std::size_t k) const {
    return {&Z[(p * (steps + 1) + k) * dim], dim};
  }
  double& y(std::size_t p, std::size_t k) { return Y[p * (steps + 1) + k]; }
  double& u(std::size_t p, std::size_t k) { return U[p * (steps + 1) + k]; }
  double& z(std::size_t p, std::size_t k, std::size_t i = 0) { return Z[(p * (steps + 1) + k) * dim + i]; }
};

namespace detail {

inline void check_consistency(const BsdeProblem& problem, const ScenarioSet& sc) {
  if (!(problem.grid == sc.grid)) throw ConfigMismatch("problem grid and scenario grid differ");
  if (problem.claim.asset >= sc.dim()) throw ConfigMismatch("payoff asset index out of range");
  const double k = problem.driver.k();
  for (std::size_t j = 0; j < sc.steps(); ++j) {
    if (sc.grid.dt(j) * k >= 1.0) {
      std::ostringstream os;
      os << "step size too large: dt*K = " << sc.grid.dt(j) * k << " >= 1 at step " << j;
      throw StepSizeError(os.str());
    }
  }
}

/// Estimates E[xi^2] and E∫|f(s,0,0,0)|^2 ds; both must be finite.
inline void check_integrability(const BsdeProblem& problem, const ScenarioSet& sc,
                                const std::vector<double>& xi) {
  double second = 0.0;
  for (double v : xi) second += v * v;
  const std::vector<double> zero(sc.dim(), 0.0);
  double driver_mass = 0.0;
  for (std::size_t k = 0; k < sc.steps(); ++k) {
    const double f0 = problem.driver(sc.grid[k], 0.0, zero, 0.0, true);
    driver_mass += f0 * f0 * sc.grid.dt(k);
  }
  if (!std::isfinite(second) || !std::isfinite(driver_mass))
    throw PreconditionError("claim or driver is not square integrable on this sample");
}

/// Driver value used at (step k, path p) given candidate (y, z, u).
using StepDriver = std::function<double(std::size_t k, std::size_t p, double y, std::span<const double> z, double u)>;

/// ∫_{t0}^{t1} C(s) lambda(s) exp(-(Lambda_s - Lambda_{t0})) ds: expected
/// compensation paid in (t0, t1] by a name alive at t0.
inline double step_default_leg(const IntensityModel& model, const ScalarCurve& comp, double t0, double t1) {
  std::vector<double> cuts{t0, t1};
  for (double b : model.lambda.breakpoints())
    if (b > t0 && b < t1) cuts.push_back(b);
  for (double b : comp.breakpoints())
    if (b > t0 && b < t1) cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double leg = 0.0, hazard = 0.0;
  for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
    const double a = cuts[j], b = cuts[j + 1];
    if (!(b > a)) continue;
    const double l = model.lambda(a);
    leg += comp(a) * std::exp(-hazard) * -std::expm1(-l * (b - a));
    hazard += l * (b - a);
  }
  return leg;
}

/// Pre-default continuation values (Y, Z, U) on every path and node. Under
/// immersion with a deterministic intensity these are functions of the
/// Brownian state alone, so they are defined whether or not the path has
/// defaulted; the stopped solution reads them on pre-default nodes only.
struct Continuation {
  BsdeSolution values;  // reused storage; y0/y0_se unused
};

/// One backward sweep. For every step k, with q = Y^pre_{k+1}:
///   Zt  = argmin_z E[(q - E[q|x_k] - z(x_k) dW_k)^2]
///   Eq  = E[q - Zt dW_k | x_k]
///   Y_k = p_k Eq + leg_k + f(t_k, Y_k, p_k Zt, C(t_k) - Y_k) dt_k
/// where p_k is the step survival probability and leg_k the expected
/// compensation paid inside the step, both exact for a deterministic
/// intensity. Z_k = p_k Zt and U_k = C(t_k) - Y_k. The implicit Y starts from
/// the explicit Euler value and takes `inner_passes` fixed-point passes.
inline Continuation sweep(const BsdeProblem& problem, const ScenarioSet& sc, const SolverConfig& cfg,
                          const StepDriver& driver) {
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  const std::size_t m = sc.dim();
  const auto& model = problem.driver.intensity;
  Continuation cont{BsdeSolution::zeros(n, N, m)};
  auto& v = cont.values;
  for (std::size_t p = 0; p < n; ++p)
    v.y(p, N) = problem.claim.survival_value(sc.assets.s(p, N, problem.claim.asset));

  std::vector<double> features(n * m), target(n), weight(n), e0, eq;
  std::vector<std::vector<double>> zt(m);
  std::vector<double> zbuf(m);
  for (std::size_t k = N; k-- > 0;) {
    const double t = sc.grid[k];
    const double dt = sc.grid.dt(k);
    const double comp = problem.claim.compensation_at(t);
    const double survive = std::exp(-model.lambda.integral(t, sc.grid[k + 1]));
    const double leg = step_default_leg(model, problem.claim.compensation, t, sc.grid[k + 1]);

    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t i = 0; i < m; ++i) features[p * m + i] = std::log(sc.assets.s(p, k, i));
    const PiecewiseLeastSquares ls(features, n, m, cfg.degree, cfg.cells, cfg.ridge);

    for (std::size_t p = 0; p < n; ++p) target[p] = v.y(p, k + 1);
    e0 = ls.fit(target);
    // Zt_i(x) as the local slope of q on dW_i: weighted least squares with
    // weights dW_i^2, backfitted across components when m > 1.
    for (auto& col : zt) col.assign(n, 0.0);
    const std::size_t rounds = m == 1 ? 1 : 3;
    for (std::size_t round = 0; round < rounds; ++round)
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < n; ++p) {
          double r = v.y(p, k + 1) - e0[p];
          for (std::size_t j = 0; j < m; ++j)
            if (j != i) r -= zt[j][p] * sc.assets.dw(p, k, j);
          const double dw = sc.assets.dw(p, k, i);
          weight[p] = dw * dw;
          target[p] = r * dw;
        }
        zt[i] = ls.fit_weighted(weight, target);
      }
    for (std::size_t p = 0; p < n; ++p) {
      double zdw = 0.0;
      for (std::size_t i = 0; i < m; ++i) zdw += zt[i][p] * sc.assets.dw(p, k, i);
      target[p] = v.y(p, k + 1) - zdw;
    }
    eq = ls.fit(target);

    parallel::for_each_index(n, [&](std::size_t p) {
      double zloc[16];
      std::vector<double> zheap;
      double* zp = zloc;
      if (m > 16) {
        zheap.resize(m);
        zp = zheap.data();
      }
      for (std::size_t i = 0; i < m; ++i) zp[i] = survive * zt[i][p];
      const std::span<const double> z(zp, m);
      const double base = survive * eq[p] + leg;
      double y = base + driver(k, p, base, z, comp - base) * dt;  // explicit predictor
      for (std::size_t pass = 0; pass < std::max<std::size_t>(1, cfg.inner_passes); ++pass)
        y = base + driver(k, p, y, z, comp - y) * dt;
      v.y(p, k) = y;
      v.u(p, k) = comp - y;
      for (std::size_t i = 0; i < m; ++i) v.z(p, k, i) = zp[i];
    });
  }
  return cont;
}

/// Stopped solution: continuation values before T∧tau, (xi, 0, 0) after.
/// The standard error of y0 comes from the pathwise representation
/// xi + sum_k (f dt - Z dW - U dM) over pre-default steps.
inline BsdeSolution assemble(const BsdeProblem& problem, const ScenarioSet& sc, const Continuation& cont,
                             const std::vector<double>& xi) {
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  const std::size_t m = sc.dim();
  const auto& c = cont.values;
  BsdeSolution sol = BsdeSolution::zeros(n, N, m);
  std::vector<double> pathwise(n);
  parallel::for_each_index(n, [&](std::size_t p) {
    double acc = xi[p];
    for (std::size_t k = 0; k <= N; ++k) {
      if (k < N && sc.alive(p, k)) {
        sol.y(p, k) = c.y(p, k);
        sol.u(p, k) = c.u(p, k);
        double zdw = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          sol.z(p, k, i) = c.z(p, k, i);
          zdw += c.z(p, k, i) * sc.assets.dw(p, k, i);
        }
        const double f = problem.driver(sc.grid[k], c.y(p, k), c.z_row(p, k), c.u(p, k), true);
        acc += f * sc.grid.dt(k) - zdw - c.u(p, k) * sc.defaults.dm(p, k);
      } else {
        sol.y(p, k) = xi[p];
      }
    }
    pathwise[p] = acc;
  });
  sol.y0 = n > 0 ? sol.y(0, 0) : 0.0;
  if (n > 1) {
    double mean = 0.0;
    for (double x : pathwise) mean += x;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double x : pathwise) var += (x - mean) * (x - mean);
    var /= static_cast<double>(n - 1);
    sol.y0_se = std::sqrt(var / static_cast<double>(n));
  }
  return sol;
}

}  // namespace detail

/// Backward induction with regression-based conditional expectations.
inline BsdeSolution solve_backward(const BsdeProblem& problem, const ScenarioSet& sc, const SolverConfig& cfg) {
  detail::check_consistency(problem, sc);
  const auto xi = terminal_payoffs(problem.claim, sc);
  detail::check_integrability(problem, sc, xi);
  const auto& grid = sc.grid;
  detail::StepDriver driver = [&](std::size_t k, std::size_t, double y, std::span<const double> z, double u) {
    return problem.driver(grid[k], y, z, u, true);
  };
  return detail::assemble(problem, sc, detail::sweep(problem, sc, cfg, driver), xi);
}

/// (E ∫_0^{T∧tau} e^{gamma s} ((Y-Y')^2 + |Z-Z'|^2 + (U-U')^2 lambda_s) ds)^{1/2}
/// estimated by per-path left Riemann sums over pre-default nodes. Passing
/// `other == nullptr` gives the norm of `a`.
inline double gamma_distance(const BsdeSolution& a, const BsdeSolution* other, const ScenarioSet& sc,
                             double gamma, const IntensityModel& model) {
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  std::vector<double> weight(N), lam(N);
  for (std::size_t k = 0; k < N; ++k) {
    weight[k] = std::exp(gamma * sc.grid[k]) * sc.grid.dt(k);
    lam[k] = model.lambda(sc.grid[k]);
  }
  const std::size_t chunks = parallel::chunk_count(n);
  std::vector<double> partial(chunks, 0.0);
  parallel::for_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
    double acc = 0.0;
    for (std::size_t p = b; p < e; ++p) {
      for (std::size_t k = 0; k < N; ++k) {
        if (!sc.alive(p, k)) break;
        const double dy = a.y(p, k) - (other ? other->y(p, k) : 0.0);
        const double du = a.u(p, k) - (other ? other->u(p, k) : 0.0);
        double dz2 = 0.0;
        for (std::size_t i = 0; i < a.dim; ++i) {
          const double dz = a.z(p, k, i) - (other ? other->z(p, k, i) : 0.0);
          dz2 += dz * dz;
        }
        acc += weight[k] * (dy * dy + dz2 + du * du * lam[k]);
      }
    }
    partial[c] = acc;
  });
  double total = 0.0;
  for (double v : partial) total += v;
  return n > 0 ? std::sqrt(total / static_cast<double>(n)) : 0.0;
}

inline double gamma_norm(const BsdeSolution& s, const ScenarioSet& sc, double gamma, const IntensityModel& model) {
  return gamma_distance(s, nullptr, sc, gamma, model);
}

struct PicardResult {
  BsdeSolution solution;
  double gamma = 0.0;
  std::vector<double> distances;  // |||X^n - X^{n-1}|||_gamma, n = 1, 2, ...
  std::vector<double> norms;      // |||X^n|||_gamma
  std::vector<double> ratios;     // distances[n] / distances[n-1]
  std::size_t iterations = 0;
  bool converged = false;
};

/// Picard iteration of the map (y, z, u) -> (Y, Z, U) with
/// Y_k = E[xi + sum_{j>=k} f(t_j, y_j, z_j, u_j) dt_j | x_k], started at zero.
/// Stops once the relative gamma-norm distance between iterates drops below
/// the tolerance; three consecutive non-decreasing distances signal divergence.
inline PicardResult picard_solve(const BsdeProblem& problem, const ScenarioSet& sc, const SolverConfig& cfg) {
  detail::check_consistency(problem, sc);
  const auto xi = terminal_payoffs(problem.claim, sc);
  detail::check_integrability(problem, sc, xi);

  PicardResult out;
  out.gamma = cfg.picard.gamma.value_or(default_gamma(problem.driver.k()));
  const auto& model = problem.driver.intensity;
  const auto& grid = sc.grid;
  detail::Continuation previous{BsdeSolution::zeros(sc.n_paths(), sc.steps(), sc.dim())};
  BsdeSolution previous_stopped = BsdeSolution::zeros(sc.n_paths(), sc.steps(), sc.dim());

  std::size_t rising = 0;
  for (std::size_t it = 1; it <= std::max<std::size_t>(1, cfg.picard.max_iters); ++it) {
    const auto& pv = previous.values;
    detail::StepDriver frozen = [&](std::size_t k, std::size_t p, double, std::span<const double>, double) {
      return problem.driver(grid[k], pv.y(p, k), pv.z_row(p, k), pv.u(p, k), true);
    };
    SolverConfig pass_cfg = cfg;
    pass_cfg.inner_passes = 1;
    detail::Continuation next = detail::sweep(problem, sc, pass_cfg, frozen);
    BsdeSolution stopped = detail::assemble(problem, sc, next, xi);

    const double dist = gamma_distance(stopped, &previous_stopped, sc, out.gamma, model);
    const double norm = gamma_norm(stopped, sc, out.gamma, model);
    if (!out.distances.empty()) {
      const double prev = out.distances.back();
      out.ratios.push_back(prev > 0.0 ? dist / prev : 0.0);
      rising = (dist > 0.0 && dist >= prev) ? rising + 1 : 0;
    }
    out.distances.push_back(dist);
    out.norms.push_back(norm);
    out.iterations = it;
    previous = std::move(next);
    previous_stopped = std::move(stopped);

    const double rel = norm > 0.0 ? dist / norm : dist;
    if (rel < cfg.picard.tolerance) {
      out.converged = true;
      break;
    }
    if (rising >= 3) {
      std::ostringstream os;
      os << "Picard iteration diverging: distance non-decreasing for 3 iterations (last " << dist << ")";
      throw DivergenceError(os.str());
    }
  }
  out.solution = std::move(previous_stopped);
  return out;
}

struct AprioriCheck {
  double lhs = 0.0;
  double lhs_se = 0.0;
  double rhs = 0.0;
  bool satisfied = false;
};

/// Compares E[sup_k Y_{k∧tau}^2] with
/// 2[e^{gamma T}(E xi^2 + E∫|f(s,0,0,0)|^2) + (e^{gamma T} + 1/4)(E∫|Z|^2 + E∫U^2 lambda)],
/// allowing 5% Monte Carlo slack. Requires gamma > 1 + 3K + K^2.
inline AprioriCheck apriori_bound_check(const BsdeProblem& problem, const BsdeSolution& sol,
                                        const ScenarioSet& sc, double gamma) {
  const double k = problem.driver.k();
  const double threshold = 1.0 + 3.0 * k + k * k;
  if (!(gamma > threshold)) {
    std::ostringstream os;
    os << "a-priori bound needs gamma > 1 + 3K + K^2 = " << threshold << " (got " << gamma << ")";
    throw PreconditionError(os.str());
  }
  const std::size_t n = sc.n_paths();
  const std::size_t N = sc.steps();
  const auto xi = terminal_payoffs(problem.claim, sc);
  const std::vector<double> zero(sc.dim(), 0.0);
  double sup_y2 = 0.0, sup_y4 = 0.0, xi2 = 0.0, f0 = 0.0, z2 = 0.0, u2 = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    double best = 0.0;
    for (std::size_t kk = 0; kk <= N; ++kk) best = std::max(best, sol.y(p, kk) * sol.y(p, kk));
    sup_y2 += best;
    sup_y4 += best * best;
    xi2 += xi[p] * xi[p];
    for (std::size_t kk = 0; kk < N; ++kk) {
      if (!sc.alive(p, kk)) break;
      const double t = sc.grid[kk];
      const double dt = sc.grid.dt(kk);
      const double fz = problem.driver(t, 0.0, zero, 0.0, true);
      f0 += fz * fz * dt;
      for (std::size_t i = 0; i < sol.dim; ++i) z2 += sol.z(p, kk, i) * sol.z(p, kk, i) * dt;
      u2 += sol.u(p, kk) * sol.u(p, kk) * problem.driver.intensity.lambda(t) * dt;
    }
  }
  const double inv = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
  const double growth = std::exp(gamma * sc.grid.horizon());
  AprioriCheck out;
  out.lhs = sup_y2 * inv;
  if (n > 1) {
    const double var = (sup_y4 - sup_y2 * out.lhs) / static_cast<double>(n - 1);
    out.lhs_se = std::sqrt(std::max(0.0, var) * inv);
  }
  out.rhs = 2.0 * (growth * (xi2 + f0) * inv + (growth + 0.25) * (z2 + u2) * inv);
  out.satisfied = out.lhs <= out.rhs * 1.05;
  return out;
}

}  // namespace dbsde
