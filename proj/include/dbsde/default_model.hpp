#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
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

/// Marker for "no default before the horizon" (tau beyond every grid node).
inline constexpr double kNoDefault = std::numeric_limits<double>::infinity();

/// Deterministic default intensity under the immersion property: the
/// conditional law of tau given the Brownian information is the unconditional
/// one, F_t = 1 - exp(-Lambda_t).
struct IntensityModel {
  ScalarCurve lambda{0.0};
  double bound = 1.0;  // K1

  static IntensityModel constant(double rate, double bound = 1.0) {
    return IntensityModel{ScalarCurve(rate), bound};
  }

  std::vector<std::string> violations(double horizon) const {
    std::vector<std::string> out;
    for (const auto& [t, v] : lambda.pieces()) {
      if (t > horizon) break;
      std::ostringstream os;
      if (!std::isfinite(v) || v < 0.0) {
        os << "intensity must be non-negative at t=" << t;
        out.push_back(os.str());
      } else if (v > bound) {
        os << "intensity " << v << " exceeds bound K1=" << bound << " at t=" << t;
        out.push_back(os.str());
      }
    }
    return out;
  }
};

/// Lambda_t = ∫_0^t lambda_s ds.
inline double cumulative_hazard(const IntensityModel& m, double t) { return m.lambda.integral(0.0, t); }

inline double survival_probability(const IntensityModel& m, double t) {
  return std::exp(-cumulative_hazard(m, t));
}

/// F_t = P(tau <= t | F_t).
inline double default_probability(const IntensityModel& m, double t) {
  return -std::expm1(-cumulative_hazard(m, t));
}

/// Density of tau: alpha(theta) = lambda(theta) exp(-Lambda_theta).
inline double density(const IntensityModel& m, double theta) {
  return m.lambda(theta) * std::exp(-cumulative_hazard(m, theta));
}

/// Smallest t with Lambda_t = level, or kNoDefault if the hazard never gets there.
inline double inverse_hazard(const IntensityModel& m, double level) {
  const auto& pieces = m.lambda.pieces();
  double acc = 0.0;
  for (std::size_t j = 0; j < pieces.size(); ++j) {
    const double start = pieces[j].first;
    const double rate = pieces[j].second;
    const bool last = j + 1 == pieces.size();
    const double len = last ? std::numeric_limits<double>::infinity() : pieces[j + 1].first - start;
    if (rate > 0.0) {
      const double need = (level - acc) / rate;
      if (need <= len) return start + need;
      acc += rate * len;
    }
  }
  return kNoDefault;
}

/// Intensity (1 + psi) lambda of tau under the martingale measure P^psi.
inline IntensityModel intensity_under_measure(const IntensityModel& m, double psi) {
  if (!(psi > -1.0)) {
    std::ostringstream os;
    os << "measure change requires psi > -1 (got " << psi << ")";
    throw InvalidMeasureChange(os.str());
  }
  std::vector<ScalarCurve::Piece> scaled;
  for (const auto& [t, v] : m.lambda.pieces()) scaled.emplace_back(t, (1.0 + psi) * v);
  return IntensityModel{ScalarCurve(std::move(scaled)), (1.0 + psi) * m.bound};
}

/// Default times, node indicators H_k = 1{tau <= t_k} and compensated
/// increments dM_k = dH_k - 1{t_k < tau} lambda(t_k) dt_k, path-major.
struct DefaultPaths {
  std::size_t n_paths = 0;
  std::size_t steps = 0;
  std::vector<double> tau;
  std::vector<std::uint8_t> H;  // [path][node]
  std::vector<double> dM;       // [path][step]

  std::uint8_t h(std::size_t path, std::size_t k) const { return H[path * (steps + 1) + k]; }
  double dm(std::size_t path, std::size_t k) const { return dM[path * steps + k]; }
  /// Whether the path is still alive (tau > t_k) at node k.
  bool alive(std::size_t path, std::size_t k) const { return h(path, k) == 0; }
};

/// Fills H and dM for known default times.
inline DefaultPaths default_paths_from_tau(const IntensityModel& m, const TimeGrid& grid,
                                           std::vector<double> tau) {
  const std::size_t n = tau.size();
  const std::size_t N = grid.steps();
  DefaultPaths out;
  out.n_paths = n;
  out.steps = N;
  out.tau = std::move(tau);
  out.H.assign(n * (N + 1), 0);
  out.dM.assign(n * N, 0.0);
  std::vector<double> comp(N);
  for (std::size_t k = 0; k < N; ++k) comp[k] = m.lambda(grid[k]) * grid.dt(k);
  parallel::for_each_index(n, [&](std::size_t p) {
    const double t_def = out.tau[p];
    auto* h = &out.H[p * (N + 1)];
    auto* dm = &out.dM[p * N];
    for (std::size_t k = 0; k <= N; ++k) h[k] = t_def <= grid[k] ? 1 : 0;
    for (std::size_t k = 0; k < N; ++k) {
      const bool pre = grid[k] < t_def;
      dm[k] = static_cast<double>(h[k + 1] - h[k]) - (pre ? comp[k] : 0.0);
    }
  });
  return out;
}

/// tau = Lambda^{-1}(E) with E standard exponential drawn from a stream that
/// is independent of the Brownian one.
inline DefaultPaths sample_default(const IntensityModel& m, const TimeGrid& grid, std::size_t n_paths,
                                   std::uint64_t seed) {
  std::vector<double> tau(n_paths);
  const double horizon = grid.horizon();
  const double hazard_T = cumulative_hazard(m, horizon);
  parallel::for_each_index(n_paths, [&](std::size_t p) {
    auto engine = path_engine(seed, Stream::DefaultClock, p);
    std::exponential_distribution<double> clock(1.0);
    double e = clock(engine);
    while (!(e > 0.0)) e = clock(engine);
    tau[p] = e > hazard_T ? kNoDefault : std::min(inverse_hazard(m, e), horizon);
  });
  return default_paths_from_tau(m, grid, std::move(tau));
}

}  // namespace dbsde
