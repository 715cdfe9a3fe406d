#pragma once

#include <cstdint>

#include "dbsde/default_model.hpp"
#include "dbsde/market_model.hpp"
#include "dbsde/time_grid.hpp"

namespace dbsde {

/// Everything simulated on one grid: Brownian increments, asset values and the
/// default clock. Paths are independent and identically indexed across parts.
struct ScenarioSet {
  TimeGrid grid;
  AssetPaths assets;
  DefaultPaths defaults;

  std::size_t n_paths() const noexcept { return assets.n_paths; }
  std::size_t steps() const noexcept { return grid.steps(); }
  std::size_t dim() const noexcept { return assets.dim; }
  bool alive(std::size_t path, std::size_t k) const { return defaults.alive(path, k); }
  double tau(std::size_t path) const { return defaults.tau[path]; }
  bool defaults_before_horizon(std::size_t path) const { return defaults.tau[path] <= grid.horizon(); }
};

inline ScenarioSet build_scenarios(const MarketParams& params, const IntensityModel& model,
                                   const TimeGrid& grid, std::size_t n_paths, std::uint64_t seed) {
  require_breakpoints_on_grid(model.lambda.breakpoints(), grid, "intensity");
  auto assets = simulate_assets(params, grid, n_paths, seed);
  auto defaults = sample_default(model, grid, n_paths, seed);
  return ScenarioSet{grid, std::move(assets), std::move(defaults)};
}

/// The same paths observed on every `factor`-th node. Exact log-normal
/// stepping makes the coarse asset values identical to a direct simulation
/// driven by the summed increments, so this gives common random numbers
/// across grid refinements.
inline ScenarioSet coarsen(const ScenarioSet& fine, const IntensityModel& model, std::size_t factor) {
  TimeGrid grid = fine.grid.coarsen(factor);
  const std::size_t n = fine.n_paths();
  const std::size_t m = fine.dim();
  const std::size_t N = grid.steps();
  const std::size_t Nf = fine.steps();
  require_breakpoints_on_grid(model.lambda.breakpoints(), grid, "intensity");

  AssetPaths assets;
  assets.n_paths = n;
  assets.steps = N;
  assets.dim = m;
  assets.dW.assign(n * N * m, 0.0);
  assets.S.assign(n * (N + 1) * m, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t k = 0; k <= N; ++k)
      for (std::size_t i = 0; i < m; ++i)
        assets.S[(p * (N + 1) + k) * m + i] = fine.assets.S[(p * (Nf + 1) + k * factor) * m + i];
    for (std::size_t k = 0; k < N; ++k)
      for (std::size_t j = 0; j < factor; ++j)
        for (std::size_t i = 0; i < m; ++i)
          assets.dW[(p * N + k) * m + i] += fine.assets.dW[(p * Nf + k * factor + j) * m + i];
  }
  auto defaults = default_paths_from_tau(model, grid, fine.defaults.tau);
  return ScenarioSet{std::move(grid), std::move(assets), std::move(defaults)};
}

}  // namespace dbsde
