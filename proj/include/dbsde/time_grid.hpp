#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dbsde/error.hpp"

namespace dbsde {

/// Discretisation 0 = t_0 < ... < t_N = T of the horizon.
class TimeGrid {
 public:
  explicit TimeGrid(std::vector<double> nodes) : nodes_(std::move(nodes)) {
    if (auto why = violation(nodes_); !why.empty()) throw InvalidGrid(why);
  }

  static TimeGrid uniform(double horizon, std::size_t steps) {
    if (steps == 0) throw InvalidGrid("TimeGrid: N >= 1 required");
    if (!(horizon > 0.0)) throw InvalidGrid("TimeGrid: horizon must be positive");
    std::vector<double> nodes(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k)
      nodes[k] = horizon * static_cast<double>(k) / static_cast<double>(steps);
    nodes.back() = horizon;
    return TimeGrid(std::move(nodes));
  }

  /// Empty string when `nodes` form a valid grid, else the violated invariant.
  static std::string violation(const std::vector<double>& nodes) {
    if (nodes.size() < 2) return "TimeGrid invariant violated: need N >= 1 (at least two nodes)";
    if (nodes.front() != 0.0) return "TimeGrid invariant violated: first node must be 0";
    for (std::size_t k = 1; k < nodes.size(); ++k) {
      if (!std::isfinite(nodes[k]) || !(nodes[k] > nodes[k - 1]))
        return "TimeGrid invariant violated: nodes must be strictly increasing (node " +
               std::to_string(k) + ")";
    }
    return {};
  }

  std::size_t steps() const noexcept { return nodes_.size() - 1; }
  double horizon() const noexcept { return nodes_.back(); }
  double operator[](std::size_t k) const { return nodes_[k]; }
  double dt(std::size_t k) const { return nodes_[k + 1] - nodes_[k]; }
  std::span<const double> nodes() const noexcept { return nodes_; }

  bool contains(double t, double tol = 1e-12) const {
    for (double x : nodes_)
      if (std::abs(x - t) <= tol * std::max(1.0, std::abs(t))) return true;
    return false;
  }

  /// Index of the step (t_k, t_{k+1}] that contains t, for 0 < t <= T.
  std::size_t step_containing(double t) const {
    std::size_t lo = 0, hi = steps();
    while (hi - lo > 1) {
      const std::size_t mid = (lo + hi) / 2;
      if (nodes_[mid] < t) lo = mid; else hi = mid;
    }
    return lo;
  }

  /// Grid made of every `factor`-th node; `factor` must divide N.
  TimeGrid coarsen(std::size_t factor) const {
    if (factor == 0 || steps() % factor != 0)
      throw InvalidGrid("TimeGrid: coarsening factor must divide the number of steps");
    std::vector<double> nodes;
    for (std::size_t k = 0; k <= steps(); k += factor) nodes.push_back(nodes_[k]);
    return TimeGrid(std::move(nodes));
  }

  bool operator==(const TimeGrid&) const = default;

 private:
  std::vector<double> nodes_;
};

}  // namespace dbsde
