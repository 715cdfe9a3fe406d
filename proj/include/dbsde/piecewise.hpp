#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace dbsde {

/// Right-continuous step function on [0, ∞): the value attached to breakpoint
/// t_j holds on [t_j, t_{j+1}). The first breakpoint must be 0.
template <typename T>
class PiecewiseConstant {
 public:
  using Piece = std::pair<double, T>;

  PiecewiseConstant() = default;
  explicit PiecewiseConstant(T constant) : pieces_{{0.0, std::move(constant)}} {}
  explicit PiecewiseConstant(std::vector<Piece> pieces) : pieces_(std::move(pieces)) {
    if (pieces_.empty()) throw std::invalid_argument("piecewise map needs at least one piece");
    if (pieces_.front().first != 0.0) throw std::invalid_argument("first breakpoint must be at t=0");
    for (std::size_t j = 1; j < pieces_.size(); ++j) {
      if (!(pieces_[j].first > pieces_[j - 1].first))
        throw std::invalid_argument("breakpoints must be strictly increasing");
    }
  }

  const T& operator()(double t) const {
    auto it = std::upper_bound(pieces_.begin(), pieces_.end(), t,
                               [](double x, const Piece& p) { return x < p.first; });
    if (it == pieces_.begin()) return pieces_.front().second;
    return std::prev(it)->second;
  }

  const std::vector<Piece>& pieces() const noexcept { return pieces_; }
  std::size_t size() const noexcept { return pieces_.size(); }
  bool is_constant() const noexcept { return pieces_.size() == 1; }

  std::vector<double> breakpoints() const {
    std::vector<double> out;
    out.reserve(pieces_.size());
    for (const auto& p : pieces_) out.push_back(p.first);
    return out;
  }

  /// Exact ∫_a^b of a scalar step function.
  double integral(double a, double b) const
    requires std::is_arithmetic_v<T>
  {
    if (b < a) return -integral(b, a);
    double total = 0.0;
    for (std::size_t j = 0; j < pieces_.size(); ++j) {
      const double lo = std::max(a, pieces_[j].first);
      const double hi = j + 1 < pieces_.size() ? std::min(b, pieces_[j + 1].first) : b;
      if (hi > lo) total += static_cast<double>(pieces_[j].second) * (hi - lo);
    }
    return total;
  }

  /// Supremum over the pieces of `norm(value)`, restricted to [0, horizon].
  template <typename Norm>
  double sup(double horizon, Norm norm) const {
    double best = 0.0;
    for (const auto& p : pieces_) {
      if (p.first > horizon) break;
      best = std::max(best, static_cast<double>(norm(p.second)));
    }
    return best;
  }

 private:
  std::vector<Piece> pieces_;
};

using ScalarCurve = PiecewiseConstant<double>;

}  // namespace dbsde
