#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <optional>
#include <cmath>
#include <cstddef>
#include <span>
#include <sstream>
#include <vector>

#include "dbsde/error.hpp"
#include "dbsde/parallel.hpp"

namespace dbsde {

/// Monomials of total degree <= `degree` in `dim` variables, constant first.
class PolynomialBasis {
 public:
  PolynomialBasis(std::size_t dim, std::size_t degree) : dim_(dim), degree_(degree) {
    std::vector<unsigned> current(dim, 0);
    for (std::size_t total = 0; total <= degree; ++total) enumerate(current, 0, total);
  }

  std::size_t size() const noexcept { return exponents_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t degree() const noexcept { return degree_; }

  /// Evaluates every monomial at x into out (size() entries).
  void evaluate(std::span<const double> x, std::span<double> out) const {
    for (std::size_t j = 0; j < exponents_.size(); ++j) {
      double v = 1.0;
      for (std::size_t i = 0; i < dim_; ++i)
        for (unsigned e = 0; e < exponents_[j][i]; ++e) v *= x[i];
      out[j] = v;
    }
  }

  /// Number of monomials of total degree <= d in n variables.
  static std::size_t count(std::size_t n, std::size_t d) {
    std::size_t c = 1;  // binomial(n + d, d)
    for (std::size_t j = 1; j <= d; ++j) c = c * (n + j) / j;
    return c;
  }

 private:
  void enumerate(std::vector<unsigned>& cur, std::size_t pos, std::size_t remaining) {
    if (pos + 1 == dim_ || dim_ == 0) {
      if (dim_ > 0) cur[pos] = static_cast<unsigned>(remaining);
      exponents_.push_back(cur);
      if (dim_ > 0) cur[pos] = 0;
      return;
    }
    for (std::size_t e = remaining + 1; e-- > 0;) {
      cur[pos] = static_cast<unsigned>(e);
      enumerate(cur, pos + 1, remaining - e);
    }
    cur[pos] = 0;
  }

  std::size_t dim_;
  std::size_t degree_;
  std::vector<std::vector<unsigned>> exponents_;
};

/// Ridge-stabilised least-squares projector on a polynomial basis of
/// standardised features. The design is factorised once and reused for any
/// number of targets.
///
/// The ridge term eps * tr(G)/p keeps the factorisation positive definite for
/// nearly collinear designs; two refinement sweeps against the unregularised
/// normal equations then remove the shrinkage in every well-conditioned
/// direction, so in-span targets are reproduced to rounding error.
class LeastSquares {
 public:
  /// `features` holds n rows of `dim` values (row-major).
  LeastSquares(std::span<const double> features, std::size_t n, std::size_t dim, std::size_t degree,
               double ridge = 1e-8, std::size_t min_samples_per_basis = 10)
      : n_(n), ridge_(ridge) {
    if (n == 0) throw SingularRegression("regression on an empty sample");
    standardise(features, dim);
    PolynomialBasis basis(active_.size(), degree);
    p_ = basis.size();
    if (n < min_samples_per_basis * p_) {
      std::ostringstream os;
      os << "regression needs at least " << min_samples_per_basis
         << " samples per basis function (n=" << n << ", p=" << p_ << ")";
      throw PreconditionError(os.str());
    }
    design_.resize(n * p_);
    std::vector<double> z(active_.size());
    for (std::size_t row = 0; row < n; ++row) {
      for (std::size_t a = 0; a < active_.size(); ++a)
        z[a] = (features[row * dim + active_[a]] - mean_[a]) / scale_[a];
      basis.evaluate(z, std::span<double>(&design_[row * p_], p_));
    }
    gram_ = accumulate_gram();
    factorise();
  }

  std::size_t basis_size() const noexcept { return p_; }
  std::size_t samples() const noexcept { return n_; }

  Eigen::VectorXd coefficients(std::span<const double> targets) const {
    return refine(ldlt_, gram_, cross(targets));
  }

  void fit(std::span<const double> targets, std::span<double> fitted) const {
    evaluate(coefficients(targets), fitted);
  }

  /// Weighted fit: minimises sum_i w_i (y_i - phi_i beta)^2 given the weights
  /// w and the products w*y, so that y need not be formed where w vanishes.
  void fit_weighted(std::span<const double> weights, std::span<const double> weighted_targets,
                    std::span<double> fitted) const {
    if (weights.size() != n_) throw PreconditionError("regression weight size mismatch");
    const Eigen::MatrixXd g = accumulate_gram(weights);
    Eigen::LDLT<Eigen::MatrixXd> ldlt;
    factorise(g, ldlt);
    evaluate(refine(ldlt, g, cross(weighted_targets)), fitted);
  }

  std::vector<double> fit(std::span<const double> targets) const {
    std::vector<double> out(n_);
    fit(targets, out);
    return out;
  }

 private:
  void standardise(std::span<const double> features, std::size_t dim) {
    for (std::size_t i = 0; i < dim; ++i) {
      double mean = 0.0;
      for (std::size_t row = 0; row < n_; ++row) mean += features[row * dim + i];
      mean /= static_cast<double>(n_);
      double var = 0.0;
      for (std::size_t row = 0; row < n_; ++row) {
        const double d = features[row * dim + i] - mean;
        var += d * d;
      }
      const double sd = std::sqrt(var / static_cast<double>(n_));
      if (!std::isfinite(mean) || !std::isfinite(sd))
        throw SingularRegression("non-finite regression feature");
      // A feature with no spread carries no information beyond the intercept.
      if (sd > 1e-10 * (1.0 + std::abs(mean))) {
        active_.push_back(i);
        mean_.push_back(mean);
        scale_.push_back(sd);
      }
    }
  }

  Eigen::MatrixXd accumulate_gram(std::span<const double> weights = {}) const {
    const std::size_t chunks = parallel::chunk_count(n_);
    std::vector<Eigen::MatrixXd> partial(chunks, Eigen::MatrixXd::Zero(p_, p_));
    parallel::for_chunks(n_, [&](std::size_t c, std::size_t b, std::size_t e) {
      auto& g = partial[c];
      for (std::size_t row = b; row < e; ++row) {
        const double* phi = &design_[row * p_];
        const double w = weights.empty() ? 1.0 : weights[row];
        for (std::size_t i = 0; i < p_; ++i)
          for (std::size_t j = 0; j <= i; ++j) g(i, j) += w * phi[i] * phi[j];
      }
    });
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p_, p_);
    for (const auto& part : partial) g += part;
    for (std::size_t i = 0; i < p_; ++i)
      for (std::size_t j = 0; j < i; ++j) g(j, i) = g(i, j);
    return g;
  }

  Eigen::VectorXd cross(std::span<const double> targets) const {
    if (targets.size() != n_) throw PreconditionError("regression target size mismatch");
    const std::size_t chunks = parallel::chunk_count(n_);
    std::vector<Eigen::VectorXd> partial(chunks, Eigen::VectorXd::Zero(p_));
    parallel::for_chunks(n_, [&](std::size_t c, std::size_t b, std::size_t e) {
      auto& acc = partial[c];
      for (std::size_t row = b; row < e; ++row) {
        const double* phi = &design_[row * p_];
        for (std::size_t j = 0; j < p_; ++j) acc[static_cast<Eigen::Index>(j)] += phi[j] * targets[row];
      }
    });
    Eigen::VectorXd out = Eigen::VectorXd::Zero(p_);
    for (const auto& part : partial) out += part;
    return out;
  }

  void factorise() { factorise(gram_, ldlt_); }

  void factorise(const Eigen::MatrixXd& gram, Eigen::LDLT<Eigen::MatrixXd>& ldlt) const {
    const double trace = gram.trace();
    if (!(trace > 0.0) || !gram.allFinite()) throw SingularRegression("degenerate regression design");
    Eigen::MatrixXd reg = gram;
    reg.diagonal().array() += ridge_ * trace / static_cast<double>(p_);
    ldlt.compute(reg);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SingularRegression("regression design is rank deficient beyond ridge rescue");
    const auto d = ldlt.vectorD();
    const double dmax = d.maxCoeff();
    if (!(d.minCoeff() > 1e-14 * dmax))
      throw SingularRegression("regression design is rank deficient beyond ridge rescue");
  }

  static Eigen::VectorXd refine(const Eigen::LDLT<Eigen::MatrixXd>& ldlt, const Eigen::MatrixXd& gram,
                                const Eigen::VectorXd& b) {
    Eigen::VectorXd x = ldlt.solve(b);
    for (int sweep = 0; sweep < 2; ++sweep) x += ldlt.solve(b - gram * x);
    if (!x.allFinite()) throw SingularRegression("regression produced non-finite coefficients");
    return x;
  }

  void evaluate(const Eigen::VectorXd& beta, std::span<double> fitted) const {
    for (std::size_t row = 0; row < n_; ++row) {
      double v = 0.0;
      const double* phi = &design_[row * p_];
      for (std::size_t j = 0; j < p_; ++j) v += phi[j] * beta[static_cast<Eigen::Index>(j)];
      fitted[row] = v;
    }
  }

  std::size_t n_;
  double ridge_;
  std::size_t p_ = 0;
  std::vector<std::size_t> active_;
  std::vector<double> mean_;
  std::vector<double> scale_;
  std::vector<double> design_;
  Eigen::MatrixXd gram_;
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;
};

/// Local regression: the sample is split into equal-probability cells along
/// each state coordinate (tensor product of marginal quantile bins) and a
/// separate LeastSquares fit runs in each cell. With one cell per dimension
/// this is the global polynomial fit.
class PiecewiseLeastSquares {
 public:
  PiecewiseLeastSquares(std::span<const double> features, std::size_t n, std::size_t dim, std::size_t degree,
                        std::size_t cells_per_dim, double ridge = 1e-8)
      : n_(n), cell_of_(n, 0) {
    if (n == 0) throw SingularRegression("regression on an empty sample");
    cells_per_dim = std::max<std::size_t>(1, cells_per_dim);
    std::size_t stride = 1;
    std::vector<double> column(n);
    for (std::size_t i = 0; i < dim; ++i) {
      for (std::size_t row = 0; row < n; ++row) column[row] = features[row * dim + i];
      std::vector<double> sorted = column;
      std::sort(sorted.begin(), sorted.end());
      if (!(sorted.back() > sorted.front())) continue;  // no spread: single bin
      std::vector<double> cuts;
      for (std::size_t c = 1; c < cells_per_dim; ++c) {
        const double q = sorted[std::min(n - 1, c * n / cells_per_dim)];
        if (cuts.empty() || q > cuts.back()) cuts.push_back(q);
      }
      for (std::size_t row = 0; row < n; ++row) {
        const auto bin = static_cast<std::size_t>(std::upper_bound(cuts.begin(), cuts.end(), column[row]) - cuts.begin());
        cell_of_[row] += bin * stride;
      }
      stride *= cuts.size() + 1;
    }
    members_.assign(stride, {});
    for (std::size_t row = 0; row < n; ++row) members_[cell_of_[row]].push_back(row);

    std::vector<double> local;
    for (const auto& rows : members_) {
      if (rows.empty()) {
        fits_.emplace_back(std::nullopt);
        continue;
      }
      local.resize(rows.size() * dim);
      for (std::size_t a = 0; a < rows.size(); ++a)
        for (std::size_t i = 0; i < dim; ++i) local[a * dim + i] = features[rows[a] * dim + i];
      std::size_t d = degree;
      while (d > 0 && rows.size() < 10 * PolynomialBasis::count(dim, d)) --d;
      fits_.emplace_back(std::in_place, local, rows.size(), dim, d, ridge, rows.size() >= 10 ? 10 : 1);
    }
  }

  std::size_t cells() const noexcept { return members_.size(); }

  void fit(std::span<const double> targets, std::span<double> fitted) const {
    if (targets.size() != n_) throw PreconditionError("regression target size mismatch");
    std::vector<double> local_t, local_f;
    for (std::size_t c = 0; c < members_.size(); ++c) {
      const auto& rows = members_[c];
      if (rows.empty()) continue;
      local_t.resize(rows.size());
      local_f.resize(rows.size());
      for (std::size_t a = 0; a < rows.size(); ++a) local_t[a] = targets[rows[a]];
      fits_[c]->fit(local_t, local_f);
      for (std::size_t a = 0; a < rows.size(); ++a) fitted[rows[a]] = local_f[a];
    }
  }

  std::vector<double> fit(std::span<const double> targets) const {
    std::vector<double> out(n_);
    fit(targets, out);
    return out;
  }

  std::vector<double> fit_weighted(std::span<const double> weights, std::span<const double> weighted_targets) const {
    if (weights.size() != n_ || weighted_targets.size() != n_)
      throw PreconditionError("regression target size mismatch");
    std::vector<double> out(n_), local_w, local_t, local_f;
    for (std::size_t c = 0; c < members_.size(); ++c) {
      const auto& rows = members_[c];
      if (rows.empty()) continue;
      local_w.resize(rows.size());
      local_t.resize(rows.size());
      local_f.resize(rows.size());
      for (std::size_t a = 0; a < rows.size(); ++a) {
        local_w[a] = weights[rows[a]];
        local_t[a] = weighted_targets[rows[a]];
      }
      fits_[c]->fit_weighted(local_w, local_t, local_f);
      for (std::size_t a = 0; a < rows.size(); ++a) out[rows[a]] = local_f[a];
    }
    return out;
  }

 private:
  std::size_t n_;
  std::vector<std::size_t> cell_of_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::optional<LeastSquares>> fits_;
};

/// Coefficients and fitted values of one projection.
struct RegressionResult {
  Eigen::VectorXd coefficients;
  std::vector<double> fitted;
};

/// Empirical conditional expectation of `targets` given `features`.
inline RegressionResult regress(std::span<const double> features, std::size_t dim,
                                std::span<const double> targets, std::size_t degree, double ridge = 1e-8) {
  if (dim == 0 || features.size() != targets.size() * dim)
    throw PreconditionError("feature/target shape mismatch");
  LeastSquares ls(features, targets.size(), dim, degree, ridge);
  RegressionResult out;
  out.coefficients = ls.coefficients(targets);
  out.fitted = ls.fit(targets);
  return out;
}

}  // namespace dbsde
