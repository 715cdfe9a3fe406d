#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dbsde/default_model.hpp"
#include "dbsde/scenario.hpp"
#include "support.hpp"

using namespace dbsde;

namespace {

// Composite Simpson rule on [a, b] with n (even) panels.
template <typename F>
double simpson(F f, double a, double b, int n = 2000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

IntensityModel stepped() { return IntensityModel{ScalarCurve({{0.0, 0.2}, {0.5, 0.0}}), 1.0}; }

}  // namespace

TEST(CumulativeHazard, Examples) {
  const auto none = IntensityModel::constant(0.0);
  EXPECT_EQ(cumulative_hazard(none, 0.8), 0.0);
  EXPECT_EQ(default_probability(none, 0.8), 0.0);
  const auto flat = IntensityModel::constant(0.1);
  EXPECT_NEAR(cumulative_hazard(flat, 1.0), 0.1, 1e-15);
  EXPECT_NEAR(survival_probability(flat, 1.0), 0.904837418035960, 1e-15);
  EXPECT_NEAR(cumulative_hazard(stepped(), 1.0), 0.1, 1e-15);
}

TEST(CumulativeHazard, DistributionStaysBelowOne) {
  const IntensityModel big{ScalarCurve({{0.0, 2.0}, {1.0, 10.0}}), 10.0};
  for (double t : {0.0, 0.5, 1.0, 2.0}) EXPECT_LT(default_probability(big, t), 1.0);
}

TEST(Density, Examples) {
  EXPECT_NEAR(density(IntensityModel::constant(0.1), 0.0), 0.1, 1e-15);
  EXPECT_EQ(density(IntensityModel::constant(0.0), 0.7), 0.0);
}

TEST(Density, IntegratesToDistribution) {
  for (const auto& m : {IntensityModel::constant(0.1), stepped(),
                        IntensityModel{ScalarCurve({{0.0, 0.05}, {0.25, 0.3}, {0.75, 0.1}}), 1.0}}) {
    // Integrate piece by piece so the quadrature never straddles a jump of lambda.
    std::vector<double> cuts = m.lambda.breakpoints();
    cuts.push_back(1.0);
    double total = 0.0;
    for (std::size_t j = 0; j + 1 < cuts.size(); ++j) {
      const double hi = std::min(cuts[j + 1], 1.0);
      // lambda is right-continuous, so read the right end as a left limit
      const double last = std::nextafter(hi, 0.0);
      total += simpson([&](double s) { return density(m, std::min(s, last)); }, cuts[j], hi);
    }
    EXPECT_NEAR(total, default_probability(m, 1.0), 1e-10);
  }
  EXPECT_NEAR(simpson([](double s) { return density(IntensityModel::constant(0.1), s); }, 0.0, 1.0),
              1.0 - std::exp(-0.1), 1e-12);
}

TEST(InverseHazard, RoundTrip) {
  const IntensityModel m{ScalarCurve({{0.0, 0.05}, {0.25, 0.0}, {0.75, 0.4}}), 1.0};
  for (double level : {0.001, 0.0125, 0.05, 0.3, 2.0}) {
    const double t = inverse_hazard(m, level);
    EXPECT_NEAR(cumulative_hazard(m, t), level, 1e-13);
  }
  EXPECT_EQ(inverse_hazard(IntensityModel::constant(0.0), 0.5), kNoDefault);
  EXPECT_EQ(inverse_hazard(stepped(), 0.2), kNoDefault);
}

TEST(IntensityUnderMeasure, Examples) {
  EXPECT_EQ(intensity_under_measure(IntensityModel::constant(0.1), 0.0).lambda(0.3), 0.1);
  EXPECT_NEAR(intensity_under_measure(IntensityModel::constant(0.1), 1.0).lambda(0.3), 0.2, 1e-15);
  EXPECT_NEAR(intensity_under_measure(IntensityModel::constant(0.2), -0.5).lambda(0.3), 0.1, 1e-15);
  EXPECT_THROW(intensity_under_measure(IntensityModel::constant(0.2), -1.0), InvalidMeasureChange);
  EXPECT_THROW(intensity_under_measure(IntensityModel::constant(0.2), -3.0), InvalidMeasureChange);
}

TEST(IntensityModel, Violations) {
  EXPECT_TRUE(IntensityModel::constant(0.1).violations(1.0).empty());
  EXPECT_EQ(IntensityModel::constant(-0.1).violations(1.0).size(), 1u);
  EXPECT_EQ((IntensityModel{ScalarCurve(2.0), 1.0}).violations(1.0).size(), 1u);
}

TEST(SampleDefault, NoIntensityNoDefault) {
  const auto d = sample_default(IntensityModel::constant(0.0), TimeGrid::uniform(1.0, 10), 1000, 4);
  for (double t : d.tau) EXPECT_EQ(t, kNoDefault);
  for (double x : d.dM) EXPECT_EQ(x, 0.0);
}

TEST(SampleDefault, DefaultFrequencyMatchesHazard) {
  const auto d = sample_default(IntensityModel::constant(0.1), TimeGrid::uniform(1.0, 50), 100000, 8);
  std::vector<double> hit(d.n_paths);
  for (std::size_t p = 0; p < d.n_paths; ++p) hit[p] = d.tau[p] <= 1.0 ? 1.0 : 0.0;
  const auto m = dbsde::testing::mean_se(hit);
  EXPECT_LE(std::abs(m.mean - 0.095162581964040), 3.0 * m.se);
}

TEST(SampleDefault, CompensatedIncrementsAreCentred) {
  const auto model = IntensityModel{ScalarCurve({{0.0, 0.3}, {0.5, 0.1}}), 1.0};
  const auto g = TimeGrid::uniform(1.0, 20);
  const auto d = sample_default(model, g, 100000, 9);
  std::vector<double> total(d.n_paths, 0.0), step(d.n_paths);
  for (std::size_t k = 0; k < 20; ++k) {
    for (std::size_t p = 0; p < d.n_paths; ++p) {
      step[p] = d.dm(p, k);
      total[p] += step[p];
    }
    const auto m = dbsde::testing::mean_se(step);
    EXPECT_LE(std::abs(m.mean), 4.0 * m.se) << "step " << k;
  }
  const auto m = dbsde::testing::mean_se(total);
  EXPECT_LE(std::abs(m.mean), 3.0 * m.se);
}

TEST(SampleDefault, IndicatorAndIncrementInvariants) {
  const auto model = IntensityModel::constant(0.7);
  const auto g = TimeGrid::uniform(1.0, 10);
  const auto d = sample_default(model, g, 5000, 10);
  for (std::size_t p = 0; p < d.n_paths; ++p) {
    EXPECT_TRUE(d.tau[p] > 0.0);
    EXPECT_TRUE(d.tau[p] <= 1.0 || d.tau[p] == kNoDefault);
    for (std::size_t k = 0; k < 10; ++k) {
      EXPECT_LE(d.h(p, k), d.h(p, k + 1));
      const double expected = double(d.h(p, k + 1) - d.h(p, k)) - (g[k] < d.tau[p] ? 0.7 * g.dt(k) : 0.0);
      EXPECT_DOUBLE_EQ(d.dm(p, k), expected);
      if (d.h(p, k) == 1) EXPECT_EQ(d.dm(p, k), 0.0);
    }
  }
}

TEST(SampleDefault, IndependentOfBrownianStream) {
  const auto params = MarketParams::constant(1.0, 0.0, 0.0, 0.2);
  const auto g = TimeGrid::uniform(1.0, 10);
  const auto sc = build_scenarios(params, IntensityModel::constant(0.5), g, 100000, 21);
  std::vector<double> hit(sc.n_paths()), w(sc.n_paths()), prod(sc.n_paths());
  for (std::size_t p = 0; p < sc.n_paths(); ++p) {
    hit[p] = sc.defaults_before_horizon(p) ? 1.0 : 0.0;
    double sum = 0.0;
    for (std::size_t k = 0; k < 10; ++k) sum += sc.assets.dw(p, k);
    w[p] = sum;
    prod[p] = hit[p] * sum;
  }
  const auto cov = dbsde::testing::mean_se(prod);
  EXPECT_LE(std::abs(cov.mean - dbsde::testing::mean_se(hit).mean * dbsde::testing::mean_se(w).mean), 4.0 * cov.se);
}

TEST(Scenarios, CoarsenMatchesDirectObservation) {
  const auto params = MarketParams::constant(1.0, 0.01, 0.05, 0.3);
  const auto model = IntensityModel::constant(0.4);
  const auto fine = build_scenarios(params, model, TimeGrid::uniform(1.0, 12), 500, 3);
  const auto coarse = coarsen(fine, model, 4);
  EXPECT_EQ(coarse.steps(), 3u);
  for (std::size_t p = 0; p < 500; ++p) {
    EXPECT_EQ(coarse.tau(p), fine.tau(p));
    for (std::size_t k = 0; k <= 3; ++k) {
      EXPECT_EQ(coarse.assets.s(p, k), fine.assets.s(p, 4 * k));
      EXPECT_EQ(coarse.defaults.h(p, k), fine.defaults.h(p, 4 * k));
    }
    double w = 0.0;
    for (std::size_t j = 0; j < 4; ++j) w += fine.assets.dw(p, j);
    EXPECT_NEAR(coarse.assets.dw(p, 0), w, 1e-15);
  }
}
