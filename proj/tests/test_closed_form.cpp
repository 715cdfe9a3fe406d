#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dbsde/closed_form.hpp"
#include "support.hpp"

using namespace dbsde;

namespace {

LyonCase make_case(double r, double lambda, double psi, PayoffSpec claim, double vol = 0.2) {
  return LyonCase{MarketParams::constant(1.0, r, r + 0.03, vol, 100.0), IntensityModel::constant(lambda),
                  MeasureChange{psi}, std::move(claim)};
}

// Risk-neutral call value by direct quadrature of the lognormal density, with
// no use of the normal CDF.
double call_by_quadrature(double spot, double strike, double r, double vol, double tte) {
  const double sd = vol * std::sqrt(tte);
  const double drift = std::log(spot) + (r - 0.5 * vol * vol) * tte;
  const int n = 20000;
  // start at the kink of the payoff so the integrand is smooth
  const double lo = (std::log(strike) - drift) / sd, hi = 12.0, h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + i * h;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    const double payoff = std::max(std::exp(drift + sd * x) - strike, 0.0);
    acc += w * payoff * std::exp(-0.5 * x * x);
  }
  return std::exp(-r * tte) * acc * h / 3.0 / std::sqrt(2.0 * M_PI);
}

}  // namespace

TEST(BlackScholes, MatchesQuadrature) {
  for (double spot : {80.0, 100.0, 125.0})
    for (double tte : {0.25, 1.0})
      EXPECT_NEAR(bs::call(spot, 100.0, 0.03, 0.2, tte).value, call_by_quadrature(spot, 100.0, 0.03, 0.2, tte), 1e-8);
  EXPECT_NEAR(call_by_quadrature(100.0, 100.0, 0.0, 0.2, 1.0), 7.965567455405798, 1e-8);
}

TEST(BlackScholes, DeltaIsPriceSlope) {
  const double h = 1e-4;
  const double fd = (bs::call(100.0 + h, 95.0, 0.02, 0.3, 0.7).value - bs::call(100.0 - h, 95.0, 0.02, 0.3, 0.7).value) /
                    (2.0 * h);
  EXPECT_NEAR(bs::call(100.0, 95.0, 0.02, 0.3, 0.7).delta, fd, 1e-7);
}

TEST(LyonValue, SurvivalClaim) {
  const auto t = lyon_value(make_case(0.0, 0.1, 0.0, PayoffSpec::constant(1.0)), 0.0, 100.0);
  EXPECT_NEAR(t.y_pre, 0.904837418035960, 1e-14);
  EXPECT_NEAR(t.u, -t.y_pre, 1e-15);
  EXPECT_EQ(t.z, 0.0);
}

TEST(LyonValue, CompensationOnly) {
  const auto t = lyon_value(make_case(0.0, 0.1, 0.0, PayoffSpec::constant(0.0, ScalarCurve(1.0))), 0.0, 100.0);
  EXPECT_NEAR(t.y_pre, 0.095162581964040, 1e-14);
  EXPECT_NEAR(t.u, 1.0 - 0.095162581964040, 1e-14);
}

TEST(LyonValue, BlackScholesLimit) {
  const auto t = lyon_value(make_case(0.0, 0.0, 0.0, PayoffSpec::call(100.0)), 0.0, 100.0);
  EXPECT_NEAR(t.y_pre, 7.965567455405798, 1e-9);
  EXPECT_NEAR(t.y_pre, call_by_quadrature(100.0, 100.0, 0.0, 0.2, 1.0), 1e-8);
}

TEST(LyonValue, SurvivalDiscountedCall) {
  const auto t = lyon_value(make_case(0.0, 0.1, 0.0, PayoffSpec::call(100.0)), 0.0, 100.0);
  EXPECT_NEAR(t.y_pre, std::exp(-0.1) * 7.965567455405798, 1e-9);
  EXPECT_NEAR(t.z, std::exp(-0.1) * bs::call(100.0, 100.0, 0.0, 0.2, 1.0).delta * 0.2 * 100.0, 1e-12);
}

TEST(LyonValue, UPlusYIsCompensation) {
  const auto c = make_case(0.02, 0.3, 0.4, PayoffSpec::call(90.0, ScalarCurve({{0.0, 6.0}, {0.4, 1.5}})));
  for (double t : {0.0, 0.1, 0.39, 0.4, 0.7, 0.99}) {
    const auto v = lyon_value(c, t, 97.0);
    EXPECT_NEAR(v.u + v.y_pre, c.claim.compensation_at(t), 1e-13);
  }
}

TEST(LyonValue, DecreasesInPsiForSurvivalClaim) {
  double last = 2.0;
  for (double psi : {-0.9, -0.5, 0.0, 0.5, 2.0, 10.0}) {
    const double y = lyon_value(make_case(0.01, 0.1, psi, PayoffSpec::constant(1.0)), 0.0, 100.0).y_pre;
    EXPECT_LT(y, last);
    last = y;
  }
}

TEST(LyonValue, ContinuousAsIntensityVanishes) {
  const double bsv = lyon_value(make_case(0.01, 0.0, 0.0, PayoffSpec::call(100.0)), 0.0, 100.0).y_pre;
  double previous = 1e9;
  for (double lambda : {1e-2, 1e-4, 0.0}) {
    const double gap = std::abs(lyon_value(make_case(0.01, lambda, 0.0, PayoffSpec::call(100.0)), 0.0, 100.0).y_pre - bsv);
    EXPECT_LE(gap, lambda * bsv * 1.0001);
    EXPECT_LT(gap, previous);
    previous = gap;
  }
  EXPECT_EQ(previous, 0.0);
}

TEST(LyonValue, MatchesMonteCarloUnderPricingMeasure) {
  // Simulate tau at intensity (1+psi) lambda and S with drift r, then average
  // the discounted payoff. Independent of the formula above.
  const double r = 0.03, lambda = 0.08, psi = 0.5;
  const auto claim = PayoffSpec::call(95.0, ScalarCurve({{0.0, 4.0}, {0.5, 2.0}}));
  const auto c = make_case(r, lambda, psi, claim, 0.25);
  const auto q_market = MarketParams::constant(1.0, r, r, 0.25, 100.0);
  const auto q_model = intensity_under_measure(IntensityModel::constant(lambda), psi);
  const auto sc = build_scenarios(q_market, q_model, TimeGrid::uniform(1.0, 2), 200000, 77);
  std::vector<double> pv(sc.n_paths());
  for (std::size_t p = 0; p < sc.n_paths(); ++p) pv[p] = discounted_payoff(claim, sc, p, q_market);
  const auto m = dbsde::testing::mean_se(pv);
  EXPECT_LE(std::abs(m.mean - lyon_value(c, 0.0, 100.0).y_pre), 3.0 * m.se);
}

TEST(LyonCase, UnsupportedShapes) {
  EXPECT_THROW(lyon_value(make_case(0.0, 0.1, 0.0, PayoffSpec::put(100.0)), 0.0, 100.0), UnsupportedCase);
  auto stepped = make_case(0.0, 0.1, 0.0, PayoffSpec::call(100.0));
  stepped.model.lambda = ScalarCurve({{0.0, 0.1}, {0.5, 0.2}});
  EXPECT_THROW(lyon_value(stepped, 0.0, 100.0), UnsupportedCase);
  auto two = make_case(0.0, 0.1, 0.0, PayoffSpec::call(100.0));
  two.params.dim = 2;
  EXPECT_FALSE(two.supported());
  EXPECT_THROW(lyon_value(make_case(0.0, 0.1, 0.0, PayoffSpec::call(100.0)), 1.0, 100.0), PreconditionError);
}

TEST(LyonVsSolver, ZeroClaim) {
  const auto c = make_case(0.01, 0.2, 0.0, PayoffSpec::constant(0.0));
  const auto sc = build_scenarios(c.params, c.model, TimeGrid::uniform(1.0, 10), 2000, 1);
  const auto sol = solve_backward(BsdeProblem{c.claim, defaultable_driver(c.params, c.model, c.mc), sc.grid}, sc,
                                  SolverConfig{});
  const auto rep = lyon_vs_solver(c, sol, sc);
  EXPECT_EQ(rep.y0_abs, 0.0);
  EXPECT_EQ(rep.y.sup_abs, 0.0);
  EXPECT_EQ(rep.z.sup_abs, 0.0);
  EXPECT_EQ(rep.u.sup_abs, 0.0);
}

TEST(LyonVsSolver, SurvivalClaim) {
  const auto c = make_case(0.0, 0.1, 0.0, PayoffSpec::constant(1.0));
  const auto sc = build_scenarios(c.params, c.model, TimeGrid::uniform(1.0, 50), 100000, 2);
  const auto sol = solve_backward(BsdeProblem{c.claim, defaultable_driver(c.params, c.model, c.mc), sc.grid}, sc,
                                  SolverConfig{});
  const auto rep = lyon_vs_solver(c, sol, sc);
  EXPECT_LE(rep.y0_abs, 5e-3);
  EXPECT_LE(rep.u.sup_abs, 5e-3);
}

TEST(LyonVsSolver, DefaultableCall) {
  const auto c = make_case(0.0, 0.1, 0.0, PayoffSpec::call(100.0));
  const auto sc = build_scenarios(c.params, c.model, TimeGrid::uniform(1.0, 50), 100000, 3);
  const auto sol = solve_backward(BsdeProblem{c.claim, defaultable_driver(c.params, c.model, c.mc), sc.grid}, sc,
                                  SolverConfig{});
  const auto rep = lyon_vs_solver(c, sol, sc);
  EXPECT_LE(rep.y0_rel, 0.01);
  EXPECT_LE(rep.y.rms_rel, 0.02);
  EXPECT_LE(rep.z.rms_rel, 0.1);
}

TEST(LyonVsSolver, Mismatch) {
  const auto c = make_case(0.0, 0.1, 0.0, PayoffSpec::constant(1.0));
  const auto sc = build_scenarios(c.params, c.model, TimeGrid::uniform(1.0, 10), 100, 2);
  EXPECT_THROW(lyon_vs_solver(c, BsdeSolution::zeros(100, 5, 1), sc), ConfigMismatch);
}
