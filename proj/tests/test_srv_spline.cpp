#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "elastic/simulate.hpp"
#include "elastic/srv_spline.hpp"
#include "support.hpp"

using namespace elastic;

namespace {

SrvSpline spline_of(int degree, std::vector<double> knots, std::initializer_list<std::initializer_list<double>> coefs) {
  SrvSpline s{degree, std::move(knots), Eigen::MatrixXd(static_cast<Eigen::Index>(coefs.size()), 2)};
  Eigen::Index r = 0;
  for (const auto& row : coefs) {
    Eigen::Index c = 0;
    for (double v : row) s.coefficients(r, c++) = v;
    ++r;
  }
  s.validate();
  return s;
}

WeightedSrvSample sample_of(const SrvSpline& s, int points) {
  WeightedSrvSample out;
  for (int i = 0; i < points; ++i) {
    const double t = (i + 0.5) / points;
    out.push_back({t, evaluate(s, t), 1.0});
  }
  return out;
}

}  // namespace

TEST(SrvSplineEvaluate, DegreeZeroIsRightContinuous) {
  const auto s = spline_of(0, {0, 0.5, 1}, {{1, 0}, {0, 1}});
  EXPECT_EQ(evaluate(s, 0.25), Eigen::Vector2d(1, 0));
  EXPECT_EQ(evaluate(s, 0.5), Eigen::Vector2d(0, 1));
  EXPECT_EQ(evaluate(s, 1.0), Eigen::Vector2d(0, 1));
}

TEST(SrvSplineEvaluate, DegreeOneInterpolates) {
  const auto s = spline_of(1, {0, 1}, {{0, 0}, {2, 2}});
  EXPECT_EQ(evaluate(s, 0.5), Eigen::Vector2d(1, 1));
}

TEST(SrvSplineEvaluate, DegreeOneContinuousAtKnots) {
  std::mt19937_64 rng(40);
  const auto s = testing_support::random_spline(rng, 1, 4);
  for (std::size_t k = 1; k + 1 < s.knots.size(); ++k) {
    const double at = s.knots[k];
    EXPECT_TRUE(evaluate(s, at).isApprox(s.coefficients.row(static_cast<Eigen::Index>(k)).transpose(), 1e-15));
    const double below = std::nextafter(at, 0.0);
    EXPECT_LT((evaluate(s, below) - evaluate(s, at)).norm(), 1e-12);
  }
}

TEST(SrvSplineEvaluate, RejectsOutsideUnitInterval) {
  const auto s = spline_of(1, {0, 1}, {{0, 0}, {2, 2}});
  EXPECT_THROW(evaluate(s, -1e-3), ValidationError);
  EXPECT_THROW(evaluate(s, 1.001), ValidationError);
  EXPECT_THROW(evaluate(s, NAN), ValidationError);
}

TEST(SrvSplineValidate, RejectsBadShapes) {
  EXPECT_THROW(spline_of(2, {0, 1}, {{0, 0}, {1, 1}}), ValidationError);
  EXPECT_THROW(spline_of(1, {0, 0.5, 0.5, 1}, {{0, 0}, {1, 1}, {1, 1}, {1, 1}}), ValidationError);
  EXPECT_THROW(spline_of(0, {0, 0.5, 1}, {{0, 0}, {1, 1}, {1, 1}}), ValidationError);
  EXPECT_THROW(spline_of(1, {0.1, 1}, {{0, 0}, {1, 1}}), ValidationError);
}

TEST(FitLeastSquares, WeightedMeans) {
  const WeightedSrvSample equal{{0.2, Eigen::Vector2d(1, 1), 1.0}, {0.8, Eigen::Vector2d(3, 3), 1.0}};
  EXPECT_TRUE(fit_least_squares(equal, 0, {0, 1}).coefficients.isApprox(Eigen::RowVector2d(2, 2)));
  const WeightedSrvSample weighted{{0.2, Eigen::Vector2d(1, 1), 3.0}, {0.8, Eigen::Vector2d(3, 3), 1.0}};
  EXPECT_TRUE(fit_least_squares(weighted, 0, {0, 1}).coefficients.isApprox(Eigen::RowVector2d(1.5, 1.5)));
}

TEST(FitLeastSquares, RecoversSplineInTheSameSpace) {
  std::mt19937_64 rng(41);
  for (int degree : {0, 1})
    for (std::size_t inner : {0u, 3u, 9u}) {
      const auto s = testing_support::random_spline(rng, degree, inner);
      const auto fit = fit_least_squares(sample_of(s, 100), degree, s.knots);
      EXPECT_LT((fit.coefficients - s.coefficients).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(FitLeastSquares, RankDeficientFailsUnlessRidge) {
  const WeightedSrvSample one{{0.1, Eigen::Vector2d(1, 0), 1.0}};
  EXPECT_THROW(fit_least_squares(one, 1, equispaced_knots(2)), FitError);
  const auto fit = fit_least_squares(one, 1, equispaced_knots(2), 1e-8);
  EXPECT_TRUE(fit.coefficients.allFinite());
  EXPECT_THROW(fit_least_squares(one, 1, equispaced_knots(2), -1.0), ValidationError);
  EXPECT_THROW(fit_least_squares({}, 1, equispaced_knots(2)), ValidationError);
}

TEST(SplineNorm, ClosedForms) {
  EXPECT_DOUBLE_EQ(l2_norm_sq(spline_of(0, {0, 0.5, 1}, {{-3, 1}, {1, -3}})), 10.0);
  EXPECT_DOUBLE_EQ(l2_norm_sq(spline_of(1, {0, 1}, {{0, 0}, {1, 0}})), 1.0 / 3.0);
}

TEST(SplineNorm, HomogeneousOfDegreeTwo) {
  std::mt19937_64 rng(42);
  auto s = testing_support::random_spline(rng, 1, 5);
  const double base = l2_norm_sq(s);
  s.coefficients *= -2.5;
  EXPECT_NEAR(l2_norm_sq(s), 6.25 * base, 1e-12 * base);
}

TEST(SplineNorm, DegreeOneAgreesWithQuadrature) {
  std::mt19937_64 rng(43);
  const auto s = testing_support::random_spline(rng, 1, 6);
  // Simpson is exact for quadratics on each knot interval.
  double simpson = 0.0;
  for (std::size_t k = 0; k < s.intervals(); ++k) {
    const double a = s.knots[k];
    const double b = s.knots[k + 1];
    simpson += (b - a) / 6.0 *
               (evaluate(s, a).squaredNorm() + 4.0 * evaluate(s, 0.5 * (a + b)).squaredNorm() +
                evaluate(s, std::nextafter(b, a)).squaredNorm());
  }
  EXPECT_NEAR(l2_norm_sq(s), simpson, 1e-10);
}

TEST(SplineNorm, ArcLengthSrvNormIsLength) {
  std::mt19937_64 rng(44);
  const auto c = testing_support::random_polygon(rng, 12);
  const auto q = srv_transform(c);
  const SrvSpline s{0, q.breaks, q.values};
  EXPECT_NEAR(l2_norm_sq(s), c.length(), 1e-10);
}

TEST(Closedness, SquareAndLine) {
  const Eigen::MatrixXd square = (Eigen::MatrixXd(5, 2) << 0, 0, 1, 0, 1, 1, 0, 1, 0, 0).finished();
  const auto q = srv_transform(ingest_curve(square, std::nullopt, true));
  const SrvSpline s{0, q.breaks, q.values};
  EXPECT_EQ(closedness_penalty(s).value, 0.0);
  const auto line = spline_of(0, {0, 1}, {{1, 0}});
  EXPECT_EQ(closedness_gap(line), Eigen::Vector2d(1, 0));
  EXPECT_EQ(closedness_penalty(line).value, 1.0);
}

TEST(Closedness, GapIsEndpointDifference) {
  std::mt19937_64 rng(45);
  for (int degree : {0, 1}) {
    const auto s = testing_support::random_spline(rng, degree, 4);
    const std::vector<double> ends{0.0, 1.0};
    const auto curve = srv_back_transform(s, Eigen::Vector2d::Zero(), ends);
    EXPECT_LT((closedness_gap(s) - (curve.points.row(1) - curve.points.row(0)).transpose()).norm(), 1e-12);
  }
}

TEST(Closedness, PenaltyGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 20; ++trial) {
    const int degree = trial % 2;
    auto s = testing_support::random_spline(rng, degree, 3 + trial % 4);
    const auto analytic = closedness_penalty(s).gradient;
    const double h = 1e-6;
    double worst = 0.0;
    for (Eigen::Index r = 0; r < s.coefficients.rows(); ++r)
      for (Eigen::Index c = 0; c < s.coefficients.cols(); ++c) {
        auto up = s;
        auto down = s;
        up.coefficients(r, c) += h;
        down.coefficients(r, c) -= h;
        const double fd = (closedness_penalty(up).value - closedness_penalty(down).value) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - analytic(r, c)) / std::max(1.0, std::abs(analytic(r, c))));
      }
    EXPECT_LT(worst, 1e-5) << "trial " << trial;
  }
}

TEST(Closedness, CloseSplineClosesAndBackTransformCloses) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    const auto closed = close_spline(testing_support::random_spline(rng, trial % 2, 6));
    EXPECT_LT(closedness_gap(closed).norm(), 1e-6);
    const auto curve = srv_back_transform(closed, Eigen::Vector2d::Zero(), equispaced_knots(20));
    EXPECT_LT((curve.points.row(0) - curve.points.row(curve.points.rows() - 1)).norm(), 1e-6);
  }
}

TEST(Closedness, OpenSplinesHavePositivePenalty) {
  std::mt19937_64 rng(48);
  for (int trial = 0; trial < 20; ++trial)
    EXPECT_GT(closedness_penalty(testing_support::random_spline(rng, trial % 2, 5)).value, 0.0);
}

TEST(BackTransformSpline, DegreeOneMatchesDenseQuadrature) {
  std::mt19937_64 rng(49);
  const auto s = testing_support::random_spline(rng, 1, 3);
  const std::vector<double> grid{0.0, 0.1, 0.37, 0.5, 0.9, 1.0};
  const auto curve = srv_back_transform(s, Eigen::Vector2d(1, 2), grid);
  // Composite midpoint rule on p|p|, fine enough for 1e-7.
  const int n = 200000;
  Eigen::Vector2d acc(1, 2);
  std::size_t next = 1;
  EXPECT_EQ(curve.points.row(0), Eigen::RowVector2d(1, 2));
  for (int i = 0; i < n && next < grid.size(); ++i) {
    const double t = (i + 0.5) / n;
    const Eigen::VectorXd p = evaluate(s, t);
    acc += p * p.norm() / n;
    if (std::abs((i + 1.0) / n - grid[next]) < 0.5 / n) {
      EXPECT_LT((curve.points.row(static_cast<Eigen::Index>(next)).transpose() - acc).norm(), 1e-7);
      ++next;
    }
  }
  EXPECT_EQ(next, grid.size());
}

TEST(Closedness, LinearPieceThroughTheOrigin) {
  // p(u) passes within 1e-3 of the origin, where |p| is nearly singular.
  for (double offset : {0.0, 1e-3, 0.3}) {
    const Eigen::Vector2d a(-1.0, offset);
    const Eigen::Vector2d b(2.0, offset);
    const auto piece = detail::linear_piece(a, b, false);
    const int n = 1000000;
    Eigen::Vector2d reference = Eigen::Vector2d::Zero();
    for (int i = 0; i < n; ++i) {
      const Eigen::Vector2d p = a + (i + 0.5) / n * (b - a);
      reference += p * p.norm() / n;
    }
    EXPECT_LT((piece.value - reference).norm(), 1e-9) << offset;
  }
}
