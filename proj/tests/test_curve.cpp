#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "elastic/curve.hpp"
#include "support.hpp"

using namespace elastic;

namespace {

Eigen::MatrixXd rows(std::initializer_list<std::initializer_list<double>> values) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(values.size()), static_cast<Eigen::Index>(values.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : values) {
    Eigen::Index c = 0;
    for (double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

}  // namespace

TEST(IngestCurve, TwoPointChordGetsUnitParams) {
  const auto c = ingest_curve(rows({{0, 0}, {1, 0}}), std::nullopt, false);
  EXPECT_EQ(c.points, rows({{0, 0}, {1, 0}}));
  EXPECT_EQ(c.params, (std::vector<double>{0.0, 1.0}));
}

TEST(IngestCurve, ArcLengthParams) {
  const auto c = ingest_curve(rows({{0, 0}, {1, 0}, {1, 1}}), std::nullopt, false);
  EXPECT_EQ(c.params, (std::vector<double>{0.0, 0.5, 1.0}));
}

TEST(IngestCurve, DropsConsecutiveDuplicates) {
  const auto c = ingest_curve(rows({{0, 0}, {0, 0}, {1, 0}}), std::nullopt, false);
  EXPECT_EQ(c.points.rows(), 2);
  EXPECT_EQ(c.dropped_duplicates, 1u);
}

TEST(IngestCurve, ClosedCurveGetsClosingVertex) {
  const auto c = ingest_curve(rows({{0, 0}, {1, 0}, {1, 1}}), std::nullopt, true);
  ASSERT_EQ(c.points.rows(), 4);
  EXPECT_EQ(c.points.row(3), c.points.row(0));
}

TEST(IngestCurve, RejectsBadInput) {
  EXPECT_THROW(ingest_curve(rows({{0, 0}}), std::nullopt, false), ValidationError);
  EXPECT_THROW(ingest_curve(rows({{1, 1}, {1, 1}}), std::nullopt, false), ValidationError);
  EXPECT_THROW(ingest_curve(rows({{0, 0}, {1, 0}, {2, 0}}), std::vector<double>{0, 0.7, 0.5}, false),
               ValidationError);
  EXPECT_THROW(ingest_curve(rows({{0, 0}, {NAN, 0}}), std::nullopt, false), ValidationError);
}

TEST(IngestCurve, KeepsGivenParams) {
  const auto c = ingest_curve(rows({{0, 0}, {1, 0}, {3, 0}}), std::vector<double>{0, 0.25, 1}, false);
  EXPECT_EQ(c.params, (std::vector<double>{0.0, 0.25, 1.0}));
}

TEST(IngestCurve, RescalesGivenParamsOntoUnitInterval) {
  const auto c = ingest_curve(rows({{0, 0}, {1, 0}, {3, 0}}), std::vector<double>{2, 3, 6}, false);
  EXPECT_EQ(c.params, (std::vector<double>{0.0, 0.25, 1.0}));
}

TEST(SrvTransform, UnitSpeedLine) {
  const auto q = srv_transform(ingest_curve(rows({{0, 0}, {1, 0}}), std::nullopt, false));
  EXPECT_DOUBLE_EQ(q.values(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(q.values(0, 1), 0.0);
}

TEST(SrvTransform, SpeedFourLine) {
  const auto q = srv_transform(ingest_curve(rows({{0, 0}, {0, 4}}), std::nullopt, false));
  EXPECT_DOUBLE_EQ(q.values(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(q.values(0, 1), 2.0);
}

TEST(SrvTransform, RightAngle) {
  const auto q = srv_transform(ingest_curve(rows({{0, 0}, {1, 0}, {1, 1}}), std::vector<double>{0, 0.5, 1}, false));
  EXPECT_NEAR(q.values(0, 0), std::sqrt(2.0), 1e-15);
  EXPECT_EQ(q.values(0, 1), 0.0);
  EXPECT_EQ(q.values(1, 0), 0.0);
  EXPECT_NEAR(q.values(1, 1), std::sqrt(2.0), 1e-15);
}

TEST(SrvTransform, NormEqualsLengthUnderArcLength) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto c = testing_support::random_polygon(rng, 3 + trial);
    EXPECT_NEAR(srv_transform(c).l2_norm_sq(), c.length(), 1e-12 * c.length());
  }
}

TEST(SrvTransform, TranslationInvariantExactly) {
  std::mt19937_64 rng(2);
  const auto c = testing_support::random_polygon(rng, 12);
  Eigen::MatrixXd moved = c.points;
  moved.rowwise() += Eigen::RowVector2d(3.0, -7.5);
  const auto a = srv_transform(c);
  const auto b = srv_transform(ingest_curve(moved, c.params, false));
  // Chords of the shifted points can differ in the last bit, so compare at
  // roundoff level relative to the coordinates.
  EXPECT_LT((a.values - b.values).cwiseAbs().maxCoeff(), 1e-13);
}

TEST(BackTransform, ConstantSrv) {
  PiecewiseConstantSrv q{{0.0, 1.0}, rows({{1, 0}})};
  const std::vector<double> grid{0.0, 0.5, 1.0};
  const auto c = srv_back_transform(q, Eigen::Vector2d::Zero(), grid);
  EXPECT_EQ(c.points, rows({{0, 0}, {0.5, 0}, {1, 0}}));
  PiecewiseConstantSrv up{{0.0, 1.0}, rows({{0, 2}})};
  const std::vector<double> ends{0.0, 1.0};
  EXPECT_EQ(srv_back_transform(up, Eigen::Vector2d::Zero(), ends).points, rows({{0, 0}, {0, 4}}));
}

TEST(BackTransform, RoundTripReproducesVertices) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto c = testing_support::random_polygon(rng, 2 + trial % 40, trial % 2 == 0, 2 + trial % 2);
    const auto back = srv_back_transform(srv_transform(c), c.points.row(0).transpose(), c.params);
    const double scale = c.points.cwiseAbs().maxCoeff();
    EXPECT_LE((back.points - c.points).cwiseAbs().maxCoeff(), 1e-12 * scale);
  }
}

TEST(BackTransform, RejectsEmptyGrid) {
  PiecewiseConstantSrv q{{0.0, 1.0}, rows({{1, 0}})};
  EXPECT_THROW(srv_back_transform(q, Eigen::Vector2d::Zero(), std::vector<double>{}), ValidationError);
}
