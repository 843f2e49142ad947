#pragma once

// Fixtures and brute-force oracles shared by the unit and acceptance tests.
// The oracles deliberately avoid the library's alignment code paths.

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elastic/elastic.hpp"

namespace testing_support {

using elastic::DiscreteCurve;
using elastic::PiecewiseConstantSrv;
using elastic::SrvSpline;

#ifndef ELASTIC_TESTDATA_DIR
#define ELASTIC_TESTDATA_DIR "testdata"
#endif

inline std::string testdata(const std::string& name) { return std::string(ELASTIC_TESTDATA_DIR) + "/" + name; }

/// Random-walk polygon with m segments and arc-length params.
inline DiscreteCurve random_polygon(std::mt19937_64& rng, int m, bool closed = false, int dim = 2) {
  std::normal_distribution<double> normal;
  Eigen::MatrixXd pts(m + 1, dim);
  pts.row(0).setZero();
  for (int i = 1; i <= m; ++i)
    for (int c = 0; c < dim; ++c) pts(i, c) = pts(i - 1, c) + normal(rng);
  if (closed) {
    // Close by spreading the end gap over all vertices.
    const Eigen::RowVectorXd gap = pts.row(m) - pts.row(0);
    for (int i = 0; i <= m; ++i) pts.row(i) -= gap * (static_cast<double>(i) / m);
  }
  return elastic::ingest_curve(pts, std::nullopt, closed);
}

/// SRV of a polygon with breaks drawn at random instead of arc length.
inline PiecewiseConstantSrv random_srv(std::mt19937_64& rng, int m, int dim = 2) {
  std::uniform_real_distribution<double> unif(0.05, 1.0);
  std::normal_distribution<double> normal;
  PiecewiseConstantSrv q;
  q.breaks.assign(1, 0.0);
  for (int j = 0; j < m; ++j) q.breaks.push_back(q.breaks.back() + unif(rng));
  for (auto& b : q.breaks) b /= q.breaks.back();
  q.breaks.back() = 1.0;
  q.values.resize(m, dim);
  for (int j = 0; j < m; ++j)
    for (int c = 0; c < dim; ++c) q.values(j, c) = normal(rng);
  return q;
}

inline SrvSpline random_spline(std::mt19937_64& rng, int degree, std::size_t inner_knots, int dim = 2) {
  std::normal_distribution<double> normal;
  SrvSpline s{degree, elastic::equispaced_knots(inner_knots), {}};
  s.coefficients.resize(static_cast<Eigen::Index>(s.basis_size()), dim);
  for (Eigen::Index b = 0; b < s.coefficients.rows(); ++b)
    for (Eigen::Index c = 0; c < dim; ++c) s.coefficients(b, c) = normal(rng);
  return s;
}

inline double positive_sq(double x) { return x > 0.0 ? x * x : 0.0; }

/// Objective for piecewise-constant p by summing exact overlaps with each
/// piece of p (periodic copies when `periodic`).
inline double oracle_phi(const PiecewiseConstantSrv& p, const PiecewiseConstantSrv& q, const std::vector<double>& t,
                         bool periodic) {
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < t.size(); ++j) {
    double integral = 0.0;
    for (int shift = periodic ? -2 : 0; shift <= (periodic ? 2 : 0); ++shift) {
      for (std::size_t k = 0; k + 1 < p.breaks.size(); ++k) {
        const double lo = std::max(t[j], p.breaks[k] + shift);
        const double hi = std::min(t[j + 1], p.breaks[k + 1] + shift);
        if (hi > lo)
          integral += (hi - lo) * positive_sq(p.values.row(static_cast<Eigen::Index>(k))
                                                   .dot(q.values.row(static_cast<Eigen::Index>(j))));
      }
    }
    total += std::sqrt((q.breaks[j + 1] - q.breaks[j]) * integral);
  }
  return total;
}

/// Open objective for a spline p by composite Simpson quadrature between the
/// knots of p (exact where the inner product keeps its sign).
inline double oracle_phi_spline(const SrvSpline& p, const PiecewiseConstantSrv& q, const std::vector<double>& t,
                                int panels = 200) {
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < t.size(); ++j) {
    const Eigen::VectorXd qj = q.values.row(static_cast<Eigen::Index>(j)).transpose();
    const auto f = [&](double u) { return positive_sq(elastic::evaluate(p, std::clamp(u, 0.0, 1.0)).dot(qj)); };
    std::vector<double> cuts{t[j]};
    for (double k : p.knots)
      if (k > t[j] && k < t[j + 1]) cuts.push_back(k);
    cuts.push_back(t[j + 1]);
    double integral = 0.0;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double h = (cuts[c + 1] - cuts[c]) / panels;
      for (int i = 0; i < panels; ++i) {
        const double x = cuts[c] + i * h;
        integral += h / 6.0 * (f(x) + 4.0 * f(x + 0.5 * h) + f(x + h));
      }
    }
    total += std::sqrt((q.breaks[j + 1] - q.breaks[j]) * integral);
  }
  return total;
}

/// Exact maximum of the open objective over non-decreasing assignments whose
/// interior entries lie on the grid k / (points - 1), by dynamic programming
/// over (corner, grid index). Equivalent to exhaustive search of the grid
/// simplex because the objective is a sum of per-segment terms.
inline double grid_simplex_max(const PiecewiseConstantSrv& p, const PiecewiseConstantSrv& q, int points) {
  const std::size_t m = q.breaks.size() - 1;
  const auto n = static_cast<std::size_t>(points);
  std::vector<double> grid(n);
  for (std::size_t k = 0; k < n; ++k) grid[k] = static_cast<double>(k) / static_cast<double>(n - 1);
  const auto segment = [&](std::size_t j, double a, double b) {
    PiecewiseConstantSrv one{{q.breaks[j], q.breaks[j + 1]}, q.values.row(static_cast<Eigen::Index>(j))};
    return oracle_phi(p, one, {a, b}, false);
  };
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> best(n, kNone);
  best[0] = 0.0;  // t_0 = 0
  for (std::size_t j = 0; j < m; ++j) {
    std::vector<double> next(n, kNone);
    const bool last = j + 1 == m;
    for (std::size_t b = last ? n - 1 : 0; b < n; ++b)
      for (std::size_t a = 0; a <= b; ++a)
        if (best[a] != kNone) next[b] = std::max(next[b], best[a] + segment(j, grid[a], grid[b]));
    best = std::move(next);
  }
  return best[n - 1];
}

/// Average-linkage heights by the textbook O(n^3) procedure: repeatedly merge
/// the closest pair of clusters, where cluster distance is the mean of all
/// cross-pair item distances (recomputed from scratch).
inline std::vector<double> naive_average_linkage_heights(const Eigen::MatrixXd& d) {
  std::vector<std::vector<Eigen::Index>> clusters;
  for (Eigen::Index i = 0; i < d.rows(); ++i) clusters.push_back({i});
  std::vector<double> heights;
  while (clusters.size() > 1) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t bi = 0;
    std::size_t bj = 1;
    for (std::size_t i = 0; i < clusters.size(); ++i)
      for (std::size_t j = i + 1; j < clusters.size(); ++j) {
        double sum = 0.0;
        for (auto a : clusters[i])
          for (auto b : clusters[j]) sum += d(a, b);
        const double avg = sum / static_cast<double>(clusters[i].size() * clusters[j].size());
        if (avg < best) {
          best = avg;
          bi = i;
          bj = j;
        }
      }
    heights.push_back(best);
    clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
    clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
  }
  return heights;
}

/// Best training accuracy of any threshold rule, searching every distinct
/// cut between observed values (and both extremes) per feature.
inline double brute_force_threshold_accuracy(const Eigen::MatrixXd& x, const std::vector<int>& y) {
  const auto n = x.rows();
  const auto cuts = [&](Eigen::Index f) {
    std::vector<double> v(x.col(f).data(), x.col(f).data() + n);
    std::sort(v.begin(), v.end());
    std::vector<double> out{v.front() - 1.0};
    for (double a : v) out.push_back(a);  // predicting 1 for x > a
    return out;
  };
  const auto accuracy = [&](const std::vector<double>& th) {
    int correct = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      int pred = 0;
      for (std::size_t f = 0; f < th.size(); ++f)
        if (x(i, static_cast<Eigen::Index>(f)) > th[f]) pred = 1;
      correct += pred == y[static_cast<std::size_t>(i)];
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  };
  double best = 0.0;
  if (x.cols() == 1) {
    for (double a : cuts(0)) best = std::max(best, accuracy({a}));
  } else {
    for (double a : cuts(0))
      for (double b : cuts(1)) best = std::max(best, accuracy({a, b}));
  }
  return best;
}

/// Groups of noisy copies of distinct base polygons. Returns the curves and
/// their group index.
struct GroupedCurves {
  std::vector<DiscreteCurve> curves;
  std::vector<int> group;
};

inline GroupedCurves grouped_curves(std::mt19937_64& rng, int groups, int per_group, int m, double noise) {
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> extra(0, 4);
  GroupedCurves out;
  for (int g = 0; g < groups; ++g) {
    const auto base = random_polygon(rng, m);
    for (int i = 0; i < per_group; ++i) {
      Eigen::MatrixXd pts = base.points;
      for (Eigen::Index r = 0; r < pts.rows(); ++r)
        for (Eigen::Index c = 0; c < pts.cols(); ++c) pts(r, c) += noise * normal(rng);
      out.curves.push_back(elastic::ingest_curve(pts, std::nullopt, false));
      out.group.push_back(g);
    }
  }
  return out;
}

}  // namespace testing_support
