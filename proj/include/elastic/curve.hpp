#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elastic/errors.hpp"

namespace elastic {

/// Ordered observations of one curve in R^d.
///
/// `points` holds one observation per row. `params` holds the parameter value
/// of every row, starting at 0 and ending at 1. Closed curves store the
/// closing vertex explicitly, so the first and last rows are equal.
struct DiscreteCurve {
  Eigen::MatrixXd points;
  std::vector<double> params;
  bool closed = false;
  /// Near-duplicate observations removed during ingestion.
  std::size_t dropped_duplicates = 0;

  /// Number of polygon segments m (rows - 1).
  [[nodiscard]] std::size_t segments() const {
    return points.rows() > 0 ? static_cast<std::size_t>(points.rows() - 1) : 0;
  }
  [[nodiscard]] Eigen::Index dim() const { return points.cols(); }

  /// Sum of chord lengths.
  [[nodiscard]] double length() const {
    double total = 0.0;
    for (Eigen::Index i = 0; i + 1 < points.rows(); ++i)
      total += (points.row(i + 1) - points.row(i)).norm();
    return total;
  }
};

/// SRV transform of a constant-speed polygon: constant value q_j on
/// [breaks[j], breaks[j+1]).
struct PiecewiseConstantSrv {
  std::vector<double> breaks;
  Eigen::MatrixXd values;  // one row per segment

  [[nodiscard]] std::size_t segments() const { return breaks.size() - 1; }
  [[nodiscard]] Eigen::Index dim() const { return values.cols(); }

  [[nodiscard]] double l2_norm_sq() const {
    double total = 0.0;
    for (std::size_t j = 0; j < segments(); ++j)
      total += (breaks[j + 1] - breaks[j]) *
               values.row(static_cast<Eigen::Index>(j)).squaredNorm();
    return total;
  }
};

namespace detail {

inline double bounding_box_diagonal(const Eigen::MatrixXd& pts) {
  if (pts.rows() == 0) return 0.0;
  return (pts.colwise().maxCoeff() - pts.colwise().minCoeff()).norm();
}

inline void require_strictly_increasing(std::span<const double> values,
                                        const char* what) {
  for (std::size_t i = 0; i + 1 < values.size(); ++i) {
    if (!(values[i + 1] > values[i]) || !std::isfinite(values[i + 1]))
      throw ValidationError(std::string(what) + " must be strictly increasing (index " +
                            std::to_string(i + 1) + ")");
  }
}

}  // namespace detail

/// Relative tolerance (w.r.t. the bounding-box diagonal) below which a point is
/// treated as a duplicate of its predecessor.
inline constexpr double kDuplicateRelTol = 1e-12;

/// Validates raw observations and turns them into a DiscreteCurve.
///
/// Consecutive near-duplicates are dropped (together with their parameter).
/// Without explicit params, relative arc-length parameters are assigned; given
/// params are rescaled affinely onto [0, 1]. A closed curve whose last point
/// differs from its first gets the first point appended; if params were given,
/// the appended vertex extends the last parameter spacing proportionally to the
/// closing chord.
inline DiscreteCurve ingest_curve(const Eigen::MatrixXd& raw,
                                  std::optional<std::vector<double>> params = std::nullopt,
                                  bool closed = false) {
  if (raw.cols() < 1) throw ValidationError("curve dimension must be at least 1");
  if (raw.rows() < 2) throw ValidationError("curve needs at least 2 points");
  if (!raw.allFinite()) throw ValidationError("curve contains non-finite coordinates");
  if (params) {
    if (params->size() != static_cast<std::size_t>(raw.rows()))
      throw ValidationError("params length does not match number of points");
    detail::require_strictly_increasing(*params, "params");
  }

  const double tol = kDuplicateRelTol * detail::bounding_box_diagonal(raw);
  std::vector<Eigen::Index> keep{0};
  for (Eigen::Index i = 1; i < raw.rows(); ++i) {
    if ((raw.row(i) - raw.row(keep.back())).norm() > tol) keep.push_back(i);
  }

  DiscreteCurve curve;
  curve.closed = closed;
  curve.dropped_duplicates = static_cast<std::size_t>(raw.rows()) - keep.size();
  if (keep.size() < 2) throw ValidationError("curve needs at least 2 distinct points");

  Eigen::MatrixXd pts(static_cast<Eigen::Index>(keep.size()), raw.cols());
  std::vector<double> given;
  for (std::size_t k = 0; k < keep.size(); ++k) {
    pts.row(static_cast<Eigen::Index>(k)) = raw.row(keep[k]);
    if (params) given.push_back((*params)[static_cast<std::size_t>(keep[k])]);
  }

  if (closed) {
    const Eigen::Index last = pts.rows() - 1;
    const double closing = (pts.row(last) - pts.row(0)).norm();
    if (closing <= tol) {
      pts.row(last) = pts.row(0);
    } else {
      double open_length = 0.0;
      for (Eigen::Index i = 0; i < last; ++i) open_length += (pts.row(i + 1) - pts.row(i)).norm();
      pts.conservativeResize(pts.rows() + 1, Eigen::NoChange);
      pts.row(pts.rows() - 1) = pts.row(0);
      if (params) {
        const double span = given.back() - given.front();
        given.push_back(given.back() + span * closing / open_length);
      }
    }
    if (pts.rows() < 3) throw ValidationError("closed curve needs at least 2 distinct points");
  }

  const auto n = static_cast<std::size_t>(pts.rows());
  curve.params.resize(n);
  if (params) {
    const double lo = given.front();
    const double span = given.back() - lo;
    for (std::size_t i = 0; i < n; ++i) curve.params[i] = (given[i] - lo) / span;
  } else {
    double total = 0.0;
    curve.params[0] = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
      total += (pts.row(static_cast<Eigen::Index>(i)) - pts.row(static_cast<Eigen::Index>(i - 1))).norm();
      curve.params[i] = total;
    }
    if (!(total > 0.0)) throw ValidationError("curve has zero total chord length");
    for (auto& s : curve.params) s /= total;
  }
  curve.params.front() = 0.0;
  curve.params.back() = 1.0;
  curve.points = std::move(pts);
  return curve;
}

/// SRV transform of the constant-speed polygon through the curve's vertices:
/// q_j = dB_j / sqrt(|dB_j| * ds_j).
inline PiecewiseConstantSrv srv_transform(const DiscreteCurve& curve) {
  const std::size_t m = curve.segments();
  if (m < 1 || curve.params.size() != m + 1)
    throw ValidationError("srv_transform: malformed curve");
  PiecewiseConstantSrv srv;
  srv.breaks = curve.params;
  srv.values.resize(static_cast<Eigen::Index>(m), curve.dim());
  for (std::size_t j = 0; j < m; ++j) {
    const auto jj = static_cast<Eigen::Index>(j);
    const Eigen::RowVectorXd delta = curve.points.row(jj + 1) - curve.points.row(jj);
    const double ds = curve.params[j + 1] - curve.params[j];
    const double len = delta.norm();
    if (len > 0.0 && ds > 0.0)
      srv.values.row(jj) = delta / std::sqrt(len * ds);
    else
      srv.values.row(jj).setZero();
  }
  return srv;
}

namespace detail {

inline void require_grid(std::span<const double> grid) {
  if (grid.empty()) throw ValidationError("back-transform grid is empty");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0 || grid[i] > 1.0)
      throw ValidationError("back-transform grid must lie within [0, 1]");
    if (i > 0 && grid[i] < grid[i - 1])
      throw ValidationError("back-transform grid must be non-decreasing");
  }
}

}  // namespace detail

/// Back-transform beta(t) = start + int_0^t q |q| ds, exact for piecewise
/// constant q.
inline DiscreteCurve srv_back_transform(const PiecewiseConstantSrv& srv,
                                        const Eigen::VectorXd& start,
                                        std::span<const double> grid) {
  detail::require_grid(grid);
  if (start.size() != srv.dim()) throw ValidationError("start point dimension mismatch");
  DiscreteCurve out;
  out.points.resize(static_cast<Eigen::Index>(grid.size()), srv.dim());
  out.params.assign(grid.begin(), grid.end());

  // Running sum over whole segments; each grid point adds its partial segment.
  Eigen::RowVectorXd base = start.transpose();
  std::size_t seg = 0;
  const std::size_t m = srv.segments();
  for (std::size_t k = 0; k < grid.size(); ++k) {
    const double t = grid[k];
    while (seg + 1 < m && srv.breaks[seg + 1] <= t) {
      const auto s = static_cast<Eigen::Index>(seg);
      base += (srv.breaks[seg + 1] - srv.breaks[seg]) * srv.values.row(s) * srv.values.row(s).norm();
      ++seg;
    }
    const auto s = static_cast<Eigen::Index>(seg);
    out.points.row(static_cast<Eigen::Index>(k)) =
        base + (t - srv.breaks[seg]) * srv.values.row(s) * srv.values.row(s).norm();
  }
  return out;
}

}  // namespace elastic
