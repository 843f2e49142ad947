#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "elastic/alignment.hpp"
#include "elastic/curve.hpp"
#include "elastic/detail/srv_pieces.hpp"
#include "elastic/errors.hpp"

namespace elastic {

/// Which input curve plays the polygon (warped) role.
enum class PolygonRole { Auto, First, Second };

struct DistanceOptions {
  AlignOptions align;
  PolygonRole role = PolygonRole::Auto;
};

struct DistanceResult {
  AlignmentResult alignment;
  /// True when the first curve was aligned as the polygon q.
  bool first_is_polygon = false;
};

namespace detail {

/// Vertices that remain after dropping those where the polygon continues in
/// the same direction (never the first or last vertex).
inline std::vector<std::size_t> corner_vertices(const DiscreteCurve& c) {
  const auto n = static_cast<std::size_t>(c.points.rows());
  std::vector<std::size_t> keep{0};
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    const Eigen::RowVectorXd a = c.points.row(ii) - c.points.row(ii - 1);
    const Eigen::RowVectorXd b = c.points.row(ii + 1) - c.points.row(ii);
    const double scale = a.norm() * b.norm();
    if (!(scale > 0.0) || scale - a.dot(b) > 1e-12 * scale) keep.push_back(i);
  }
  keep.push_back(n - 1);
  return keep;
}

inline DiscreteCurve select_vertices(const DiscreteCurve& c, std::span<const std::size_t> keep) {
  DiscreteCurve out;
  out.closed = c.closed;
  out.points.resize(static_cast<Eigen::Index>(keep.size()), c.dim());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.points.row(static_cast<Eigen::Index>(i)) = c.points.row(static_cast<Eigen::Index>(keep[i]));
    out.params.push_back(c.params[keep[i]]);
  }
  return out;
}

/// Assignment for every vertex of `curve` from one for its corners. A merged
/// segment is split where the matched share of <p, q>_+^2 equals the share
/// of its length, which keeps the objective unchanged.
inline WarpAssignment expand_assignment(const SrvPieces& p, const DiscreteCurve& curve,
                                        std::span<const std::size_t> keep, const PiecewiseConstantSrv& merged,
                                        const WarpAssignment& a) {
  WarpAssignment out{std::vector<double>(static_cast<std::size_t>(curve.points.rows())), a.closed};
  for (std::size_t k = 0; k + 1 < keep.size(); ++k) {
    const double lo = a.t[k];
    const double hi = a.t[k + 1];
    out.t[keep[k]] = lo;
    if (keep[k + 1] == keep[k] + 1) continue;
    const Eigen::VectorXd v = merged.values.row(static_cast<Eigen::Index>(k)).transpose();
    const double total = p.positive_integral(lo, hi, v, a.closed);
    double length = 0.0;
    std::vector<double> cumulative;
    for (std::size_t i = keep[k]; i < keep[k + 1]; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      length += (curve.points.row(ii + 1) - curve.points.row(ii)).norm();
      cumulative.push_back(length);
    }
    for (std::size_t i = keep[k] + 1; i < keep[k + 1]; ++i) {
      if (!(total > 0.0)) {
        out.t[i] = lo;
        continue;
      }
      const double target = total * cumulative[i - keep[k] - 1] / length;
      double left = i == keep[k] + 1 ? lo : out.t[i - 1];
      double right = hi;
      while (right - left > 1e-15 * std::max(1.0, std::abs(right))) {
        const double mid = 0.5 * (left + right);
        if (mid <= left || mid >= right) break;
        (p.positive_integral(lo, mid, v, a.closed) < target ? left : right) = mid;
      }
      out.t[i] = right;
    }
  }
  out.t.back() = a.t.back();
  return out;
}

/// Aligns `warped` as the polygon q against `fixed`, after merging collinear
/// consecutive segments of both curves; the reported assignment covers all
/// vertices of `warped`.
inline AlignmentResult align_curves(const DiscreteCurve& fixed, const DiscreteCurve& warped,
                                    const AlignOptions& opts) {
  const auto p = srv_transform(select_vertices(fixed, corner_vertices(fixed)));
  const auto keep = corner_vertices(warped);
  if (keep.size() == static_cast<std::size_t>(warped.points.rows()))
    return warped.closed ? align_closed_polygons(p, srv_transform(warped), opts)
                         : align_open_polygons(p, srv_transform(warped), opts);
  const auto q = srv_transform(select_vertices(warped, keep));
  AlignOptions merged_opts = opts;
  merged_opts.starts.clear();
  for (const auto& s : opts.starts) {
    WarpAssignment sub{{}, s.closed};
    for (std::size_t i : keep) sub.t.push_back(s.t.at(i));
    merged_opts.starts.push_back(std::move(sub));
  }
  auto result = warped.closed ? align_closed_polygons(p, q, merged_opts) : align_open_polygons(p, q, merged_opts);
  result.assignment = expand_assignment(SrvPieces::from(p), warped, keep, q, result.assignment);
  return result;
}

}  // namespace detail

/// Aligns two discrete curves and reports their elastic distance. Vertices
/// where a polygon continues straight on are ignored by the alignment. With
/// PolygonRole::Auto the curve with fewer remaining vertices is warped; on
/// ties both roles are tried and the larger objective is kept (the second
/// curve is warped if they agree).
inline DistanceResult elastic_align(const DiscreteCurve& c1, const DiscreteCurve& c2,
                                    const DistanceOptions& opts = {}) {
  if (c1.dim() != c2.dim()) throw ValidationError("curves have different dimensions");
  if (c1.closed != c2.closed) throw ValidationError("cannot compare an open with a closed curve");
  const auto run = [&](bool first) {
    DistanceResult out;
    out.first_is_polygon = first;
    out.alignment = first ? detail::align_curves(c2, c1, opts.align) : detail::align_curves(c1, c2, opts.align);
    return out;
  };
  switch (opts.role) {
    case PolygonRole::First: return run(true);
    case PolygonRole::Second: return run(false);
    case PolygonRole::Auto: break;
  }
  const auto n1 = detail::corner_vertices(c1).size();
  const auto n2 = detail::corner_vertices(c2).size();
  if (n1 != n2) return run(n1 < n2);
  auto second = run(false);
  auto first = run(true);
  return first.alignment.phi > second.alignment.phi + detail::tie_tolerance(second.alignment.phi) ? first : second;
}

inline double elastic_distance(const DiscreteCurve& c1, const DiscreteCurve& c2, const DistanceOptions& opts = {}) {
  return elastic_align(c1, c2, opts).alignment.distance;
}

/// Derivative of the optimal warping at time u for an assignment of q against
/// p: on [t_j, t_{j+1}] it is ds_j <p*(u), q_j>_+^2 / int_{t_j}^{t_{j+1}} <p*, q_j>_+^2,
/// and zero on segments whose integral vanishes.
template <SrvCurve P>
double optimal_warp_speed(const P& p, const PiecewiseConstantSrv& q, const WarpAssignment& a, double u) {
  a.validate(q.segments());
  const auto pieces = detail::SrvPieces::from(p);
  const auto& t = a.t;
  if (u < t.front() || u > t.back()) throw ValidationError("optimal_warp_speed: u outside [t_0, t_m]");
  std::size_t j = 0;
  while (j + 1 < q.segments() && u >= t[j + 1]) ++j;
  const Eigen::VectorXd qj = q.values.row(static_cast<Eigen::Index>(j)).transpose();
  const double integral = pieces.positive_integral(t[j], t[j + 1], qj, a.closed);
  if (integral <= 0.0) return 0.0;
  const double f = std::max(0.0, pieces.value(u, a.closed).dot(qj));
  return (q.breaks[j + 1] - q.breaks[j]) * f * f / integral;
}

/// Re-parametrises `curve` (the polygon q of `result`) by its optimal warp:
/// vertex j gets param t_j. Closed curves are shifted so that the start lies
/// in [0, 1) and rotated to begin at param 0, inserting the point reached at
/// the wrap. With `p`, that point follows the optimal warp inside its segment;
/// without it, the segment is assumed to be traversed at constant speed.
/// Segments the assignment collapses keep equal params at both ends, so the
/// result is a warped curve rather than an ingestible DiscreteCurve.
template <SrvCurve P = PiecewiseConstantSrv>
DiscreteCurve apply_alignment(const DiscreteCurve& curve, const AlignmentResult& result,
                              const P* p = nullptr) {
  const std::size_t m = curve.segments();
  const auto& t = result.assignment.t;
  if (t.size() != m + 1) throw ValidationError("alignment does not match the curve's segment count");
  if (result.assignment.closed != curve.closed) throw ValidationError("alignment open/closed flag mismatch");
  if (!curve.closed) {
    DiscreteCurve out = curve;
    out.params = t;
    out.params.front() = 0.0;
    out.params.back() = 1.0;
    return out;
  }

  const double shift = -std::floor(t.front());
  std::vector<double> u(t.size());
  for (std::size_t j = 0; j <= m; ++j) u[j] = t[j] + shift;
  if (u.front() == 0.0) {
    DiscreteCurve out = curve;
    out.params = u;
    out.params.back() = 1.0;
    return out;
  }

  // Segment w crosses the wrap: u_w < 1 <= u_{w+1}.
  std::size_t w = 0;
  while (u[w + 1] < 1.0) ++w;
  const auto ww = static_cast<Eigen::Index>(w);
  const Eigen::RowVectorXd delta = curve.points.row(ww + 1) - curve.points.row(ww);
  double fraction = u[w + 1] > u[w] ? (1.0 - u[w]) / (u[w + 1] - u[w]) : 1.0;
  if (p != nullptr) {
    const auto q = srv_transform(curve);
    const auto pieces = detail::SrvPieces::from(*p);
    const Eigen::VectorXd qw = q.values.row(ww).transpose();
    const double total = pieces.positive_integral(t[w], t[w + 1], qw, true);
    fraction = total > 0.0 ? pieces.positive_integral(t[w], t[w] + (1.0 - u[w]), qw, true) / total : 1.0;
  }
  if (u[w + 1] == 1.0) fraction = 1.0;
  const Eigen::RowVectorXd wrap_point = curve.points.row(ww) + fraction * delta;
  // When the wrap lands on vertex w+1 that vertex becomes the start and is
  // not repeated.
  const std::size_t tail_end = w + 1;
  if (u[w + 1] == 1.0) ++w;

  // New vertex order: wrap point, the vertices after it, 0..tail_end-1, wrap point.
  std::vector<Eigen::RowVectorXd> pts;
  std::vector<double> params;
  pts.push_back(wrap_point);
  params.push_back(0.0);
  for (std::size_t j = w + 1; j < m; ++j) {
    pts.push_back(curve.points.row(static_cast<Eigen::Index>(j)));
    params.push_back(u[j] - 1.0);
  }
  for (std::size_t j = 0; j < tail_end; ++j) {
    pts.push_back(curve.points.row(static_cast<Eigen::Index>(j)));
    params.push_back(u[j]);
  }
  pts.push_back(wrap_point);
  params.push_back(1.0);

  DiscreteCurve out;
  out.closed = true;
  out.points.resize(static_cast<Eigen::Index>(pts.size()), curve.dim());
  for (std::size_t i = 0; i < pts.size(); ++i) out.points.row(static_cast<Eigen::Index>(i)) = pts[i];
  out.params = std::move(params);
  return out;
}

}  // namespace elastic
