#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "elastic/curve.hpp"
#include "elastic/srv_spline.hpp"

namespace elastic::detail {

/// Integral of max(f, 0)^2 over an interval of length `len` on which f is
/// linear with end values fx and fy.
inline double positive_square_integral(double fx, double fy, double len) {
  if (len <= 0.0) return 0.0;
  if (fx >= 0.0 && fy >= 0.0) return len * (fx * fx + fx * fy + fy * fy) / 3.0;
  if (fx <= 0.0 && fy <= 0.0) return 0.0;
  // One sign change at the root of the linear function.
  const double root = len * fx / (fx - fy);
  if (fx > 0.0) return root * fx * fx / 3.0;
  return (len - root) * fy * fy / 3.0;
}

/// Unified view of an SRV curve that is linear (possibly constant) between
/// consecutive breaks: value left.row(k) at breaks[k] rising linearly to
/// right.row(k) at breaks[k + 1]. Both polygons and degree-0/1 SRV splines
/// map onto this.
struct SrvPieces {
  std::vector<double> breaks;
  Eigen::MatrixXd left;
  Eigen::MatrixXd right;
  bool piecewise_constant = true;

  static SrvPieces from(const PiecewiseConstantSrv& srv) {
    return SrvPieces{srv.breaks, srv.values, srv.values, true};
  }

  static SrvPieces from(const SrvSpline& spline) {
    spline.validate();
    const auto k = static_cast<Eigen::Index>(spline.intervals());
    if (spline.degree == 0) return SrvPieces{spline.knots, spline.coefficients, spline.coefficients, true};
    SrvPieces out{spline.knots, spline.coefficients.topRows(k), spline.coefficients.bottomRows(k), false};
    out.piecewise_constant = (out.left - out.right).cwiseAbs().maxCoeff() == 0.0;
    return out;
  }

  [[nodiscard]] std::size_t size() const { return breaks.size() - 1; }
  [[nodiscard]] Eigen::Index dim() const { return left.cols(); }

  /// Piece containing u in [0, 1] (right-continuous, 1 maps to the last piece).
  [[nodiscard]] std::size_t piece_of(double u) const {
    const auto it = std::upper_bound(breaks.begin(), breaks.end(), u);
    const auto k = static_cast<std::ptrdiff_t>(it - breaks.begin()) - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(size()) - 1));
  }

  /// Fraction of the way through piece k at local parameter u.
  [[nodiscard]] double fraction(std::size_t k, double u) const {
    return std::clamp((u - breaks[k]) / (breaks[k + 1] - breaks[k]), 0.0, 1.0);
  }

  [[nodiscard]] Eigen::VectorXd value_in(std::size_t k, double u) const {
    const auto kk = static_cast<Eigen::Index>(k);
    if (piecewise_constant) return left.row(kk).transpose();
    const double w = fraction(k, u);
    return ((1.0 - w) * left.row(kk) + w * right.row(kk)).transpose();
  }

  /// p(t), or its periodic extension p(t - floor(t)) when `periodic`.
  [[nodiscard]] Eigen::VectorXd value(double t, bool periodic) const {
    const double u = periodic ? t - std::floor(t) : t;
    return value_in(piece_of(u), u);
  }

  /// Calls fn(x, y, k, offset) for every maximal sub-interval [x, y] of
  /// [lo, hi] on which p (or its periodic extension) follows piece k, with
  /// local parameter u = t - offset.
  template <typename F>
  void for_each_piece(double lo, double hi, bool periodic, F&& fn) const {
    if (!(hi > lo)) return;
    double offset = periodic ? std::floor(lo) : 0.0;
    std::size_t k = piece_of(lo - offset);
    double x = lo;
    for (;;) {
      const double end = offset + breaks[k + 1];
      const double y = std::min(hi, end);
      if (y > x) fn(x, y, k, offset);
      if (end >= hi) break;
      x = std::max(x, end);
      if (++k == size()) {
        if (!periodic) break;
        k = 0;
        offset += 1.0;
      }
    }
  }

  /// int_lo^hi <p(t), v>_+^2 dt.
  [[nodiscard]] double positive_integral(double lo, double hi, const Eigen::VectorXd& v, bool periodic) const {
    double total = 0.0;
    for_each_piece(lo, hi, periodic, [&](double x, double y, std::size_t k, double offset) {
      const auto kk = static_cast<Eigen::Index>(k);
      const double fa = left.row(kk).dot(v);
      if (piecewise_constant) {
        if (fa > 0.0) total += (y - x) * fa * fa;
        return;
      }
      const double fb = right.row(kk).dot(v);
      const double fx = fa + (fb - fa) * fraction(k, x - offset);
      const double fy = fa + (fb - fa) * fraction(k, y - offset);
      total += positive_square_integral(fx, fy, y - x);
    });
    return total;
  }

  /// int_lo^hi |p(t) - scale <p(t), v>_+ v|^2 dt. The integrand is quadratic
  /// wherever <p, v> keeps its sign, so Simpson's rule on those cells is exact.
  [[nodiscard]] double residual_sq(double lo, double hi, const Eigen::VectorXd& v, double scale,
                                   bool periodic) const {
    double total = 0.0;
    const auto integrand = [&](const Eigen::VectorXd& pt) {
      return (pt - scale * std::max(pt.dot(v), 0.0) * v).squaredNorm();
    };
    for_each_piece(lo, hi, periodic, [&](double x, double y, std::size_t k, double offset) {
      const Eigen::VectorXd a = value_in(k, x - offset);
      const Eigen::VectorXd b = value_in(k, y - offset);
      const auto at = [&](double w) -> Eigen::VectorXd { return (1.0 - w) * a + w * b; };
      const double fa = a.dot(v);
      const double fb = b.dot(v);
      std::vector<double> cuts{0.0};
      if ((fa > 0.0 && fb < 0.0) || (fa < 0.0 && fb > 0.0)) cuts.push_back(fa / (fa - fb));
      cuts.push_back(1.0);
      for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double w0 = cuts[c];
        const double w1 = cuts[c + 1];
        total += (y - x) * (w1 - w0) / 6.0 *
                 (integrand(at(w0)) + 4.0 * integrand(at(0.5 * (w0 + w1))) + integrand(at(w1)));
      }
    });
    return total;
  }

  [[nodiscard]] double l2_norm_sq() const {
    double total = 0.0;
    for (std::size_t k = 0; k < size(); ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      const auto a = left.row(kk);
      const auto b = right.row(kk);
      total += (breaks[k + 1] - breaks[k]) * (a.squaredNorm() + a.dot(b) + b.squaredNorm()) / 3.0;
    }
    return total;
  }
};

}  // namespace elastic::detail
