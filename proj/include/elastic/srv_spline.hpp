#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "elastic/curve.hpp"
#include "elastic/errors.hpp"
#include "elastic/quadrature.hpp"

namespace elastic {

/// Spline of degree 0 (piecewise constant) or 1 (continuous piecewise linear)
/// on SRV level. Coefficients hold one basis function per row: K rows for
/// degree 0 and K + 1 rows for degree 1, where K is the number of intervals.
struct SrvSpline {
  int degree = 1;
  std::vector<double> knots;
  Eigen::MatrixXd coefficients;

  [[nodiscard]] std::size_t intervals() const { return knots.size() - 1; }
  [[nodiscard]] Eigen::Index dim() const { return coefficients.cols(); }
  [[nodiscard]] static std::size_t basis_size(int degree, std::size_t intervals) {
    return degree == 0 ? intervals : intervals + 1;
  }
  [[nodiscard]] std::size_t basis_size() const { return basis_size(degree, intervals()); }

  /// Index k of the knot interval [knots[k], knots[k+1]) containing t; t = 1
  /// maps to the last interval.
  [[nodiscard]] std::size_t interval_of(double t) const {
    const auto it = std::upper_bound(knots.begin(), knots.end(), t);
    const auto k = static_cast<std::ptrdiff_t>(it - knots.begin()) - 1;
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(intervals()) - 1));
  }

  void validate() const {
    if (degree != 0 && degree != 1) throw ValidationError("SRV spline degree must be 0 or 1");
    if (knots.size() < 2) throw ValidationError("SRV spline needs at least one knot interval");
    if (knots.front() != 0.0 || knots.back() != 1.0)
      throw ValidationError("SRV spline knots must start at 0 and end at 1");
    detail::require_strictly_increasing(knots, "knots");
    if (static_cast<std::size_t>(coefficients.rows()) != basis_size())
      throw ValidationError("SRV spline has " + std::to_string(coefficients.rows()) +
                            " coefficient rows, expected " + std::to_string(basis_size()));
    if (coefficients.cols() < 1) throw ValidationError("SRV spline dimension must be at least 1");
  }
};

/// Knots 0 = k_0 < ... < k_{inner+1} = 1, equally spaced.
inline std::vector<double> equispaced_knots(std::size_t inner_knots) {
  const std::size_t n = inner_knots + 2;
  std::vector<double> knots(n);
  for (std::size_t i = 0; i < n; ++i) knots[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  knots.back() = 1.0;
  return knots;
}

/// One non-zero basis function value at some t.
struct BasisTerm {
  std::size_t index;
  double value;
};

/// Non-zero basis functions at t (one for degree 0, two for degree 1).
inline std::vector<BasisTerm> basis_at(const SrvSpline& spline, double t) {
  const std::size_t k = spline.interval_of(t);
  if (spline.degree == 0) return {{k, 1.0}};
  const double u = std::clamp((t - spline.knots[k]) / (spline.knots[k + 1] - spline.knots[k]), 0.0, 1.0);
  return {{k, 1.0 - u}, {k + 1, u}};
}

inline Eigen::VectorXd evaluate(const SrvSpline& spline, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ValidationError("spline evaluation outside [0, 1]");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(spline.dim());
  for (const auto& term : basis_at(spline, t))
    out += term.value * spline.coefficients.row(static_cast<Eigen::Index>(term.index)).transpose();
  return out;
}

/// Exact squared L2 norm of the spline.
inline double l2_norm_sq(const SrvSpline& spline) {
  double total = 0.0;
  for (std::size_t k = 0; k < spline.intervals(); ++k) {
    const double h = spline.knots[k + 1] - spline.knots[k];
    const auto a = spline.coefficients.row(static_cast<Eigen::Index>(k));
    if (spline.degree == 0) {
      total += h * a.squaredNorm();
    } else {
      const auto b = spline.coefficients.row(static_cast<Eigen::Index>(k + 1));
      total += h / 3.0 * (a.squaredNorm() + a.dot(b) + b.squaredNorm());
    }
  }
  return total;
}

/// Degree-0 spline as a piecewise-constant SRV on the knot grid.
inline PiecewiseConstantSrv to_piecewise_constant(const SrvSpline& spline) {
  if (spline.degree != 0) throw ValidationError("to_piecewise_constant needs a degree-0 spline");
  return PiecewiseConstantSrv{spline.knots, spline.coefficients};
}

// ---------------------------------------------------------------------------
// Weighted least squares

struct SrvSamplePoint {
  double t;
  Eigen::VectorXd value;
  double weight;
};

/// Weighted SRV observations pooled from one or more curves.
using WeightedSrvSample = std::vector<SrvSamplePoint>;

/// Quadratic objective tr(C^T N C) - 2 tr(C^T R) + c in the coefficient
/// matrix C. Both the discretised and the exact-integral fitting steps reduce
/// to this form.
struct QuadraticObjective {
  Eigen::MatrixXd normal;  // B x B
  Eigen::MatrixXd rhs;     // B x d
  double constant = 0.0;

  [[nodiscard]] double value(const Eigen::MatrixXd& coefs) const {
    return (coefs.transpose() * normal * coefs).trace() - 2.0 * (coefs.transpose() * rhs).trace() + constant;
  }
};

inline QuadraticObjective normal_equations(const WeightedSrvSample& sample, int degree,
                                           const std::vector<double>& knots, Eigen::Index dim) {
  SrvSpline shape{degree, knots, Eigen::MatrixXd::Zero(0, dim)};
  const auto nb = static_cast<Eigen::Index>(SrvSpline::basis_size(degree, knots.size() - 1));
  QuadraticObjective q{Eigen::MatrixXd::Zero(nb, nb), Eigen::MatrixXd::Zero(nb, dim), 0.0};
  for (const auto& obs : sample) {
    if (!(obs.t >= 0.0 && obs.t <= 1.0)) throw ValidationError("sample parameter outside [0, 1]");
    if (!(obs.weight > 0.0)) throw ValidationError("sample weights must be positive");
    if (obs.value.size() != dim) throw ValidationError("sample dimension mismatch");
    const auto terms = basis_at(shape, obs.t);
    for (const auto& a : terms) {
      const auto ia = static_cast<Eigen::Index>(a.index);
      q.rhs.row(ia) += obs.weight * a.value * obs.value.transpose();
      for (const auto& b : terms)
        q.normal(ia, static_cast<Eigen::Index>(b.index)) += obs.weight * a.value * b.value;
    }
    q.constant += obs.weight * obs.value.squaredNorm();
  }
  return q;
}

/// Minimiser of the quadratic objective plus ridge * |C|^2. Throws FitError if
/// the system is numerically singular and no ridge is given.
inline Eigen::MatrixXd solve_quadratic(const QuadraticObjective& q, double ridge = 0.0) {
  if (ridge < 0.0) throw ValidationError("ridge must be non-negative");
  Eigen::MatrixXd n = q.normal;
  n.diagonal().array() += ridge;
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(n, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().maxCoeff();
  if (!(top > 0.0) || eig.eigenvalues().minCoeff() <= 1e-12 * top)
    throw FitError("rank-deficient spline design: too few distinct sample locations for " +
                   std::to_string(n.rows()) + " coefficients (use fewer knots or a ridge)");
  return n.ldlt().solve(q.rhs);
}

/// Weighted least-squares SRV spline through the sample.
inline SrvSpline fit_least_squares(const WeightedSrvSample& sample, int degree,
                                   const std::vector<double>& knots, double ridge = 0.0) {
  if (sample.empty()) throw ValidationError("cannot fit a spline to an empty sample");
  const Eigen::Index dim = sample.front().value.size();
  SrvSpline out{degree, knots, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(SrvSpline::basis_size(degree, knots.size() - 1)), dim)};
  out.validate();
  out.coefficients = solve_quadratic(normal_equations(sample, degree, knots, dim), ridge);
  return out;
}

// ---------------------------------------------------------------------------
// Closedness


namespace detail {

/// d(p|p|)/dp = |p| I + p p^T / |p| (zero at p = 0).
inline Eigen::MatrixXd srv_square_jacobian(const Eigen::VectorXd& p) {
  const double n = p.norm();
  if (n == 0.0) return Eigen::MatrixXd::Zero(p.size(), p.size());
  return n * Eigen::MatrixXd::Identity(p.size(), p.size()) + p * p.transpose() / n;
}

/// Integrals over u in [0, 1] of p|p| and of its Jacobian weighted by 1 - u
/// and u, for the linear piece p(u) = a + u (b - a).
struct LinearPieceIntegrals {
  Eigen::VectorXd value;
  Eigen::MatrixXd left;
  Eigen::MatrixXd right;
};

inline LinearPieceIntegrals linear_piece(const Eigen::VectorXd& a, const Eigen::VectorXd& b, bool jacobian) {
  const Eigen::Index n = a.size();
  const Eigen::VectorXd d = b - a;
  const double dd = d.squaredNorm();
  LinearPieceIntegrals out{Eigen::VectorXd::Zero(n), Eigen::MatrixXd::Zero(n, n), Eigen::MatrixXd::Zero(n, n)};

  // |p(u)| = |d| sqrt((u - u0)^2 + kappa^2) vanishes at u0 +- i kappa. Away
  // from those points the integrand is analytic and Gauss-Legendre is exact
  // to rounding; close to them it is nearly singular, so integrate exactly.
  double u0 = 0.0;
  double kappa = std::numeric_limits<double>::infinity();
  Eigen::VectorXd perp = a;
  if (dd > 0.0) {
    u0 = -a.dot(d) / dd;
    perp = a + u0 * d;
    kappa = perp.norm() / std::sqrt(dd);
  }
  const double outside = u0 < 0.0 ? -u0 : (u0 > 1.0 ? u0 - 1.0 : 0.0);
  if (std::hypot(outside, kappa) >= 8.0) {
    for (std::size_t g = 0; g < quadrature::kGaussNodes.size(); ++g) {
      const double u = 0.5 + 0.5 * quadrature::kGaussNodes[g];
      const double w = 0.5 * quadrature::kGaussWeights[g];
      const Eigen::VectorXd p = a + u * d;
      out.value += w * p.norm() * p;
      if (jacobian) {
        const Eigen::MatrixXd jp = srv_square_jacobian(p);
        out.left += w * (1.0 - u) * jp;
        out.right += w * u * jp;
      }
    }
    return out;
  }

  // With v = u - u0: p = perp + v d, |p| = |d| s(v), s = sqrt(v^2 + kappa^2).
  const double k2 = kappa * kappa;
  const auto ash = [&](double v) { return kappa > 0.0 ? std::asinh(v / kappa) : 0.0; };
  struct Antiderivatives {
    double s, vs, inv, v_inv, v2_inv, v3_inv;  // of s, v s, 1/s, v/s, v^2/s, v^3/s
  };
  const auto at = [&](double v) {
    const double s = std::hypot(v, kappa);
    const double as = ash(v);
    return Antiderivatives{0.5 * (v * s + k2 * as), s * s * s / 3.0, as,
                           s,  0.5 * (v * s - k2 * as), s * s * s / 3.0 - k2 * s};
  };
  const auto hi = at(1.0 - u0);
  const auto lo = at(-u0);
  const double len = std::sqrt(dd);
  out.value = len * ((hi.s - lo.s) * perp + (hi.vs - lo.vs) * d);
  if (!jacobian) return out;
  const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd pp = perp * perp.transpose();
  const Eigen::MatrixXd pd = perp * d.transpose() + d * perp.transpose();
  const Eigen::MatrixXd ddt = d * d.transpose();
  const Eigen::MatrixXd m0 = len * (hi.s - lo.s) * id +
                             ((hi.inv - lo.inv) * pp + (hi.v_inv - lo.v_inv) * pd + (hi.v2_inv - lo.v2_inv) * ddt) / len;
  const Eigen::MatrixXd m1 = len * (hi.vs - lo.vs) * id +
                             ((hi.v_inv - lo.v_inv) * pp + (hi.v2_inv - lo.v2_inv) * pd + (hi.v3_inv - lo.v3_inv) * ddt) / len;
  // u = v + u0.
  out.right = m1 + u0 * m0;
  out.left = m0 - out.right;
  return out;
}

}  // namespace detail

/// beta(1) - beta(0) = int_0^1 p |p| dt.
inline Eigen::VectorXd closedness_gap(const SrvSpline& spline) {
  Eigen::VectorXd gap = Eigen::VectorXd::Zero(spline.dim());
  for (std::size_t k = 0; k < spline.intervals(); ++k) {
    const double a = spline.knots[k];
    const double b = spline.knots[k + 1];
    if (spline.degree == 0) {
      const Eigen::VectorXd c = spline.coefficients.row(static_cast<Eigen::Index>(k)).transpose();
      gap += (b - a) * c * c.norm();
    } else {
      gap += (b - a) * detail::linear_piece(spline.coefficients.row(static_cast<Eigen::Index>(k)).transpose(),
                                            spline.coefficients.row(static_cast<Eigen::Index>(k + 1)).transpose(), false)
                           .value;
    }
  }
  return gap;
}

/// Jacobian of closedness_gap w.r.t. the row-major flattened coefficients
/// (index b * d + c): d x (B * d).
inline Eigen::MatrixXd closedness_jacobian(const SrvSpline& spline) {
  const Eigen::Index d = spline.dim();
  const auto nb = static_cast<Eigen::Index>(spline.basis_size());
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(d, nb * d);
  for (std::size_t k = 0; k < spline.intervals(); ++k) {
    const double a = spline.knots[k];
    const double b = spline.knots[k + 1];
    if (spline.degree == 0) {
      const Eigen::VectorXd c = spline.coefficients.row(static_cast<Eigen::Index>(k)).transpose();
      jac.middleCols(static_cast<Eigen::Index>(k) * d, d) += (b - a) * detail::srv_square_jacobian(c);
      continue;
    }
    const auto piece = detail::linear_piece(spline.coefficients.row(static_cast<Eigen::Index>(k)).transpose(),
                                            spline.coefficients.row(static_cast<Eigen::Index>(k + 1)).transpose(), true);
    jac.middleCols(static_cast<Eigen::Index>(k) * d, d) += (b - a) * piece.left;
    jac.middleCols(static_cast<Eigen::Index>(k + 1) * d, d) += (b - a) * piece.right;
  }
  return jac;
}

struct ClosednessPenalty {
  double value;
  Eigen::MatrixXd gradient;  // same shape as the coefficients
};

/// |closedness_gap|^2 and its gradient w.r.t. the coefficients.
inline ClosednessPenalty closedness_penalty(const SrvSpline& spline) {
  const Eigen::VectorXd gap = closedness_gap(spline);
  const Eigen::VectorXd flat = 2.0 * closedness_jacobian(spline).transpose() * gap;
  Eigen::MatrixXd grad(spline.coefficients.rows(), spline.coefficients.cols());
  for (Eigen::Index b = 0; b < grad.rows(); ++b)
    grad.row(b) = flat.segment(b * grad.cols(), grad.cols()).transpose();
  return {gap.squaredNorm(), std::move(grad)};
}

// ---------------------------------------------------------------------------
// Back-transform

/// Back-transform of an SRV spline at the grid points, integrated piece by
/// piece between knots and grid points (see detail::linear_piece).
inline DiscreteCurve srv_back_transform(const SrvSpline& spline, const Eigen::VectorXd& start,
                                        std::span<const double> grid) {
  if (spline.degree == 0) return srv_back_transform(to_piecewise_constant(spline), start, grid);
  detail::require_grid(grid);
  if (start.size() != spline.dim()) throw ValidationError("start point dimension mismatch");
  const auto integral = [&](double from, double to) -> Eigen::VectorXd {
    return (to - from) * detail::linear_piece(evaluate(spline, from), evaluate(spline, to), false).value;
  };
  // Curve values at the knots.
  std::vector<Eigen::VectorXd> at_knot{start};
  for (std::size_t k = 0; k < spline.intervals(); ++k)
    at_knot.push_back(at_knot.back() + integral(spline.knots[k], spline.knots[k + 1]));

  DiscreteCurve out;
  out.points.resize(static_cast<Eigen::Index>(grid.size()), spline.dim());
  out.params.assign(grid.begin(), grid.end());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i];
    const std::size_t k = spline.interval_of(t);
    Eigen::VectorXd value = at_knot[k];
    if (t >= spline.knots[k + 1]) value = at_knot[k + 1];
    else if (t > spline.knots[k]) value += integral(spline.knots[k], t);
    out.points.row(static_cast<Eigen::Index>(i)) = value.transpose();
  }
  return out;
}

}  // namespace elastic
