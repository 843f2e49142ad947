#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "elastic/alignment.hpp"
#include "elastic/curve.hpp"
#include "elastic/detail/srv_pieces.hpp"
#include "elastic/errors.hpp"
#include "elastic/parallel.hpp"
#include "elastic/srv_spline.hpp"

namespace elastic {

enum class WeightScheme { Uniform, Trapezoid };

/// How the fitting step approximates the integrated loss.
enum class FitScheme {
  /// Weighted sum at mean-value-theorem locations (the default).
  MeanValue,
  /// Exact integral of the loss with the warped data replaced by its optimal
  /// warp against the previous mean, which is piecewise linear.
  PiecewiseLinear,
};

struct MeanOptions {
  int degree = 1;
  /// Knot vector of the mean; equispaced with `inner_knots` inner knots if empty.
  std::vector<double> knots;
  std::size_t inner_knots = 10;
  double eps = 1e-3;
  int max_iters = 20;
  WeightScheme weights = WeightScheme::Uniform;
  FitScheme fit = FitScheme::MeanValue;
  double ridge = 0.0;
  /// Closed curves: penalty weight at outer iteration k is lambda_step * k.
  double lambda_step = 1e-3;
  /// Closed curves: Gauss-Newton steps per penalised fit.
  int newton_steps = 10;
  AlignOptions align;
  /// After the first iteration, start each alignment only from the curve's
  /// previous assignment (plus align.starts) instead of all default starts.
  bool warm_start = true;
  std::size_t jobs = 1;

  [[nodiscard]] std::vector<double> knot_vector() const {
    return knots.empty() ? equispaced_knots(inner_knots) : knots;
  }
};

struct ElasticMeanResult {
  SrvSpline mean;
  std::vector<WarpAssignment> assignments;
  std::vector<double> loss_trace;
  std::vector<double> closure_gap_trace;
  int iterations = 0;
  bool converged = false;
  /// Segments left out of the fitting samples because their warped duration was zero.
  std::size_t skipped_segments = 0;
};

/// One (t, value, weight) triple per polygon segment of `curve` under the
/// assignment: the chord's SRV rescaled to the warped duration, placed at the
/// midpoint of [t_j, t_{j+1}] (wrapped into [0, 1) for closed curves).
/// Segments with a zero duration are skipped and counted in `skipped`.
inline WeightedSrvSample mvt_sample(const DiscreteCurve& curve, const WarpAssignment& assignment,
                                   WeightScheme scheme, std::size_t* skipped = nullptr) {
  const std::size_t m = curve.segments();
  assignment.validate(m);
  WeightedSrvSample out;
  out.reserve(m);
  std::size_t dropped = 0;
  for (std::size_t j = 0; j < m; ++j) {
    const double gap = assignment.t[j + 1] - assignment.t[j];
    const auto jj = static_cast<Eigen::Index>(j);
    const Eigen::VectorXd delta = (curve.points.row(jj + 1) - curve.points.row(jj)).transpose();
    const double chord = delta.norm();
    if (!(gap > 0.0) || chord == 0.0) {
      ++dropped;
      continue;
    }
    double mid = 0.5 * (assignment.t[j] + assignment.t[j + 1]);
    if (assignment.closed) mid -= std::floor(mid);
    out.push_back({mid, delta / (std::sqrt(chord) * std::sqrt(gap)),
                   scheme == WeightScheme::Uniform ? 1.0 : gap});
  }
  if (out.empty()) throw ValidationError("mvt_sample: every segment has a zero warped duration");
  if (skipped != nullptr) *skipped += dropped;
  return out;
}

namespace detail {

inline void require_sample(std::span<const DiscreteCurve> curves, bool closed) {
  if (curves.empty()) throw ValidationError("mean needs at least one curve");
  for (const auto& c : curves) {
    if (c.closed != closed)
      throw ValidationError(closed ? "closed mean needs closed curves" : "open mean needs open curves");
    if (c.dim() != curves.front().dim()) throw ValidationError("curves have different dimensions");
  }
}

/// Adds the exact integral of |mean(t) - r(t)|^2 over [lo, hi] to `q`, where
/// r(t) = q_j * scale * <p_old*(t), q_j>_+ is the optimally warped polygon
/// segment against the previous mean.
inline void add_warped_segment(QuadraticObjective& q, const SrvSpline& shape, const SrvPieces& old_mean,
                               const Eigen::VectorXd& qj, double scale, double lo, double hi, bool periodic) {
  // Basis values inside knot interval k (the old and new means share knots).
  const auto basis_in = [&](std::size_t k, double u) -> std::vector<BasisTerm> {
    if (shape.degree == 0) return {{k, 1.0}};
    const double w = old_mean.fraction(k, u);
    return {{k, 1.0 - w}, {k + 1, w}};
  };
  const auto add_linear_piece = [&](std::size_t k, double a, double b, double offset, const Eigen::VectorXd& ra,
                                    const Eigen::VectorXd& rb) {
    if (!(b > a)) return;
    // Simpson's rule is exact for products of two linear functions.
    const double h = b - a;
    const double ts[3] = {a, 0.5 * (a + b), b};
    const double ws[3] = {h / 6.0, 4.0 * h / 6.0, h / 6.0};
    const Eigen::VectorXd rs[3] = {ra, 0.5 * (ra + rb), rb};
    for (int s = 0; s < 3; ++s) {
      const auto terms = basis_in(k, ts[s] - offset);
      for (const auto& ta : terms) {
        const auto ia = static_cast<Eigen::Index>(ta.index);
        q.rhs.row(ia) += ws[s] * ta.value * rs[s].transpose();
        for (const auto& tb : terms)
          q.normal(ia, static_cast<Eigen::Index>(tb.index)) += ws[s] * ta.value * tb.value;
      }
      q.constant += ws[s] * rs[s].squaredNorm();
    }
  };
  old_mean.for_each_piece(lo, hi, periodic, [&](double x, double y, std::size_t k, double offset) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double fa = old_mean.left.row(kk).dot(qj);
    const double fb = old_mean.right.row(kk).dot(qj);
    const double fx = fa + (fb - fa) * old_mean.fraction(k, x - offset);
    const double fy = fa + (fb - fa) * old_mean.fraction(k, y - offset);
    const auto r = [&](double f) -> Eigen::VectorXd { return qj * (scale * std::max(f, 0.0)); };
    if ((fx > 0.0 && fy < 0.0) || (fx < 0.0 && fy > 0.0)) {
      const double root = x + (y - x) * fx / (fx - fy);
      add_linear_piece(k, x, root, offset, r(fx), r(0.0));
      add_linear_piece(k, root, y, offset, r(0.0), r(fy));
    } else {
      add_linear_piece(k, x, y, offset, r(fx), r(fy));
    }
  });
}

struct FitTerm {
  QuadraticObjective objective;
  /// Average total weight per curve; dividing the objective by it puts the
  /// fit on the scale of the integrated loss (1 for trapezoid weights).
  double weight_per_curve = 1.0;
};

/// Fitting-step objective for all curves under their current assignments.
inline FitTerm fitting_objective(std::span<const DiscreteCurve> curves,
                                            std::span<const WarpAssignment> assignments, const SrvSpline& previous,
                                            const MeanOptions& opts, std::size_t* skipped) {
  const auto knots = previous.knots;
  const Eigen::Index dim = curves.front().dim();
  if (opts.fit == FitScheme::MeanValue) {
    WeightedSrvSample pooled;
    for (std::size_t i = 0; i < curves.size(); ++i) {
      auto s = mvt_sample(curves[i], assignments[i], opts.weights, skipped);
      pooled.insert(pooled.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
    }
    double total = 0.0;
    for (const auto& obs : pooled) total += obs.weight;
    return {normal_equations(pooled, opts.degree, knots, dim), total / static_cast<double>(curves.size())};
  }
  const auto nb = static_cast<Eigen::Index>(SrvSpline::basis_size(opts.degree, knots.size() - 1));
  QuadraticObjective q{Eigen::MatrixXd::Zero(nb, nb), Eigen::MatrixXd::Zero(nb, dim), 0.0};
  const SrvSpline shape{opts.degree, knots, Eigen::MatrixXd::Zero(nb, dim)};
  const auto old_mean = SrvPieces::from(previous);
  for (std::size_t i = 0; i < curves.size(); ++i) {
    const auto q_srv = srv_transform(curves[i]);
    const auto& t = assignments[i].t;
    for (std::size_t j = 0; j < q_srv.segments(); ++j) {
      const Eigen::VectorXd qj = q_srv.values.row(static_cast<Eigen::Index>(j)).transpose();
      const double integral = old_mean.positive_integral(t[j], t[j + 1], qj, assignments[i].closed);
      if (!(integral > 0.0)) {
        if (skipped != nullptr) ++*skipped;
        continue;
      }
      const double scale = std::sqrt((q_srv.breaks[j + 1] - q_srv.breaks[j]) / integral);
      add_warped_segment(q, shape, old_mean, qj, scale, t[j], t[j + 1], assignments[i].closed);
    }
  }
  return {q, 1.0};
}

inline Eigen::VectorXd flatten(const Eigen::MatrixXd& c) {
  Eigen::VectorXd out(c.size());
  for (Eigen::Index b = 0; b < c.rows(); ++b) out.segment(b * c.cols(), c.cols()) = c.row(b).transpose();
  return out;
}

inline Eigen::MatrixXd unflatten(const Eigen::VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd out(rows, cols);
  for (Eigen::Index b = 0; b < rows; ++b) out.row(b) = v.segment(b * cols, cols).transpose();
  return out;
}

/// Minimises fit(C) + ridge |C|^2 + lambda |closedness_gap(C)|^2 by damped
/// Gauss-Newton steps starting from `start`.
inline Eigen::MatrixXd penalised_fit(const QuadraticObjective& q, const SrvSpline& start, double lambda, int steps,
                                     double ridge) {
  solve_quadratic(q, ridge);  // rank check
  SrvSpline current = start;
  const Eigen::Index nb = q.normal.rows();
  const Eigen::Index d = q.rhs.cols();
  const auto objective = [&](const SrvSpline& s) {
    return q.value(s.coefficients) + ridge * s.coefficients.squaredNorm() +
           lambda * closedness_gap(s).squaredNorm();
  };
  Eigen::MatrixXd fit_hessian = Eigen::MatrixXd::Zero(nb * d, nb * d);
  for (Eigen::Index a = 0; a < nb; ++a)
    for (Eigen::Index b = 0; b < nb; ++b)
      for (Eigen::Index c = 0; c < d; ++c) fit_hessian(a * d + c, b * d + c) = 2.0 * q.normal(a, b);
  fit_hessian.diagonal().array() += 2.0 * ridge;

  double value = objective(current);
  for (int s = 0; s < steps; ++s) {
    const Eigen::VectorXd gap = closedness_gap(current);
    const Eigen::MatrixXd jac = closedness_jacobian(current);
    const Eigen::MatrixXd& c = current.coefficients;
    const Eigen::VectorXd grad =
        flatten(2.0 * (q.normal * c - q.rhs) + 2.0 * ridge * c) + 2.0 * lambda * jac.transpose() * gap;
    const Eigen::MatrixXd hessian = fit_hessian + 2.0 * lambda * jac.transpose() * jac;
    const Eigen::VectorXd step = -hessian.ldlt().solve(grad);
    const double slope = grad.dot(step);
    if (!(slope < 0.0)) break;
    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-10) {
      SrvSpline trial = current;
      trial.coefficients += alpha * unflatten(step, nb, d);
      const double v = objective(trial);
      if (v <= value + 1e-4 * alpha * slope) {
        current = std::move(trial);
        value = v;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) break;
  }
  return current.coefficients;
}

inline std::vector<WarpAssignment> align_all(std::span<const DiscreteCurve> curves, const SrvSpline& mean,
                                             std::span<const WarpAssignment> previous, const MeanOptions& opts,
                                             bool first_iteration) {
  std::vector<WarpAssignment> out(curves.size());
  parallel_for(curves.size(), opts.jobs, [&](std::size_t i) {
    AlignOptions ao = opts.align;
    ao.starts.insert(ao.starts.begin(), previous[i]);
    if (opts.warm_start && !first_iteration) {
      ao.default_starts = false;
      ao.restarts = 0;
    }
    const auto q = srv_transform(curves[i]);
    out[i] = align_polygon_to_spline(mean, q, curves[i].closed, ao).assignment;
  });
  return out;
}

inline ElasticMeanResult elastic_mean(std::span<const DiscreteCurve> curves, const MeanOptions& opts, bool closed) {
  require_sample(curves, closed);
  if (!(opts.eps > 0.0)) throw ValidationError("eps must be positive");
  if (opts.max_iters < 1) throw ValidationError("max_iters must be at least 1");
  if (opts.degree != 0 && opts.degree != 1) throw ValidationError("mean degree must be 0 or 1");

  ElasticMeanResult result;
  result.assignments.reserve(curves.size());
  for (const auto& c : curves) result.assignments.push_back(WarpAssignment::identity(c.params, closed));

  WeightedSrvSample pooled;
  for (std::size_t i = 0; i < curves.size(); ++i) {
    auto s = mvt_sample(curves[i], result.assignments[i], opts.weights, &result.skipped_segments);
    pooled.insert(pooled.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  result.mean = fit_least_squares(pooled, opts.degree, opts.knot_vector(), opts.ridge);

  for (int k = 1; k <= opts.max_iters; ++k) {
    result.assignments = align_all(curves, result.mean, result.assignments, opts, k == 1);
    const auto [objective, weight] =
        fitting_objective(curves, result.assignments, result.mean, opts, &result.skipped_segments);
    SrvSpline next = result.mean;
    if (closed) {
      // The penalty weight refers to the integrated loss, so the discretised
      // fit term is rescaled to that scale first.
      QuadraticObjective scaled = objective;
      scaled.normal /= weight;
      scaled.rhs /= weight;
      scaled.constant /= weight;
      next.coefficients =
          penalised_fit(scaled, result.mean, opts.lambda_step * k, opts.newton_steps, opts.ridge / weight);
    } else {
      next.coefficients = solve_quadratic(objective, opts.ridge);
    }
    result.loss_trace.push_back(objective.value(next.coefficients));
    if (closed) result.closure_gap_trace.push_back(closedness_gap(next).norm());
    const double change = (next.coefficients - result.mean.coefficients).norm();
    result.mean = std::move(next);
    result.iterations = k;
    if (change < opts.eps) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace detail

/// Least-squares SRV spline through all curves under arc-length assignments.
inline SrvSpline initial_mean(std::span<const DiscreteCurve> curves, int degree, const std::vector<double>& knots,
                              WeightScheme scheme, double ridge = 0.0) {
  if (curves.empty()) throw ValidationError("mean needs at least one curve");
  WeightedSrvSample pooled;
  for (const auto& c : curves) {
    auto s = mvt_sample(c, WarpAssignment::identity(c.params, c.closed), scheme);
    pooled.insert(pooled.end(), std::make_move_iterator(s.begin()), std::make_move_iterator(s.end()));
  }
  return fit_least_squares(pooled, degree, knots, ridge);
}

/// Elastic spline mean of open curves: alternates optimal warping of every
/// curve to the current mean with a least-squares refit, until the
/// coefficients change by less than eps (Frobenius norm).
inline ElasticMeanResult elastic_mean_open(std::span<const DiscreteCurve> curves, const MeanOptions& opts = {}) {
  return detail::elastic_mean(curves, opts, false);
}

/// Closed-curve variant. Each refit adds the closedness penalty with weight
/// lambda_step * k at outer iteration k.
inline ElasticMeanResult elastic_mean_closed(std::span<const DiscreteCurve> curves, const MeanOptions& opts = {}) {
  return detail::elastic_mean(curves, opts, true);
}

}  // namespace elastic
