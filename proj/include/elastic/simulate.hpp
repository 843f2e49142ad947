#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "elastic/curve.hpp"
#include "elastic/errors.hpp"
#include "elastic/parallel.hpp"
#include "elastic/random.hpp"
#include "elastic/srv_spline.hpp"

namespace elastic {

struct SimulationConfig {
  SrvSpline shape;
  /// Standard deviation of the Gaussian noise added to every coefficient.
  double sigma = 0.1;
  std::size_t n = 10;
  /// Inclusive range of the per-curve segment count m_i.
  int m_min = 30;
  int m_max = 50;
  bool closed = false;
  std::uint64_t seed = 0;

  void validate() const {
    shape.validate();
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ValidationError("sigma must be finite and non-negative");
    if (n < 1) throw ValidationError("simulation needs n >= 1");
    if (m_min < 3 || m_max < m_min) throw ValidationError("m range must satisfy 3 <= m_min <= m_max");
  }
};

struct CloseOptions {
  double tolerance = 1e-6;
  int max_steps = 100;
};

/// Closes a spline by Gauss-Newton steps on the closure gap: each step is the
/// minimum-norm coefficient change that zeroes the linearised gap, halved
/// until the gap norm decreases. Throws ConvergenceError when no step helps
/// or after max_steps steps.
inline SrvSpline close_spline(SrvSpline spline, const CloseOptions& opts = {}) {
  Eigen::VectorXd gap = closedness_gap(spline);
  for (int step = 0; step < opts.max_steps && gap.norm() >= opts.tolerance; ++step) {
    const Eigen::MatrixXd jac = closedness_jacobian(spline);
    const Eigen::VectorXd flat = jac.transpose() * (jac * jac.transpose()).ldlt().solve(gap);
    bool moved = false;
    for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
      SrvSpline trial = spline;
      for (Eigen::Index b = 0; b < trial.coefficients.rows(); ++b)
        trial.coefficients.row(b) -= alpha * flat.segment(b * trial.coefficients.cols(), trial.coefficients.cols()).transpose();
      Eigen::VectorXd next = closedness_gap(trial);
      if (next.norm() < gap.norm()) {
        spline = std::move(trial);
        gap = std::move(next);
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  if (gap.norm() < opts.tolerance) return spline;
  throw ConvergenceError("closing a sampled curve did not converge (gap " + std::to_string(gap.norm()) + ")");
}

/// Observation grid with m segments: 0, m - 1 sorted uniform draws, 1.
inline std::vector<double> random_grid(Rng& rng, int m) {
  std::vector<double> grid(static_cast<std::size_t>(m) + 1);
  grid.front() = 0.0;
  grid.back() = 1.0;
  for (int j = 1; j < m; ++j) grid[static_cast<std::size_t>(j)] = rng.uniform();
  std::sort(grid.begin() + 1, grid.end() - 1);
  return grid;
}

/// Draws n noisy copies of the template spline observed on random grids.
/// Curve i uses random stream i of the seed, so curves are independent of
/// each other and of the worker count.
inline std::vector<DiscreteCurve> sample_curves(const SimulationConfig& config, std::size_t jobs = 1) {
  config.validate();
  std::vector<DiscreteCurve> out(config.n);
  parallel_for(config.n, jobs, [&](std::size_t i) {
    Rng rng(config.seed, i);
    SrvSpline spline = config.shape;
    for (Eigen::Index r = 0; r < spline.coefficients.rows(); ++r)
      for (Eigen::Index c = 0; c < spline.coefficients.cols(); ++c)
        spline.coefficients(r, c) += config.sigma * rng.normal();
    if (config.closed) spline = close_spline(std::move(spline));
    const int m = static_cast<int>(rng.uniform_int(config.m_min, config.m_max));
    const auto grid = random_grid(rng, m);
    DiscreteCurve raw = srv_back_transform(spline, Eigen::VectorXd::Zero(spline.dim()), grid);
    if (config.closed) raw.points.row(raw.points.rows() - 1) = raw.points.row(0);
    out[i] = ingest_curve(raw.points, std::nullopt, config.closed);
  });
  return out;
}

/// Root-mean-square difference over all coefficient entries.
inline double coefficient_rmse(const SrvSpline& estimate, const SrvSpline& reference) {
  estimate.validate();
  reference.validate();
  if (estimate.degree != reference.degree || estimate.knots != reference.knots ||
      estimate.dim() != reference.dim())
    throw ValidationError("coefficient_rmse needs splines in the same space");
  const auto diff = estimate.coefficients - reference.coefficients;
  return std::sqrt(diff.squaredNorm() / static_cast<double>(diff.size()));
}

/// Heart-shaped closed template: degree-1 SRV spline with ten equally spaced
/// inner knots, fitted to the SRV of the parametric heart
/// (16 sin^3 u, 13 cos u - 5 cos 2u - 2 cos 3u - cos 4u) and then closed.
inline SrvSpline heart_template() {
  constexpr int kPoints = 2000;
  Eigen::MatrixXd pts(kPoints + 1, 2);
  for (int i = 0; i <= kPoints; ++i) {
    const double u = 2.0 * std::numbers::pi * i / kPoints;
    const double s = std::sin(u);
    pts(i, 0) = 16.0 * s * s * s;
    pts(i, 1) = 13.0 * std::cos(u) - 5.0 * std::cos(2 * u) - 2.0 * std::cos(3 * u) - std::cos(4 * u);
  }
  pts.row(kPoints) = pts.row(0);
  const auto curve = ingest_curve(pts, std::nullopt, true);
  const auto srv = srv_transform(curve);
  WeightedSrvSample sample;
  for (std::size_t j = 0; j < srv.segments(); ++j)
    sample.push_back({0.5 * (srv.breaks[j] + srv.breaks[j + 1]), srv.values.row(static_cast<Eigen::Index>(j)).transpose(),
                      srv.breaks[j + 1] - srv.breaks[j]});
  return close_spline(fit_least_squares(sample, 1, equispaced_knots(10)));
}

}  // namespace elastic
