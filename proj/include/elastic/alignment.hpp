#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elastic/curve.hpp"
#include "elastic/detail/srv_pieces.hpp"
#include "elastic/errors.hpp"
#include "elastic/random.hpp"
#include "elastic/srv_spline.hpp"

namespace elastic {

/// Warping of a polygon with corners at s_0..s_m, stored as the times
/// t_0..t_m at which the warped polygon reaches its corners.
///
/// Open curves: t_0 = 0 and t_m = 1. Closed curves: t_m = t_0 + 1 with
/// t_0 in [-1, 1]. Entries are non-decreasing.
struct WarpAssignment {
  std::vector<double> t;
  bool closed = false;

  [[nodiscard]] std::size_t segments() const { return t.empty() ? 0 : t.size() - 1; }

  void validate(std::size_t m) const {
    if (t.size() != m + 1)
      throw ValidationError("warp assignment has " + std::to_string(t.size()) + " entries, expected " +
                            std::to_string(m + 1));
    for (std::size_t j = 0; j + 1 < t.size(); ++j) {
      if (!(t[j + 1] >= t[j])) throw ValidationError("warp assignment must be non-decreasing");
    }
    if (closed) {
      if (std::abs(t.back() - t.front() - 1.0) > 1e-12)
        throw ValidationError("closed warp assignment needs t_m = t_0 + 1");
      if (t.front() < -1.0 || t.front() > 1.0) throw ValidationError("closed warp assignment needs t_0 in [-1, 1]");
    } else if (t.front() != 0.0 || t.back() != 1.0) {
      throw ValidationError("open warp assignment needs t_0 = 0 and t_m = 1");
    }
  }

  /// Identity assignment t = s for a polygon with the given corner params.
  static WarpAssignment identity(std::span<const double> breaks, bool closed) {
    return WarpAssignment{{breaks.begin(), breaks.end()}, closed};
  }
};

struct AlignmentResult {
  WarpAssignment assignment;
  double phi = 0.0;
  double distance = 0.0;
  int sweeps = 0;
  /// Number of starting values tried.
  int restarts_used = 0;
  bool converged = false;
  double p_norm_sq = 0.0;
  double q_norm_sq = 0.0;
};

/// Receives (start index, sweep or iteration number, objective value) after
/// every sweep of every run; sweep 0 is the starting value.
using SweepObserver = std::function<void(std::size_t, int, double)>;

struct AlignOptions {
  /// Stopping tolerance on changes of the warp assignment.
  double eps = 1e-4;
  /// Sweep budget for coordinate ascent.
  int max_sweeps = 50;
  /// Iteration budget for projected gradient ascent against degree-1 splines.
  int max_gradient_iters = 200;
  /// Random starts tried in addition to the others.
  int restarts = 0;
  std::uint64_t seed = 0;
  /// Try arc-length and uniform starts (plus shifted copies for closed curves)
  /// and the grid-search start.
  bool default_starts = true;
  /// Resolution of the grid-search start; 0 disables it.
  int grid_points = 128;
  /// Closed curves: number of equally spaced t_0 tried by the grid search.
  int grid_anchors = 8;
  /// Caller-supplied starts, tried first (ties keep the earliest start).
  std::vector<WarpAssignment> starts;
  SweepObserver on_sweep;
};

/// Result of a single-coordinate maximisation.
struct CoordinateMax {
  double t;
  double value;
};

namespace detail {

inline double tie_tolerance(double value) {
  return 64.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(value));
}

inline Eigen::VectorXd row(const Eigen::MatrixXd& m, std::size_t j) {
  return m.row(static_cast<Eigen::Index>(j)).transpose();
}

/// Objective sum_j sqrt(ds_j * int_{t_j}^{t_{j+1}} <p, q_j>_+^2).
inline double phi(const SrvPieces& p, const PiecewiseConstantSrv& q, std::span<const double> t, bool periodic) {
  double total = 0.0;
  for (std::size_t j = 0; j < q.segments(); ++j) {
    const double ds = q.breaks[j + 1] - q.breaks[j];
    total += std::sqrt(ds * p.positive_integral(t[j], t[j + 1], row(q.values, j), periodic));
  }
  return total;
}

/// Value of p* at t as a left limit (used for the right end of a segment).
inline Eigen::VectorXd left_value(const SrvPieces& p, double t, bool periodic) {
  double u = periodic ? t - std::floor(t) : t;
  if (periodic && u == 0.0) u = 1.0;
  auto k = p.piece_of(u);
  if (k > 0 && u <= p.breaks[k]) --k;
  return p.value_in(k, u);
}

/// Partial derivatives of the objective w.r.t. every entry of t (index j for
/// t_j). Terms whose interval integral vanishes contribute zero.
inline std::vector<double> phi_gradient_full(const SrvPieces& p, const PiecewiseConstantSrv& q,
                                             std::span<const double> t, bool periodic) {
  const std::size_t m = q.segments();
  std::vector<double> integral(m), grad(m + 1, 0.0);
  for (std::size_t j = 0; j < m; ++j) integral[j] = p.positive_integral(t[j], t[j + 1], row(q.values, j), periodic);

  const auto term = [&](std::size_t j, const Eigen::VectorXd& pv) {
    if (integral[j] <= 0.0) return 0.0;
    const double f = std::max(0.0, pv.dot(row(q.values, j)));
    return std::sqrt(q.breaks[j + 1] - q.breaks[j]) * f * f / std::sqrt(integral[j]);
  };
  for (std::size_t j = 1; j < m; ++j)
    grad[j] = 0.5 * (term(j - 1, left_value(p, t[j], periodic)) - term(j, p.value(t[j], periodic)));
  if (periodic) {
    grad[0] = 0.5 * (term(m - 1, left_value(p, t[m], periodic)) - term(0, p.value(t[0], periodic)));
    grad[m] = 0.0;
  }
  return grad;
}

/// Exact argmax over [lo, hi] of
///   sqrt(w_prev int_lo^t <p, q_prev>_+^2) + sqrt(w_next int_t^hi <p, q_next>_+^2)
/// for piecewise-constant p. Candidates are the breakpoints of p in the range,
/// both ends, and the stationary point of every cell where both squared inner
/// products are positive; ties go to the smallest t.
inline CoordinateMax coordinate_max(const SrvPieces& p, const Eigen::VectorXd& q_prev,
                                    const Eigen::VectorXd& q_next, double w_prev, double w_next, double lo,
                                    double hi, bool periodic) {
  struct Cell {
    double x, y, c1, c2;
  };
  std::vector<Cell> cells;
  p.for_each_piece(lo, hi, periodic, [&](double x, double y, std::size_t k, double) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double a = p.left.row(kk).dot(q_prev);
    const double b = p.left.row(kk).dot(q_next);
    cells.push_back({x, y, a > 0.0 ? a * a : 0.0, b > 0.0 ? b * b : 0.0});
  });
  if (cells.empty()) return {lo, 0.0};

  const std::size_t n = cells.size();
  std::vector<double> before(n + 1, 0.0), after(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) before[i + 1] = before[i] + (cells[i].y - cells[i].x) * cells[i].c1;
  for (std::size_t i = n; i-- > 0;) after[i] = after[i + 1] + (cells[i].y - cells[i].x) * cells[i].c2;

  std::vector<CoordinateMax> candidates;
  candidates.reserve(2 * n + 1);
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = i < n ? cells[i].x : hi;
    candidates.push_back({t, std::sqrt(w_prev * before[i]) + std::sqrt(w_next * after[i])});
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double a1 = w_prev * cells[i].c1;
    const double a2 = w_next * cells[i].c2;
    if (!(a1 > 0.0 && a2 > 0.0)) continue;
    const double len = cells[i].y - cells[i].x;
    const double left = w_prev * before[i];
    const double right = w_next * after[i];
    // Root of a1 / sqrt(left + a1 tau) = a2 / sqrt(right - a2 tau).
    const double tau = (a1 * a1 * right - a2 * a2 * left) / (a1 * a2 * (a1 + a2));
    if (tau > 0.0 && tau < len) {
      candidates.push_back({cells[i].x + tau, std::sqrt(std::max(0.0, left + a1 * tau)) +
                                                  std::sqrt(std::max(0.0, right - a2 * tau))});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CoordinateMax& a, const CoordinateMax& b) { return a.t < b.t; });
  CoordinateMax best = candidates.front();
  for (const auto& c : candidates) {
    if (c.value > best.value + tie_tolerance(best.value)) best = c;
  }
  return best;
}

/// Same objective as coordinate_max for piecewise-linear p. The range is cut
/// into cells on which both inner products are linear with constant sign, so
/// both integrals are cubic in t. Local maxima inside a cell are bracketed by
/// sign changes of the derivative on a fixed sub-grid and refined by
/// bisection; cell ends are candidates too. Ties go to the smallest t.
inline CoordinateMax linear_coordinate_max(const SrvPieces& p, const Eigen::VectorXd& q_prev,
                                           const Eigen::VectorXd& q_next, double w_prev, double w_next,
                                           double lo, double hi, bool periodic) {
  struct Cell {
    double x, len;
    double a1, b1;  // <p, q_prev>_+ = a1 + b1 * tau on [0, len] (zero if not positive)
    double a2, b2;
    double before, after;  // integrals of the two squares left of x / right of x
  };
  std::vector<Cell> cells;
  p.for_each_piece(lo, hi, periodic, [&](double x, double y, std::size_t k, double offset) {
    const auto kk = static_cast<Eigen::Index>(k);
    const double fa1 = p.left.row(kk).dot(q_prev), fb1 = p.right.row(kk).dot(q_prev);
    const double fa2 = p.left.row(kk).dot(q_next), fb2 = p.right.row(kk).dot(q_next);
    const double wx = p.fraction(k, x - offset), wy = p.fraction(k, y - offset);
    const double f1x = fa1 + (fb1 - fa1) * wx, f1y = fa1 + (fb1 - fa1) * wy;
    const double f2x = fa2 + (fb2 - fa2) * wx, f2y = fa2 + (fb2 - fa2) * wy;
    std::vector<double> cuts{x, y};
    if ((f1x > 0.0) != (f1y > 0.0) && f1x != f1y) cuts.push_back(x + (y - x) * f1x / (f1x - f1y));
    if ((f2x > 0.0) != (f2y > 0.0) && f2x != f2y) cuts.push_back(x + (y - x) * f2x / (f2x - f2y));
    std::sort(cuts.begin(), cuts.end());
    const double s1 = (f1y - f1x) / (y - x), s2 = (f2y - f2x) / (y - x);
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double cx = std::clamp(cuts[c], x, y), cy = std::clamp(cuts[c + 1], x, y);
      if (!(cy > cx)) continue;
      const double mid = 0.5 * (cx + cy) - x;
      const bool pos1 = f1x + s1 * mid > 0.0, pos2 = f2x + s2 * mid > 0.0;
      cells.push_back({cx, cy - cx, pos1 ? f1x + s1 * (cx - x) : 0.0, pos1 ? s1 : 0.0,
                       pos2 ? f2x + s2 * (cx - x) : 0.0, pos2 ? s2 : 0.0, 0.0, 0.0});
    }
  });
  if (cells.empty()) return {lo, 0.0};
  // int_0^tau (a + b s)^2 ds
  const auto square_integral = [](double a, double b, double tau) {
    return tau * (a * a + a * b * tau + b * b * tau * tau / 3.0);
  };
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const Cell& c = cells[i - 1];
    cells[i].before = c.before + square_integral(c.a1, c.b1, c.len);
  }
  for (std::size_t i = cells.size() - 1; i-- > 0;) {
    const Cell& c = cells[i + 1];
    cells[i].after = c.after + square_integral(c.a2, c.b2, c.len);
  }
  const auto left_of = [&](const Cell& c, double tau) {
    return std::max(0.0, c.before + square_integral(c.a1, c.b1, tau));
  };
  const auto right_of = [&](const Cell& c, double tau) {
    return std::max(0.0, c.after + square_integral(c.a2, c.b2, c.len) - square_integral(c.a2, c.b2, tau));
  };
  const auto value = [&](const Cell& c, double tau) {
    return std::sqrt(w_prev * left_of(c, tau)) + std::sqrt(w_next * right_of(c, tau));
  };
  // dL/dtau times 2 sqrt(w_prev A) sqrt(w_next B), which has the same sign.
  const auto slope = [&](const Cell& c, double tau) {
    const double f1 = c.a1 + c.b1 * tau, f2 = c.a2 + c.b2 * tau;
    return w_prev * f1 * f1 * std::sqrt(w_next * right_of(c, tau)) -
           w_next * f2 * f2 * std::sqrt(w_prev * left_of(c, tau));
  };

  std::vector<CoordinateMax> candidates;
  for (const Cell& c : cells) {
    candidates.push_back({c.x, value(c, 0.0)});
    constexpr int kGrid = 8;
    double prev_tau = 0.0;
    double prev_slope = slope(c, 0.0);
    for (int g = 1; g <= kGrid; ++g) {
      const double tau = c.len * g / kGrid;
      const double cur = slope(c, tau);
      if (prev_slope > 0.0 && cur < 0.0) {
        double a = prev_tau, b = tau;
        for (int it = 0; it < 100 && b - a > 1e-15 * std::max(1.0, std::abs(c.x)); ++it) {
          const double m = 0.5 * (a + b);
          (slope(c, m) > 0.0 ? a : b) = m;
        }
        const double root = 0.5 * (a + b);
        candidates.push_back({c.x + root, value(c, root)});
      }
      prev_tau = tau;
      prev_slope = cur;
    }
  }
  candidates.push_back({hi, value(cells.back(), cells.back().len)});
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const CoordinateMax& a, const CoordinateMax& b) { return a.t < b.t; });
  CoordinateMax best = candidates.front();
  for (const auto& c : candidates)
    if (c.value > best.value + tie_tolerance(best.value)) best = c;
  return best;
}

/// Best value of t_j given its neighbours (1 <= j <= m-1).
inline CoordinateMax interior_move(const SrvPieces& p, const PiecewiseConstantSrv& q, std::span<const double> t,
                                   std::size_t j, bool periodic) {
  const double w_prev = q.breaks[j] - q.breaks[j - 1];
  const double w_next = q.breaks[j + 1] - q.breaks[j];
  if (p.piecewise_constant)
    return coordinate_max(p, row(q.values, j - 1), row(q.values, j), w_prev, w_next, t[j - 1], t[j + 1], periodic);
  return linear_coordinate_max(p, row(q.values, j - 1), row(q.values, j), w_prev, w_next, t[j - 1], t[j + 1],
                               periodic);
}

/// Best value of t_0 (closed curves) with t_m = t_0 + 1 and the rest fixed.
/// Substituting v = t_0 + 1 turns this into a coordinate move of v over
/// [t_{m-1}, t_1 + 1] between segments m-1 and 0.
inline CoordinateMax start_move(const SrvPieces& p, const PiecewiseConstantSrv& q, std::span<const double> t) {
  const std::size_t m = q.segments();
  const double w_prev = q.breaks[m] - q.breaks[m - 1];
  const double w_next = q.breaks[1] - q.breaks[0];
  const double lo = t[m - 1];
  const double hi = t[1] + 1.0;
  CoordinateMax best = p.piecewise_constant
                           ? coordinate_max(p, row(q.values, m - 1), row(q.values, 0), w_prev, w_next, lo, hi, true)
                           : linear_coordinate_max(p, row(q.values, m - 1), row(q.values, 0), w_prev, w_next, lo,
                                                   hi, true);
  best.t -= 1.0;
  return best;
}

/// Shifts a closed assignment by an integer so that t_0 stays in [-1, 1].
inline double closed_shift(std::span<const double> t) {
  return (t.front() < -1.0 || t.front() > 1.0) ? -std::floor(t.front()) : 0.0;
}

inline double distance_sq(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

/// Best joint value of the tied entries t_a = ... = t_b. Runs of equal
/// entries cannot be separated by single-coordinate moves, so each prefix,
/// each suffix and the whole run are also moved as one coordinate between
/// their outer neighbours. Returns the new assignment if that raises the
/// objective by more than the tie tolerance.
inline bool tied_run_moves(const SrvPieces& p, const PiecewiseConstantSrv& q, std::vector<double>& t, bool periodic) {
  const std::size_t m = q.segments();
  const double before = phi(p, q, t, periodic);
  double best_value = before;
  std::vector<double> best_t;
  const auto joint = [&](std::size_t first, std::size_t last) {
    const double w_prev = q.breaks[first] - q.breaks[first - 1];
    const double w_next = q.breaks[last + 1] - q.breaks[last];
    const auto moved = p.piecewise_constant
                           ? coordinate_max(p, row(q.values, first - 1), row(q.values, last), w_prev, w_next,
                                            t[first - 1], t[last + 1], periodic)
                           : linear_coordinate_max(p, row(q.values, first - 1), row(q.values, last), w_prev,
                                                   w_next, t[first - 1], t[last + 1], periodic);
    std::vector<double> trial = t;
    for (std::size_t i = first; i <= last; ++i) trial[i] = moved.t;
    const double value = phi(p, q, trial, periodic);
    if (value > best_value + tie_tolerance(best_value)) {
      best_value = value;
      best_t = std::move(trial);
    }
  };
  for (std::size_t a = 1; a < m;) {
    std::size_t b = a;
    while (b + 1 < m && t[b + 1] == t[a]) ++b;
    if (b > a) {
      for (std::size_t c = a; c <= b; ++c) {
        joint(a, c);
        joint(c, b);
      }
    }
    a = b + 1;
  }
  if (best_t.empty()) return false;
  t = std::move(best_t);
  return true;
}

/// Closed-curve tied-run moves. Runs through t_0 become interior after
/// relabelling the polygon to start at corner m/2, which leaves the
/// objective unchanged.
inline bool closed_tied_run_moves(const SrvPieces& p, const PiecewiseConstantSrv& q, std::vector<double>& t) {
  if (tied_run_moves(p, q, t, true)) return true;
  const std::size_t m = q.segments();
  const std::size_t r = m / 2;
  PiecewiseConstantSrv rotated{std::vector<double>(m + 1), Eigen::MatrixXd(q.values.rows(), q.values.cols())};
  std::vector<double> u(m + 1);
  for (std::size_t i = 0; i <= m; ++i) {
    const std::size_t j = (i + r) % m;
    const double wrap = i + r >= m ? 1.0 : 0.0;
    rotated.breaks[i] = q.breaks[j] + wrap - q.breaks[r];
    u[i] = t[j] + wrap;
    if (i < m) rotated.values.row(static_cast<Eigen::Index>(i)) = q.values.row(static_cast<Eigen::Index>(j));
  }
  rotated.breaks.back() = 1.0;
  u.back() = u.front() + 1.0;
  if (!tied_run_moves(p, rotated, u, true)) return false;
  for (std::size_t i = 0; i <= m; ++i) {
    const std::size_t j = (i + r) % m;
    t[j] = u[i] - (i + r >= m ? 1.0 : 0.0);
  }
  t[m] = t[0] + 1.0;
  return true;
}

struct RunResult {
  std::vector<double> t;
  double phi = 0.0;
  int sweeps = 0;
  bool converged = false;
};

/// Alternating-parity coordinate ascent for piecewise-constant p (closed
/// curves additionally update t_0 on even sweeps).
inline RunResult coordinate_ascent(const SrvPieces& p, const PiecewiseConstantSrv& q, std::vector<double> t,
                                   bool periodic, const AlignOptions& opts, std::size_t start_index) {
  const std::size_t m = q.segments();
  RunResult run;
  run.phi = phi(p, q, t, periodic);
  if (opts.on_sweep) opts.on_sweep(start_index, 0, run.phi);
  if (m < 2 && !periodic) {
    run.t = std::move(t);
    run.converged = true;
    return run;
  }
  std::vector<std::vector<double>> history{t};
  const double eps_sq = opts.eps * opts.eps;
  for (int k = 1; k <= opts.max_sweeps; ++k) {
    const std::vector<double> prev = t;
    for (std::size_t j = 1; j < m; ++j) {
      if ((static_cast<long>(j) - k) % 2 == 0) t[j] = interior_move(p, q, prev, j, periodic).t;
    }
    if (periodic && k % 2 == 0) {
      t[0] = start_move(p, q, t).t;
      t[m] = t[0] + 1.0;
      if (const double shift = closed_shift(t); shift != 0.0) {
        for (auto& v : t) v += shift;
        for (auto& h : history)
          for (auto& v : h) v += shift;
      }
    }
    history.push_back(t);
    run.sweeps = k;
    const double value = phi(p, q, t, periodic);
    if (opts.on_sweep) opts.on_sweep(start_index, k, value);
    run.phi = value;
    if (k >= 3) {
      const auto n = history.size();
      if (distance_sq(history[n - 1], history[n - 3]) < eps_sq &&
          distance_sq(history[n - 2], history[n - 4]) < eps_sq) {
        if (periodic ? closed_tied_run_moves(p, q, t) : tied_run_moves(p, q, t, false)) {
          if (const double shift = closed_shift(t); shift != 0.0)
            for (auto& v : t) v += shift;
          run.phi = phi(p, q, t, periodic);
          history.push_back(t);
          continue;
        }
        run.converged = true;
        break;
      }
    }
  }
  run.t = std::move(t);
  return run;
}

/// Pool-adjacent-violators: least-squares non-decreasing fit (equal weights).
inline void isotonic_in_place(std::span<double> values) {
  struct Block {
    double sum;
    std::size_t count;
  };
  std::vector<Block> blocks;
  for (double v : values) {
    blocks.push_back({v, 1});
    while (blocks.size() > 1) {
      const Block& b = blocks.back();
      const Block& a = blocks[blocks.size() - 2];
      if (a.sum / static_cast<double>(a.count) <= b.sum / static_cast<double>(b.count)) break;
      const Block merged{a.sum + b.sum, a.count + b.count};
      blocks.pop_back();
      blocks.back() = merged;
    }
  }
  std::size_t i = 0;
  for (const auto& b : blocks) {
    const double mean = b.sum / static_cast<double>(b.count);
    for (std::size_t c = 0; c < b.count; ++c) values[i++] = mean;
  }
}

/// Maps a trial point back onto the feasible set: interior entries are made
/// monotone and clipped to [t_0, t_0 + 1] (t_0 = 0 for open curves).
inline void project_feasible(std::vector<double>& t, bool periodic) {
  const std::size_t m = t.size() - 1;
  if (!periodic) t[0] = 0.0;
  t[m] = t[0] + 1.0;
  std::span<double> interior(t.data() + 1, m - 1);
  isotonic_in_place(interior);
  for (auto& v : interior) v = std::clamp(v, t[0], t[m]);
}

/// Hessian of the objective w.r.t. the free entries of t (t_1..t_{m-1} for
/// open curves, t_0..t_{m-1} for closed ones where t_m = t_0 + 1). Segments
/// with a vanishing integral are skipped, like in the gradient.
inline Eigen::MatrixXd phi_hessian(const SrvPieces& p, const PiecewiseConstantSrv& q, std::span<const double> t,
                                   bool periodic) {
  const std::size_t m = q.segments();
  Eigen::MatrixXd full = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m + 1), static_cast<Eigen::Index>(m + 1));
  // Value and slope of <p*, v> at u, from the left or from the right.
  const auto probe = [&](double u, const Eigen::VectorXd& v, bool from_left) {
    double w = periodic ? u - std::floor(u) : u;
    if (from_left && periodic && w == 0.0) w = 1.0;
    auto k = p.piece_of(w);
    if (from_left && k > 0 && w <= p.breaks[k]) --k;
    const auto kk = static_cast<Eigen::Index>(k);
    const double slope = (p.right.row(kk) - p.left.row(kk)).dot(v) / (p.breaks[k + 1] - p.breaks[k]);
    return std::pair{p.value_in(k, w).dot(v), slope};
  };
  for (std::size_t j = 0; j < m; ++j) {
    const Eigen::VectorXd qj = row(q.values, j);
    const double integral = p.positive_integral(t[j], t[j + 1], qj, periodic);
    if (!(integral > 0.0)) continue;
    const double w = q.breaks[j + 1] - q.breaks[j];
    const double phi_j = std::sqrt(w * integral);
    const double cube = 4.0 * phi_j * phi_j * phi_j;
    const auto [fl_raw, sl] = probe(t[j], qj, false);
    const auto [fr_raw, sr] = probe(t[j + 1], qj, true);
    const double fl = std::max(0.0, fl_raw), fr = std::max(0.0, fr_raw);
    const double gl = fl * fl, gr = fr * fr;
    const auto a = static_cast<Eigen::Index>(j), b = a + 1;
    full(b, b) += w * 2.0 * fr * sr / (2.0 * phi_j) - w * w * gr * gr / cube;
    full(a, a) += -w * 2.0 * fl * sl / (2.0 * phi_j) - w * w * gl * gl / cube;
    full(a, b) += w * w * gl * gr / cube;
    full(b, a) += w * w * gl * gr / cube;
  }
  const auto n = static_cast<Eigen::Index>(m);
  if (!periodic) return full.block(1, 1, n - 1, n - 1);
  // Fold t_m = t_0 + 1 into t_0.
  Eigen::MatrixXd out = full.topLeftCorner(n, n);
  out.row(0) += full.row(n).head(n);
  out.col(0) += full.col(n).head(n);
  out(0, 0) += full(n, n);
  return out;
}

/// One Gauss-Seidel sweep of exact coordinate moves over t_1..t_{m-1} (and
/// t_0 for closed curves). Each move only changes the two adjacent segment
/// terms, so the objective is updated locally. Returns the new objective.
inline double coordinate_sweep(const SrvPieces& p, const PiecewiseConstantSrv& q, std::vector<double>& t,
                               bool periodic, double value) {
  const std::size_t m = q.segments();
  const auto term = [&](std::size_t j, double lo, double hi) {
    return std::sqrt((q.breaks[j + 1] - q.breaks[j]) * p.positive_integral(lo, hi, row(q.values, j), periodic));
  };
  for (std::size_t j = 1; j < m; ++j) {
    const double old_pair = term(j - 1, t[j - 1], t[j]) + term(j, t[j], t[j + 1]);
    const auto move = interior_move(p, q, t, j, periodic);
    if (move.value > old_pair + tie_tolerance(old_pair)) {
      value += move.value - old_pair;
      t[j] = move.t;
    }
  }
  if (periodic) {
    const double old_pair = term(m - 1, t[m - 1], t[m]) + term(0, t[0], t[1]);
    const auto move = start_move(p, q, t);
    if (move.value > old_pair + tie_tolerance(old_pair)) {
      value += move.value - old_pair;
      t[0] = move.t;
      t[m] = move.t + 1.0;
    }
    if (const double shift = closed_shift(t); shift != 0.0)
      for (auto& v : t) v += shift;
  }
  return value;
}

/// Ascent against a piecewise-linear p. Every iteration takes a projected
/// Newton-scaled step in t_1..t_{m-1} (regularised Hessian, backtracking line
/// search) followed by a sweep of exact coordinate moves. The sweeps handle
/// kinks of the objective and reopen collapsed segments, which have no
/// gradient. The run ends when an iteration moves t by less than eps and
/// improves the objective by a negligible amount.
inline RunResult projected_ascent(const SrvPieces& p, const PiecewiseConstantSrv& q, std::vector<double> t,
                                  bool periodic, const AlignOptions& opts, std::size_t start_index) {
  const std::size_t m = q.segments();
  RunResult run;
  run.phi = phi(p, q, t, periodic);
  if (opts.on_sweep) opts.on_sweep(start_index, 0, run.phi);
  if (m < 2) {
    run.t = std::move(t);
    run.converged = true;
    return run;
  }
  const auto nfree = static_cast<Eigen::Index>(m - 1);
  for (int it = 1; it <= opts.max_gradient_iters; ++it) {
    run.sweeps = it;
    const std::vector<double> before_t = t;
    const double before = run.phi;
    const auto grad_full = phi_gradient_full(p, q, t, periodic);
    Eigen::VectorXd grad(nfree);
    for (Eigen::Index i = 0; i < nfree; ++i) grad(i) = grad_full[static_cast<std::size_t>(i) + 1];

    // Runs of equal entries move together; runs tied to t_0 or t_m stay put.
    std::vector<Eigen::Index> group(static_cast<std::size_t>(nfree), -1);
    Eigen::Index groups = 0;
    for (std::size_t j = 1; j < m; ++j) {
      if (t[j] == t[0] || t[j] == t[m]) continue;
      const bool joins = j > 1 && t[j] == t[j - 1] && group[j - 2] >= 0;
      group[j - 1] = joins ? group[j - 2] : groups++;
    }
    if (groups > 0) {
      Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(nfree, groups);
      for (Eigen::Index i = 0; i < nfree; ++i)
        if (group[static_cast<std::size_t>(i)] >= 0) basis(i, group[static_cast<std::size_t>(i)]) = 1.0;
      const Eigen::VectorXd reduced_grad = basis.transpose() * grad;
      const Eigen::MatrixXd curvature =
          basis.transpose() * (-phi_hessian(p, q, t, periodic).bottomRightCorner(nfree, nfree)) * basis;
      const double scale = std::max(curvature.diagonal().cwiseAbs().maxCoeff(), 1e-300);
      Eigen::VectorXd direction = reduced_grad;
      for (double shift = 0.0; shift < 1e12 * scale; shift = std::max(1e-10 * scale, 10.0 * shift)) {
        Eigen::MatrixXd shifted = curvature;
        shifted.diagonal().array() += shift;
        const Eigen::LLT<Eigen::MatrixXd> llt(shifted);
        if (llt.info() == Eigen::Success) {
          direction = llt.solve(reduced_grad);
          break;
        }
      }
      const Eigen::VectorXd full_direction = basis * direction;
      for (double alpha = 1.0; alpha > 1e-12; alpha *= 0.5) {
        std::vector<double> trial = t;
        for (Eigen::Index i = 0; i < nfree; ++i)
          trial[static_cast<std::size_t>(i) + 1] += alpha * full_direction(i);
        project_feasible(trial, periodic);
        double ascent = 0.0;
        for (Eigen::Index i = 0; i < nfree; ++i)
          ascent += grad(i) * (trial[static_cast<std::size_t>(i) + 1] - t[static_cast<std::size_t>(i) + 1]);
        const double value = phi(p, q, trial, periodic);
        if (ascent > 0.0 && value >= run.phi + 1e-4 * ascent) {
          t = std::move(trial);
          run.phi = value;
          break;
        }
      }
    }
    run.phi = coordinate_sweep(p, q, t, periodic, run.phi);
    if (opts.on_sweep) opts.on_sweep(start_index, it, run.phi);
    const bool small_step = std::sqrt(distance_sq(t, before_t)) < opts.eps;
    if (small_step && run.phi - before <= 1e-10 * std::max(1.0, std::abs(run.phi))) {
      run.converged = true;
      break;
    }
  }
  // Local updates accumulate rounding; report the exact value.
  run.phi = phi(p, q, t, periodic);
  run.t = std::move(t);
  return run;
}

inline void validate_srv(const PiecewiseConstantSrv& q) {
  if (q.breaks.size() < 2 || static_cast<std::size_t>(q.values.rows()) != q.breaks.size() - 1)
    throw ValidationError("polygon SRV has inconsistent breaks and values");
  if (q.breaks.front() != 0.0 || q.breaks.back() != 1.0)
    throw ValidationError("polygon SRV breaks must start at 0 and end at 1");
  require_strictly_increasing(q.breaks, "polygon SRV breaks");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public objective evaluation

/// Types usable as the fixed SRV curve p.
template <typename P>
concept SrvCurve = requires(const P& p) { detail::SrvPieces::from(p); };

/// Open-curve objective for the warp assignment t of polygon q against p.
template <SrvCurve P>
double phi_open(const P& p, const PiecewiseConstantSrv& q, const WarpAssignment& t) {
  detail::validate_srv(q);
  if (t.closed) throw ValidationError("phi_open needs an open warp assignment");
  t.validate(q.segments());
  const auto pieces = detail::SrvPieces::from(p);
  if (pieces.dim() != q.dim()) throw ValidationError("dimension mismatch between p and q");
  return detail::phi(pieces, q, t.t, false);
}

/// Closed-curve objective using the periodic extension of p.
template <SrvCurve P>
double phi_closed(const P& p, const PiecewiseConstantSrv& q, const WarpAssignment& t) {
  detail::validate_srv(q);
  if (!t.closed) throw ValidationError("phi_closed needs a closed warp assignment");
  t.validate(q.segments());
  const auto pieces = detail::SrvPieces::from(p);
  if (pieces.dim() != q.dim()) throw ValidationError("dimension mismatch between p and q");
  return detail::phi(pieces, q, t.t, true);
}

/// Partial derivatives of the objective. Open assignments yield d/dt_1 ..
/// d/dt_{m-1}; closed ones d/dt_0 .. d/dt_{m-1}. Throws if two adjacent
/// entries coincide, where the objective is not differentiable.
template <SrvCurve P>
Eigen::VectorXd phi_gradient(const P& p, const PiecewiseConstantSrv& q, const WarpAssignment& t) {
  detail::validate_srv(q);
  t.validate(q.segments());
  for (std::size_t j = 0; j + 1 < t.t.size(); ++j) {
    if (!(t.t[j + 1] > t.t[j]))
      throw ValidationError("phi_gradient: coincident entries t_" + std::to_string(j) + " and t_" +
                            std::to_string(j + 1) + "; use coordinate moves instead");
  }
  const auto pieces = detail::SrvPieces::from(p);
  const auto full = detail::phi_gradient_full(pieces, q, t.t, t.closed);
  const std::size_t m = q.segments();
  const std::size_t first = t.closed ? 0 : 1;
  Eigen::VectorXd out(static_cast<Eigen::Index>(m - first));
  for (std::size_t j = first; j < m; ++j) out(static_cast<Eigen::Index>(j - first)) = full[j];
  return out;
}

/// Maximises over t in [lo, hi] the objective of the two polygon segments
/// [s_prev, s_mid] and [s_mid, s_next] of q, warped onto [lo, t] and [t, hi],
/// with p piecewise constant (extended periodically if requested).
inline CoordinateMax coordinate_max(const PiecewiseConstantSrv& p, const Eigen::VectorXd& q_prev,
                                    const Eigen::VectorXd& q_next, double s_prev, double s_mid, double s_next,
                                    double lo, double hi, bool periodic = false) {
  if (!(lo <= hi)) throw ValidationError("coordinate_max needs lo <= hi");
  if (!periodic && (lo < 0.0 || hi > 1.0)) throw ValidationError("coordinate_max range must lie within [0, 1]");
  return detail::coordinate_max(detail::SrvPieces::from(p), q_prev, q_next, s_mid - s_prev, s_next - s_mid, lo, hi,
                                periodic);
}

// ---------------------------------------------------------------------------
// Starting values

/// Arc-length (t = s) and uniform starts; closed curves get each of them
/// shifted by t_0 in {0, 0.2, 0.4, 0.6, 0.8}.
inline std::vector<WarpAssignment> default_starts(const PiecewiseConstantSrv& q, bool closed) {
  const std::size_t m = q.segments();
  WarpAssignment arc{q.breaks, closed};
  WarpAssignment uniform{std::vector<double>(m + 1), closed};
  for (std::size_t j = 0; j <= m; ++j) uniform.t[j] = static_cast<double>(j) / static_cast<double>(m);
  uniform.t.back() = 1.0;
  if (!closed) return {arc, uniform};
  std::vector<WarpAssignment> out;
  for (int i = 0; i < 5; ++i) {
    const double shift = 0.2 * i;
    for (const auto& base : {arc, uniform}) {
      WarpAssignment s = base;
      for (auto& v : s.t) v += shift;
      s.t.back() = s.t.front() + 1.0;
      out.push_back(std::move(s));
    }
  }
  return out;
}

/// `count` random feasible assignments (sorted uniform draws; closed curves
/// also draw t_0 from [0, 1)).
inline std::vector<WarpAssignment> random_starts(std::size_t m, bool closed, int count, std::uint64_t seed) {
  std::vector<WarpAssignment> out;
  for (int i = 0; i < count; ++i) {
    Rng rng(seed, static_cast<std::uint64_t>(i));
    WarpAssignment s{std::vector<double>(m + 1), closed};
    const double t0 = closed ? rng.uniform() : 0.0;
    s.t.front() = t0;
    for (std::size_t j = 1; j < m; ++j) s.t[j] = t0 + rng.uniform();
    std::sort(s.t.begin() + 1, s.t.end() - 1);
    s.t.back() = t0 + 1.0;
    out.push_back(std::move(s));
  }
  return out;
}

namespace detail {

/// Assignment with every t_j on a grid of `points` cells over [t_0, t_0 + 1]
/// that maximises the objective among such assignments, found by dynamic
/// programming over (segment, grid cell). Closed curves try `anchors` equally
/// spaced values of t_0. Used as a starting value for the local search.
inline WarpAssignment grid_start(const SrvPieces& p, const PiecewiseConstantSrv& q, bool closed, int points,
                                 int anchors) {
  const std::size_t m = q.segments();
  const auto g = static_cast<std::size_t>(points);
  const int tries = closed ? std::max(anchors, 1) : 1;
  WarpAssignment best{std::vector<double>(m + 1), closed};
  double best_value = -1.0;
  std::vector<double> grid(g + 1);
  std::vector<double> cumulative(g + 1);
  std::vector<std::vector<double>> sums(m, std::vector<double>(g + 1));
  std::vector<std::vector<std::size_t>> from(m, std::vector<std::size_t>(g + 1));
  std::vector<double> value(g + 1);
  std::vector<double> next(g + 1);
  for (int a = 0; a < tries; ++a) {
    const double t0 = static_cast<double>(a) / tries;
    for (std::size_t k = 0; k <= g; ++k) grid[k] = t0 + static_cast<double>(k) / static_cast<double>(g);
    for (std::size_t j = 0; j < m; ++j) {
      const Eigen::VectorXd qj = row(q.values, j);
      sums[j][0] = 0.0;
      for (std::size_t k = 1; k <= g; ++k)
        sums[j][k] = sums[j][k - 1] + p.positive_integral(grid[k - 1], grid[k], qj, closed);
    }
    std::fill(value.begin(), value.end(), -1.0);
    value[0] = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double ds = q.breaks[j + 1] - q.breaks[j];
      for (std::size_t b = 0; b <= g; ++b) {
        double top = -1.0;
        std::size_t arg = 0;
        for (std::size_t k = 0; k <= b; ++k) {
          if (value[k] < 0.0) continue;
          const double v = value[k] + std::sqrt(ds * std::max(sums[j][b] - sums[j][k], 0.0));
          if (v > top) {
            top = v;
            arg = k;
          }
        }
        next[b] = top;
        from[j][b] = arg;
      }
      std::swap(value, next);
    }
    if (value[g] > best_value) {
      best_value = value[g];
      std::size_t k = g;
      for (std::size_t j = m; j-- > 0;) {
        best.t[j + 1] = grid[k];
        k = from[j][k];
      }
      best.t.front() = t0;
      best.t.back() = t0 + 1.0;
    }
  }
  return best;
}

enum class Method { CoordinateAscent, ProjectedAscent };

/// Squared L2 distance between p and q warped by the optimal warp for t,
/// accumulated from non-negative residuals. Equals |p|^2 + |q|^2 - 2 phi but
/// stays accurate when the distance is near zero.
inline double warped_distance_sq(const SrvPieces& p, const PiecewiseConstantSrv& q, std::span<const double> t,
                                 bool periodic) {
  double total = 0.0;
  for (std::size_t j = 0; j < q.segments(); ++j) {
    const Eigen::VectorXd qj = row(q.values, j);
    const double ds = q.breaks[j + 1] - q.breaks[j];
    const double integral = p.positive_integral(t[j], t[j + 1], qj, periodic);
    const double scale = integral > 0.0 ? std::sqrt(ds / integral) : 0.0;
    total += p.residual_sq(t[j], t[j + 1], qj, scale, periodic);
    // A segment with nothing to match is traversed instantly.
    if (!(integral > 0.0)) total += ds * qj.squaredNorm();
  }
  return total;
}

inline AlignmentResult align(const SrvPieces& p, const PiecewiseConstantSrv& q, bool closed, const AlignOptions& opts,
                             Method method) {
  validate_srv(q);
  if (p.dim() != q.dim()) throw ValidationError("dimension mismatch between p and q");
  if (!(opts.eps > 0.0)) throw ValidationError("eps must be positive");
  const std::size_t m = q.segments();
  if (closed && m < 2) throw ValidationError("closed alignment needs at least 2 polygon segments");

  std::vector<WarpAssignment> starts = opts.starts;
  if (opts.default_starts) {
    auto defaults = default_starts(q, closed);
    starts.insert(starts.end(), defaults.begin(), defaults.end());
    if (opts.grid_points > 0) starts.push_back(grid_start(p, q, closed, opts.grid_points, opts.grid_anchors));
  }
  if (opts.restarts > 0) {
    auto extra = random_starts(m, closed, opts.restarts, opts.seed);
    starts.insert(starts.end(), extra.begin(), extra.end());
  }
  if (starts.empty()) throw ValidationError("no starting values for alignment");

  AlignmentResult best;
  bool have = false;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    if (starts[i].closed != closed) throw ValidationError("start does not match the open/closed setting");
    starts[i].validate(m);
    RunResult run = method == Method::CoordinateAscent ? coordinate_ascent(p, q, starts[i].t, closed, opts, i)
                                                       : projected_ascent(p, q, starts[i].t, closed, opts, i);
    if (!have || run.phi > best.phi + tie_tolerance(best.phi)) {
      best.assignment = WarpAssignment{std::move(run.t), closed};
      best.phi = run.phi;
      best.sweeps = run.sweeps;
      best.converged = run.converged;
      have = true;
    }
  }
  best.restarts_used = static_cast<int>(starts.size());
  best.p_norm_sq = p.l2_norm_sq();
  best.q_norm_sq = q.l2_norm_sq();
  best.distance = std::sqrt(warped_distance_sq(p, q, best.assignment.t, closed));
  return best;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Alignment entry points

/// Coordinate-ascent alignment of polygon q to piecewise-constant p (open).
template <SrvCurve P>
AlignmentResult align_open_polygons(const P& p, const PiecewiseConstantSrv& q, const AlignOptions& opts = {}) {
  const auto pieces = detail::SrvPieces::from(p);
  if (!pieces.piecewise_constant) throw ValidationError("align_open_polygons needs a piecewise-constant p");
  return detail::align(pieces, q, false, opts, detail::Method::CoordinateAscent);
}

/// Closed-curve variant, also optimising the start time t_0.
template <SrvCurve P>
AlignmentResult align_closed_polygons(const P& p, const PiecewiseConstantSrv& q, const AlignOptions& opts = {}) {
  const auto pieces = detail::SrvPieces::from(p);
  if (!pieces.piecewise_constant) throw ValidationError("align_closed_polygons needs a piecewise-constant p");
  return detail::align(pieces, q, true, opts, detail::Method::CoordinateAscent);
}

/// Aligns polygon q to an SRV spline. Degree-1 splines use projected gradient
/// ascent; piecewise-constant ones (degree 0 or constant coefficients) are
/// delegated to coordinate ascent.
inline AlignmentResult align_polygon_to_spline(const SrvSpline& p, const PiecewiseConstantSrv& q, bool closed,
                                               const AlignOptions& opts = {}) {
  const auto pieces = detail::SrvPieces::from(p);
  const auto method =
      pieces.piecewise_constant ? detail::Method::CoordinateAscent : detail::Method::ProjectedAscent;
  return detail::align(pieces, q, closed, opts, method);
}

}  // namespace elastic
