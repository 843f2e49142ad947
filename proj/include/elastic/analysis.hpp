#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "elastic/curve.hpp"
#include "elastic/distance.hpp"
#include "elastic/errors.hpp"
#include "elastic/parallel.hpp"

namespace elastic {

// ---------------------------------------------------------------------------
// Distance matrices

struct DistanceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;
  /// |d(i as polygon, j) - d(j as polygon, i)| per pair.
  Eigen::MatrixXd asymmetry;

  [[nodiscard]] std::size_t size() const { return static_cast<std::size_t>(values.rows()); }
  [[nodiscard]] double max_asymmetry() const { return asymmetry.size() ? asymmetry.maxCoeff() : 0.0; }

  void validate() const {
    if (values.rows() != values.cols()) throw ValidationError("distance matrix must be square");
    if (!labels.empty() && labels.size() != size()) throw ValidationError("distance matrix label count mismatch");
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      if (values(i, i) != 0.0) throw ValidationError("distance matrix diagonal must be zero");
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        if (!std::isfinite(values(i, j)) || values(i, j) < 0.0)
          throw ValidationError("distance matrix entries must be finite and non-negative");
        if (values(i, j) != values(j, i)) throw ValidationError("distance matrix must be symmetric");
      }
    }
  }
};

struct DistanceMatrixOptions {
  AlignOptions align;
  std::size_t jobs = 1;
};

/// Pairwise elastic distances. Every pair is aligned twice, once with each
/// curve as the warped polygon, and the smaller distance is kept.
inline DistanceMatrix distance_matrix(std::span<const DiscreteCurve> curves, std::vector<std::string> labels = {},
                                      const DistanceMatrixOptions& opts = {}) {
  const std::size_t n = curves.size();
  if (n < 2) throw ValidationError("distance matrix needs at least 2 curves");
  for (const auto& c : curves) {
    if (c.dim() != curves.front().dim()) throw ValidationError("curves have different dimensions");
    if (c.closed != curves.front().closed) throw ValidationError("cannot mix open and closed curves");
  }
  if (labels.empty())
    for (std::size_t i = 0; i < n; ++i) labels.push_back(std::to_string(i));
  if (labels.size() != n) throw ValidationError("label count does not match curve count");

  std::vector<std::pair<std::size_t, std::size_t>> tasks;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) tasks.emplace_back(i, j);
  // d_ij: curve i warped onto curve j.
  Eigen::MatrixXd directed = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  parallel_for(tasks.size(), opts.jobs, [&](std::size_t k) {
    const auto [i, j] = tasks[k];
    DistanceOptions dopts{opts.align, PolygonRole::First};
    directed(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = elastic_distance(curves[i], curves[j], dopts);
  });

  DistanceMatrix out;
  out.values = directed.cwiseMin(directed.transpose());
  out.values.diagonal().setZero();
  out.asymmetry = (directed - directed.transpose()).cwiseAbs();
  out.labels = std::move(labels);
  return out;
}

// ---------------------------------------------------------------------------
// Average-linkage clustering

struct Merge {
  std::size_t left;   // cluster ids: 0..n-1 are the leaves, n + i is merge i
  std::size_t right;
  double height;
};

struct Clustering {
  /// Cluster of each item, numbered 0.. by first appearance.
  std::vector<int> labels;
  std::vector<Merge> merges;
  int clusters = 0;
};

/// Cluster count chosen by the elbow rule from non-decreasing merge heights:
/// cut before the merge with the largest relative height increase, scanning
/// merges from the last one down to the second (first maximum wins).
inline int elbow_cluster_count(std::span<const double> heights) {
  const std::size_t n = heights.size() + 1;
  if (n < 3) return 1;
  const double top = heights.back();
  if (!(top > 0.0)) return 1;
  const double floor = 1e-12 * top;
  double best = -1.0;
  std::size_t best_merge = 0;
  for (std::size_t i = n - 1; i >= 2; --i) {
    // Merge i (1-based) has height heights[i - 1].
    const double prev = heights[i - 2];
    const double rise = (heights[i - 1] - prev) / std::max(prev, floor);
    if (rise > best) {
      best = rise;
      best_merge = i;
    }
  }
  if (!(best > 0.0)) return 1;
  return static_cast<int>(n - best_merge + 1);
}

/// Agglomerative clustering with average linkage. The dendrogram is cut at
/// `k` clusters, or by the elbow rule when k is not given. Among equally close
/// cluster pairs the one with the smallest ids merges first.
inline Clustering average_linkage(const DistanceMatrix& matrix, std::optional<int> k = std::nullopt) {
  matrix.validate();
  const std::size_t n = matrix.size();
  if (n < 1) throw ValidationError("cannot cluster an empty matrix");
  if (k && (*k < 1 || static_cast<std::size_t>(*k) > n))
    throw ValidationError("cluster count must be between 1 and " + std::to_string(n));

  struct Cluster {
    std::size_t id;
    std::vector<std::size_t> members;
  };
  std::vector<Cluster> active;
  for (std::size_t i = 0; i < n; ++i) active.push_back({i, {i}});
  const auto linkage = [&](const Cluster& a, const Cluster& b) {
    double sum = 0.0;
    for (auto i : a.members)
      for (auto j : b.members) sum += matrix.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    return sum / static_cast<double>(a.members.size() * b.members.size());
  };

  Clustering out;
  std::vector<std::vector<Cluster>> snapshots{active};
  while (active.size() > 1) {
    std::size_t bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double h = linkage(active[i], active[j]);
        if (h < best) {
          best = h;
          bi = i;
          bj = j;
        }
      }
    Cluster merged{n + out.merges.size(), active[bi].members};
    merged.members.insert(merged.members.end(), active[bj].members.begin(), active[bj].members.end());
    out.merges.push_back({active[bi].id, active[bj].id, best});
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
    active[bi] = std::move(merged);
    snapshots.push_back(active);
  }

  std::vector<double> heights;
  for (const auto& m : out.merges) heights.push_back(m.height);
  // Average linkage heights are monotone in exact arithmetic; guard rounding.
  for (std::size_t i = 1; i < heights.size(); ++i) heights[i] = std::max(heights[i], heights[i - 1]);
  out.clusters = k ? *k : elbow_cluster_count(heights);

  const auto& cut = snapshots[n - static_cast<std::size_t>(out.clusters)];
  std::vector<int> raw(n, -1);
  for (std::size_t c = 0; c < cut.size(); ++c)
    for (auto i : cut[c].members) raw[i] = static_cast<int>(c);
  std::vector<int> renumber(cut.size(), -1);
  int next = 0;
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = renumber[static_cast<std::size_t>(raw[i])];
    if (r < 0) r = next++;
    out.labels[i] = r;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Threshold classification

enum class ThresholdRule { Single, Or };

/// Predicts class 1 when a feature exceeds its threshold (any feature for the
/// OR rule).
struct ThresholdClassifier {
  std::vector<double> thresholds;
  ThresholdRule rule = ThresholdRule::Single;
  double train_accuracy = 0.0;

  [[nodiscard]] int predict(std::span<const double> features) const {
    for (std::size_t f = 0; f < thresholds.size(); ++f)
      if (features[f] > thresholds[f]) return 1;
    return 0;
  }
};

namespace detail {

/// Thresholds worth trying for one feature: just below the minimum (all
/// positive), midpoints between consecutive distinct values, and the maximum
/// (all negative).
inline std::vector<double> threshold_candidates(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  std::vector<double> out{std::nextafter(values.front(), -std::numeric_limits<double>::infinity())};
  for (std::size_t i = 0; i + 1 < values.size(); ++i) out.push_back(0.5 * (values[i] + values[i + 1]));
  out.push_back(values.back());
  return out;
}

inline void check_features(const Eigen::MatrixXd& features, std::span<const int> labels) {
  if (features.rows() < 1) throw ValidationError("classification needs at least one subject");
  if (features.cols() != 1 && features.cols() != 2) throw ValidationError("classification needs 1 or 2 features");
  if (static_cast<std::size_t>(features.rows()) != labels.size())
    throw ValidationError("feature and label counts differ");
  if (!features.allFinite()) throw ValidationError("features must be finite");
  for (int l : labels)
    if (l != 0 && l != 1) throw ValidationError("labels must be 0 or 1");
}

/// Zero-one-loss threshold fit without the both-classes check.
inline ThresholdClassifier fit_threshold_unchecked(const Eigen::MatrixXd& features, std::span<const int> labels) {
  const auto n = features.rows();
  std::vector<std::vector<double>> candidates;
  for (Eigen::Index f = 0; f < features.cols(); ++f) {
    std::vector<double> column(features.col(f).data(), features.col(f).data() + n);
    candidates.push_back(threshold_candidates(std::move(column)));
  }
  const auto correct = [&](const ThresholdClassifier& c) {
    int hits = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double row[2] = {features(i, 0), features.cols() > 1 ? features(i, 1) : 0.0};
      hits += c.predict(row) == labels[static_cast<std::size_t>(i)];
    }
    return hits;
  };
  ThresholdClassifier best;
  int best_hits = -1;
  if (features.cols() == 1) {
    for (double a : candidates[0]) {
      ThresholdClassifier c{{a}, ThresholdRule::Single, 0.0};
      if (const int h = correct(c); h > best_hits) {
        best_hits = h;
        best = c;
      }
    }
  } else {
    for (double a : candidates[0])
      for (double b : candidates[1]) {
        ThresholdClassifier c{{a, b}, ThresholdRule::Or, 0.0};
        if (const int h = correct(c); h > best_hits) {
          best_hits = h;
          best = c;
        }
      }
  }
  best.train_accuracy = static_cast<double>(best_hits) / static_cast<double>(n);
  return best;
}

}  // namespace detail

/// Threshold(s) minimising training misclassifications. One feature column
/// gives a single threshold, two columns an OR rule. Ties go to the smaller
/// (lexicographically smaller) thresholds. If a feature is constant the
/// threshold sits at that value.
inline ThresholdClassifier fit_threshold(const Eigen::MatrixXd& features, std::span<const int> labels) {
  detail::check_features(features, labels);
  if (std::find(labels.begin(), labels.end(), 0) == labels.end() ||
      std::find(labels.begin(), labels.end(), 1) == labels.end())
    throw ValidationError("fit_threshold needs at least one subject per class");
  return detail::fit_threshold_unchecked(features, labels);
}

/// Leave-one-out accuracy of fit_threshold. A training fold that contains a
/// single class is fit as-is.
inline double loo_cv(const Eigen::MatrixXd& features, std::span<const int> labels) {
  detail::check_features(features, labels);
  const auto n = features.rows();
  if (n < 2) throw ValidationError("leave-one-out needs at least 2 subjects");
  int hits = 0;
  for (Eigen::Index out = 0; out < n; ++out) {
    Eigen::MatrixXd train(n - 1, features.cols());
    std::vector<int> train_labels;
    for (Eigen::Index i = 0, r = 0; i < n; ++i) {
      if (i == out) continue;
      train.row(r++) = features.row(i);
      train_labels.push_back(labels[static_cast<std::size_t>(i)]);
    }
    const auto model = detail::fit_threshold_unchecked(train, train_labels);
    const double row[2] = {features(out, 0), features.cols() > 1 ? features(out, 1) : 0.0};
    hits += model.predict(row) == labels[static_cast<std::size_t>(out)];
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace elastic
