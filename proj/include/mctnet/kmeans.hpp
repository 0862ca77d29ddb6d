#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "mctnet/autoencoder.hpp"
#include "mctnet/error.hpp"
#include "mctnet/rng.hpp"

namespace mctnet {

// Rows of `centroids` are cluster centers in feature space.
struct ClusterModel {
  std::size_t k = 0;
  Matrix centroids;
  double inertia = 0.0;
  std::uint64_t seed = 0;
};

struct KMeansOptions {
  int n_init = 10;
  int max_iter = 300;
  double tol = 1e-6;
};

// Labels and inertia of a fixed set of centroids over a point set.
struct Assignment {
  std::vector<std::size_t> labels;
  double inertia = 0.0;
};

namespace detail {

inline double squared_distance(const Matrix& a, Eigen::Index ra, const Matrix& b, Eigen::Index rb) {
  return (a.row(ra) - b.row(rb)).squaredNorm();
}

// Nearest row of `centroids`; ties go to the lower index.
inline std::size_t nearest(const Matrix& centroids, const Matrix& points, Eigen::Index r, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double d = squared_distance(points, r, centroids, c);
    if (d < best_d) {
      best_d = d;
      best = static_cast<std::size_t>(c);
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace detail

inline Assignment assign_all(const Matrix& centroids, const Matrix& points) {
  Assignment a;
  a.labels.resize(static_cast<std::size_t>(points.rows()));
  for (Eigen::Index r = 0; r < points.rows(); ++r) {
    double d = 0.0;
    a.labels[static_cast<std::size_t>(r)] = detail::nearest(centroids, points, r, &d);
    a.inertia += d;
  }
  return a;
}

// k-means++ seeding: first center uniform, then proportional to the squared
// distance to the closest chosen center.
inline Matrix kmeans_plus_plus(const Matrix& points, std::size_t k, SplitMix64& rng) {
  const auto n = static_cast<std::size_t>(points.rows());
  Matrix centers(static_cast<Eigen::Index>(k), points.cols());
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::size_t pick = static_cast<std::size_t>(rng.below(n));
  for (std::size_t c = 0; c < k; ++c) {
    centers.row(static_cast<Eigen::Index>(c)) = points.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], detail::squared_distance(points, static_cast<Eigen::Index>(i), centers, static_cast<Eigen::Index>(c)));
      total += d2[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) {
      pick = static_cast<std::size_t>(rng.below(n));
      continue;
    }
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc > target && d2[i] > 0.0) {
        pick = i;
        break;
      }
    }
  }
  return centers;
}

// Lloyd iterations from the given centers. An empty cluster is moved onto
// the point farthest from its current centroid. Stops when assignments no
// longer change or the summed squared centroid shift drops below
// tol * mean per-dimension variance. `trace` receives the inertia of every
// assignment step.
inline ClusterModel lloyd(const Matrix& points, Matrix centers, const KMeansOptions& opt = {},
                          std::vector<double>* trace = nullptr) {
  const Eigen::Index n = points.rows();
  const Eigen::Index k = centers.rows();
  const Eigen::RowVectorXd mean = points.colwise().mean();
  const double variance = (points.rowwise() - mean).squaredNorm() / static_cast<double>(points.size());
  const double shift_tol = opt.tol * variance;

  std::vector<std::size_t> labels;
  for (int it = 0; it < opt.max_iter; ++it) {
    Assignment a = assign_all(centers, points);
    if (trace) trace->push_back(a.inertia);
    const bool unchanged = a.labels == labels;
    labels = std::move(a.labels);
    if (unchanged) break;

    Matrix next = Matrix::Zero(k, points.cols());
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index r = 0; r < n; ++r) {
      next.row(static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)])) += points.row(r);
      ++counts[labels[static_cast<std::size_t>(r)]];
    }
    for (Eigen::Index c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] > 0) {
        next.row(c) /= static_cast<double>(counts[static_cast<std::size_t>(c)]);
        continue;
      }
      Eigen::Index far = 0;
      double far_d = -1.0;
      for (Eigen::Index r = 0; r < n; ++r) {
        const double d = detail::squared_distance(points, r, centers, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(r)]));
        if (d > far_d) {
          far_d = d;
          far = r;
        }
      }
      next.row(c) = points.row(far);
    }
    const double shift = (next - centers).squaredNorm();
    centers = std::move(next);
    if (shift <= shift_tol) break;
  }
  ClusterModel m;
  m.k = static_cast<std::size_t>(k);
  m.inertia = assign_all(centers, points).inertia;
  m.centroids = std::move(centers);
  return m;
}

// Best of n_init k-means++ restarts, ordered by (inertia, restart index).
// Restart r seeds from derive_seed(seed, kKMeans, r).
inline ClusterModel kmeans_fit(const Matrix& points, std::size_t k, std::uint64_t seed, const KMeansOptions& opt = {}) {
  if (k < 1) throw ParameterError("kmeans_fit: k must be >= 1");
  if (static_cast<std::size_t>(points.rows()) < k)
    throw ParameterError("kmeans_fit: " + std::to_string(points.rows()) + " points for k=" + std::to_string(k));
  if (opt.n_init < 1 || opt.max_iter < 1) throw ParameterError("kmeans_fit: n_init and max_iter must be >= 1");
  ClusterModel best;
  bool have = false;
  for (int r = 0; r < opt.n_init; ++r) {
    SplitMix64 rng(derive_seed(seed, SeedStage::kKMeans, static_cast<std::uint64_t>(r)));
    ClusterModel m = lloyd(points, kmeans_plus_plus(points, k, rng), opt);
    if (!have || m.inertia < best.inertia) {
      best = std::move(m);
      have = true;
    }
  }
  best.seed = seed;
  return best;
}

inline std::size_t kmeans_assign(const ClusterModel& model, std::span<const double> point) {
  if (static_cast<Eigen::Index>(point.size()) != model.centroids.cols())
    throw ShapeError("kmeans_assign: point has " + std::to_string(point.size()) + " dims, model has " +
                     std::to_string(model.centroids.cols()));
  return detail::nearest(model.centroids, as_row(point), 0);
}

inline std::vector<std::size_t> kmeans_assign(const ClusterModel& model, const Matrix& points) {
  if (points.cols() != model.centroids.cols()) throw ShapeError("kmeans_assign: dimension mismatch");
  return assign_all(model.centroids, points).labels;
}

struct ElbowResult {
  std::vector<std::size_t> ks;
  std::vector<double> inertia;
  std::size_t k_star = 0;
};

// argmax over interior k of inertia(k-1) - 2 inertia(k) + inertia(k+1);
// the smallest k wins ties.
inline std::size_t elbow_point(std::span<const std::size_t> ks, std::span<const double> inertia) {
  if (ks.size() != inertia.size() || ks.size() < 3) throw ParameterError("elbow needs at least 3 consecutive k values");
  std::size_t best = 1;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < ks.size(); ++i) {
    const double v = inertia[i - 1] - 2.0 * inertia[i] + inertia[i + 1];
    if (v > best_v) {
      best_v = v;
      best = i;
    }
  }
  return ks[best];
}

inline ElbowResult elbow_scan(const Matrix& points, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                              const KMeansOptions& opt = {}) {
  if (k_min < 1 || k_max < k_min + 2) throw ParameterError("elbow_scan: need 1 <= k_min and k_max >= k_min + 2");
  if (static_cast<std::size_t>(points.rows()) < k_max) throw ParameterError("elbow_scan: fewer points than k_max");
  ElbowResult e;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    e.ks.push_back(k);
    e.inertia.push_back(kmeans_fit(points, k, seed, opt).inertia);
  }
  e.k_star = elbow_point(e.ks, e.inertia);
  return e;
}

// Mean of curves each divided by its first value. Feature spaces of
// different widths become comparable this way.
inline ElbowResult average_normalized_elbow(std::span<const ElbowResult> curves) {
  if (curves.empty()) throw ParameterError("average_normalized_elbow: no curves");
  ElbowResult out;
  out.ks = curves.front().ks;
  out.inertia.assign(out.ks.size(), 0.0);
  for (const auto& c : curves) {
    if (c.ks != out.ks) throw ShapeError("average_normalized_elbow: k ranges differ");
    const double norm = c.inertia.front() > 0.0 ? c.inertia.front() : 1.0;
    for (std::size_t i = 0; i < c.inertia.size(); ++i) out.inertia[i] += c.inertia[i] / norm;
  }
  for (auto& v : out.inertia) v /= static_cast<double>(curves.size());
  out.k_star = elbow_point(out.ks, out.inertia);
  return out;
}

}  // namespace mctnet
