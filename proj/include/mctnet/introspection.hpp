#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mctnet/autoencoder.hpp"
#include "mctnet/confusion.hpp"
#include "mctnet/error.hpp"
#include "mctnet/kmeans.hpp"
#include "mctnet/landscape.hpp"
#include "mctnet/quantum.hpp"

namespace mctnet {

// How normalized first-layer weights are folded over the nodes of one
// architecture before averaging over architectures.
enum class NodeAggregation {
  kMean,  // mean over nodes, values stay in [0, 1]
  kSum,   // plain sum over nodes
};

struct ImportanceMap {
  std::vector<double> mean_map;                     // per pixel
  std::vector<std::vector<double>> per_architecture;  // per member, per pixel, node-aggregated
};

// |w_ij| / max_kl |w_kl| over the L1 weights of one member, laid out as
// pixel x node like the weight matrix itself.
inline Matrix normalized_first_layer(const NetworkParams& member) {
  const Matrix& w = member.layers[0].weights;
  const double m = w.cwiseAbs().maxCoeff();
  if (!(m > 0.0)) throw AnalysisError("normalized_first_layer: all first-layer weights are zero");
  return w.cwiseAbs() / m;
}

inline ImportanceMap weight_importance(std::span<const NetworkParams> ensemble,
                                       NodeAggregation agg = NodeAggregation::kMean) {
  if (ensemble.empty()) throw ParameterError("weight_importance: empty ensemble");
  const std::size_t dim = ensemble.front().spec.input_dim;
  ImportanceMap out;
  out.mean_map.assign(dim, 0.0);
  for (const auto& member : ensemble) {
    if (member.spec.input_dim != dim) throw ShapeError("weight_importance: members differ in input_dim");
    const Matrix norm = normalized_first_layer(member);
    Eigen::VectorXd per_pixel = norm.rowwise().sum();
    if (agg == NodeAggregation::kMean) per_pixel /= static_cast<double>(norm.cols());
    out.per_architecture.emplace_back(per_pixel.data(), per_pixel.data() + per_pixel.size());
    for (std::size_t j = 0; j < dim; ++j) out.mean_map[j] += per_pixel[static_cast<Eigen::Index>(j)];
  }
  for (auto& v : out.mean_map) v /= static_cast<double>(ensemble.size());
  return out;
}

using PixelMask = std::vector<std::uint8_t>;

inline PixelMask select_pixels(const ImportanceMap& map, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ParameterError("select_pixels: threshold must lie in [0, 1]");
  PixelMask mask(map.mean_map.size());
  for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = map.mean_map[j] >= threshold ? 1 : 0;
  return mask;
}

inline std::size_t mask_count(const PixelMask& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

// Jaccard overlap of a mask with its 180 degree rotation. Flattened index
// j maps to P - 1 - j under that rotation for any mesh shape.
inline double rotation_jaccard(const PixelMask& mask) {
  const std::size_t n = mask.size();
  std::size_t inter = 0;
  std::size_t uni = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const bool a = mask[j] != 0;
    const bool b = mask[n - 1 - j] != 0;
    inter += (a && b) ? 1 : 0;
    uni += (a || b) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// CSV with eps1..epsN, fidelity, selected; rows in flattening order.
inline void overlay_mask(std::ostream& os, const Landscape& landscape, const PixelMask& mask) {
  if (mask.size() != landscape.pixels.size()) throw ShapeError("overlay_mask: mask length differs from pixel count");
  const std::size_t nseg = landscape.mesh.segments();
  for (std::size_t k = 0; k < nseg; ++k) os << "eps" << (k + 1) << ",";
  os << "fidelity,selected\n";
  os.precision(17);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    for (double e : landscape.mesh.point(j)) os << e << ",";
    os << landscape.pixels[j] << "," << static_cast<int>(mask[j]) << "\n";
  }
}

// Features and cluster of every landscape, rows ascending in T.
struct FeatureTable {
  std::vector<double> times;
  Matrix features;
  std::vector<Label> clusters;
};

inline Matrix pixel_matrix(const LandscapeDataset& ds, std::span<const std::size_t> rows) {
  const auto d = static_cast<Eigen::Index>(ds.pixel_count());
  Matrix m(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& px = ds.landscapes[rows[i]].pixels;
    if (static_cast<Eigen::Index>(px.size()) != d) throw ShapeError("landscape pixel count differs from mesh");
    std::copy(px.begin(), px.end(), m.row(static_cast<Eigen::Index>(i)).data());
  }
  return m;
}

inline Matrix pixel_matrix(const LandscapeDataset& ds) {
  std::vector<std::size_t> rows(ds.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return pixel_matrix(ds, rows);
}

// Encoder features in bounded-size chunks.
inline Matrix encode_rows(const NetworkParams& member, const LandscapeDataset& ds, std::span<const std::size_t> rows,
                          std::size_t chunk = 128) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(member.spec.n_features));
  for (std::size_t s = 0; s < rows.size(); s += chunk) {
    const std::size_t n = std::min(chunk, rows.size() - s);
    out.middleRows(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(n)) = encode(member, pixel_matrix(ds, rows.subspan(s, n)));
  }
  return out;
}

inline std::vector<Label> to_binary_labels(std::span<const std::size_t> labels) {
  std::vector<Label> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw AnalysisError("confusion sweep needs k = 2 clusters, got label " + std::to_string(labels[i]));
    out[i] = static_cast<Label>(labels[i]);
  }
  return out;
}

inline FeatureTable feature_trajectories(const NetworkParams& member, const ClusterModel& model, const LandscapeDataset& ds) {
  if (ds.pixel_count() != member.spec.input_dim) throw ShapeError("feature_trajectories: dataset width differs from network");
  if (static_cast<std::size_t>(model.centroids.cols()) != member.spec.n_features)
    throw ShapeError("feature_trajectories: cluster model width differs from network features");
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ds.landscapes[a].total_time < ds.landscapes[b].total_time; });
  FeatureTable t;
  t.features = encode_rows(member, ds, order);
  const auto labels = kmeans_assign(model, t.features);
  t.clusters.assign(labels.begin(), labels.end());
  for (std::size_t i : order) t.times.push_back(ds.landscapes[i].total_time);
  return t;
}

// Boundary T of the best single split of the T-ordered cluster sequence,
// i.e. the confusion argmax over the table's own times.
inline double feature_transition_time(const FeatureTable& t, double trim = 0.05) {
  for (Label c : t.clusters)
    if (c > 1) throw AnalysisError("feature_transition_time: needs k = 2");
  return predict_mct(sweep(t.clusters, t.times, t.times), trim).t_prime;
}

// F at eps = (0, ..., 0) for each T on an LZ problem.
inline std::vector<double> center_fidelity_curve(const ControlProblem& problem, std::span<const double> times,
                                                 std::size_t segments = 2) {
  if (problem.model_id != ModelId::kLandauZener) throw ParameterError("center_fidelity_curve: LZ problem required");
  std::vector<double> out;
  out.reserve(times.size());
  for (double t : times) out.push_back(fidelity(problem, Protocol{std::vector<double>(segments, 0.0), t}));
  return out;
}

struct PeriodEstimate {
  double period = 0.0;
  std::string method = "hann-dft-quadratic";
  std::size_t samples = 0;
};

// Dominant period of a uniformly sampled series: Hann window, weighted
// mean removal, zero padding to 8x, DFT magnitude peak over non-zero bins,
// quadratic refinement of the peak bin. At least 3 periods must fit in the
// sampled span.
inline PeriodEstimate estimate_period(std::span<const double> t, std::span<const double> y) {
  if (t.size() != y.size()) throw ShapeError("estimate_period: t and y differ in length");
  const std::size_t n = t.size();
  if (n < 8) throw AnalysisError("estimate_period: too few samples");
  const double dt = (t.back() - t.front()) / static_cast<double>(n - 1);
  if (!(dt > 0.0)) throw AnalysisError("estimate_period: t must increase");
  for (std::size_t i = 1; i < n; ++i)
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-6 * dt) throw AnalysisError("estimate_period: t spacing is not uniform");

  // Window first, then remove the window-weighted mean so the DC bin of
  // the tapered series is exactly empty.
  std::vector<double> w(n);
  double wsum = 0.0;
  double wmean = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
    wsum += w[i];
    wmean += w[i] * y[i];
  }
  wmean /= wsum;
  std::vector<double> x(n);
  double energy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (y[i] - wmean) * w[i];
    energy += x[i] * x[i];
  }
  if (!(energy > 1e-24 * static_cast<double>(n))) throw AnalysisError("estimate_period: series has no oscillating component");

  const std::size_t pad = 8 * n;
  // Twiddle table e^{-2 pi i m / pad}; bin k, sample i uses (k * i) mod pad.
  std::vector<std::complex<double>> tw(pad);
  for (std::size_t m = 0; m < pad; ++m) tw[m] = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(pad));
  const std::size_t bins = pad / 2;
  std::vector<double> mag(bins + 1, 0.0);
  for (std::size_t k = 1; k <= bins; ++k) {
    std::complex<double> acc = 0.0;
    std::size_t m = 0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += x[i] * tw[m];
      m += k;
      if (m >= pad) m -= pad;
    }
    mag[k] = std::abs(acc);
  }
  const std::size_t first = 1;
  std::size_t peak = first;
  for (std::size_t k = first; k <= bins; ++k)
    if (mag[k] > mag[peak]) peak = k;
  if (!(mag[peak] > 0.0)) throw AnalysisError("estimate_period: no dominant frequency");
  double offset = 0.0;
  if (peak > first && peak < bins) {
    const double a = mag[peak - 1], b = mag[peak], c = mag[peak + 1];
    const double den = a - 2.0 * b + c;
    if (den != 0.0) offset = 0.5 * (a - c) / den;
  }
  const double freq = (static_cast<double>(peak) + offset) / (static_cast<double>(pad) * dt);
  PeriodEstimate est;
  est.period = 1.0 / freq;
  est.samples = n;
  const double span = t.back() - t.front();
  if (est.period * 3.0 > span + dt)
    throw AnalysisError("estimate_period: fewer than 3 oscillations in range (period " + std::to_string(est.period) +
                        ", span " + std::to_string(span) + ")");
  return est;
}

struct PeriodComparison {
  double tau_accuracy = 0.0;
  double two_tau_fidelity = 0.0;
  double ratio = 0.0;
};

// tau of the accuracy curve against twice the period of F(eps = 0)(T)
// sampled on the same grid.
inline PeriodComparison compare_periods(const ControlProblem& problem, const AccuracyCurve& curve) {
  const auto fid = center_fidelity_curve(problem, curve.t_aux);
  PeriodComparison c;
  c.tau_accuracy = estimate_period(curve.t_aux, curve.accuracy).period;
  c.two_tau_fidelity = 2.0 * estimate_period(curve.t_aux, fid).period;
  c.ratio = c.tau_accuracy / c.two_tau_fidelity;
  return c;
}

}  // namespace mctnet
