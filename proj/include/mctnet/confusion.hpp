#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mctnet/error.hpp"

namespace mctnet {

using Label = std::uint8_t;

inline constexpr Label kLabelA = 0;
inline constexpr Label kLabelB = 1;

// Accuracy against the auxiliary labeling as a function of T_aux.
// accuracy_std is filled by ensemble_average and empty otherwise.
struct AccuracyCurve {
  std::vector<double> t_aux;
  std::vector<double> accuracy;
  std::vector<double> accuracy_std;
  std::size_t n_members = 1;
};

struct MctPrediction {
  double t_prime = 0.0;
  AccuracyCurve curve;
  double t_lo = 0.0;
  double t_hi = 0.0;
};

// A where time < t_aux, B otherwise.
inline std::vector<Label> auxiliary_labels(std::span<const double> times, double t_aux) {
  std::vector<Label> out(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) out[i] = times[i] < t_aux ? kLabelA : kLabelB;
  return out;
}

// Agreement fraction maximized over both cluster -> {A, B} identifications.
inline double permuted_accuracy(std::span<const Label> clusters, std::span<const Label> aux) {
  if (clusters.size() != aux.size()) throw ShapeError("permuted_accuracy: length mismatch");
  if (clusters.empty()) throw ParameterError("permuted_accuracy: empty input");
  std::size_t agree = 0;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    if (clusters[i] > 1) throw ParameterError("permuted_accuracy: cluster labels must be binary");
    agree += clusters[i] == aux[i] ? 1 : 0;
  }
  const std::size_t n = clusters.size();
  return static_cast<double>(std::max(agree, n - agree)) / static_cast<double>(n);
}

inline AccuracyCurve sweep(std::span<const Label> clusters, std::span<const double> times, std::span<const double> grid) {
  if (clusters.size() != times.size()) throw ShapeError("sweep: labels and times differ in length");
  if (grid.empty()) throw ParameterError("sweep: empty T_aux grid");
  AccuracyCurve c;
  c.t_aux.assign(grid.begin(), grid.end());
  c.accuracy.reserve(grid.size());
  for (double t : grid) {
    const auto aux = auxiliary_labels(times, t);
    c.accuracy.push_back(permuted_accuracy(clusters, aux));
  }
  return c;
}

// Pointwise mean and population standard deviation.
inline AccuracyCurve ensemble_average(std::span<const AccuracyCurve> curves) {
  if (curves.empty()) throw ParameterError("ensemble_average: no curves");
  AccuracyCurve out;
  out.t_aux = curves.front().t_aux;
  const std::size_t n = out.t_aux.size();
  out.accuracy.assign(n, 0.0);
  out.accuracy_std.assign(n, 0.0);
  out.n_members = 0;
  for (const auto& c : curves) {
    if (c.t_aux != out.t_aux || c.accuracy.size() != n) throw ShapeError("ensemble_average: T_aux grids differ");
    for (std::size_t i = 0; i < n; ++i) out.accuracy[i] += c.accuracy[i];
    out.n_members += c.n_members;
  }
  const double m = static_cast<double>(curves.size());
  for (auto& a : out.accuracy) a /= m;
  for (const auto& c : curves)
    for (std::size_t i = 0; i < n; ++i) {
      const double d = c.accuracy[i] - out.accuracy[i];
      out.accuracy_std[i] += d * d;
    }
  for (auto& s : out.accuracy_std) s = std::sqrt(s / m);
  return out;
}

// Centered moving average of odd width; the window shrinks at the edges.
inline AccuracyCurve moving_average(const AccuracyCurve& c, std::size_t width) {
  if (width % 2 == 0) throw ParameterError("moving_average: width must be odd");
  AccuracyCurve out = c;
  const std::size_t h = width / 2;
  const std::size_t n = c.accuracy.size();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= h ? i - h : 0;
    const std::size_t hi = std::min(n - 1, i + h);
    double s = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) s += c.accuracy[j];
    out.accuracy[i] = s / static_cast<double>(hi - lo + 1);
  }
  return out;
}

inline double total_variation(std::span<const double> y) {
  double tv = 0.0;
  for (std::size_t i = 1; i < y.size(); ++i) tv += std::abs(y[i] - y[i - 1]);
  return tv;
}

struct Window {
  double lo = 0.0;
  double hi = 0.0;
};

// Drops floor(trim * n) grid points from each end of the curve.
inline Window trimmed_window(const AccuracyCurve& c, double trim = 0.05) {
  if (c.t_aux.empty()) throw ParameterError("trimmed_window: empty curve");
  if (!(trim >= 0.0 && trim < 0.5)) throw ParameterError("trimmed_window: trim must lie in [0, 0.5)");
  const std::size_t n = c.t_aux.size();
  const auto cut = static_cast<std::size_t>(std::floor(trim * static_cast<double>(n)));
  return {c.t_aux[cut], c.t_aux[n - 1 - cut]};
}

// Grid argmax of the accuracy inside [lo, hi]; earliest T wins ties.
inline MctPrediction predict_mct(const AccuracyCurve& curve, Window w) {
  MctPrediction p;
  p.curve = curve;
  p.t_lo = w.lo;
  p.t_hi = w.hi;
  bool found = false;
  double best = -1.0;
  for (std::size_t i = 0; i < curve.t_aux.size(); ++i) {
    const double t = curve.t_aux[i];
    if (t < w.lo || t > w.hi) continue;
    if (!found || curve.accuracy[i] > best) {
      best = curve.accuracy[i];
      p.t_prime = t;
      found = true;
    }
  }
  if (!found) throw ParameterError("predict_mct: window [" + std::to_string(w.lo) + ", " + std::to_string(w.hi) + "] misses the grid");
  return p;
}

inline MctPrediction predict_mct(const AccuracyCurve& curve, double trim = 0.05) {
  return predict_mct(curve, trimmed_window(curve, trim));
}

}  // namespace mctnet
