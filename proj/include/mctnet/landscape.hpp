#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "mctnet/error.hpp"
#include "mctnet/quantum.hpp"
#include "mctnet/rng.hpp"

namespace mctnet {

// Uniform grid on [min, max] including both endpoints.
struct MeshAxis {
  double min = -5.0;
  double max = 5.0;
  std::size_t count = 100;

  double value(std::size_t m) const {
    return min + static_cast<double>(m) * (max - min) / static_cast<double>(count - 1);
  }
  bool operator==(const MeshAxis&) const = default;
};

// One axis per control segment. Pixels are flattened with the last axis
// varying fastest.
struct MeshSpec {
  std::vector<MeshAxis> axes;

  std::size_t segments() const noexcept { return axes.size(); }

  std::size_t pixel_count() const {
    std::size_t n = 1;
    for (const auto& a : axes) n *= a.count;
    return n;
  }

  // Multi-index of flattened pixel j.
  std::vector<std::size_t> unravel(std::size_t j) const {
    std::vector<std::size_t> idx(axes.size());
    for (std::size_t k = axes.size(); k-- > 0;) {
      idx[k] = j % axes[k].count;
      j /= axes[k].count;
    }
    return idx;
  }

  std::size_t ravel(std::span<const std::size_t> idx) const {
    std::size_t j = 0;
    for (std::size_t k = 0; k < axes.size(); ++k) j = j * axes[k].count + idx[k];
    return j;
  }

  std::vector<double> point(std::size_t j) const {
    const auto idx = unravel(j);
    std::vector<double> eps(axes.size());
    for (std::size_t k = 0; k < axes.size(); ++k) eps[k] = axes[k].value(idx[k]);
    return eps;
  }

  void validate() const {
    if (axes.empty()) throw ParameterError("mesh needs at least one axis");
    for (const auto& a : axes) {
      if (a.count < 2) throw ParameterError("mesh axis needs at least 2 points");
      if (!(a.max > a.min) || !std::isfinite(a.min) || !std::isfinite(a.max))
        throw ParameterError("mesh axis requires finite min < max");
    }
  }

  bool operator==(const MeshSpec&) const = default;
};

// 100 points on [-5, 5] for the first two segments. A third segment gets
// the coarse 11-point integer axis -5..5.
inline MeshSpec default_mesh(std::size_t segments = 2, std::size_t count = 100) {
  MeshSpec mesh;
  for (std::size_t k = 0; k < segments; ++k) {
    if (k < 2)
      mesh.axes.push_back({-5.0, 5.0, count});
    else
      mesh.axes.push_back({-5.0, 5.0, 11});
  }
  return mesh;
}

struct Landscape {
  double total_time = 0.0;
  MeshSpec mesh;
  std::vector<double> pixels;
};

struct LandscapeDataset {
  ControlProblem problem;
  MeshSpec mesh;
  std::vector<double> times;
  std::vector<Landscape> landscapes;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return landscapes.size(); }
  std::size_t pixel_count() const { return mesh.pixel_count(); }
};

// Disjoint index sets: autoencoder train, k-means train, autoencoder
// validation, performance.
struct FourWaySplit {
  std::vector<std::size_t> ae_train;
  std::vector<std::size_t> km_train;
  std::vector<std::size_t> ae_val;
  std::vector<std::size_t> perf;
  std::uint64_t seed = 0;
};

// Fidelity on every mesh node at fixed T. Segment propagators are computed
// once per distinct axis value and the state is pushed through the mesh
// depth-first, so each pixel costs N_ts matrix-vector products.
inline Landscape generate_landscape(const ControlProblem& problem, double total_time, const MeshSpec& mesh) {
  if (!(total_time > 0.0) || !std::isfinite(total_time))
    throw ParameterError("generate_landscape: T must be positive");
  mesh.validate();
  const std::size_t nseg = mesh.segments();
  const double dt = total_time / static_cast<double>(nseg);

  std::vector<std::vector<ComplexMatrix>> props(nseg);
  for (std::size_t k = 0; k < nseg; ++k) {
    props[k].reserve(mesh.axes[k].count);
    for (std::size_t m = 0; m < mesh.axes[k].count; ++m)
      props[k].push_back(segment_propagator(control_hamiltonian(problem, mesh.axes[k].value(m)), dt));
  }

  Landscape out;
  out.total_time = total_time;
  out.mesh = mesh;
  out.pixels.resize(mesh.pixel_count());

  std::vector<StateVector> stack(nseg + 1);
  stack[0] = problem.initial_state;
  std::vector<std::size_t> idx(nseg, 0);
  std::size_t j = 0;
  // Iterative odometer walk in flattening order; level k holds the state
  // after segments 0..k-1.
  std::size_t level = 0;
  while (true) {
    for (; level < nseg; ++level) stack[level + 1] = props[level][idx[level]] * stack[level];
    const double f = std::norm(problem.target_state.inner(stack[nseg]));
    try {
      out.pixels[j++] = detail::clamp_fidelity(f);
    } catch (const NumericError& e) {
      std::string where;
      for (std::size_t k = 0; k < nseg; ++k) where += (k ? "," : "") + std::to_string(mesh.axes[k].value(idx[k]));
      throw NumericError(std::string(e.what()) + " at T=" + std::to_string(total_time) + " eps=(" + where + ")");
    }
    std::size_t k = nseg;
    while (k > 0) {
      --k;
      if (++idx[k] < mesh.axes[k].count) break;
      idx[k] = 0;
      if (k == 0) return out;
    }
    level = k;
  }
}

// t_start, t_start + t_step, ... while t <= t_end + t_step / 2. Each time is
// computed as t_start + i * t_step, never accumulated.
inline std::vector<double> time_grid(double t_start, double t_end, double t_step) {
  if (!(t_start > 0.0) || !(t_step > 0.0) || !(t_end >= t_start) || !std::isfinite(t_end))
    throw ParameterError("time range requires 0 < t_start <= t_end and t_step > 0");
  const auto n = static_cast<std::size_t>(std::floor((t_end - t_start) / t_step + 0.5)) + 1;
  std::vector<double> t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = t_start + static_cast<double>(i) * t_step;
  return t;
}

inline LandscapeDataset generate_dataset(const ControlProblem& problem, std::span<const double> times,
                                         const MeshSpec& mesh, std::uint64_t seed = 0,
                                         unsigned threads = 0) {
  if (times.empty()) throw ParameterError("generate_dataset: empty time range");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ParameterError("generate_dataset: times must be strictly increasing");
  mesh.validate();

  LandscapeDataset ds;
  ds.problem = problem;
  ds.mesh = mesh;
  ds.times.assign(times.begin(), times.end());
  ds.landscapes.resize(times.size());
  ds.seed = seed;

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, times.size()));

  // Strided ownership: worker w fills slots w, w + threads, ... so the
  // result does not depend on scheduling.
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&](unsigned w) {
    try {
      for (std::size_t i = w; i < times.size(); i += threads)
        ds.landscapes[i] = generate_landscape(problem, times[i], mesh);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(work, w);
  }
  if (failure) std::rethrow_exception(failure);
  return ds;
}

inline LandscapeDataset generate_dataset(const ControlProblem& problem, double t_start, double t_end,
                                         double t_step, const MeshSpec& mesh, std::uint64_t seed = 0,
                                         unsigned threads = 0) {
  const auto times = time_grid(t_start, t_end, t_step);
  return generate_dataset(problem, times, mesh, seed, threads);
}

// Shuffle with SplitMix64(seed), then cut 35/35/15/15: the training share
// is ceil(0.7 n), each share is halved with the odd element going to
// ae_train (resp. ae_val).
inline FourWaySplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 4) throw ParameterError("split_dataset: need at least 4 items, got " + std::to_string(n));
  SplitMix64 rng(seed);
  const auto idx = shuffled_indices(n, rng);
  const std::size_t n_train = (7 * n + 9) / 10;
  const std::size_t n_val = n - n_train;
  const std::size_t n_ae = (n_train + 1) / 2;
  const std::size_t n_ae_val = (n_val + 1) / 2;

  FourWaySplit s;
  s.seed = seed;
  auto it = idx.begin();
  s.ae_train.assign(it, it + static_cast<std::ptrdiff_t>(n_ae));
  it += static_cast<std::ptrdiff_t>(n_ae);
  s.km_train.assign(it, it + static_cast<std::ptrdiff_t>(n_train - n_ae));
  it += static_cast<std::ptrdiff_t>(n_train - n_ae);
  s.ae_val.assign(it, it + static_cast<std::ptrdiff_t>(n_ae_val));
  it += static_cast<std::ptrdiff_t>(n_ae_val);
  s.perf.assign(it, idx.end());
  return s;
}

// T of the landscape holding the dataset-wide maximum pixel; the earliest
// such T wins ties. With tol > 0 the earliest landscape whose maximum lies
// within tol of the dataset-wide maximum is returned instead.
inline double empirical_mct(const LandscapeDataset& ds, double tol = 0.0) {
  if (ds.landscapes.empty()) throw ParameterError("empirical_mct: empty dataset");
  if (!(tol >= 0.0)) throw ParameterError("empirical_mct: tol must be >= 0");
  std::vector<double> peak;
  peak.reserve(ds.size());
  for (const auto& l : ds.landscapes) peak.push_back(*std::max_element(l.pixels.begin(), l.pixels.end()));
  const double best = *std::max_element(peak.begin(), peak.end());
  std::size_t i = 0;
  while (peak[i] < best - tol) ++i;
  return ds.landscapes[i].total_time;
}

// Streaming variant of empirical_mct that never holds more than one
// landscape in memory. Returns (T, max fidelity).
inline std::pair<double, double> scan_empirical_mct(const ControlProblem& problem, std::span<const double> times,
                                                    const MeshSpec& mesh) {
  if (times.empty()) throw ParameterError("scan_empirical_mct: empty time range");
  double best = -1.0;
  double best_t = times.front();
  for (double t : times) {
    const auto l = generate_landscape(problem, t, mesh);
    const double m = *std::max_element(l.pixels.begin(), l.pixels.end());
    if (m > best) {
      best = m;
      best_t = t;
    }
  }
  return {best_t, best};
}

}  // namespace mctnet
