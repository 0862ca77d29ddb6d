#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "mctnet/landscape.hpp"
#include "mctnet/quantum.hpp"
#include "mctnet/rng.hpp"

namespace mctnet {

// Worst-case deviations found by the dynamics self-check.
struct OracleReport {
  std::size_t draws = 0;
  double rabi_error = 0.0;        // constant control vs closed-form Rabi formula
  double unitarity_error = 0.0;   // max |U^dagger U - 1| over LZ and 3-level draws
  double zero_control_error = 0.0;
  double symmetry_error = 0.0;    // LZ landscape vs its transpose and 180 degree rotation

  bool passed(double fidelity_tol = 1e-10, double unitarity_tol = 1e-12) const {
    return rabi_error <= fidelity_tol && zero_control_error <= fidelity_tol && symmetry_error <= fidelity_tol &&
           unitarity_error <= unitarity_tol;
  }
};

// Random draws: delta in [0.2, 3], eps in [-5, 5], T in (0, 10], N_ts in 1..4.
inline OracleReport run_oracle_suite(std::uint64_t seed, std::size_t draws = 1000, std::size_t mesh_count = 100) {
  OracleReport r;
  r.draws = draws;
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < draws; ++i) {
    const double delta = rng.uniform(0.2, 3.0);
    const double eps = rng.uniform(-5.0, 5.0);
    const double t = rng.uniform(1e-3, 10.0);
    const auto segments = static_cast<std::size_t>(1 + rng.below(4));
    const ControlProblem lz = build_problem(ModelId::kLandauZener, delta);

    const Protocol constant{std::vector<double>(segments, eps), t};
    r.rabi_error = std::max(r.rabi_error, std::abs(fidelity(lz, constant) - rabi_oracle(delta, eps, t)));

    const double zero = fidelity(lz, Protocol{std::vector<double>(segments, 0.0), t});
    const double s = std::sin(delta * t / 2.0);
    r.zero_control_error = std::max(r.zero_control_error, std::abs(zero - s * s));

    Protocol random{{}, t};
    for (std::size_t k = 0; k < segments; ++k) random.amplitudes.push_back(rng.uniform(-5.0, 5.0));
    r.unitarity_error = std::max(r.unitarity_error, propagate(lz, random).unitarity_defect());
    const ControlProblem glz = build_problem(ModelId::kGeneralizedLZ3, delta, rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0));
    r.unitarity_error = std::max(r.unitarity_error, propagate(glz, random).unitarity_defect());
  }

  const ControlProblem lz = build_problem(ModelId::kLandauZener, 1.0);
  const MeshSpec mesh = default_mesh(2, mesh_count);
  const std::size_t n = mesh_count;
  for (double t : {0.7, 2.0, 3.14159, 4.0, 8.1}) {
    const Landscape l = generate_landscape(lz, t, mesh);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        const double v = l.pixels[i * n + j];
        r.symmetry_error = std::max(r.symmetry_error, std::abs(v - l.pixels[j * n + i]));
        r.symmetry_error = std::max(r.symmetry_error, std::abs(v - l.pixels[(n - 1 - i) * n + (n - 1 - j)]));
      }
  }
  return r;
}

}  // namespace mctnet
