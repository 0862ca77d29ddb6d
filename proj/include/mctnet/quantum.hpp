#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mctnet/error.hpp"

namespace mctnet {

using cplx = std::complex<double>;

// Dense complex matrix of dimension 2 or 3, row-major in fixed storage.
class ComplexMatrix {
 public:
  static constexpr std::size_t kMaxDim = 3;

  ComplexMatrix() = default;
  explicit ComplexMatrix(std::size_t dim) : dim_(dim) {
    if (dim < 1 || dim > kMaxDim) throw ParameterError("ComplexMatrix: dim must be 1..3");
  }
  ComplexMatrix(std::size_t dim, std::initializer_list<cplx> row_major) : ComplexMatrix(dim) {
    if (row_major.size() != dim * dim) throw ShapeError("ComplexMatrix: wrong entry count");
    std::size_t k = 0;
    for (const auto& v : row_major) {
      a_[(k / dim) * kMaxDim + k % dim] = v;
      ++k;
    }
  }

  static ComplexMatrix identity(std::size_t dim) {
    ComplexMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
  }

  static ComplexMatrix diagonal(std::span<const double> d) {
    ComplexMatrix m(d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t dim() const noexcept { return dim_; }
  cplx& operator()(std::size_t r, std::size_t c) noexcept { return a_[r * kMaxDim + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const noexcept { return a_[r * kMaxDim + c]; }

  ComplexMatrix adjoint() const {
    ComplexMatrix m(dim_);
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) m(i, j) = std::conj((*this)(j, i));
    return m;
  }

  friend ComplexMatrix operator*(const ComplexMatrix& x, const ComplexMatrix& y) {
    if (x.dim_ != y.dim_) throw ShapeError("ComplexMatrix: dimension mismatch in product");
    ComplexMatrix m(x.dim_);
    for (std::size_t i = 0; i < x.dim_; ++i)
      for (std::size_t k = 0; k < x.dim_; ++k) {
        const cplx xik = x(i, k);
        for (std::size_t j = 0; j < x.dim_; ++j) m(i, j) += xik * y(k, j);
      }
    return m;
  }

  friend ComplexMatrix operator+(const ComplexMatrix& x, const ComplexMatrix& y) {
    if (x.dim_ != y.dim_) throw ShapeError("ComplexMatrix: dimension mismatch in sum");
    ComplexMatrix m(x.dim_);
    for (std::size_t i = 0; i < x.dim_; ++i)
      for (std::size_t j = 0; j < x.dim_; ++j) m(i, j) = x(i, j) + y(i, j);
    return m;
  }

  friend ComplexMatrix operator*(double s, const ComplexMatrix& x) {
    ComplexMatrix m(x.dim_);
    for (std::size_t i = 0; i < x.dim_; ++i)
      for (std::size_t j = 0; j < x.dim_; ++j) m(i, j) = s * x(i, j);
    return m;
  }

  // Largest entrywise modulus of (this - other).
  double max_abs_diff(const ComplexMatrix& other) const {
    if (dim_ != other.dim_) throw ShapeError("ComplexMatrix: dimension mismatch");
    double d = 0.0;
    for (std::size_t i = 0; i < dim_; ++i)
      for (std::size_t j = 0; j < dim_; ++j) d = std::max(d, std::abs((*this)(i, j) - other(i, j)));
    return d;
  }

  double hermitian_defect() const { return max_abs_diff(adjoint()); }

  // max |(U^dagger U - I)_ij|
  double unitarity_defect() const { return (adjoint() * (*this)).max_abs_diff(identity(dim_)); }

 private:
  std::size_t dim_ = 2;
  std::array<cplx, kMaxDim * kMaxDim> a_{};
};

// Fixed-capacity state vector matching ComplexMatrix.
class StateVector {
 public:
  StateVector() = default;
  explicit StateVector(std::size_t dim) : dim_(dim) {}

  static StateVector basis(std::size_t dim, std::size_t index) {
    if (index >= dim) throw ParameterError("basis state index out of range");
    StateVector v(dim);
    v[index] = 1.0;
    return v;
  }

  std::size_t dim() const noexcept { return dim_; }
  cplx& operator[](std::size_t i) noexcept { return v_[i]; }
  const cplx& operator[](std::size_t i) const noexcept { return v_[i]; }

  double norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) s += std::norm(v_[i]);
    return std::sqrt(s);
  }

  friend StateVector operator*(const ComplexMatrix& m, const StateVector& x) {
    StateVector y(x.dim_);
    for (std::size_t i = 0; i < x.dim_; ++i) {
      cplx acc = 0.0;
      for (std::size_t j = 0; j < x.dim_; ++j) acc += m(i, j) * x.v_[j];
      y.v_[i] = acc;
    }
    return y;
  }

  // <this|other>
  cplx inner(const StateVector& other) const {
    cplx acc = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) acc += std::conj(v_[i]) * other.v_[i];
    return acc;
  }

 private:
  std::size_t dim_ = 2;
  std::array<cplx, ComplexMatrix::kMaxDim> v_{};
};

enum class ModelId { kLandauZener, kGeneralizedLZ3 };

inline std::string_view to_string(ModelId id) {
  return id == ModelId::kLandauZener ? "LZ" : "GENERALIZED_LZ3";
}

inline ModelId model_from_string(std::string_view s) {
  if (s == "LZ" || s == "lz") return ModelId::kLandauZener;
  if (s == "GENERALIZED_LZ3" || s == "glz3" || s == "generalized") return ModelId::kGeneralizedLZ3;
  throw ParameterError("unknown model id '" + std::string(s) + "'");
}

// Driven system H(eps) = h0 + eps * hc with a state-transfer objective.
struct ControlProblem {
  ModelId model_id = ModelId::kLandauZener;
  ComplexMatrix h0;
  ComplexMatrix hc;
  StateVector initial_state;
  StateVector target_state;
  double delta = 1.0;
  double delta_a = 0.0;
  double delta_b = 0.0;

  std::size_t dim() const noexcept { return h0.dim(); }
  std::size_t initial_index() const;
  std::size_t target_index() const;
};

// Basis indices for the transfer |initial> -> |target>. Unset fields take
// the model default (LZ: 0 -> 1, generalized LZ: 0 -> 2).
struct StateOverride {
  std::optional<std::size_t> initial;
  std::optional<std::size_t> target;
};

// Piecewise-constant control: amplitudes[k] acts on ((k)T/N, (k+1)T/N].
struct Protocol {
  std::vector<double> amplitudes;
  double total_time = 0.0;

  std::size_t segments() const noexcept { return amplitudes.size(); }
  double segment_length() const { return total_time / static_cast<double>(amplitudes.size()); }
};

namespace detail {

inline std::size_t basis_index_of(const StateVector& v) {
  for (std::size_t i = 0; i < v.dim(); ++i)
    if (std::abs(v[i] - cplx(1.0)) < 1e-12) return i;
  throw ParameterError("state is not a computational basis vector");
}

}  // namespace detail

inline std::size_t ControlProblem::initial_index() const { return detail::basis_index_of(initial_state); }
inline std::size_t ControlProblem::target_index() const { return detail::basis_index_of(target_state); }

inline ControlProblem build_problem(ModelId model, double delta, double delta_a = 1.0,
                                    double delta_b = 1.0, const StateOverride& states = {}) {
  if (!(delta > 0.0) || !std::isfinite(delta))
    throw ParameterError("build_problem: delta must be positive, got " + std::to_string(delta));
  ControlProblem p;
  p.model_id = model;
  p.delta = delta;
  if (model == ModelId::kLandauZener) {
    p.h0 = ComplexMatrix(2, {0.0, delta / 2.0, delta / 2.0, 0.0});
    p.hc = ComplexMatrix(2, {1.0, 0.0, 0.0, -1.0});
    p.initial_state = StateVector::basis(2, states.initial.value_or(0));
    p.target_state = StateVector::basis(2, states.target.value_or(1));
  } else {
    if (!std::isfinite(delta_a) || !std::isfinite(delta_b))
      throw ParameterError("build_problem: couplings must be finite");
    p.delta_a = delta_a;
    p.delta_b = delta_b;
    p.h0 = ComplexMatrix(3, {0.0, delta_a / 2.0, 0.0,  //
                             delta_a / 2.0, 0.0, delta_b / 2.0,  //
                             0.0, delta_b / 2.0, -delta});
    const std::array<double, 3> diag{1.0, 0.0, 1.0};
    p.hc = ComplexMatrix::diagonal(diag);
    p.initial_state = StateVector::basis(3, states.initial.value_or(0));
    p.target_state = StateVector::basis(3, states.target.value_or(2));
  }
  return p;
}

// Eigen-decomposition H = V diag(w) V^dagger of a Hermitian matrix.
struct HermitianEigen {
  std::array<double, ComplexMatrix::kMaxDim> values{};
  ComplexMatrix vectors;  // columns are eigenvectors
};

// Cyclic complex Jacobi. Each sweep rotates every (p, q) plane: first a
// phase on column q makes a_pq real, then a real Givens rotation zeroes it.
inline HermitianEigen jacobi_eigen(const ComplexMatrix& h, int max_sweeps = 50) {
  const std::size_t n = h.dim();
  ComplexMatrix a = h;
  ComplexMatrix v = ComplexMatrix::identity(n);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j) off += std::norm(a(i, j));
        scale += std::norm(a(i, j));
      }
    if (off <= 1e-36 * scale || off == 0.0) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double mod = std::abs(a(p, q));
        if (mod == 0.0) continue;
        const cplx phase = std::conj(a(p, q)) / mod;  // e^{-i phi}
        const double theta = (a(q, q).real() - a(p, p).real()) / (2.0 * mod);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // J = Phi * R with Phi = diag(.., e^{-i phi} at q, ..).
        ComplexMatrix j = ComplexMatrix::identity(n);
        j(p, p) = c;
        j(p, q) = s;
        j(q, p) = -s * phase;
        j(q, q) = c * phase;
        a = j.adjoint() * a * j;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        v = v * j;
      }
    }
  }
  HermitianEigen out;
  out.vectors = v;
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i).real();
  return out;
}

// exp(-i h dt) for Hermitian h. Dimension 2 uses the closed Pauli form
// h = a0 I + a.sigma; dimension 3 goes through jacobi_eigen.
inline ComplexMatrix segment_propagator(const ComplexMatrix& h, double dt) {
  if (!(dt >= 0.0) || !std::isfinite(dt)) throw ParameterError("segment_propagator: dt must be >= 0");
  const double defect = h.hermitian_defect();
  if (defect > 1e-10)
    throw NumericError("segment_propagator: matrix is not Hermitian (defect " + std::to_string(defect) + ")");
  const std::size_t n = h.dim();
  if (dt == 0.0) return ComplexMatrix::identity(n);

  if (n == 2) {
    const double a0 = 0.5 * (h(0, 0).real() + h(1, 1).real());
    const double az = 0.5 * (h(0, 0).real() - h(1, 1).real());
    const double ax = h(0, 1).real();
    const double ay = -h(0, 1).imag();
    const double r = std::sqrt(ax * ax + ay * ay + az * az);
    const double c = std::cos(r * dt);
    // sin(r dt)/r, with the r -> 0 limit.
    const double sr = r > 0.0 ? std::sin(r * dt) / r : dt;
    const cplx global = std::polar(1.0, -a0 * dt);
    const cplx mi(0.0, -1.0);
    ComplexMatrix u(2);
    u(0, 0) = global * (c + mi * sr * az);
    u(1, 1) = global * (c - mi * sr * az);
    u(0, 1) = global * (mi * sr * cplx(ax, -ay));
    u(1, 0) = global * (mi * sr * cplx(ax, ay));
    return u;
  }

  const HermitianEigen eig = jacobi_eigen(h);
  ComplexMatrix u(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      cplx acc = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        acc += eig.vectors(i, k) * std::polar(1.0, -eig.values[k] * dt) * std::conj(eig.vectors(j, k));
      u(i, j) = acc;
    }
  return u;
}

inline ComplexMatrix control_hamiltonian(const ControlProblem& problem, double eps) {
  return problem.h0 + eps * problem.hc;
}

namespace detail {

inline void check_protocol(const Protocol& protocol) {
  if (protocol.amplitudes.empty()) throw ParameterError("protocol needs at least one segment");
  if (!(protocol.total_time > 0.0) || !std::isfinite(protocol.total_time))
    throw ParameterError("protocol total_time must be positive");
}

// Squared overlap with the round-off clamp.
inline double clamp_fidelity(double f) {
  constexpr double kTol = 1e-12;
  if (f < -kTol || f > 1.0 + kTol || !std::isfinite(f))
    throw NumericError("fidelity outside [0, 1]: " + std::to_string(f));
  return std::clamp(f, 0.0, 1.0);
}

}  // namespace detail

// U = U_N ... U_2 U_1, segment 1 acting first.
inline ComplexMatrix propagate(const ControlProblem& problem, const Protocol& protocol) {
  detail::check_protocol(protocol);
  const double dt = protocol.segment_length();
  ComplexMatrix u = ComplexMatrix::identity(problem.dim());
  for (double eps : protocol.amplitudes) u = segment_propagator(control_hamiltonian(problem, eps), dt) * u;
  return u;
}

inline double transition_fidelity(const ControlProblem& problem, const ComplexMatrix& u) {
  return detail::clamp_fidelity(std::norm(problem.target_state.inner(u * problem.initial_state)));
}

// F = |<f|U|i>|^2
inline double fidelity(const ControlProblem& problem, const Protocol& protocol) {
  return transition_fidelity(problem, propagate(problem, protocol));
}

// Closed-form transition probability for a constant LZ drive:
// (delta^2 / W^2) sin^2(W T / 2), W = sqrt(delta^2 + 4 eps^2).
inline double rabi_oracle(double delta, double eps, double total_time) {
  const double w = std::sqrt(delta * delta + 4.0 * eps * eps);
  const double s = std::sin(0.5 * w * total_time);
  return (delta * delta) / (w * w) * s * s;
}

// Minimum control time of the LZ transfer |0> -> |1>.
inline double analytic_mct(double delta) {
  if (!(delta > 0.0)) throw ParameterError("analytic_mct: delta must be positive");
  return std::numbers::pi / delta;
}

}  // namespace mctnet
