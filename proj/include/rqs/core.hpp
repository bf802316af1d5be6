#pragma once

// Dense complex linear algebra substrate shared by all modules: states and
// operators on labeled tensor-product spaces, Kronecker products, Hermitian
// eigendecomposition, and elementary time stepping.

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace rqs {

using cx = std::complex<double>;
using Vec = Eigen::VectorXcd;
using Mat = Eigen::MatrixXcd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr cx kI{0.0, 1.0};

// Hard cap on Hilbert-space size; everything in scope is <= ~600.
inline constexpr long kMaxHilbertDim = 4096;

struct sizing_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline long product(const std::vector<int>& dims) {
  long p = 1;
  for (int d : dims) {
    if (d <= 0) throw validation_error("factor dimension must be positive");
    p *= d;
    if (p > kMaxHilbertDim) throw sizing_error("Hilbert dimension exceeds cap");
  }
  return p;
}

// State vector on a tensor-product space with labeled factor dimensions.
// Factor order is row-major: index = i0 * d1 * d2 * ... + i1 * d2 * ... + ...
struct QuantumState {
  Vec amps;
  std::vector<int> dims;

  QuantumState() = default;
  QuantumState(Vec a, std::vector<int> d) : amps(std::move(a)), dims(std::move(d)) {
    if (amps.size() != product(dims))
      throw validation_error("amplitude length does not match factor dims");
  }

  static QuantumState basis(const std::vector<int>& dims, const std::vector<int>& ket) {
    long n = product(dims);
    if (ket.size() != dims.size()) throw validation_error("ket rank mismatch");
    long idx = 0;
    for (size_t k = 0; k < dims.size(); ++k) {
      if (ket[k] < 0 || ket[k] >= dims[k]) throw validation_error("ket index out of range");
      idx = idx * dims[k] + ket[k];
    }
    Vec v = Vec::Zero(n);
    v(idx) = 1.0;
    return QuantumState(std::move(v), dims);
  }

  long dim() const { return amps.size(); }
  double norm() const { return amps.norm(); }
};

// Dense operator (Hamiltonian in rad/s, or dimensionless gate) on the same
// labeled space.
struct Operator {
  Mat m;
  std::vector<int> dims;

  Operator() = default;
  Operator(Mat mm, std::vector<int> d) : m(std::move(mm)), dims(std::move(d)) {
    if (m.rows() != m.cols()) throw validation_error("operator must be square");
    if (m.rows() != product(dims)) throw validation_error("operator size does not match dims");
  }

  static Operator identity(const std::vector<int>& dims) {
    long n = product(dims);
    return Operator(Mat::Identity(n, n), dims);
  }

  long dim() const { return m.rows(); }

  double hermiticity_defect() const { return (m - m.adjoint()).cwiseAbs().maxCoeff(); }
};

// Row-major Kronecker product; result dims = concatenation of inputs' dims.
inline Operator kron(const Operator& a, const Operator& b) {
  long na = a.dim(), nb = b.dim();
  if (na * nb > kMaxHilbertDim) throw sizing_error("kron result exceeds Hilbert cap");
  Mat out(na * nb, na * nb);
  for (long i = 0; i < na; ++i)
    for (long j = 0; j < na; ++j)
      out.block(i * nb, j * nb, nb, nb) = a.m(i, j) * b.m;
  std::vector<int> dims = a.dims;
  dims.insert(dims.end(), b.dims.begin(), b.dims.end());
  return Operator(std::move(out), std::move(dims));
}

struct EighResult {
  Eigen::VectorXd values;  // ascending
  Mat vectors;             // columns, orthonormal
};

inline EighResult eigh(const Operator& h) {
  double scale = h.m.cwiseAbs().maxCoeff();
  if (scale > 0.0 && h.hermiticity_defect() > 1e-10 * scale)
    throw validation_error("eigh: input is not Hermitian within tolerance");
  Eigen::SelfAdjointEigenSolver<Mat> solver(0.5 * (h.m + h.m.adjoint()));
  if (solver.info() != Eigen::Success) throw numerical_error("eigh failed to converge");
  return {solver.eigenvalues(), solver.eigenvectors()};
}

// Exact exp(-i h dt) |psi> through the eigendecomposition. Used for
// piecewise-constant Hamiltonian segments.
inline QuantumState propagate_step(const QuantumState& state, const Operator& h, double dt) {
  if (dt <= 0.0) throw validation_error("propagate_step: dt must be positive");
  EighResult e = eigh(h);
  Vec c = e.vectors.adjoint() * state.amps;
  for (long k = 0; k < c.size(); ++k) c(k) *= std::exp(-kI * (e.values(k) * dt));
  return QuantumState(e.vectors * c, state.dims);
}

// Same, with a precomputed eigendecomposition (hot loops: flux ramps, drives).
inline Vec propagate_eig(const Vec& psi, const EighResult& e, double dt) {
  Vec c = e.vectors.adjoint() * psi;
  for (long k = 0; k < c.size(); ++k) c(k) *= std::exp(-kI * (e.values(k) * dt));
  return e.vectors * c;
}

// One classical RK4 step of dpsi/dt = f(t, psi); local error O(dt^5). Used by
// the drive integrator, which supplies an interaction-picture right-hand side.
template <typename Rhs>
Vec rk4_step(const Vec& psi, double t, double dt, Rhs&& f) {
  Vec k1 = f(t, psi);
  Vec k2 = f(t + 0.5 * dt, Vec(psi + 0.5 * dt * k1));
  Vec k3 = f(t + 0.5 * dt, Vec(psi + 0.5 * dt * k2));
  Vec k4 = f(t + dt, Vec(psi + dt * k3));
  return psi + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace rqs
