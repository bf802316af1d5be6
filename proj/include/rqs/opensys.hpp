#pragma once

// Energy-relaxation dynamics for the gate sequences, in the rotating
// interaction picture: a dense Lindblad master-equation solver (small-system
// oracle) and a quantum-trajectory Monte Carlo solver that scales to the full
// two-pair space.  Gates are modeled as rectangular-envelope steps whose
// Hamiltonians keep only the resonant term of each pulse, so a step is a
// piecewise-constant (non-Hermitian, once decay is folded in) generator that
// can be exponentiated exactly.

#include "rqs/cqed.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace rqs {

// ---------------------------------------------------------------------------
// Decoherence model: energy loss only.  One relaxation time per auxiliary
// atom (t_q) and one per resonator (t_r); rates are 1/T.  Infinite times are
// allowed and mean the channel is off.

struct DecoherenceParams {
  double t_q = std::numeric_limits<double>::infinity();  // s
  double t_r = std::numeric_limits<double>::infinity();  // s

  void validate() const {
    if (!(t_q > 0.0) || !(t_r > 0.0))
      throw validation_error("DecoherenceParams: relaxation times must be positive");
  }
  double rate_q() const { return std::isinf(t_q) ? 0.0 : 1.0 / t_q; }
  double rate_r() const { return std::isinf(t_r) ? 0.0 : 1.0 / t_r; }
};

struct Channel {
  std::string label;
  Mat l;        // collapse operator on the full space
  double rate;  // 1/s
};

// ---------------------------------------------------------------------------
// Interaction-picture step Hamiltonians.  Fock-selective 0<->1 pulses act only
// on the resonator's |j> sector; the 1<->2 pulse is unconditional; the swap
// and exchange steps are the resonant parts of the couplings.

enum class InteractionKind { r01, r12, s_swap, ra01, rb01, c_exchange };

struct StepTag {
  InteractionKind kind;
  int fock = 0;  // selectivity index for r01 / ra01 / rb01
};

namespace detail {

inline Mat coupling01(int levels, double amp) {
  Mat x = Mat::Zero(levels, levels);
  x(0, 1) = x(1, 0) = 0.5 * amp;
  return x;
}

inline Mat fock_projector(int levels, int j) {
  if (j < 0 || j >= levels) throw validation_error("interaction step: Fock index out of range");
  Mat p = Mat::Zero(levels, levels);
  p(j, j) = 1.0;
  return p;
}

}  // namespace detail

inline Operator interaction_hamiltonian(const StepTag& tag, const SystemParams& p,
                                        double omega1, double omega2) {
  p.validate();
  int q = p.atom_levels, n = p.resonator_levels;
  switch (tag.kind) {
    case InteractionKind::r01:
      return kron(Operator(detail::coupling01(q, omega1), {q}),
                  Operator(detail::fock_projector(n, tag.fock), {n}));
    case InteractionKind::r12: {
      Mat x = Mat::Zero(q, q);
      x(1, 2) = x(2, 1) = 0.5 * omega2;
      return kron(Operator(std::move(x), {q}), Operator::identity({n}));
    }
    case InteractionKind::s_swap: {
      // Resonant part of g (a sigma+ + h.c.) at omega12 = omega_r: only the
      // 1<->2 rung survives the rotating frame.
      Mat s = Mat::Zero(q, q);
      s(1, 2) = p.lambda;
      Operator sm(std::move(s), {q});
      Mat c = kron(Operator(Mat(sm.m.adjoint()), {q}), annihilation(n)).m;
      return Operator(Mat(p.g * (c + c.adjoint())), {q, n});
    }
    default:
      throw validation_error("interaction_hamiltonian: two-system tag on a single system");
  }
}

inline Operator interaction_hamiltonian(const StepTag& tag, const TwoSystemParams& p,
                                        double omega1) {
  p.validate();
  Operator iqa = Operator::identity({p.a.atom_levels});
  Operator iqb = Operator::identity({p.b.atom_levels});
  Operator ira = Operator::identity({p.a.resonator_levels});
  Operator irb = Operator::identity({p.b.resonator_levels});
  switch (tag.kind) {
    case InteractionKind::ra01:
      return kron4(Operator(detail::coupling01(p.a.atom_levels, omega1), {p.a.atom_levels}),
                   iqb, Operator(detail::fock_projector(p.a.resonator_levels, tag.fock),
                                 {p.a.resonator_levels}),
                   irb);
    case InteractionKind::rb01:
      return kron4(iqa,
                   Operator(detail::coupling01(p.b.atom_levels, omega1), {p.b.atom_levels}),
                   ira,
                   Operator(detail::fock_projector(p.b.resonator_levels, tag.fock),
                            {p.b.resonator_levels}));
    case InteractionKind::c_exchange: {
      // lambda g_ab (|1,1><0,2| + h.c.) on the two auxiliaries: the resonant
      // part of the exchange at omega_B12 = omega_A01.
      long qa = p.a.atom_levels, qb = p.b.atom_levels;
      Mat c = Mat::Zero(qa * qb, qb * qa);
      c(1 * qb + 1, 0 * qb + 2) = p.b.lambda * p.g_ab;
      Operator atoms(Mat(c + c.adjoint()), {p.a.atom_levels, p.b.atom_levels});
      return kron(kron(atoms, ira), irb);
    }
    default:
      throw validation_error("interaction_hamiltonian: single-system tag on a two-pair system");
  }
}

// ---------------------------------------------------------------------------
// Sequences: piecewise-constant steps.  Each step carries the full-space
// Hamiltonian (dense-oracle path) plus a factored exact drift for the
// trajectory path: the effective generator H - (i/2) sum(rate L'L) splits into
// commuting factors on disjoint tensor axes, each small enough to
// eigendecompose, so drifting by any dt is two small matrix products.

namespace detail {

struct DriftFactor {
  Mat v, vinv;           // eigenvectors of the factor generator (non-Hermitian)
  Eigen::VectorXcd lam;  // eigenvalues; positive imaginary part = decay
  std::vector<long> pos;  // pos[g * rest + r] = flat index into the state
  long group_dim = 0, rest_dim = 0;
};

inline DriftFactor make_factor(const Mat& gen, const std::vector<int>& dims,
                               const std::vector<int>& axes) {
  DriftFactor f;
  Eigen::ComplexEigenSolver<Mat> es(gen);
  if (es.info() != Eigen::Success) throw numerical_error("drift factor eigensolve failed");
  f.v = es.eigenvectors();
  f.vinv = f.v.inverse();
  f.lam = es.eigenvalues();

  long total = 1;
  for (int d : dims) total *= d;
  f.group_dim = 1;
  for (int a : axes) f.group_dim *= dims[size_t(a)];
  f.rest_dim = total / f.group_dim;
  if (f.group_dim != gen.rows())
    throw validation_error("drift factor dimension does not match its axes");

  std::vector<long> strides(dims.size());
  long s = 1;
  for (long k = long(dims.size()) - 1; k >= 0; --k) {
    strides[size_t(k)] = s;
    s *= dims[size_t(k)];
  }
  std::vector<char> in_group(dims.size(), 0);
  for (int a : axes) in_group[size_t(a)] = 1;

  f.pos.assign(size_t(f.group_dim) * size_t(f.rest_dim), 0);
  for (long i = 0; i < total; ++i) {
    long g = 0, r = 0;
    for (int a : axes) g = g * dims[size_t(a)] + (i / strides[size_t(a)]) % dims[size_t(a)];
    for (size_t k = 0; k < dims.size(); ++k)
      if (!in_group[k]) r = r * dims[k] + (i / strides[k]) % dims[k];
    f.pos[size_t(g) * size_t(f.rest_dim) + size_t(r)] = i;
  }
  return f;
}

inline void apply_factor(const DriftFactor& f, double dt, Vec& psi) {
  Mat u = f.v;
  for (long k = 0; k < f.lam.size(); ++k)
    u.col(k) *= std::exp(-kI * (f.lam(k) * dt));
  Mat step = u * f.vinv;
  Vec x(f.group_dim), y(f.group_dim);
  for (long r = 0; r < f.rest_dim; ++r) {
    for (long g = 0; g < f.group_dim; ++g) x(g) = psi(f.pos[size_t(g) * size_t(f.rest_dim) + size_t(r)]);
    y.noalias() = step * x;
    for (long g = 0; g < f.group_dim; ++g) psi(f.pos[size_t(g) * size_t(f.rest_dim) + size_t(r)]) = y(g);
  }
}

}  // namespace detail

struct SequenceStep {
  std::string label;
  Operator h;                // full-space Hamiltonian, rad/s
  double duration = 0.0;     // s
  double rotation_rate = 0.0;   // rad/s; rate * duration is the effected angle
  double nominal_angle = 0.0;   // rad; what the step is supposed to effect
  std::vector<detail::DriftFactor> factors;  // exact drift, decay folded in
};

struct InteractionSequence {
  std::vector<int> dims;
  std::vector<SequenceStep> steps;
  std::vector<Channel> channels;
  double total_duration = 0.0;
};

namespace detail {

// Drift the (unnormalized) state across dt of one step.
inline void drift(const SequenceStep& st, double dt, Vec& psi) {
  for (const auto& f : st.factors) apply_factor(f, dt, psi);
}

inline Mat decay_generator(const Mat& h, const std::vector<Channel>& ch) {
  Mat g = h;
  for (const auto& c : ch) g -= 0.5 * kI * c.rate * Mat(c.l.adjoint() * c.l);
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Sequence builders mirroring the pulse-schedule gates, in rectangular-step
// form.  Single-qudit U_{j,j+1}: the mirror ladder of selective pi-pulses
// around a central swap.  Channels: the active pair's atom and resonator.

inline InteractionSequence interaction_single_qudit_sequence(
    const SystemParams& p, int j, const DecoherenceParams& d,
    double theta = 0.5 * kPi, double omega1 = kTwoPi * 6.67e6,
    double omega2 = kTwoPi * 25.0e6) {
  p.validate();
  d.validate();
  if (j < 0 || j + 1 >= p.resonator_levels)
    throw validation_error("interaction sequence: Fock pair out of range");

  InteractionSequence s;
  s.dims = {p.atom_levels, p.resonator_levels};
  Operator sm = sigma_minus(p);
  Operator lq = kron(sm, Operator::identity({p.resonator_levels}));
  Operator lr = kron(Operator::identity({p.atom_levels}), annihilation(p.resonator_levels));
  s.channels = {{"atom", lq.m, d.rate_q()}, {"resonator", lr.m, d.rate_r()}};

  double swap_rate = p.lambda * p.g * std::sqrt(double(j + 1));
  auto add = [&](const StepTag& tag, double rate, double angle, std::string label) {
    SequenceStep st;
    st.label = std::move(label);
    st.h = interaction_hamiltonian(tag, p, omega1, omega2);
    st.rotation_rate = rate;
    st.nominal_angle = angle;
    st.duration = angle / rate;
    st.factors.push_back(
        detail::make_factor(detail::decay_generator(st.h.m, s.channels), s.dims, {0, 1}));
    s.steps.push_back(std::move(st));
  };
  add({InteractionKind::r01, j}, omega1, kPi, "r01(" + std::to_string(j) + ")");
  add({InteractionKind::r12}, omega2, kPi, "r12");
  add({InteractionKind::r01, j + 1}, omega1, kPi, "r01(" + std::to_string(j + 1) + ")");
  add({InteractionKind::s_swap}, swap_rate, theta, "s");
  add({InteractionKind::r01, j + 1}, omega1, kPi, "r01(" + std::to_string(j + 1) + ")");
  add({InteractionKind::r12}, omega2, kPi, "r12");
  add({InteractionKind::r01, j}, omega1, kPi, "r01(" + std::to_string(j) + ")");
  for (const auto& st : s.steps) s.total_duration += st.duration;
  return s;
}

// Free decay (zero Hamiltonian) for a given duration; the analytic
// amplitude-damping laws are exercised against this.
inline InteractionSequence idle_sequence(const std::vector<int>& dims,
                                         std::vector<Channel> channels, double duration) {
  if (duration <= 0.0) throw validation_error("idle_sequence: duration must be positive");
  long n = product(dims);
  InteractionSequence s;
  s.dims = dims;
  s.channels = std::move(channels);
  SequenceStep st;
  st.label = "idle";
  st.h = Operator(Mat::Zero(n, n), dims);
  st.duration = duration;
  st.rotation_rate = 1.0;
  st.nominal_angle = duration;
  std::vector<int> axes(dims.size());
  for (size_t k = 0; k < dims.size(); ++k) axes[k] = int(k);
  st.factors.push_back(
      detail::make_factor(detail::decay_generator(st.h.m, s.channels), dims, axes));
  s.steps.push_back(std::move(st));
  s.total_duration = duration;
  return s;
}

// Two-qudit controlled phase on |n, n>: simultaneous selective pi-pulses on
// both auxiliaries, a full exchange cycle through |0,2>, and the mirrored
// pulses.  Channels: both atoms and both resonators.

inline InteractionSequence interaction_two_qudit_sequence(
    const TwoSystemParams& p, int n, const DecoherenceParams& d,
    double omega1 = kTwoPi * 6.67e6) {
  p.validate();
  d.validate();
  if (p.g_ab <= 0.0) throw validation_error("interaction sequence: coupler strength required");
  if (n < 0 || n >= p.a.resonator_levels || n >= p.b.resonator_levels)
    throw validation_error("interaction sequence: Fock index out of range");

  InteractionSequence s;
  s.dims = {p.a.atom_levels, p.b.atom_levels, p.a.resonator_levels, p.b.resonator_levels};
  Operator iqa = Operator::identity({p.a.atom_levels});
  Operator iqb = Operator::identity({p.b.atom_levels});
  Operator ira = Operator::identity({p.a.resonator_levels});
  Operator irb = Operator::identity({p.b.resonator_levels});
  s.channels = {
      {"atom_a", kron4(sigma_minus(p.a), iqb, ira, irb).m, d.rate_q()},
      {"atom_b", kron4(iqa, sigma_minus(p.b), ira, irb).m, d.rate_q()},
      {"resonator_a", kron4(iqa, iqb, annihilation(p.a.resonator_levels), irb).m, d.rate_r()},
      {"resonator_b", kron4(iqa, iqb, ira, annihilation(p.b.resonator_levels)).m, d.rate_r()},
  };

  int qa = p.a.atom_levels, qb = p.b.atom_levels;
  int na = p.a.resonator_levels, nb = p.b.resonator_levels;
  double gp = p.b.lambda * p.g_ab;

  // Per-factor effective generators with each subsystem's decay attached to
  // exactly one factor so the product reproduces the full drift.
  auto pair_gen = [&](const SystemParams& sp, double omega) {
    Mat h = interaction_hamiltonian({InteractionKind::r01, n}, sp, omega, 0.0).m;
    Mat lq = kron(sigma_minus(sp), Operator::identity({sp.resonator_levels})).m;
    Mat lr = kron(Operator::identity({sp.atom_levels}), annihilation(sp.resonator_levels)).m;
    h -= 0.5 * kI * d.rate_q() * Mat(lq.adjoint() * lq);
    h -= 0.5 * kI * d.rate_r() * Mat(lr.adjoint() * lr);
    return h;
  };

  {
    SequenceStep st;
    st.label = "ra01+rb01(" + std::to_string(n) + ")";
    Operator ha = interaction_hamiltonian({InteractionKind::ra01, n}, p, omega1);
    Operator hb = interaction_hamiltonian({InteractionKind::rb01, n}, p, omega1);
    st.h = Operator(Mat(ha.m + hb.m), s.dims);
    st.rotation_rate = omega1;
    st.nominal_angle = kPi;
    st.duration = kPi / omega1;
    st.factors.push_back(detail::make_factor(pair_gen(p.a, omega1), s.dims, {0, 2}));
    st.factors.push_back(detail::make_factor(pair_gen(p.b, omega1), s.dims, {1, 3}));
    s.steps.push_back(st);

    SequenceStep c;
    c.label = "c";
    c.h = interaction_hamiltonian({InteractionKind::c_exchange}, p, omega1);
    c.rotation_rate = gp;
    c.nominal_angle = kPi;  // full |1,1> -> |0,2> -> -|1,1> cycle
    c.duration = kPi / gp;
    Mat atoms = Mat::Zero(qa * qb, qa * qb);
    atoms(1 * qb + 1, 0 * qb + 2) = gp;
    atoms += Mat(atoms.adjoint()).eval();
    Mat sa = sigma_minus(p.a).m, sb = sigma_minus(p.b).m;
    atoms -= 0.5 * kI * d.rate_q() *
             (kron(Operator(Mat(sa.adjoint() * sa), {qa}), Operator::identity({qb})).m +
              kron(Operator::identity({qa}), Operator(Mat(sb.adjoint() * sb), {qb})).m);
    c.factors.push_back(detail::make_factor(atoms, s.dims, {0, 1}));
    Mat aa = annihilation(na).m, ab = annihilation(nb).m;
    c.factors.push_back(detail::make_factor(
        Mat(-0.5 * kI * d.rate_r() * Mat(aa.adjoint() * aa)), s.dims, {2}));
    c.factors.push_back(detail::make_factor(
        Mat(-0.5 * kI * d.rate_r() * Mat(ab.adjoint() * ab)), s.dims, {3}));
    s.steps.push_back(std::move(c));

    s.steps.push_back(st);  // mirrored drive step
  }
  for (const auto& st : s.steps) s.total_duration += st.duration;
  return s;
}

// ---------------------------------------------------------------------------
// Dense master-equation oracle.

inline Mat lindblad_rhs_raw(const Mat& rho, const Mat& h, const std::vector<Channel>& ch) {
  Mat out = -kI * (h * rho - rho * h);
  for (const auto& c : ch) {
    if (c.rate == 0.0) continue;
    Mat lr = c.l * rho;
    Mat ll = c.l.adjoint() * c.l;
    out += c.rate * (lr * c.l.adjoint() - 0.5 * (ll * rho + rho * ll));
  }
  return out;
}

inline Operator lindblad_rhs(const Operator& rho, const Operator& h,
                             const std::vector<Channel>& ch) {
  if (rho.hermiticity_defect() > 1e-9)
    throw validation_error("lindblad_rhs: density operator must be Hermitian");
  if (std::abs(rho.m.trace().real() - 1.0) > 1e-9 || std::abs(rho.m.trace().imag()) > 1e-9)
    throw validation_error("lindblad_rhs: density operator must have unit trace");
  return Operator(lindblad_rhs_raw(rho.m, h.m, ch), rho.dims);
}

inline constexpr long kDenseDimCap = 64;

inline Mat dense_master_solve(const InteractionSequence& s, const Mat& rho0) {
  long dim = rho0.rows();
  if (dim > kDenseDimCap)
    throw sizing_error("dense_master_solve: Hilbert dimension exceeds the dense cap");
  Mat rho = rho0;
  for (const auto& st : s.steps) {
    // Gershgorin bound on the generator sets the RK4 step.
    double scale = st.h.m.cwiseAbs().rowwise().sum().maxCoeff();
    for (const auto& c : s.channels)
      scale += c.rate * Mat(c.l.adjoint() * c.l).cwiseAbs().rowwise().sum().maxCoeff();
    long nsteps = std::max<long>(16, long(std::ceil(st.duration * scale / 0.02)));
    double dt = st.duration / double(nsteps);
    for (long i = 0; i < nsteps; ++i) {
      Mat k1 = lindblad_rhs_raw(rho, st.h.m, s.channels);
      Mat k2 = lindblad_rhs_raw(Mat(rho + 0.5 * dt * k1), st.h.m, s.channels);
      Mat k3 = lindblad_rhs_raw(Mat(rho + 0.5 * dt * k2), st.h.m, s.channels);
      Mat k4 = lindblad_rhs_raw(Mat(rho + dt * k3), st.h.m, s.channels);
      rho += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    double tr = rho.trace().real();
    if (std::abs(tr - 1.0) > 1e-9 || (rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-9)
      throw numerical_error("dense_master_solve: trace or Hermiticity drift");
  }
  return rho;
}

// ---------------------------------------------------------------------------
// Quantum-trajectory Monte Carlo: waiting-time unraveling.  Between jumps the
// non-Hermitian drift is deterministic and exact (factored exponentials); the
// squared norm of the unnormalized state decays monotonically, so each jump
// time is located by bisection against the trajectory's uniform threshold.

struct TrajectoryRun {
  int n_trajectories = 0;
  std::uint64_t seed = 0;
  double mean = 0.0;
  double std_error = 0.0;
  long total_jumps = 0;
  std::vector<long> jumps_per_channel;
  std::vector<double> per_trajectory;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform in [0,1) from the top 53 bits; avoids the implementation-defined
// distribution adaptors so streams are identical across standard libraries.
inline double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

inline double pairwise_sum(const double* x, size_t n) {
  if (n <= 8) {
    double s = 0.0;
    for (size_t i = 0; i < n; ++i) s += x[i];
    return s;
  }
  size_t half = n / 2;
  return pairwise_sum(x, half) + pairwise_sum(x + half, n - half);
}

}  // namespace detail

struct TrajectoryOptions {
  int threads = 1;
  double jump_resolution_div = 1e4;  // jump-time resolution = min(T_q,T_r)/this
};

// Estimator: |<target|psi_final>|^2 on the normalized final state.
inline TrajectoryRun run_trajectories(const InteractionSequence& s, const QuantumState& initial,
                                      const Vec& target, int n_traj, std::uint64_t seed,
                                      const TrajectoryOptions& opts = {}) {
  if (n_traj < 1) throw validation_error("run_trajectories: need at least one trajectory");
  if (initial.dims != s.dims) throw validation_error("run_trajectories: state dims mismatch");
  if (target.size() != initial.dim())
    throw validation_error("run_trajectories: target size mismatch");
  for (const auto& st : s.steps) {
    if (std::abs(st.rotation_rate * st.duration - st.nominal_angle) > 1e-6)
      throw numerical_error("run_trajectories: step area off nominal: " + st.label);
  }

  double min_t = std::numeric_limits<double>::infinity();
  for (const auto& c : s.channels)
    if (c.rate > 0.0) min_t = std::min(min_t, 1.0 / c.rate);
  double dt_res = std::isinf(min_t) ? s.total_duration : min_t / opts.jump_resolution_div;

  TrajectoryRun run;
  run.n_trajectories = n_traj;
  run.seed = seed;
  run.per_trajectory.assign(size_t(n_traj), 0.0);
  std::vector<std::vector<long>> jump_counts(size_t(n_traj),
                                             std::vector<long>(s.channels.size(), 0));

  auto one = [&](int idx) {
    std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(std::uint64_t(idx) + 1)));
    Vec psi = initial.amps;
    double r = detail::uniform01(rng);
    for (size_t si = 0; si < s.steps.size(); ++si) {
      const auto& st = s.steps[si];
      double t = 0.0;  // time already consumed within this step
      while (t < st.duration) {
        double rem = st.duration - t;
        Vec trial = psi;
        detail::drift(st, rem, trial);
        if (trial.squaredNorm() > r) {
          psi = std::move(trial);
          break;
        }
        // Bisect the jump time within [t, t + rem].
        double lo = 0.0, hi = rem;
        while (hi - lo > dt_res) {
          double mid = 0.5 * (lo + hi);
          Vec probe = psi;
          detail::drift(st, mid, probe);
          (probe.squaredNorm() > r ? lo : hi) = mid;
        }
        Vec at_jump = psi;
        detail::drift(st, hi, at_jump);
        // Channel selection by weight rate * |L psi|^2.
        std::vector<double> w(s.channels.size(), 0.0);
        double wsum = 0.0;
        for (size_t c = 0; c < s.channels.size(); ++c) {
          if (s.channels[c].rate == 0.0) continue;
          w[c] = s.channels[c].rate * (s.channels[c].l * at_jump).squaredNorm();
          wsum += w[c];
        }
        if (wsum <= 0.0) {  // norm hit threshold with no open channel; drift on
          detail::drift(st, rem - hi, at_jump);
          psi = std::move(at_jump);
          break;
        }
        double pick = detail::uniform01(rng) * wsum, acc = 0.0;
        size_t chosen = s.channels.size() - 1;
        for (size_t c = 0; c < s.channels.size(); ++c) {
          acc += w[c];
          if (pick < acc) { chosen = c; break; }
        }
        psi = s.channels[chosen].l * at_jump;
        psi /= psi.norm();
        ++jump_counts[size_t(idx)][chosen];
        r = detail::uniform01(rng);
        t += hi;
      }
    }
    double n2 = psi.squaredNorm();
    run.per_trajectory[size_t(idx)] = std::norm(target.dot(psi)) / n2;
  };

  int nw = std::max(1, opts.threads);
  if (nw == 1) {
    for (int i = 0; i < n_traj; ++i) one(i);
  } else {
    std::vector<std::future<void>> futs;
    int chunk = (n_traj + nw - 1) / nw;
    for (int w = 0; w < nw; ++w) {
      int b = w * chunk, e = std::min(n_traj, b + chunk);
      if (b >= e) break;
      futs.push_back(std::async(std::launch::async, [&, b, e] {
        for (int i = b; i < e; ++i) one(i);
      }));
    }
    for (auto& f : futs) f.get();
  }

  run.mean = detail::pairwise_sum(run.per_trajectory.data(), run.per_trajectory.size()) /
             double(n_traj);
  std::vector<double> dev2(size_t(n_traj), 0.0);
  for (int i = 0; i < n_traj; ++i) {
    double d = run.per_trajectory[size_t(i)] - run.mean;
    dev2[size_t(i)] = d * d;
  }
  if (n_traj > 1) {
    double var = detail::pairwise_sum(dev2.data(), dev2.size()) / double(n_traj - 1);
    run.std_error = std::sqrt(var / double(n_traj));
  }
  run.jumps_per_channel.assign(s.channels.size(), 0);
  for (const auto& jc : jump_counts)
    for (size_t c = 0; c < jc.size(); ++c) {
      run.jumps_per_channel[c] += jc[c];
      run.total_jumps += jc[c];
    }
  return run;
}

// Closed-system final state of the same sequence (all rates zero drift is
// unitary only if the sequence was built with infinite times; this helper
// re-exponentiates the Hamiltonians so it works for any sequence).
inline Vec closed_system_final(const InteractionSequence& s, const QuantumState& initial) {
  QuantumState psi = initial;
  for (const auto& st : s.steps) psi = propagate_step(psi, st.h, st.duration);
  return psi.amps;
}

inline nlohmann::json trajectory_run_to_json(const TrajectoryRun& r) {
  nlohmann::json o;
  o["n_trajectories"] = r.n_trajectories;
  o["seed"] = r.seed;
  o["mean"] = r.mean;
  o["std_error"] = r.std_error;
  o["total_jumps"] = r.total_jumps;
  o["jumps_per_channel"] = r.jumps_per_channel;
  return o;
}

}  // namespace rqs
