#pragma once

// Time-domain execution of a Schedule against the lab-frame Hamiltonian:
// exact eigendecomposition stepping for constant segments (idle, flux
// plateaus, ramp substeps) and interaction-picture RK4 for the cos(wt) drive
// segments (no rotating-wave approximation), plus basis-state tomography and
// resonant Rabi readout.

#include "rqs/pulse.hpp"
#include "rqs/spectrum.hpp"

#include <future>
#include <map>
#include <ostream>
#include <tuple>

namespace rqs {

struct PropagatorOptions {
  double sample_dt = 0.5e-9;  // trace sampling, s
  int steps_per_period = 96;  // RK4 substeps per carrier period
  int ramp_substeps = 50;     // must match the calibration discretization
  int threads = 1;            // tomography fan-out
};

struct SimulationTrace {
  std::vector<double> times;            // s
  std::vector<Eigen::VectorXd> probs;   // |<basis_k|psi(t)>|^2 per sample
  Vec final_state;                      // lab frame, bare basis
};

namespace detail {

// Idle frame shared by both system flavors: eigenbasis of the static
// Hamiltonian plus the dominant-component map from bare indices.
struct IdleFrame {
  EighResult eig;
  std::vector<long> eigen_of_bare;  // bare index -> eigenindex
};

inline IdleFrame make_idle_frame(const Operator& h0) {
  IdleFrame f;
  f.eig = eigh(h0);
  long dim = f.eig.values.size();
  f.eigen_of_bare.assign(dim, -1);
  for (long k = 0; k < dim; ++k) {
    long dominant = 0;
    f.eig.vectors.col(k).cwiseAbs().maxCoeff(&dominant);
    if (f.eigen_of_bare[dominant] >= 0)
      throw numerical_error("idle frame: ambiguous dressed labeling");
    f.eigen_of_bare[dominant] = k;
  }
  return f;
}

struct Sampler {
  double sample_dt;
  const Mat* basis;  // columns, lab frame
  std::vector<double>* times;
  std::vector<Eigen::VectorXd>* probs;
  double next = 0.0;

  void record(double t, const Vec& psi) {
    times->push_back(t);
    probs->push_back((basis->adjoint() * psi).cwiseAbs2());
    next = t + sample_dt;
  }
  // step-based integrators call this after each step they cannot subdivide
  void maybe(double t, const Vec& psi) {
    if (t + 1e-15 >= next) record(t, psi);
  }
};

// Exact propagation over [a, b] under a fixed Hamiltonian, sampling on the
// regular grid inside the interval.
inline Vec run_exact(Vec psi, const EighResult& e, double a, double b, Sampler& smp) {
  if (b <= a + 1e-18) return psi;
  Vec c = e.vectors.adjoint() * psi;
  while (smp.next < b - 1e-15) {
    double ts = std::max(smp.next, a);
    Vec cs = c;
    double dt = ts - a;
    for (long k = 0; k < cs.size(); ++k) cs(k) *= std::polar(1.0, -e.values(k) * dt);
    smp.record(ts, Vec(e.vectors * cs));
  }
  double dt = b - a;
  for (long k = 0; k < c.size(); ++k) c(k) *= std::polar(1.0, -e.values(k) * dt);
  return e.vectors * c;
}

struct DriveLine {
  const std::vector<PulseSegment>* segs;
  const Mat* xt;  // V^dag X V in the idle eigenbasis
};

// Interaction-picture RK4 over [a, b] with every microwave segment of the
// given lines evaluated literally (cos carrier, Gaussian envelope). The
// interaction picture strips the static eigenphases, so the RHS magnitude is
// set by the drive strength while the step size resolves the carrier.
inline Vec run_drives(Vec psi, const EighResult& e0, const std::vector<DriveLine>& lines, double a,
                      double b, int steps_per_period, Sampler& smp) {
  long dim = psi.size();
  double fmax = 0.0;
  for (const auto& line : lines)
    for (const auto& seg : *line.segs)
      if (seg.end() > a && seg.start < b) fmax = std::max(fmax, seg.carrier / kTwoPi);
  if (fmax <= 0.0) throw numerical_error("run_drives: no active carrier in window");
  long nsteps = long(std::ceil((b - a) * fmax * steps_per_period));
  double dt = (b - a) / nsteps;

  // c_k = e^{+i lambda_k t} a_k with a = V^dag psi
  Vec c = e0.vectors.adjoint() * psi;
  for (long k = 0; k < dim; ++k) c(k) *= std::polar(1.0, e0.values(k) * a);

  Vec w(dim), y(dim);
  auto rhs = [&](double t, const Vec& cc) -> Vec {
    for (long k = 0; k < dim; ++k) w(k) = std::polar(1.0, -e0.values(k) * t) * cc(k);
    y.setZero();
    for (const auto& line : lines) {
      double f = 0.0;
      for (const auto& seg : *line.segs) {
        double env = segment_envelope(seg, t);
        if (env != 0.0) f += env * std::cos(seg.carrier * t + seg.phase);
      }
      if (f != 0.0) y.noalias() += f * (*line.xt * w);
    }
    Vec out(dim);
    for (long k = 0; k < dim; ++k) out(k) = -kI * std::polar(1.0, e0.values(k) * t) * y(k);
    return out;
  };

  for (long s = 0; s < nsteps; ++s) {
    double t = a + s * dt;
    c = rk4_step(c, t, dt, rhs);
    if (t + dt + 1e-15 >= smp.next) {
      Vec out = c;
      for (long k = 0; k < dim; ++k) out(k) *= std::polar(1.0, -e0.values(k) * (t + dt));
      smp.maybe(t + dt, Vec(e0.vectors * out));
    }
  }
  for (long k = 0; k < dim; ++k) c(k) *= std::polar(1.0, -e0.values(k) * b);
  return e0.vectors * c;
}

// Piecewise-constant flux excursion discretized exactly like the calibration:
// midpoint-rule substeps on each ramp, exact plateau.
struct FluxCache {
  std::vector<EighResult> up, down;
  EighResult hold;
  double dt_sub = 0.0;
};

template <class HamiltonianAt>
FluxCache build_flux_cache(HamiltonianAt&& h_at, double rise, int substeps) {
  FluxCache c;
  c.dt_sub = rise / substeps;
  for (int i = 0; i < substeps; ++i) c.up.push_back(eigh(h_at((i + 0.5) / substeps)));
  c.down.assign(c.up.rbegin(), c.up.rend());
  c.hold = eigh(h_at(1.0));
  return c;
}

inline Vec run_flux(Vec psi, const FluxCache& c, double a, double hold_time, Sampler& smp) {
  double t = a;
  for (const auto& e : c.up) {
    psi = propagate_eig(psi, e, c.dt_sub);
    t += c.dt_sub;
    smp.maybe(t, psi);
  }
  psi = run_exact(std::move(psi), c.hold, t, t + hold_time, smp);
  t += hold_time;
  for (const auto& e : c.down) {
    psi = propagate_eig(psi, e, c.dt_sub);
    t += c.dt_sub;
    smp.maybe(t, psi);
  }
  return psi;
}

// Timeline: flux segments and virtual-z events interleaved with merged drive
// windows; idle gaps evolve exactly.
struct Event {
  enum Kind { flux, drives, vz } kind;
  double t0, t1;
  const PulseSegment* seg = nullptr;   // flux
  const Annotation* ann = nullptr;     // vz
};

inline std::vector<Event> build_timeline(const Schedule& s) {
  std::vector<Event> ev;
  for (const auto& seg : s.flux_a) ev.push_back({Event::flux, seg.start, seg.end(), &seg, nullptr});
  for (const auto& seg : s.flux_b) ev.push_back({Event::flux, seg.start, seg.end(), &seg, nullptr});

  std::vector<const PulseSegment*> drive;
  for (const auto& seg : s.drive_a) drive.push_back(&seg);
  for (const auto& seg : s.drive_b) drive.push_back(&seg);
  std::sort(drive.begin(), drive.end(),
            [](const PulseSegment* a, const PulseSegment* b) { return a->start < b->start; });
  for (size_t i = 0; i < drive.size();) {
    double t0 = drive[i]->start, t1 = drive[i]->end();
    size_t j = i + 1;
    while (j < drive.size() && drive[j]->start < t1 + 1e-15) {
      t1 = std::max(t1, drive[j]->end());
      ++j;
    }
    ev.push_back({Event::drives, t0, t1, nullptr, nullptr});
    i = j;
  }
  for (const auto& a : s.annotations)
    if (a.kind == StepKind::VZ || a.kind == StepKind::VZA || a.kind == StepKind::VZB)
      ev.push_back({Event::vz, a.t0, a.t0, nullptr, &a});
  std::sort(ev.begin(), ev.end(), [](const Event& a, const Event& b) {
    if (a.t0 != b.t0) return a.t0 < b.t0;
    return a.t1 < b.t1;
  });
  for (size_t i = 1; i < ev.size(); ++i)
    if (ev[i].t0 < ev[i - 1].t1 - 1e-15)
      throw validation_error("run_schedule: overlapping flux/drive segments");
  return ev;
}

// Apply a virtual z-frame phase to every idle eigenstate matching the
// annotation's qudit level.
template <class Match>
void apply_vz(Vec& psi, const IdleFrame& f, double angle, Match&& match) {
  cx factor = std::exp(kI * angle) - 1.0;
  for (long bare = 0; bare < long(f.eigen_of_bare.size()); ++bare) {
    if (!match(bare)) continue;
    long k = f.eigen_of_bare[bare];
    auto v = f.eig.vectors.col(k);
    psi += factor * v * (v.adjoint() * psi);
  }
}

struct EngineHooks {
  std::function<const FluxCache&(const PulseSegment&)> flux_cache;
  std::function<void(Vec&, const Annotation&)> vz;
  std::vector<DriveLine> lines;
};

inline SimulationTrace run_timeline(const Schedule& s, const IdleFrame& idle,
                                    const EngineHooks& hooks, const QuantumState& initial,
                                    const Mat& basis, const PropagatorOptions& opts) {
  if (std::abs(initial.norm() - 1.0) > 1e-6)
    throw validation_error("run_schedule: initial state must be normalized");

  if (opts.sample_dt <= 0.0) throw validation_error("run_schedule: sample_dt must be positive");
  SimulationTrace tr;
  Sampler smp{opts.sample_dt, &basis, &tr.times, &tr.probs};
  Vec psi = initial.amps;
  smp.record(0.0, psi);

  double cursor = 0.0;
  for (const auto& ev : build_timeline(s)) {
    psi = run_exact(std::move(psi), idle.eig, cursor, ev.t0, smp);
    cursor = ev.t0;
    switch (ev.kind) {
      case Event::vz:
        hooks.vz(psi, *ev.ann);
        break;
      case Event::flux: {
        const FluxCache& c = hooks.flux_cache(*ev.seg);
        double hold = ev.seg->duration - 2.0 * ev.seg->rise_time;
        if (hold < -1e-15) throw validation_error("run_schedule: flux segment shorter than ramps");
        psi = run_flux(std::move(psi), c, cursor, std::max(0.0, hold), smp);
        cursor = ev.t1;
        break;
      }
      case Event::drives:
        psi = run_drives(std::move(psi), idle.eig, hooks.lines, ev.t0, ev.t1,
                         opts.steps_per_period, smp);
        cursor = ev.t1;
        break;
    }
    if (!(std::abs(psi.norm() - 1.0) <= 1e-6))
      throw numerical_error("run_schedule: integration norm drift exceeds 1e-6");
  }
  psi = run_exact(std::move(psi), idle.eig, cursor, s.total_duration, smp);
  if (tr.times.empty() || tr.times.back() < s.total_duration - 1e-15)
    smp.record(s.total_duration, psi);
  if (!(std::abs(psi.norm() - 1.0) <= 1e-6))
    throw numerical_error("run_schedule: integration norm drift exceeds 1e-6");
  tr.final_state = std::move(psi);
  return tr;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Single-system execution

inline SimulationTrace run_schedule(const SystemParams& p, const Schedule& s,
                                    const QuantumState& initial, const Mat& basis,
                                    const PropagatorOptions& opts = {}) {
  p.validate();
  detail::IdleFrame idle = detail::make_idle_frame(jc_hamiltonian(p));
  Mat xt = idle.eig.vectors.adjoint() * drive_operator(p).m * idle.eig.vectors;

  std::map<std::pair<double, double>, detail::FluxCache> caches;
  detail::EngineHooks hooks;
  hooks.lines = {{&s.drive_a, &xt}};
  hooks.flux_cache = [&](const PulseSegment& seg) -> const detail::FluxCache& {
    auto key = std::make_pair(seg.flux_target, seg.rise_time);
    auto it = caches.find(key);
    if (it == caches.end()) {
      auto h_at = [&](double frac) {
        double w = p.omega01 + frac * (seg.flux_target - p.omega01);
        return jc_hamiltonian(p.with_omega01(w));
      };
      it = caches.emplace(key, detail::build_flux_cache(h_at, seg.rise_time, opts.ramp_substeps))
               .first;
    }
    return it->second;
  };
  hooks.vz = [&](Vec& psi, const Annotation& a) {
    detail::apply_vz(psi, idle, a.theta,
                     [&](long bare) { return bare == bare_index(p, 0, a.cond_n); });
  };
  return detail::run_timeline(s, idle, hooks, initial, basis, opts);
}

inline SimulationTrace run_schedule(const SystemParams& p, const Schedule& s,
                                    const QuantumState& initial,
                                    const PropagatorOptions& opts = {}) {
  detail::IdleFrame idle = detail::make_idle_frame(jc_hamiltonian(p));
  return run_schedule(p, s, initial, idle.eig.vectors, opts);
}

// ---------------------------------------------------------------------------
// Two-system execution

inline long bare_index2(const TwoSystemParams& p, int qa, int qb, int na, int nb) {
  return ((long(qa) * p.b.atom_levels + qb) * p.a.resonator_levels + na) * p.b.resonator_levels +
         nb;
}

inline SimulationTrace run_schedule(const TwoSystemParams& p, const Schedule& s,
                                    const QuantumState& initial, const Mat& basis,
                                    const PropagatorOptions& opts = {}) {
  p.validate();
  TwoSystemParams idle_p = p;
  idle_p.g_ab = 0.0;  // coupler off outside C windows
  detail::IdleFrame idle = detail::make_idle_frame(two_system_hamiltonian(idle_p));

  Operator sa = sigma_minus(p.a), sb = sigma_minus(p.b);
  Operator xa_atom(Mat(sa.m + sa.m.adjoint()), {p.a.atom_levels});
  Operator xb_atom(Mat(sb.m + sb.m.adjoint()), {p.b.atom_levels});
  Operator iqa = Operator::identity({p.a.atom_levels});
  Operator iqb = Operator::identity({p.b.atom_levels});
  Operator ira = Operator::identity({p.a.resonator_levels});
  Operator irb = Operator::identity({p.b.resonator_levels});
  Mat xa_bare = kron4(xa_atom, iqb, ira, irb).m;
  Mat xb_bare = kron4(iqa, xb_atom, ira, irb).m;
  Mat xa = idle.eig.vectors.adjoint() * xa_bare * idle.eig.vectors;
  Mat xb = idle.eig.vectors.adjoint() * xb_bare * idle.eig.vectors;

  std::map<std::tuple<double, double, bool>, detail::FluxCache> caches;
  detail::EngineHooks hooks;
  hooks.lines = {{&s.drive_a, &xa}, {&s.drive_b, &xb}};
  hooks.flux_cache = [&](const PulseSegment& seg) -> const detail::FluxCache& {
    auto key = std::make_tuple(seg.flux_target, seg.rise_time, seg.line_b);
    auto it = caches.find(key);
    if (it == caches.end()) {
      auto h_at = [&](double frac) {
        TwoSystemParams q = p;
        // The tunable coupler switches on only for the resonant plateau
        // (frac == 1).  Ramping through the approach to resonance with the
        // coupler already live would make the passage half-adiabatic and
        // strand population in the exchange intermediate.
        if (!seg.coupler_on || frac < 1.0 - 1e-9) q.g_ab = 0.0;
        if (seg.line_b)
          q.b = q.b.with_omega01(p.b.omega01 + frac * (seg.flux_target - p.b.omega01));
        else
          q.a = q.a.with_omega01(p.a.omega01 + frac * (seg.flux_target - p.a.omega01));
        return two_system_hamiltonian(q);
      };
      it = caches.emplace(key, detail::build_flux_cache(h_at, seg.rise_time, opts.ramp_substeps))
               .first;
    }
    return it->second;
  };
  int lb = p.b.atom_levels, na = p.a.resonator_levels, nb = p.b.resonator_levels;
  hooks.vz = [&](Vec& psi, const Annotation& a) {
    detail::apply_vz(psi, idle, a.theta, [&](long bare) {
      long rem = bare;
      int fock_b = int(rem % nb);
      rem /= nb;
      int fock_a = int(rem % na);
      rem /= na;
      int qb = int(rem % lb);
      int qa = int(rem / lb);
      if (a.kind == StepKind::VZA) return qa == 0 && fock_a == a.cond_n;
      return qb == 0 && fock_b == a.cond_n;
    });
  };
  return detail::run_timeline(s, idle, hooks, initial, basis, opts);
}

// ---------------------------------------------------------------------------
// Tomography

struct GateReport {
  Mat process;                  // subspace amplitudes, free-evolution phases removed
  Eigen::MatrixXd populations;  // |process|^2
  Eigen::VectorXd survival;     // populations diagonal
  double min_survival = 0.0;
  // relative phase of component m against component 0, reconstructed from the
  // (|0> + |m>)/sqrt(2) superposition probe run (empty when phases are off)
  std::vector<double> probe_phases;
};

namespace detail {

template <class RunFn>
GateReport tomography_core(RunFn&& run, const Mat& basis_cols, const Eigen::VectorXd& energies,
                           double total, bool phases, int threads) {
  long d = basis_cols.cols();
  long nruns = d + (phases ? d - 1 : 0);
  std::vector<Vec> inputs(nruns);
  for (long m = 0; m < d; ++m) inputs[m] = basis_cols.col(m);
  for (long m = 1; phases && m < d; ++m)
    inputs[d + m - 1] = (basis_cols.col(0) + basis_cols.col(m)) / std::sqrt(2.0);

  std::vector<Vec> finals(nruns);
  auto work = [&](long b, long e) {
    for (long i = b; i < e; ++i) finals[i] = run(inputs[i]);
  };
  int nw = std::max(1, threads);
  if (nw == 1 || nruns < 2) {
    work(0, nruns);
  } else {
    std::vector<std::future<void>> futs;
    long chunk = (nruns + nw - 1) / nw;
    for (int w = 0; w < nw; ++w) {
      long b = std::min(nruns, w * chunk), e = std::min(nruns, (w + 1) * chunk);
      if (b < e) futs.push_back(std::async(std::launch::async, work, b, e));
    }
    for (auto& f : futs) f.get();
  }

  auto amp = [&](long k, const Vec& psi) {
    return std::polar(1.0, energies(k) * total) * cx(basis_cols.col(k).adjoint() * psi);
  };

  GateReport rep;
  rep.process = Mat(d, d);
  for (long m = 0; m < d; ++m)
    for (long k = 0; k < d; ++k) rep.process(k, m) = amp(k, finals[m]);
  rep.populations = rep.process.cwiseAbs2();
  rep.survival = rep.populations.diagonal();
  rep.min_survival = rep.survival.minCoeff();
  if (phases) {
    rep.probe_phases.assign(d, 0.0);
    for (long m = 1; m < d; ++m) {
      const Vec& psi = finals[d + m - 1];
      rep.probe_phases[m] = std::arg(std::conj(amp(0, psi)) * amp(m, psi));
    }
  }
  return rep;
}

}  // namespace detail

inline GateReport gate_tomography(const SystemParams& p, const Schedule& s,
                                  const std::vector<StateLabel>& subspace, bool phases = true,
                                  const PropagatorOptions& opts = {}) {
  p.validate();
  DressedFrame f = dressed_frame(p);
  long dim = f.eig.values.size();
  Mat cols(dim, long(subspace.size()));
  Eigen::VectorXd energies(long(subspace.size()));
  for (size_t m = 0; m < subspace.size(); ++m) {
    cols.col(m) = dressed_state(f, subspace[m].q, subspace[m].n);
    energies(m) = dressed_energy(f, subspace[m].q, subspace[m].n);
  }
  auto run = [&](const Vec& in) {
    return run_schedule(p, s, QuantumState{in, {p.atom_levels, p.resonator_levels}}, cols, opts)
        .final_state;
  };
  return detail::tomography_core(run, cols, energies, s.total_duration, phases, opts.threads);
}

inline GateReport gate_tomography(const TwoSystemParams& p, const Schedule& s,
                                  const std::vector<std::array<int, 2>>& fock_pairs,
                                  bool phases = true, const PropagatorOptions& opts = {}) {
  p.validate();
  TwoSystemParams idle_p = p;
  idle_p.g_ab = 0.0;
  detail::IdleFrame idle = detail::make_idle_frame(two_system_hamiltonian(idle_p));
  long dim = idle.eig.values.size();
  Mat cols(dim, long(fock_pairs.size()));
  Eigen::VectorXd energies(long(fock_pairs.size()));
  for (size_t m = 0; m < fock_pairs.size(); ++m) {
    long k = idle.eigen_of_bare[bare_index2(p, 0, 0, fock_pairs[m][0], fock_pairs[m][1])];
    if (k < 0) throw numerical_error("gate_tomography: dressed state not found");
    cols.col(m) = idle.eig.vectors.col(k);
    energies(m) = idle.eig.values(k);
  }
  std::vector<int> dims = {p.a.atom_levels, p.b.atom_levels, p.a.resonator_levels,
                           p.b.resonator_levels};
  auto run = [&](const Vec& in) {
    return run_schedule(p, s, QuantumState{in, dims}, cols, opts).final_state;
  };
  return detail::tomography_core(run, cols, energies, s.total_duration, phases, opts.threads);
}

// Average gate fidelity proxy |tr(ideal^dag process)| / d between the
// reconstructed subspace matrix and an ideal target unitary.
inline double process_fidelity(const Mat& process, const Mat& ideal) {
  if (process.rows() != ideal.rows() || process.cols() != ideal.cols())
    throw validation_error("process_fidelity: dimension mismatch");
  return std::abs((ideal.adjoint() * process).trace()) / double(process.cols());
}

// ---------------------------------------------------------------------------
// Resonant Rabi readout

struct ReadoutTrace {
  std::vector<double> times;       // s
  std::vector<double> p_excited;   // qubit excited-state probability
  double g = 0.0;                  // coupling used, rad/s
};

// Two-level readout qubit tuned onto the resonator; a Fock component |n>
// flops at angular frequency g sqrt(n), so P_excited(t) superposes
// sin^2(g sqrt(n) t) terms weighted by the Fock populations.
inline ReadoutTrace simulate_rabi_readout(const SystemParams& p, const QuantumState& resonator,
                                          double duration, double sample_dt = 0.5e-9) {
  p.validate();
  if (long(resonator.amps.size()) != p.resonator_levels)
    throw validation_error("simulate_rabi_readout: resonator state dimension mismatch");
  if (std::abs(resonator.norm() - 1.0) > 1e-6)
    throw validation_error("simulate_rabi_readout: resonator state must be normalized");
  // Two-level readout qubit parked on resonance; higher atom levels are far
  // detuned during the readout window and dropped from the model.
  int nres = p.resonator_levels;
  long dim = 2L * nres;
  Mat h = Mat::Zero(dim, dim);
  auto idx = [&](int q, int n) { return long(q) * nres + n; };
  for (int q = 0; q < 2; ++q)
    for (int n = 0; n < nres; ++n) h(idx(q, n), idx(q, n)) = (q + n) * p.omega_r;
  for (int n = 0; n + 1 < nres; ++n) {
    h(idx(1, n), idx(0, n + 1)) = p.g * std::sqrt(double(n + 1));
    h(idx(0, n + 1), idx(1, n)) = p.g * std::sqrt(double(n + 1));
  }
  EighResult e = eigh(Operator(std::move(h), {2, nres}));

  Vec psi0 = Vec::Zero(dim);
  for (int n = 0; n < nres; ++n) psi0(idx(0, n)) = resonator.amps(n);

  Vec c = e.vectors.adjoint() * psi0;
  ReadoutTrace tr;
  tr.g = p.g;
  long nsamples = long(duration / sample_dt) + 1;
  for (long m = 0; m <= nsamples; ++m) {
    double t = std::min(m * sample_dt, duration);
    Vec cs = c;
    for (long k = 0; k < dim; ++k) cs(k) *= std::polar(1.0, -e.values(k) * t);
    Vec psi = e.vectors * cs;
    double p1 = 0.0;
    for (int n = 0; n < nres; ++n) p1 += std::norm(psi(idx(1, n)));
    tr.times.push_back(t);
    tr.p_excited.push_back(p1);
    if (t >= duration) break;
  }
  return tr;
}

// Least-squares Fock-population extraction from a readout trace: basis
// functions sin^2(g sqrt(n) t), n = 1..nmax; P_0 from normalization.
inline std::vector<double> fit_fock_populations(const ReadoutTrace& tr, int nmax) {
  if (nmax < 1) throw validation_error("fit_fock_populations: nmax must be >= 1");
  double duration = tr.times.back();
  if (duration < kPi / tr.g)
    throw validation_error(
        "fit_fock_populations: trace shorter than the slowest oscillation period");
  long rows = long(tr.times.size());
  Eigen::MatrixXd design(rows, nmax);
  Eigen::VectorXd y(rows);
  for (long i = 0; i < rows; ++i) {
    y(i) = tr.p_excited[i];
    for (int n = 1; n <= nmax; ++n) {
      double s = std::sin(tr.g * std::sqrt(double(n)) * tr.times[i]);
      design(i, n - 1) = s * s;
    }
  }
  Eigen::VectorXd sol = design.colPivHouseholderQr().solve(y);
  std::vector<double> pops(nmax + 1, 0.0);
  double total = 0.0;
  for (int n = 1; n <= nmax; ++n) {
    pops[n] = sol(n - 1);
    total += sol(n - 1);
  }
  pops[0] = 1.0 - total;
  return pops;
}

// ---------------------------------------------------------------------------
// Serialization

inline void write_trace_csv(const SimulationTrace& tr, std::ostream& os) {
  long d = tr.probs.empty() ? 0 : tr.probs[0].size();
  os << "time_ns";
  for (long k = 0; k < d; ++k) os << ",p_" << k;
  os << "\n";
  os.precision(17);
  for (size_t i = 0; i < tr.times.size(); ++i) {
    os << tr.times[i] * 1e9;
    for (long k = 0; k < d; ++k) os << "," << tr.probs[i](k);
    os << "\n";
  }
}

}  // namespace rqs
