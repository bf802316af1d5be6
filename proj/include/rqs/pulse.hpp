#pragma once

// Control pulses and gate schedules: truncated-Gaussian microwave segments,
// trapezoidal flux shifts, pi-pulse and swap calibration, and the single-qudit
// encode/S(theta)/decode, extended-span, and two-qudit sequence builders.

#include "rqs/cqed.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>

namespace rqs {

enum class SegmentKind { microwave, flux_shift, idle };
enum class TransitionTag { t01, t12 };

struct PulseSegment {
  SegmentKind kind = SegmentKind::idle;
  double start = 0.0;     // s, schedule time
  double duration = 0.0;  // s

  // microwave
  double amplitude = 0.0;       // physical peak envelope, rad/s
  double carrier = 0.0;         // rad/s
  double phase = 0.0;           // rad
  TransitionTag transition = TransitionTag::t01;
  int conditioned_n = -1;       // Fock condition for number-selective pulses
  double sigma = 0.0;           // Gaussian sigma, s (truncated at +-2 sigma)
  double effective_area = 0.0;  // envelope area x matrix element
  double matrix_element = 1.0;  // dressed transition element used in calibration

  // flux_shift
  double flux_target = 0.0;  // omega01 at the plateau, rad/s
  double rise_time = 0.0;    // s
  bool coupler_on = false;   // two-qudit C step: g_ab active during the plateau
  bool line_b = false;       // flux segment shifts qubit B instead of A

  double end() const { return start + duration; }
};

// VZ/VZA/VZB are virtual frame updates (zero-duration z-phase bookkeeping on
// one qudit level); the others are physical steps.
enum class StepKind { R01, R12, S, C, RA01, RB01, VZ, VZA, VZB };

struct Annotation {
  StepKind kind;
  int cond_n = -1;     // Fock condition (R01), swap pair (S), or VZ level
  double theta = 0.0;  // swap angle, or VZ phase angle
  double t0 = 0.0, t1 = 0.0;
};

struct Schedule {
  std::vector<PulseSegment> drive_a;  // microwave line (line A for two-qudit)
  std::vector<PulseSegment> drive_b;  // line B, two-qudit only
  std::vector<PulseSegment> flux_a;   // flux line (line A)
  std::vector<PulseSegment> flux_b;   // flux line B, two-qudit only
  double idle_omega01_a = 0.0;        // flux-line baseline, rad/s
  double idle_omega01_b = 0.0;
  double total_duration = 0.0;
  std::vector<Annotation> annotations;
  bool two_qudit = false;
};

// ---------------------------------------------------------------------------
// Envelopes

// Truncated Gaussian, total length T = 4 sigma, baseline-subtracted so it is
// exactly zero at both ends; peak value 1 at T/2.
inline double gaussian_shape(double tau, double T) {
  if (tau <= 0.0 || tau >= T) return 0.0;
  double s = T / 4.0;
  double base = std::exp(-2.0);
  double x = (tau - 0.5 * T) / s;
  return (std::exp(-0.5 * x * x) - base) / (1.0 - base);
}

// Mean of gaussian_shape over [0, T]; independent of T.
inline double gaussian_shape_mean() {
  static const double mean = [] {
    const int n = 4000;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
      double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      acc += w * gaussian_shape(double(i) / n, 1.0);
    }
    return acc / (3.0 * n);
  }();
  return mean;
}

inline double segment_envelope(const PulseSegment& seg, double t) {
  return seg.amplitude * gaussian_shape(t - seg.start, seg.duration);
}

// omega01 along a trapezoidal flux excursion; tau is time from segment start.
inline double flux_profile(double idle_omega01, const PulseSegment& seg, double tau) {
  double r = seg.rise_time;
  double d = seg.duration;
  if (tau <= 0.0 || tau >= d) return idle_omega01;
  double frac = 1.0;
  if (tau < r)
    frac = tau / r;
  else if (tau > d - r)
    frac = (d - tau) / r;
  return idle_omega01 + frac * (seg.flux_target - idle_omega01);
}

// ---------------------------------------------------------------------------
// Dressed frame of the idle Hamiltonian

struct DressedFrame {
  SystemParams params;
  EighResult eig;
  std::vector<long> eigen_of_bare;  // bare basis index -> eigenindex
};

inline DressedFrame dressed_frame(const SystemParams& p) {
  DressedFrame f;
  f.params = p;
  f.eig = eigh(jc_hamiltonian(p));
  long dim = f.eig.values.size();
  f.eigen_of_bare.assign(dim, -1);
  for (long k = 0; k < dim; ++k) {
    long dominant = 0;
    f.eig.vectors.col(k).cwiseAbs().maxCoeff(&dominant);
    if (f.eigen_of_bare[dominant] >= 0)
      throw numerical_error("dressed_frame: ambiguous labeling (too close to a crossing)");
    f.eigen_of_bare[dominant] = k;
  }
  return f;
}

inline long dressed_index(const DressedFrame& f, int q, int n) {
  long k = f.eigen_of_bare[bare_index(f.params, q, n)];
  if (k < 0) throw numerical_error("dressed state not found");
  return k;
}

inline double dressed_energy(const DressedFrame& f, int q, int n) {
  return f.eig.values(dressed_index(f, q, n));
}

inline Vec dressed_state(const DressedFrame& f, int q, int n) {
  return f.eig.vectors.col(dressed_index(f, q, n));
}

inline double dressed_transition(const DressedFrame& f, int q1, int n1, int q0, int n0) {
  return dressed_energy(f, q1, n1) - dressed_energy(f, q0, n0);
}

inline double dressed_element(const DressedFrame& f, const Operator& op, int q1, int n1, int q0,
                              int n0) {
  return std::abs(cx(dressed_state(f, q1, n1).adjoint() * op.m * dressed_state(f, q0, n0)));
}

// ---------------------------------------------------------------------------
// Pi-pulse calibration

enum class PiCalibrationMode { fixed_duration, fixed_amplitude };

// Calibrate a number-selective (or plain) pi pulse. In fixed_duration mode the
// length is pi/omega_max and the amplitude is solved so that the effective
// rotation area (envelope area times the transition matrix element) is pi; in
// fixed_amplitude mode the duration is solved instead. The carrier is set by
// the schedule builder. Selectivity guard: a Gaussian of length T has spectral
// FWHM ~ 0.44/T; the nearest Stark splitting must exceed 3x that.
inline PulseSegment calibrate_pi_pulse(TransitionTag target, double omega_max,
                                       double selectivity_splitting,
                                       PiCalibrationMode mode = PiCalibrationMode::fixed_duration,
                                       double matrix_element = 1.0) {
  if (omega_max <= 0.0) throw validation_error("calibrate_pi_pulse: omega_max must be positive");
  if (matrix_element <= 0.0)
    throw validation_error("calibrate_pi_pulse: matrix element must be positive");
  if (selectivity_splitting > 0.0 && omega_max >= selectivity_splitting)
    throw validation_error("calibrate_pi_pulse: omega_max must sit below the selectivity splitting");

  PulseSegment seg;
  seg.kind = SegmentKind::microwave;
  seg.transition = target;
  seg.matrix_element = matrix_element;

  double mean = gaussian_shape_mean();
  if (mode == PiCalibrationMode::fixed_duration) {
    seg.duration = kPi / omega_max;
    seg.amplitude = kPi / (matrix_element * mean * seg.duration);
  } else {
    seg.amplitude = omega_max;
    seg.duration = kPi / (matrix_element * mean * omega_max);
  }
  seg.sigma = seg.duration / 4.0;
  seg.effective_area = seg.amplitude * mean * seg.duration * matrix_element;

  if (selectivity_splitting > 0.0) {
    double fwhm = kTwoPi * 0.44 / seg.duration;
    if (selectivity_splitting < 3.0 * fwhm)
      throw validation_error("calibrate_pi_pulse: pulse bandwidth violates number selectivity");
  }
  return seg;
}

// ---------------------------------------------------------------------------
// Flux-swap calibration
//
// The |2,j> <-> |1,j+1> anticrossing sits at omega12 = omega_r, but the idle
// dressed states are already tilted there, so a resonant half Rabi cycle tops
// out well below unity transfer. A pi rotation about an overshot axis does
// complete it; the overshoot and hold time are found numerically on the same
// discretized trapezoid the propagator integrates.

struct SwapCalibration {
  double shift_target = 0.0;  // omega01 at the plateau, rad/s
  double hold_time = 0.0;     // full-swap (theta = pi/2) plateau time, s
  double rise_time = 0.0;
  double transfer = 0.0;      // achieved |1,j+1> -> |2,j> population
  int pair = 0;
};

struct ScheduleOptions {
  double omega1 = kTwoPi * 6.67e6;  // selective 0<->1 pulses, rad/s
  double omega2 = kTwoPi * 25.0e6;  // unconditional 1<->2 pulses, rad/s
  double flux_rise = 2e-9;          // s
  int ramp_substeps = 50;           // piecewise-constant substeps per ramp
  PiCalibrationMode pi_mode = PiCalibrationMode::fixed_duration;
};

namespace detail {

struct RampCache {
  std::vector<EighResult> up, down;
  double dt_sub = 0.0;
  EighResult hold;
};

inline RampCache build_ramp_cache(const SystemParams& idle, double shift_target, double rise,
                                  int substeps) {
  RampCache c;
  c.dt_sub = rise / substeps;
  for (int i = 0; i < substeps; ++i) {
    double frac = (i + 0.5) / substeps;  // midpoint rule
    double w = idle.omega01 + frac * (shift_target - idle.omega01);
    c.up.push_back(eigh(jc_hamiltonian(idle.with_omega01(w))));
  }
  c.down.assign(c.up.rbegin(), c.up.rend());
  c.hold = eigh(jc_hamiltonian(idle.with_omega01(shift_target)));
  return c;
}

inline Vec apply_excursion(const RampCache& c, double hold_time, Vec psi) {
  for (const auto& e : c.up) psi = propagate_eig(psi, e, c.dt_sub);
  if (hold_time > 0.0) psi = propagate_eig(psi, c.hold, hold_time);
  for (const auto& e : c.down) psi = propagate_eig(psi, e, c.dt_sub);
  return psi;
}

inline double golden_max(const std::function<double(double)>& f, double a, double b, double tol) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + phi * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

}  // namespace detail

inline SwapCalibration calibrate_swap(const SystemParams& idle, int pair_j,
                                      const ScheduleOptions& opts = {}) {
  idle.validate();
  if (idle.g <= 0.0) throw validation_error("calibrate_swap: coupling must be positive");
  if (pair_j + 1 >= idle.resonator_levels)
    throw validation_error("calibrate_swap: pair exceeds resonator truncation");

  // Memoize: the sequence builders re-calibrate the same pair many times.
  static std::map<std::array<double, 12>, SwapCalibration> memo;
  static std::mutex memo_mutex;
  std::array<double, 12> key = {idle.omega01,
                                idle.omega12,
                                idle.omega23,
                                idle.omega_r,
                                idle.g,
                                idle.lambda,
                                double(idle.atom_levels),
                                double(idle.resonator_levels),
                                double(pair_j),
                                opts.flux_rise,
                                double(opts.ramp_substeps),
                                0.0};
  {
    std::lock_guard<std::mutex> lock(memo_mutex);
    auto it = memo.find(key);
    if (it != memo.end()) return it->second;
  }

  DressedFrame f = dressed_frame(idle);
  Vec psi0 = dressed_state(f, 1, pair_j + 1);
  Vec target = dressed_state(f, 2, pair_j);

  double rate = idle.lambda * idle.g * std::sqrt(double(pair_j + 1));
  double t_nominal = kPi / (2.0 * rate);
  double d12 = idle.omega01 - idle.omega12;
  double shift_resonant = idle.omega_r + d12;  // bare omega12 = omega_r

  struct Best {
    double shift = 0.0, hold = 0.0, rise = 0.0, transfer = -1.0;
  } best;

  auto best_hold_for = [&](const detail::RampCache& cache) {
    auto transfer = [&](double h) {
      Vec psi = detail::apply_excursion(cache, h, psi0);
      return std::norm(cx(target.adjoint() * psi));
    };
    double hmax = 2.4 * t_nominal;
    double bh = 0.0, bt = transfer(0.0);
    int coarse = 48;
    for (int i = 1; i <= coarse; ++i) {
      double h = hmax * i / coarse;
      double tr = transfer(h);
      if (tr > bt) {
        bt = tr;
        bh = h;
      }
    }
    double lo = std::max(0.0, bh - hmax / coarse), hi = std::min(hmax, bh + hmax / coarse);
    double h = detail::golden_max(transfer, lo, hi, 1e-13);
    return std::pair<double, double>(h, transfer(h));
  };

  // For a given rise, search the plateau shift (axis angle) and hold time.
  auto search_rise = [&](double rise) {
    auto score_shift = [&](double shift) {
      auto cache = detail::build_ramp_cache(idle, shift, rise, opts.ramp_substeps);
      auto [h, tr] = best_hold_for(cache);
      if (tr > best.transfer) best = {shift, h, rise, tr};
      return tr;
    };
    double lo = shift_resonant - kTwoPi * 0.02e9;
    double hi = shift_resonant + kTwoPi * 0.22e9;
    int coarse = 25;
    double bs = lo, bv = -1.0;
    for (int i = 0; i <= coarse; ++i) {
      double s = lo + (hi - lo) * i / coarse;
      double v = score_shift(s);
      if (v > bv) {
        bv = v;
        bs = s;
      }
    }
    double step = (hi - lo) / coarse;
    detail::golden_max(score_shift, bs - step, bs + step, kTwoPi * 2e4);
  };

  // The best ramp speed depends on the pair: the sqrt(n+1) coupling
  // enhancement makes the rotation race through slow ramps, while very fast
  // ramps break adiabaticity of the detuned 0<->1 admixture. Scan a rise grid
  // (starting from the configured default, which already saturates the lowest
  // pair) and refine around the winner.
  search_rise(opts.flux_rise);
  if (best.transfer < 0.998) {
    for (double rise : {1.5e-9, 1.0e-9, 0.5e-9})
      if (std::abs(rise - opts.flux_rise) > 1e-12) search_rise(rise);
    double center = best.rise;
    for (double rise : {center - 0.25e-9, center + 0.25e-9, center - 0.1e-9, center + 0.1e-9})
      if (rise > 0.0) search_rise(rise);
  }

  SwapCalibration cal{best.shift, best.hold, best.rise, best.transfer, pair_j};
  std::lock_guard<std::mutex> lock(memo_mutex);
  memo.emplace(key, cal);
  return cal;
}

// ---------------------------------------------------------------------------
// Ideal factor unitaries (atom (x) resonator, bare basis), the algebraic
// model of the encode/swap/decode factors. Used for oracles, frame
// bookkeeping, and the synthesis-layer angle mapping.

inline Mat ideal_r01(const SystemParams& p, int j, double phase = 0.0) {
  long dim = long(p.atom_levels) * p.resonator_levels;
  Mat u = Mat::Identity(dim, dim);
  long i0 = bare_index(p, 0, j), i1 = bare_index(p, 1, j);
  cx off = -kI * std::exp(kI * phase);
  u(i0, i0) = 0.0;
  u(i1, i1) = 0.0;
  u(i0, i1) = off;
  u(i1, i0) = -kI * std::exp(-kI * phase);
  return u;
}

inline Mat ideal_r12(const SystemParams& p) {
  long dim = long(p.atom_levels) * p.resonator_levels;
  Mat u = Mat::Identity(dim, dim);
  for (int n = 0; n < p.resonator_levels; ++n) {
    long i1 = bare_index(p, 1, n), i2 = bare_index(p, 2, n);
    u(i1, i1) = 0.0;
    u(i2, i2) = 0.0;
    u(i1, i2) = -kI;
    u(i2, i1) = -kI;
  }
  return u;
}

// S(theta) referenced to pair j: the |2,n> <-> |1,n+1> pair acquires angle
// theta * sqrt((n+1)/(j+1)) since all pairs evolve during the same hold.
inline Mat ideal_swap(const SystemParams& p, int pair_j, double theta) {
  long dim = long(p.atom_levels) * p.resonator_levels;
  Mat u = Mat::Identity(dim, dim);
  for (int n = 0; n + 1 < p.resonator_levels; ++n) {
    double th = theta * std::sqrt(double(n + 1) / double(pair_j + 1));
    long i2 = bare_index(p, 2, n), i1 = bare_index(p, 1, n + 1);
    u(i2, i2) = std::cos(th);
    u(i1, i1) = std::cos(th);
    u(i2, i1) = -kI * std::sin(th);
    u(i1, i2) = -kI * std::sin(th);
  }
  return u;
}

// Virtual z-frame update: phase e^{i theta} on the computational level |0,n>.
inline Mat ideal_vz(const SystemParams& p, int n, double theta) {
  long dim = long(p.atom_levels) * p.resonator_levels;
  Mat u = Mat::Identity(dim, dim);
  u(bare_index(p, 0, n), bare_index(p, 0, n)) = std::exp(kI * theta);
  return u;
}

// Ideal product for a schedule's annotation list (application order).
inline Mat ideal_annotation_product(const SystemParams& p, const Schedule& s) {
  long dim = long(p.atom_levels) * p.resonator_levels;
  Mat u = Mat::Identity(dim, dim);
  for (const auto& a : s.annotations) {
    Mat f;
    switch (a.kind) {
      case StepKind::R01: f = ideal_r01(p, a.cond_n, a.theta); break;
      case StepKind::R12: f = ideal_r12(p); break;
      case StepKind::S: f = ideal_swap(p, a.cond_n, a.theta); break;
      case StepKind::VZ: f = ideal_vz(p, a.cond_n, a.theta); break;
      default: throw validation_error("ideal_annotation_product: two-qudit step in pair schedule");
    }
    u = f * u;
  }
  return u;
}

// ---------------------------------------------------------------------------
// Sequence builders

namespace detail {

inline PulseSegment make_r01(const DressedFrame& f, const Operator& x, int n,
                             const ScheduleOptions& opts, double& cursor, double phase = 0.0) {
  // Selectivity splitting: nearest Stark-shifted neighbor of the conditioned
  // 0<->1 transition.
  double w = dressed_transition(f, 1, n, 0, n);
  double split = std::numeric_limits<double>::infinity();
  for (int m : {n - 1, n + 1}) {
    if (m < 0 || m + 0 >= f.params.resonator_levels) continue;
    split = std::min(split, std::abs(dressed_transition(f, 1, m, 0, m) - w));
  }
  double elem = dressed_element(f, x, 1, n, 0, n);
  PulseSegment seg =
      calibrate_pi_pulse(TransitionTag::t01, opts.omega1, split, opts.pi_mode, elem);
  seg.carrier = w;
  seg.conditioned_n = n;
  seg.phase = phase;
  seg.start = cursor;
  cursor += seg.duration;
  return seg;
}

inline PulseSegment make_r12(const DressedFrame& f, const Operator& x, int n_ref,
                             const ScheduleOptions& opts, double& cursor) {
  double elem = dressed_element(f, x, 2, n_ref, 1, n_ref);
  PulseSegment seg = calibrate_pi_pulse(TransitionTag::t12, opts.omega2, 0.0, opts.pi_mode, elem);
  seg.carrier = dressed_transition(f, 2, n_ref, 1, n_ref);
  seg.start = cursor;
  cursor += seg.duration;
  return seg;
}

inline PulseSegment make_swap(const SwapCalibration& cal, double idle_omega01, double theta,
                              double& cursor) {
  double frac = theta / (kPi / 2.0);
  PulseSegment seg;
  seg.kind = SegmentKind::flux_shift;
  seg.flux_target = cal.shift_target;
  seg.rise_time = cal.rise_time;
  seg.duration = 2.0 * cal.rise_time + cal.hold_time * frac;
  seg.start = cursor;
  cursor += seg.duration;
  (void)idle_omega01;
  return seg;
}

inline void annotate(Schedule& s, StepKind k, int n, double theta, const PulseSegment& seg) {
  s.annotations.push_back({k, n, theta, seg.start, seg.end()});
}

inline void annotate_vz(Schedule& s, StepKind k, int level, double angle, double t) {
  s.annotations.push_back({k, level, angle, t, t});
}

}  // namespace detail

// Single-qudit U_{j,j+1}(theta, phi) sequence per the encode/S/decode
// construction: R01(j), R12, R01(j+1), S(|theta|), R01(j+1), R12, R01(j).
// theta is the swap angle in the cos/sin amplitude convention (full swap at
// theta = pi/2); the pulses themselves compose to a reflection on the pair, so
// the builder emits virtual z-frame updates that turn the net ideal action
// into the x-rotation R^x_{j,j+1}(2 theta) conjugated by Rz(phi). A negative
// theta keeps the same physical pulses and conjugates the frame phases.
inline Schedule build_single_qudit_sequence(const SystemParams& p, int j, double theta,
                                            double phi = 0.0, const ScheduleOptions& opts = {}) {
  p.validate();
  if (j < 0 || j + 1 >= p.resonator_levels - 1)
    throw validation_error("build_single_qudit_sequence: need a guard level above j+1");

  double sign = theta < 0.0 ? -1.0 : 1.0;
  double th = std::fmod(std::abs(theta), kTwoPi);

  DressedFrame f = dressed_frame(p);
  Operator x = drive_operator(p);
  SwapCalibration cal{};
  if (th > 0.0) cal = calibrate_swap(p, j, opts);

  Schedule s;
  s.idle_omega01_a = p.omega01;
  double cursor = 0.0;

  detail::annotate_vz(s, StepKind::VZ, j, -phi / 2.0, cursor);
  detail::annotate_vz(s, StepKind::VZ, j + 1, phi / 2.0 - sign * kPi / 2.0, cursor);

  PulseSegment e1 = detail::make_r01(f, x, j, opts, cursor);
  PulseSegment e2 = detail::make_r12(f, x, j, opts, cursor);
  PulseSegment e3 = detail::make_r01(f, x, j + 1, opts, cursor);
  detail::annotate(s, StepKind::R01, j, 0.0, e1);
  detail::annotate(s, StepKind::R12, -1, 0.0, e2);
  detail::annotate(s, StepKind::R01, j + 1, 0.0, e3);
  s.drive_a = {e1, e2, e3};

  if (th > 0.0) {
    PulseSegment sw = detail::make_swap(cal, p.omega01, th, cursor);
    detail::annotate(s, StepKind::S, j, th, sw);
    s.flux_a.push_back(sw);
  }

  PulseSegment d1 = detail::make_r01(f, x, j + 1, opts, cursor);
  PulseSegment d2 = detail::make_r12(f, x, j, opts, cursor);
  PulseSegment d3 = detail::make_r01(f, x, j, opts, cursor);
  detail::annotate(s, StepKind::R01, j + 1, 0.0, d1);
  detail::annotate(s, StepKind::R12, -1, 0.0, d2);
  detail::annotate(s, StepKind::R01, j, 0.0, d3);
  s.drive_a.insert(s.drive_a.end(), {d1, d2, d3});

  detail::annotate_vz(s, StepKind::VZ, j, phi / 2.0, cursor);
  detail::annotate_vz(s, StepKind::VZ, j + 1, -phi / 2.0 - sign * kPi / 2.0, cursor);

  s.total_duration = cursor;
  return s;
}

// Extended-span rotation U_{j,j+span}: the S(full) ladder walks the upper
// amplitude out to the far pair, the central S(theta) rotates, and the decode
// half mirrors the encode exactly. Factor count 4*span + 3 (11 at span 2, 15
// at span 3).
inline Schedule build_extended_rotation(const SystemParams& p, int j, int span, double theta,
                                        const ScheduleOptions& opts = {}) {
  p.validate();
  if (span < 1) throw validation_error("build_extended_rotation: span must be >= 1");
  if (j < 0 || j + span >= p.resonator_levels - 1)
    throw validation_error("build_extended_rotation: need a guard level above j+span");

  double sign = theta < 0.0 ? -1.0 : 1.0;
  double th = std::fmod(std::abs(theta), kTwoPi);

  DressedFrame f = dressed_frame(p);
  Operator x = drive_operator(p);
  std::map<int, SwapCalibration> cals;
  for (int m = j; m <= j + span - 1; ++m) cals[m] = calibrate_swap(p, m, opts);

  Schedule s;
  s.idle_omega01_a = p.omega01;
  double cursor = 0.0;

  // The raw pulse product is a reflection whose off-diagonal sign alternates
  // with the span parity; the frame phases below absorb both.
  double eps = (span % 2 == 1) ? 1.0 : -1.0;
  detail::annotate_vz(s, StepKind::VZ, j + span, -eps * sign * kPi / 2.0, cursor);

  auto push_r01 = [&](int n) {
    PulseSegment seg = detail::make_r01(f, x, n, opts, cursor);
    detail::annotate(s, StepKind::R01, n, 0.0, seg);
    s.drive_a.push_back(seg);
  };
  auto push_r12 = [&](int n_ref) {
    PulseSegment seg = detail::make_r12(f, x, n_ref, opts, cursor);
    detail::annotate(s, StepKind::R12, -1, 0.0, seg);
    s.drive_a.push_back(seg);
  };
  auto push_swap = [&](int pair, double angle) {
    PulseSegment seg = detail::make_swap(cals[pair], p.omega01, angle, cursor);
    detail::annotate(s, StepKind::S, pair, angle, seg);
    s.flux_a.push_back(seg);
  };

  // encode
  push_r01(j);
  push_r12(j);
  for (int m = 1; m < span; ++m) {
    push_swap(j + m - 1, kPi / 2.0);
    push_r12(j + m);
  }
  push_r01(j + span);
  // central rotation
  push_swap(j + span - 1, th);
  // decode (mirror)
  push_r01(j + span);
  for (int m = span - 1; m >= 1; --m) {
    push_r12(j + m);
    push_swap(j + m - 1, kPi / 2.0);
  }
  push_r12(j);
  push_r01(j);

  detail::annotate_vz(s, StepKind::VZ, j + span, -eps * sign * kPi / 2.0, cursor);

  s.total_duration = cursor;
  return s;
}

// Two-qudit controlled-phase U_{j,k}(theta): simultaneous number-selective
// pi-pulses on both atoms, a coupler window C(theta) with atom B flux-shifted
// up so the dressed omega_{B,12} meets omega_{A,01} (the |11>/|02> atom pair
// then Rabis at sqrt(2) g_ab; a full round trip imprints -1), then decode.
// Shifting B upward keeps qubit A and its spectator Fock states untouched and
// keeps omega_{B,01} clear of the B resonator; omega_{B,12} does sweep through
// omega_r on the way up, which is harmless for k = 0 (the promoted |1_B, 0>
// state has no 1<->2 ladder partner) but crosses the |1_B,k>/|2_B,k-1>
// anticrossing for k >= 1.
inline Schedule build_two_qudit_sequence(const TwoSystemParams& p, int j, int k, double theta,
                                         const ScheduleOptions& opts = {}) {
  p.validate();
  if (j < 0 || j >= p.a.resonator_levels - 1 || k < 0 || k >= p.b.resonator_levels - 1)
    throw validation_error("build_two_qudit_sequence: Fock index exceeds guard limits");

  double th = std::fmod(theta, kTwoPi);
  if (th < 0.0) th += kTwoPi;

  DressedFrame fa = dressed_frame(p.a);
  DressedFrame fb = dressed_frame(p.b);
  Operator xa = drive_operator(p.a);
  Operator xb = drive_operator(p.b);

  Schedule s;
  s.two_qudit = true;
  s.idle_omega01_a = p.a.omega01;
  s.idle_omega01_b = p.b.omega01;
  double cursor = 0.0;

  double ca = cursor, cb = cursor;
  PulseSegment ea = detail::make_r01(fa, xa, j, opts, ca);
  PulseSegment eb = detail::make_r01(fb, xb, k, opts, cb);
  cursor = std::max(ca, cb);
  detail::annotate(s, StepKind::RA01, j, 0.0, ea);
  detail::annotate(s, StepKind::RB01, k, 0.0, eb);
  s.drive_a.push_back(ea);
  s.drive_b.push_back(eb);

  if (th > 0.0) {
    // The |1,1> <-> |0,2> atom pair couples at gp = lambda_B g_ab. A resonant
    // half Rabi period imprints -1 (theta = pi); other angles detune the
    // window by Delta and hold for one full generalized-Rabi return, which
    // leaves the populations intact and the phase at -theta.
    double gp = p.b.lambda * p.g_ab;
    double xfrac = (th - kPi) / kPi;  // in (-1, 1)
    if (1.0 - xfrac * xfrac < 1e-2)
      throw validation_error("build_two_qudit_sequence: angle too close to 0 or 2pi");
    double delta = 2.0 * gp * xfrac / std::sqrt(1.0 - xfrac * xfrac);
    double hold = kPi * std::sqrt(1.0 - xfrac * xfrac) / gp;

    // Dressed resonance: solve for the plateau omega_{B,01} putting the
    // dressed 1<->2 (B) transition at Delta above the dressed omega_{A,01}(j)
    // transition (secant on the dressed frequency).
    double wa01 = dressed_transition(fa, 1, j, 0, j);
    auto fb12 = [&](double w01) {
      DressedFrame g = dressed_frame(p.b.with_omega01(w01));
      return dressed_transition(g, 2, k, 1, k) - (wa01 + delta);
    };
    double d12b = p.b.omega01 - p.b.omega12;
    double x0 = wa01 + delta + d12b, x1 = x0 + kTwoPi * 0.01e9;
    double f0 = fb12(x0), f1 = fb12(x1);
    for (int it = 0; it < 40 && std::abs(f1) > kTwoPi * 1.0 && std::abs(f1 - f0) > 0.0; ++it) {
      double x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
      x0 = x1;
      f0 = f1;
      x1 = x2;
      f1 = fb12(x1);
    }
    PulseSegment c;
    c.kind = SegmentKind::flux_shift;
    c.flux_target = x1;
    c.rise_time = opts.flux_rise;
    c.coupler_on = true;
    c.line_b = true;
    c.duration = 2.0 * opts.flux_rise + hold;
    c.start = cursor;
    cursor += c.duration;
    detail::annotate(s, StepKind::C, -1, th, c);
    s.flux_b.push_back(c);
  }

  ca = cursor;
  cb = cursor;
  PulseSegment da = detail::make_r01(fa, xa, j, opts, ca);
  PulseSegment db = detail::make_r01(fb, xb, k, opts, cb);
  cursor = std::max(ca, cb);
  detail::annotate(s, StepKind::RA01, j, 0.0, da);
  detail::annotate(s, StepKind::RB01, k, 0.0, db);
  s.drive_a.push_back(da);
  s.drive_b.push_back(db);

  // Each pi-pulse pair leaves -1 on its whole Fock strip; the frame updates
  // cancel those so the net ideal action is the bare controlled phase.
  detail::annotate_vz(s, StepKind::VZA, j, kPi, cursor);
  detail::annotate_vz(s, StepKind::VZB, k, kPi, cursor);

  s.total_duration = cursor;
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

inline const char* step_name(StepKind k) {
  switch (k) {
    case StepKind::R01: return "R01";
    case StepKind::R12: return "R12";
    case StepKind::S: return "S";
    case StepKind::C: return "C";
    case StepKind::RA01: return "RA01";
    case StepKind::RB01: return "RB01";
    case StepKind::VZ: return "VZ";
    case StepKind::VZA: return "VZA";
    case StepKind::VZB: return "VZB";
  }
  return "?";
}

inline nlohmann::json segment_to_json(const PulseSegment& seg) {
  nlohmann::json o;
  o["kind"] = seg.kind == SegmentKind::microwave ? "microwave"
              : seg.kind == SegmentKind::flux_shift ? "flux_shift"
                                                    : "idle";
  o["start_ns"] = seg.start * 1e9;
  o["duration_ns"] = seg.duration * 1e9;
  if (seg.kind == SegmentKind::microwave) {
    o["amplitude_MHz"] = seg.amplitude / kTwoPi / 1e6;
    o["carrier_GHz"] = seg.carrier / kTwoPi / 1e9;
    o["phase_rad"] = seg.phase;
    o["transition"] = seg.transition == TransitionTag::t01 ? "01" : "12";
    o["conditioned_n"] = seg.conditioned_n;
    o["sigma_ns"] = seg.sigma * 1e9;
    o["effective_area_rad"] = seg.effective_area;
    o["matrix_element"] = seg.matrix_element;
  } else if (seg.kind == SegmentKind::flux_shift) {
    o["target_GHz"] = seg.flux_target / kTwoPi / 1e9;
    o["rise_ns"] = seg.rise_time * 1e9;
    o["coupler_on"] = seg.coupler_on;
    o["line_b"] = seg.line_b;
  }
  return o;
}

inline nlohmann::json schedule_to_json(const Schedule& s) {
  nlohmann::json o;
  o["total_duration_ns"] = s.total_duration * 1e9;
  o["idle_omega01_GHz"] = s.idle_omega01_a / kTwoPi / 1e9;
  o["two_qudit"] = s.two_qudit;
  for (const auto& seg : s.drive_a) o["drive_a"].push_back(segment_to_json(seg));
  for (const auto& seg : s.drive_b) o["drive_b"].push_back(segment_to_json(seg));
  for (const auto& seg : s.flux_a) o["flux_a"].push_back(segment_to_json(seg));
  for (const auto& seg : s.flux_b) o["flux_b"].push_back(segment_to_json(seg));
  for (const auto& a : s.annotations) {
    nlohmann::json e;
    e["step"] = step_name(a.kind);
    e["n"] = a.cond_n;
    e["theta_rad"] = a.theta;
    e["t0_ns"] = a.t0 * 1e9;
    e["t1_ns"] = a.t1 * 1e9;
    o["annotations"].push_back(e);
  }
  return o;
}

// Waveform table: time, flux line value (GHz), drive I/Q per line.
inline void write_waveform_csv(const Schedule& s, std::ostream& os, double sample_dt = 0.25e-9) {
  os << "time_ns,flux_a_GHz,drive_a_I_MHz,drive_a_Q_MHz";
  if (s.two_qudit) os << ",flux_b_GHz,drive_b_I_MHz,drive_b_Q_MHz";
  os << "\n";
  os.precision(17);
  auto line_iq = [](const std::vector<PulseSegment>& segs, double t, double& i, double& q) {
    i = q = 0.0;
    for (const auto& seg : segs) {
      if (t < seg.start || t > seg.end()) continue;
      double env = segment_envelope(seg, t) / kTwoPi / 1e6;
      i += env * std::cos(seg.phase);
      q += env * std::sin(seg.phase);
    }
  };
  long n = long(s.total_duration / sample_dt) + 1;
  for (long m = 0; m <= n; ++m) {
    double t = std::min(m * sample_dt, s.total_duration);
    double flux = s.idle_omega01_a;
    for (const auto& seg : s.flux_a)
      if (t >= seg.start && t <= seg.end()) flux = flux_profile(s.idle_omega01_a, seg, t - seg.start);
    double ai, aq;
    line_iq(s.drive_a, t, ai, aq);
    os << t * 1e9 << "," << flux / kTwoPi / 1e9 << "," << ai << "," << aq;
    if (s.two_qudit) {
      double fluxb = s.idle_omega01_b;
      for (const auto& seg : s.flux_b)
        if (t >= seg.start && t <= seg.end())
          fluxb = flux_profile(s.idle_omega01_b, seg, t - seg.start);
      double bi, bq;
      line_iq(s.drive_b, t, bi, bq);
      os << "," << fluxb / kTwoPi / 1e9 << "," << bi << "," << bq;
    }
    os << "\n";
    if (t >= s.total_duration) break;
  }
}

}  // namespace rqs
