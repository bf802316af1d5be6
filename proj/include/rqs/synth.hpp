#pragma once

// Abstract qudit-gate layer: two-level x/z rotations and their composites,
// the two-qudit controlled phase, QR decomposition of arbitrary single-qudit
// unitaries into two-level factors, routing of non-adjacent rotations onto
// the nearest-neighbor level graph, and lowering of routed gate lists to
// executable pulse schedules.

#include "rqs/pulse.hpp"

#include <json.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace rqs {

enum class RotationKind { x, z, composite, controlled_phase };

// One elementary factor. x/z use theta; composite is
// Rz(phi) Rx(2 lambda) Rz(-phi) on the {j,k} subspace, i.e. the block
//   [ cos(lambda)                 -i e^{-i phi} sin(lambda) ]
//   [ -i e^{+i phi} sin(lambda)    cos(lambda)              ];
// controlled_phase puts e^{-i theta} on the joint level |j,k>.
struct RotationSpec {
  RotationKind kind = RotationKind::x;
  int j = 0, k = 1;
  double theta = 0.0;   // x/z/controlled-phase angle, rad
  double lambda = 0.0;  // composite half-angle, rad
  double phi = 0.0;     // composite z-conjugation angle, rad

  void validate(int d) const {
    if (d < 2) throw validation_error("RotationSpec: dimension must be at least 2");
    if (kind == RotationKind::controlled_phase) {
      // j and k index independent qudits, so j == k is fine.
      if (j < 0 || k < 0 || j >= d || k >= d)
        throw validation_error("RotationSpec: controlled-phase levels must lie in [0, d)");
    } else if (j < 0 || k >= d || j >= k) {
      throw validation_error("RotationSpec: need 0 <= j < k < d");
    }
    if (!std::isfinite(theta) || !std::isfinite(lambda) || !std::isfinite(phi))
      throw validation_error("RotationSpec: angles must be finite");
  }
  int span() const { return k - j; }
  bool adjacent() const { return k == j + 1; }
};

// Ordered factor list; list order is application order (the first entry acts
// on the state first, i.e. it is the rightmost factor of the matrix product).
struct GateList {
  int dimension = 0;
  double global_phase = 0.0;  // rad, multiplies the whole product
  std::vector<RotationSpec> gates;

  void validate() const {
    if (dimension < 2) throw validation_error("GateList: dimension must be at least 2");
    for (const auto& g : gates) g.validate(dimension);
  }
};

// ---------------------------------------------------------------------------
// Factor matrices

inline Mat rotation_matrix(const RotationSpec& spec, int d) {
  spec.validate(d);
  if (spec.kind == RotationKind::controlled_phase) {
    long dim = long(d) * d;
    Mat u = Mat::Identity(dim, dim);
    long idx = long(spec.j) * d + spec.k;
    u(idx, idx) = std::exp(-kI * spec.theta);
    return u;
  }
  Mat u = Mat::Identity(d, d);
  switch (spec.kind) {
    case RotationKind::x: {
      double c = std::cos(spec.theta / 2.0), s = std::sin(spec.theta / 2.0);
      u(spec.j, spec.j) = c;
      u(spec.k, spec.k) = c;
      u(spec.j, spec.k) = -kI * s;
      u(spec.k, spec.j) = -kI * s;
      break;
    }
    case RotationKind::z:
      u(spec.j, spec.j) = std::exp(-kI * spec.theta / 2.0);
      u(spec.k, spec.k) = std::exp(kI * spec.theta / 2.0);
      break;
    case RotationKind::composite: {
      double c = std::cos(spec.lambda), s = std::sin(spec.lambda);
      u(spec.j, spec.j) = c;
      u(spec.k, spec.k) = c;
      u(spec.j, spec.k) = -kI * std::exp(-kI * spec.phi) * s;
      u(spec.k, spec.j) = -kI * std::exp(kI * spec.phi) * s;
      break;
    }
    case RotationKind::controlled_phase:
      break;  // handled above
  }
  return u;
}

// Product of all single-qudit factors in application order, times the global
// phase. Controlled-phase factors live on the d^2 product space and are
// rejected here; use rotation_matrix on them directly.
inline Mat gate_list_matrix(const GateList& g) {
  g.validate();
  Mat u = std::exp(kI * g.global_phase) * Mat::Identity(g.dimension, g.dimension);
  for (const auto& spec : g.gates) {
    if (spec.kind == RotationKind::controlled_phase)
      throw validation_error("gate_list_matrix: controlled-phase factors act on the product space");
    u = rotation_matrix(spec, g.dimension) * u;  // later factors apply on the left
  }
  return u;
}

// ---------------------------------------------------------------------------
// QR decomposition into two-level factors

// Column-by-column Givens-style reduction: for each column c, sub-diagonal
// entries are zeroed bottom-up by adjacent-level composite rotations
// G = U_{r-1,r}(-lambda, phi), leaving a diagonal of phases that is emitted
// as a z-rotation chain plus a global phase. The returned list applies
// rightmost-first: u = (later factors) ... (z layer first).
inline GateList qr_decompose(const Mat& u) {
  long d = u.rows();
  if (d < 2 || u.cols() != d) throw validation_error("qr_decompose: need a square matrix, d >= 2");
  if ((u.adjoint() * u - Mat::Identity(d, d)).cwiseAbs().maxCoeff() > 1e-10)
    throw validation_error("qr_decompose: input is not unitary");

  Mat w = u;
  std::vector<RotationSpec> factors;  // G_i^dagger in elimination order
  for (long c = 0; c + 1 < d; ++c) {
    for (long r = d - 1; r > c; --r) {
      cx x = w(r - 1, c), y = w(r, c);
      if (std::abs(y) < 1e-12) continue;
      double lambda = std::atan2(std::abs(y), std::abs(x));
      double phi = std::arg(y) - std::arg(x) + kPi / 2.0;
      RotationSpec g;  // the eliminator's inverse, a factor of u
      g.kind = RotationKind::composite;
      g.j = int(r - 1);
      g.k = int(r);
      g.lambda = lambda;
      g.phi = phi;
      // Apply the eliminator U(-lambda, phi) to rows r-1, r of w.
      Mat e = rotation_matrix({RotationKind::composite, g.j, g.k, 0.0, -lambda, phi}, int(d));
      w = e * w;
      w(r, c) = 0.0;  // exact by construction
      factors.push_back(g);
    }
  }

  // w is now diagonal up to roundoff: split its phases into a z-rotation
  // chain and a global phase (the chain telescopes exactly).
  std::vector<double> delta(d);
  double gamma = 0.0;
  for (long i = 0; i < d; ++i) {
    delta[i] = std::arg(w(i, i));
    gamma += delta[i] / double(d);
  }
  GateList out;
  out.dimension = int(d);
  out.global_phase = gamma;
  double prev = 0.0;
  for (long i = 0; i + 1 < d; ++i) {
    double th = prev + 2.0 * (gamma - delta[i]);
    if (std::abs(th) > 1e-12)
      out.gates.push_back({RotationKind::z, int(i), int(i + 1), th, 0.0, 0.0});
    prev = th;
  }
  // Diagonal first, then the eliminator inverses from last to first.
  for (auto it = factors.rbegin(); it != factors.rend(); ++it)
    if (std::abs(it->lambda) > 1e-12) out.gates.push_back(*it);
  return out;
}

// ---------------------------------------------------------------------------
// Routing onto the nearest-neighbor level graph

namespace detail {

// Level-shift conjugator G = Rz_{m,m+1}(pi) Rx_{m,m+1}(pi): maps |m> -> |m+1>
// and |m+1> -> -|m>, so conjugating any factor supported on {m+1, k} by G
// reproduces the same block on {m, k} exactly.
inline void push_shift(std::vector<RotationSpec>& out, int m) {
  out.push_back({RotationKind::x, m, m + 1, kPi, 0.0, 0.0});
  out.push_back({RotationKind::z, m, m + 1, kPi, 0.0, 0.0});
}

inline void push_unshift(std::vector<RotationSpec>& out, int m) {
  out.push_back({RotationKind::z, m, m + 1, -kPi, 0.0, 0.0});
  out.push_back({RotationKind::x, m, m + 1, -kPi, 0.0, 0.0});
}

}  // namespace detail

// Expand every non-adjacent x/composite rotation into shift ladders around an
// adjacent central factor: R_{j,k} = G_j^dag ... G_{k-2}^dag R_{k-1,k}
// G_{k-2} ... G_j. z-rotations and controlled phases pass through unchanged
// (both are diagonal in the level basis). For span s this costs 4(s-1)
// swap-layer factors plus the central rotation.
inline GateList route_to_neighbors(const GateList& g) {
  g.validate();
  GateList out;
  out.dimension = g.dimension;
  out.global_phase = g.global_phase;
  for (const auto& spec : g.gates) {
    bool passthrough = spec.kind == RotationKind::z ||
                       spec.kind == RotationKind::controlled_phase || spec.adjacent();
    if (passthrough) {
      out.gates.push_back(spec);
      continue;
    }
    for (int m = spec.j; m <= spec.k - 2; ++m) detail::push_shift(out.gates, m);
    RotationSpec central = spec;
    central.j = spec.k - 1;
    out.gates.push_back(central);
    for (int m = spec.k - 2; m >= spec.j; --m) detail::push_unshift(out.gates, m);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Lowering to pulse schedules

namespace detail {

inline void append_segments(std::vector<PulseSegment>& dst, const std::vector<PulseSegment>& src,
                            double offset) {
  for (PulseSegment seg : src) {
    seg.start += offset;
    dst.push_back(seg);
  }
}

inline void append_schedule(Schedule& dst, const Schedule& src, double& cursor) {
  append_segments(dst.drive_a, src.drive_a, cursor);
  append_segments(dst.drive_b, src.drive_b, cursor);
  append_segments(dst.flux_a, src.flux_a, cursor);
  append_segments(dst.flux_b, src.flux_b, cursor);
  for (Annotation a : src.annotations) {
    a.t0 += cursor;
    a.t1 += cursor;
    dst.annotations.push_back(a);
  }
  cursor += src.total_duration;
}

}  // namespace detail

// Single-qudit lowering: adjacent x/composite rotations become encode/S/decode
// sequences, z-rotations become zero-duration virtual frame updates, and the
// global phase is realized as a uniform frame update on all d levels so the
// lowered ideal action matches gate_list_matrix exactly.
inline Schedule lower_to_schedule(const GateList& g, const SystemParams& p,
                                  const ScheduleOptions& opts = {}) {
  g.validate();
  p.validate();
  if (g.dimension > p.resonator_levels)
    throw validation_error("lower_to_schedule: gate list dimension exceeds resonator truncation");

  Schedule s;
  s.idle_omega01_a = p.omega01;
  double cursor = 0.0;
  if (std::abs(g.global_phase) > 0.0)
    for (int n = 0; n < g.dimension; ++n)
      detail::annotate_vz(s, StepKind::VZ, n, g.global_phase, cursor);

  for (const auto& spec : g.gates) {
    switch (spec.kind) {
      case RotationKind::z:
        detail::annotate_vz(s, StepKind::VZ, spec.j, -spec.theta / 2.0, cursor);
        detail::annotate_vz(s, StepKind::VZ, spec.k, spec.theta / 2.0, cursor);
        break;
      case RotationKind::x: {
        if (!spec.adjacent())
          throw validation_error("lower_to_schedule: route non-adjacent rotations first");
        Schedule sub = build_single_qudit_sequence(p, spec.j, spec.theta / 2.0, 0.0, opts);
        detail::append_schedule(s, sub, cursor);
        break;
      }
      case RotationKind::composite: {
        if (!spec.adjacent())
          throw validation_error("lower_to_schedule: route non-adjacent rotations first");
        // The builder's phase convention conjugates oppositely: its phi enters
        // the upper-right entry as e^{+i phi}.
        Schedule sub = build_single_qudit_sequence(p, spec.j, spec.lambda, -spec.phi, opts);
        detail::append_schedule(s, sub, cursor);
        break;
      }
      case RotationKind::controlled_phase:
        throw validation_error("lower_to_schedule: controlled phase needs TwoSystemParams");
    }
  }
  s.total_duration = cursor;
  return s;
}

// Two-qudit lowering: only controlled-phase factors act on the product space;
// single-qudit factors should be lowered against the individual subsystem.
inline Schedule lower_to_schedule(const GateList& g, const TwoSystemParams& p,
                                  const ScheduleOptions& opts = {}) {
  g.validate();
  p.validate();
  Schedule s;
  s.two_qudit = true;
  s.idle_omega01_a = p.a.omega01;
  s.idle_omega01_b = p.b.omega01;
  double cursor = 0.0;
  if (std::abs(g.global_phase) > 0.0)
    for (int n = 0; n < g.dimension; ++n)
      detail::annotate_vz(s, StepKind::VZA, n, g.global_phase, cursor);

  for (const auto& spec : g.gates) {
    if (spec.kind != RotationKind::controlled_phase)
      throw validation_error(
          "lower_to_schedule: two-qudit lowering takes controlled-phase factors only");
    Schedule sub = build_two_qudit_sequence(p, spec.j, spec.k, spec.theta, opts);
    detail::append_schedule(s, sub, cursor);
  }
  s.total_duration = cursor;
  return s;
}

// ---------------------------------------------------------------------------
// Serialization

inline const char* rotation_kind_name(RotationKind k) {
  switch (k) {
    case RotationKind::x: return "x";
    case RotationKind::z: return "z";
    case RotationKind::composite: return "composite";
    case RotationKind::controlled_phase: return "controlled-phase";
  }
  return "?";
}

inline RotationKind rotation_kind_from_name(const std::string& name) {
  if (name == "x") return RotationKind::x;
  if (name == "z") return RotationKind::z;
  if (name == "composite") return RotationKind::composite;
  if (name == "controlled-phase") return RotationKind::controlled_phase;
  throw validation_error("unknown rotation kind: " + name);
}

inline nlohmann::json gate_list_to_json(const GateList& g) {
  nlohmann::json o;
  o["dimension"] = g.dimension;
  o["global_phase_rad"] = g.global_phase;
  o["order"] = "application";  // first entry acts on the state first
  o["gates"] = nlohmann::json::array();
  for (const auto& spec : g.gates) {
    nlohmann::json e;
    e["kind"] = rotation_kind_name(spec.kind);
    e["j"] = spec.j;
    e["k"] = spec.k;
    if (spec.kind == RotationKind::composite) {
      e["lambda_rad"] = spec.lambda;
      e["phi_rad"] = spec.phi;
    } else {
      e["theta_rad"] = spec.theta;
    }
    o["gates"].push_back(e);
  }
  return o;
}

inline GateList gate_list_from_json(const nlohmann::json& o) {
  GateList g;
  g.dimension = o.at("dimension").get<int>();
  g.global_phase = o.value("global_phase_rad", 0.0);
  for (const auto& e : o.value("gates", nlohmann::json::array())) {
    RotationSpec spec;
    spec.kind = rotation_kind_from_name(e.at("kind").get<std::string>());
    spec.j = e.at("j").get<int>();
    spec.k = e.at("k").get<int>();
    if (spec.kind == RotationKind::composite) {
      spec.lambda = e.at("lambda_rad").get<double>();
      spec.phi = e.value("phi_rad", 0.0);
    } else {
      spec.theta = e.at("theta_rad").get<double>();
    }
    g.gates.push_back(spec);
  }
  g.validate();
  return g;
}

// Parse a unitary given as a JSON 2-D array of [re, im] pairs.
inline Mat unitary_from_json(const nlohmann::json& o) {
  if (!o.is_array() || o.empty()) throw validation_error("unitary JSON: expected a 2-D array");
  long d = long(o.size());
  Mat u(d, d);
  for (long r = 0; r < d; ++r) {
    const auto& row = o.at(r);
    if (!row.is_array() || long(row.size()) != d)
      throw validation_error("unitary JSON: matrix must be square");
    for (long c = 0; c < d; ++c) {
      const auto& e = row.at(c);
      if (!e.is_array() || e.size() != 2)
        throw validation_error("unitary JSON: entries must be [re, im] pairs");
      u(r, c) = cx(e.at(0).get<double>(), e.at(1).get<double>());
    }
  }
  return u;
}

inline nlohmann::json unitary_to_json(const Mat& u) {
  nlohmann::json o = nlohmann::json::array();
  for (long r = 0; r < u.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (long c = 0; c < u.cols(); ++c)
      row.push_back(nlohmann::json::array({u(r, c).real(), u(r, c).imag()}));
    o.push_back(row);
  }
  return o;
}

}  // namespace rqs
