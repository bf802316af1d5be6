#include "rqs/propagator.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace rqs;

namespace {

constexpr double GHz = kTwoPi * 1e9;
constexpr double ns = 1e-9;

SystemParams gate_params(int res_levels = 6) {
  SystemParams p;
  p.omega01 = 7.28 * GHz;
  p.omega12 = 6.86 * GHz;
  p.omega23 = 6.37 * GHz;
  p.omega_r = 7.0 * GHz;
  p.g = 0.035 * GHz;
  p.atom_levels = 4;
  p.resonator_levels = res_levels;
  return p;
}

QuantumState dressed_input(const SystemParams& p, const DressedFrame& f, int q, int n) {
  return QuantumState{dressed_state(f, q, n), {p.atom_levels, p.resonator_levels}};
}

}  // namespace

TEST_CASE("empty schedule leaves eigenstate populations constant") {
  SystemParams p = gate_params();
  DressedFrame f = dressed_frame(p);
  Schedule s;
  s.idle_omega01_a = p.omega01;
  s.total_duration = 30.0 * ns;
  SimulationTrace tr = run_schedule(p, s, dressed_input(p, f, 0, 2));
  REQUIRE(tr.times.size() >= 60);
  long k = dressed_index(f, 0, 2);
  for (size_t i = 0; i < tr.times.size(); ++i) {
    REQUIRE(tr.probs[i](k) == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(tr.probs[i].sum() == Catch::Approx(1.0).margin(1e-9));
  }
  REQUIRE(std::abs(tr.final_state.norm() - 1.0) < 1e-12);
}

TEST_CASE("run_schedule validates its inputs") {
  SystemParams p = gate_params();
  Schedule s;
  s.total_duration = 1.0 * ns;
  Vec bad = Vec::Zero(24);
  bad(0) = 0.5;
  REQUIRE_THROWS_AS(
      run_schedule(p, s, QuantumState{bad, {4, 6}}),
      validation_error);
}

TEST_CASE("full swap schedule transfers the dressed pair in both directions") {
  SystemParams p = gate_params();
  DressedFrame f = dressed_frame(p);
  Schedule s = build_single_qudit_sequence(p, 0, kPi / 2.0);

  SimulationTrace fwd = run_schedule(p, s, dressed_input(p, f, 0, 0));
  long k0 = dressed_index(f, 0, 0), k1 = dressed_index(f, 0, 1);
  double swap_fwd = fwd.probs.back()(k1);
  REQUIRE(swap_fwd > 0.98);
  REQUIRE(std::abs(fwd.final_state.norm() - 1.0) < 1e-8);
  for (const auto& pr : fwd.probs) REQUIRE(pr.sum() == Catch::Approx(1.0).margin(1e-8));

  SimulationTrace bwd = run_schedule(p, s, dressed_input(p, f, 0, 1));
  REQUIRE(bwd.probs.back()(k0) > 0.98);
}

TEST_CASE("spectator Fock states survive the swap schedule") {
  SystemParams p = gate_params(7);
  DressedFrame f = dressed_frame(p);
  Schedule s = build_single_qudit_sequence(p, 0, kPi / 2.0);
  for (int n : {2, 3}) {
    SimulationTrace tr = run_schedule(p, s, dressed_input(p, f, 0, n));
    REQUIRE(tr.probs.back()(dressed_index(f, 0, n)) > 0.95);
  }
}

TEST_CASE("identity schedule tomography reconstructs the identity process") {
  SystemParams p = gate_params();
  Schedule s;
  s.idle_omega01_a = p.omega01;
  s.total_duration = 12.0 * ns;
  std::vector<StateLabel> sub = {{0, 0}, {0, 1}, {0, 2}, {0, 3}};
  GateReport rep = gate_tomography(p, s, sub);
  REQUIRE((rep.process - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-9);
  REQUIRE(rep.min_survival == Catch::Approx(1.0).margin(1e-10));
  REQUIRE(process_fidelity(rep.process, Mat::Identity(4, 4)) == Catch::Approx(1.0).margin(1e-10));
  for (double ph : rep.probe_phases) REQUIRE(std::abs(ph) < 1e-8);
}

TEST_CASE("extended rotation populations track the ideal factor product") {
  SystemParams p = gate_params(7);
  DressedFrame f = dressed_frame(p);
  double theta = kPi / 2.0;
  Schedule s = build_extended_rotation(p, 0, 2, theta);
  Mat ideal = ideal_annotation_product(p, s);
  SimulationTrace tr = run_schedule(p, s, dressed_input(p, f, 0, 0));
  long i0 = bare_index(p, 0, 0);
  for (int n : {0, 1, 2}) {
    double want = std::norm(ideal(bare_index(p, 0, n), i0));
    double got = tr.probs.back()(dressed_index(f, 0, n));
    REQUIRE(std::abs(got - want) < 0.02);
  }
  REQUIRE(tr.probs.back()(dressed_index(f, 0, 2)) > 0.95);
}

TEST_CASE("norm drift guard trips on an absurd drive amplitude") {
  SystemParams p = gate_params();
  Schedule s;
  s.idle_omega01_a = p.omega01;
  PulseSegment seg;
  seg.kind = SegmentKind::microwave;
  seg.start = 0.0;
  seg.duration = 10.0 * ns;
  seg.sigma = seg.duration / 4.0;
  seg.amplitude = kTwoPi * 60e9;  // far beyond any resolvable Rabi rate
  seg.carrier = 7.28 * GHz;
  s.drive_a.push_back(seg);
  s.total_duration = seg.duration;
  DressedFrame f = dressed_frame(p);
  PropagatorOptions opts;
  opts.steps_per_period = 8;
  REQUIRE_THROWS_AS(run_schedule(p, s, dressed_input(p, f, 0, 0), opts), numerical_error);
}

TEST_CASE("two-qudit controlled phase shows up in the probe invariant") {
  TwoSystemParams p;
  p.a = gate_params(3);
  p.a.atom_levels = 3;
  p.b = gate_params(3);
  p.b.atom_levels = 3;
  p.b.omega01 = 7.31 * GHz;
  p.b.omega12 = 6.89 * GHz;
  p.b.omega23 = 6.40 * GHz;
  p.g_ab = 0.035 * GHz;

  Schedule s = build_two_qudit_sequence(p, 0, 0, kPi);
  // basis ordered so the probes measure phases against the untouched (1,1)
  std::vector<std::array<int, 2>> basis = {{1, 1}, {0, 1}, {1, 0}, {0, 0}};
  GateReport rep = gate_tomography(p, s, basis);

  for (int m = 0; m < 4; ++m) REQUIRE(rep.survival(m) > 0.95);
  double invariant = rep.probe_phases[3] - rep.probe_phases[1] - rep.probe_phases[2];
  double wrapped = std::remainder(invariant, kTwoPi);
  REQUIRE(std::abs(std::abs(wrapped) - kPi) < 0.15);
}

TEST_CASE("vacuum readout stays dark and Fock one flops at 2g") {
  SystemParams p = gate_params(7);
  Vec vac = Vec::Zero(7);
  vac(0) = 1.0;
  ReadoutTrace tr = simulate_rabi_readout(p, QuantumState{vac, {7}}, 100.0 * ns);
  for (double v : tr.p_excited) REQUIRE(v < 1e-10);

  Vec one = Vec::Zero(7);
  one(1) = 1.0;
  ReadoutTrace tr1 = simulate_rabi_readout(p, QuantumState{one, {7}}, 100.0 * ns);
  for (size_t i = 0; i < tr1.times.size(); ++i) {
    double expect = std::pow(std::sin(p.g * tr1.times[i]), 2);
    REQUIRE(tr1.p_excited[i] == Catch::Approx(expect).margin(1e-8));
  }
}

TEST_CASE("readout closed loop recovers a mixed superposition") {
  SystemParams p = gate_params(7);
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Vec amps = Vec::Zero(7);
  for (int n = 0; n <= 5; ++n) amps(n) = u(rng);
  amps.normalize();
  ReadoutTrace tr = simulate_rabi_readout(p, QuantumState{amps, {7}}, 500.0 * ns);
  std::vector<double> pops = fit_fock_populations(tr, 5);
  for (int n = 0; n <= 5; ++n)
    REQUIRE(std::abs(pops[n] - std::norm(amps(n))) < 0.02);
}

TEST_CASE("readout fit rejects traces shorter than the slowest period") {
  SystemParams p = gate_params(7);
  Vec one = Vec::Zero(7);
  one(1) = 1.0;
  ReadoutTrace tr = simulate_rabi_readout(p, QuantumState{one, {7}}, 0.3 * kPi / p.g);
  REQUIRE_THROWS_AS(fit_fock_populations(tr, 3), validation_error);
}

TEST_CASE("trace CSV has a row per sample") {
  SystemParams p = gate_params();
  Schedule s;
  s.idle_omega01_a = p.omega01;
  s.total_duration = 5.0 * ns;
  DressedFrame f = dressed_frame(p);
  SimulationTrace tr = run_schedule(p, s, dressed_input(p, f, 0, 0));
  std::ostringstream os;
  write_trace_csv(tr, os);
  std::string text = os.str();
  REQUIRE(text.rfind("time_ns", 0) == 0);
  REQUIRE(size_t(std::count(text.begin(), text.end(), '\n')) == tr.times.size() + 1);
}

TEST_CASE("tomography fan-out matches the serial run") {
  SystemParams p = gate_params();
  Schedule s;
  s.idle_omega01_a = p.omega01;
  s.total_duration = 8.0 * ns;
  std::vector<StateLabel> sub = {{0, 0}, {0, 1}, {0, 2}};
  PropagatorOptions serial, parallel;
  parallel.threads = 3;
  GateReport a = gate_tomography(p, s, sub, true, serial);
  GateReport b = gate_tomography(p, s, sub, true, parallel);
  REQUIRE((a.process - b.process).cwiseAbs().maxCoeff() == 0.0);
}
