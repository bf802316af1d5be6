#include "rqs/opensys.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <random>

using namespace rqs;

namespace {

constexpr double GHz = kTwoPi * 1e9;

SystemParams section_params(int res_levels = 6) {
  SystemParams p;
  p.omega01 = 7.28 * GHz;
  p.omega12 = 6.86 * GHz;
  p.omega_r = 7.0 * GHz;
  p.g = 0.035 * GHz;
  p.atom_levels = 3;
  p.resonator_levels = res_levels;
  return p;
}

TwoSystemParams pair_params(int res_levels) {
  TwoSystemParams p;
  p.a = section_params(res_levels);
  p.b = section_params(res_levels);
  p.b.omega01 = 7.31 * GHz;
  p.b.omega12 = 6.89 * GHz;
  p.g_ab = 0.035 * GHz;
  return p;
}

std::vector<Channel> single_resonator_channel(int levels, double t_r) {
  return {{"resonator", annihilation(levels).m, 1.0 / t_r}};
}

Mat random_density(long dim, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Mat a(dim, dim);
  for (long i = 0; i < dim; ++i)
    for (long j = 0; j < dim; ++j) a(i, j) = cx(gauss(rng), gauss(rng));
  Mat rho = a * a.adjoint();
  rho /= rho.trace().real();
  return rho;
}

}  // namespace

TEST_CASE("selective 0-1 step couples only its Fock sector") {
  SystemParams p = section_params();
  double w1 = kTwoPi * 6.67e6, w2 = kTwoPi * 25e6;
  Operator h = interaction_hamiltonian({InteractionKind::r01, 2}, p, w1, w2);
  for (int n = 0; n < p.resonator_levels; ++n) {
    double expect = (n == 2) ? 0.5 * w1 : 0.0;
    REQUIRE(std::abs(h.m(bare_index(p, 0, n), bare_index(p, 1, n)) - expect) < 1e-12);
  }
  // No action on a mismatched Fock sector at all.
  QuantumState off = QuantumState::basis(p.dims(), {0, 3});
  REQUIRE((h.m * off.amps).norm() == 0.0);
  // Total non-zero entries: exactly the one 0<->1 pair.
  REQUIRE((h.m.cwiseAbs().array() > 0.0).count() == 2);
}

TEST_CASE("1-2 step is Fock-independent") {
  SystemParams p = section_params();
  double w2 = kTwoPi * 25e6;
  Operator h = interaction_hamiltonian({InteractionKind::r12}, p, 0.0, w2);
  for (int n = 0; n < p.resonator_levels; ++n) {
    REQUIRE(std::abs(h.m(bare_index(p, 1, n), bare_index(p, 2, n)) - 0.5 * w2) < 1e-12);
    REQUIRE(std::abs(h.m(bare_index(p, 0, n), bare_index(p, 1, n))) == 0.0);
  }
  REQUIRE((h.m.cwiseAbs().array() > 0.0).count() == 2 * p.resonator_levels);
}

TEST_CASE("swap step keeps only the resonant rung") {
  SystemParams p = section_params();
  Operator h = interaction_hamiltonian({InteractionKind::s_swap}, p, 0.0, 0.0);
  // |2, j> <-> |1, j+1> at rate lambda g sqrt(j+1); no 0<->1 rung.
  for (int j = 0; j + 1 < p.resonator_levels; ++j) {
    cx e = h.m(bare_index(p, 2, j), bare_index(p, 1, j + 1));
    REQUIRE(std::abs(e - p.lambda * p.g * std::sqrt(double(j + 1))) < 1e-9 * p.g);
    REQUIRE(std::abs(h.m(bare_index(p, 0, j), bare_index(p, 1, j + 1))) == 0.0);
  }
  REQUIRE(h.hermiticity_defect() < 1e-12);
}

TEST_CASE("exchange step couples exactly the auxiliary |1,1>/|0,2| pair") {
  TwoSystemParams p = pair_params(4);
  Operator h = interaction_hamiltonian({InteractionKind::c_exchange}, p, 0.0);
  long na = p.a.resonator_levels, nb = p.b.resonator_levels;
  auto idx = [&](int qa, int qb, int fa, int fb) {
    return ((long(qa) * p.b.atom_levels + qb) * na + fa) * nb + fb;
  };
  double gp = p.b.lambda * p.g_ab;
  for (int fa = 0; fa < na; ++fa)
    for (int fb = 0; fb < nb; ++fb)
      REQUIRE(std::abs(h.m(idx(1, 1, fa, fb), idx(0, 2, fa, fb)) - gp) < 1e-9);
  REQUIRE((h.m.cwiseAbs().array() > 0.0).count() == 2 * na * nb);
  REQUIRE_THROWS_AS(interaction_hamiltonian({InteractionKind::r01, 0}, p, 0.0), validation_error);
  REQUIRE_THROWS_AS(interaction_hamiltonian({InteractionKind::ra01, 0}, section_params(), 0.0, 0.0),
                    validation_error);
}

TEST_CASE("lindblad right-hand side basics") {
  std::mt19937_64 rng(11);
  long dim = 6;
  Operator rho(random_density(dim, rng), {6});

  SECTION("zero Hamiltonian and no channels give a zero derivative") {
    Operator h(Mat::Zero(dim, dim), {6});
    Operator d = lindblad_rhs(rho, h, {});
    REQUIRE(d.m.cwiseAbs().maxCoeff() == 0.0);
  }

  SECTION("derivative is traceless and Hermitian") {
    Mat hm = random_density(dim, rng);  // any Hermitian works
    Operator h(Mat(hm + hm.adjoint()), {6});
    auto ch = single_resonator_channel(6, 5e-6);
    Operator d = lindblad_rhs(rho, h, ch);
    REQUIRE(std::abs(d.m.trace()) < 1e-12 * d.m.cwiseAbs().maxCoeff());
    REQUIRE(d.hermiticity_defect() < 1e-12 * d.m.cwiseAbs().maxCoeff());
  }

  SECTION("validation rejects bad density operators") {
    Operator h(Mat::Zero(dim, dim), {6});
    Operator bad(Mat(2.0 * rho.m), {6});
    REQUIRE_THROWS_AS(lindblad_rhs(bad, h, {}), validation_error);
    Mat nh = rho.m;
    nh(0, 1) += cx(0.0, 1e-3);
    REQUIRE_THROWS_AS(lindblad_rhs(Operator(nh, {6}), h, {}), validation_error);
  }
}

TEST_CASE("dense solver reproduces the amplitude-damping cascade") {
  double t_r = 5e-6;
  int levels = 6;

  SECTION("Fock populations decay as exp(-n t / T_r)") {
    double t = 0.7e-6;
    InteractionSequence s = idle_sequence({levels}, single_resonator_channel(levels, t_r), t);
    for (int n : {1, 3, 5}) {
      Mat rho0 = Mat::Zero(levels, levels);
      rho0(n, n) = 1.0;
      Mat rho = dense_master_solve(s, rho0);
      REQUIRE(std::abs(rho(n, n).real() - std::exp(-n * t / t_r)) < 1e-6);
      REQUIRE(std::abs(rho.trace().real() - 1.0) < 1e-9);
    }
  }

  SECTION("damped |3> after one T_r holds exp(-3) to 1e-4") {
    InteractionSequence s = idle_sequence({levels}, single_resonator_channel(levels, t_r), t_r);
    Mat rho0 = Mat::Zero(levels, levels);
    rho0(3, 3) = 1.0;
    Mat rho = dense_master_solve(s, rho0);
    REQUIRE(std::abs(rho(3, 3).real() - std::exp(-3.0)) < 1e-4);
  }

  SECTION("two-level excited state decays as exp(-t / T_q)") {
    double t_q = 2e-6, t = 0.9e-6;
    Mat sm = Mat::Zero(2, 2);
    sm(0, 1) = 1.0;
    InteractionSequence s = idle_sequence({2}, {{"atom", sm, 1.0 / t_q}}, t);
    Mat rho0 = Mat::Zero(2, 2);
    rho0(1, 1) = 1.0;
    Mat rho = dense_master_solve(s, rho0);
    REQUIRE(std::abs(rho(1, 1).real() - std::exp(-t / t_q)) < 1e-6);
  }

  SECTION("dimension cap enforced") {
    InteractionSequence s = idle_sequence({100}, single_resonator_channel(100, t_r), 1e-7);
    REQUIRE_THROWS_AS(dense_master_solve(s, Mat::Identity(100, 100) / 100.0), sizing_error);
  }

  SECTION("no-decay limit reproduces the unitary result") {
    SystemParams p = section_params(4);
    InteractionSequence s = interaction_single_qudit_sequence(p, 0, DecoherenceParams{});
    QuantumState in = QuantumState::basis(p.dims(), {0, 0});
    Vec ideal = closed_system_final(s, in);
    Mat rho = dense_master_solve(s, Mat(in.amps * in.amps.adjoint()));
    REQUIRE((rho - ideal * ideal.adjoint()).cwiseAbs().maxCoeff() < 1e-7);
  }
}

TEST_CASE("single-qudit sequence timing and structure") {
  SystemParams p = section_params(10);
  DecoherenceParams d{10e-6, 50e-6};
  InteractionSequence s = interaction_single_qudit_sequence(p, 0, d);
  REQUIRE(s.steps.size() == 7);
  REQUIRE(s.channels.size() == 2);
  // 4 selective pi-pulses (~75 ns each) + 2 fast pulses (20 ns) + the swap.
  double swap = (0.5 * kPi) / (p.lambda * p.g);
  double t01 = kPi / (kTwoPi * 6.67e6), t12 = kPi / (kTwoPi * 25e6);
  REQUIRE(s.total_duration == Catch::Approx(4 * t01 + 2 * t12 + swap).epsilon(1e-9));
  REQUIRE(s.total_duration > 342e-9);
  REQUIRE(s.total_duration < 347e-9);
  // The swap step shortens with sqrt(j + 1): total duration decreases in j.
  double prev = s.total_duration;
  for (int j = 1; j < 4; ++j) {
    double t = interaction_single_qudit_sequence(p, j, d).total_duration;
    REQUIRE(t < prev);
    prev = t;
  }
  // Closed-system action: |0, j> <-> |0, j+1> swap up to phase.
  InteractionSequence s2 = interaction_single_qudit_sequence(p, 2, DecoherenceParams{});
  Vec out = closed_system_final(s2, QuantumState::basis(p.dims(), {0, 2}));
  REQUIRE(std::norm(out(bare_index(p, 0, 3))) == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("two-qudit sequence timing and phase pattern") {
  TwoSystemParams p = pair_params(4);
  DecoherenceParams none{};
  InteractionSequence s = interaction_two_qudit_sequence(p, 2, none);
  REQUIRE(s.steps.size() == 3);
  REQUIRE(s.channels.size() == 4);
  double gp = p.b.lambda * p.g_ab;
  REQUIRE(s.total_duration == Catch::Approx(2 * kPi / (kTwoPi * 6.67e6) + kPi / gp).epsilon(1e-9));
  REQUIRE(s.total_duration > 150e-9);
  REQUIRE(s.total_duration < 176e-9);

  // Diagonal action on the Fock basis; the four-corner phase invariant is pi.
  auto phase = [&](int fa, int fb) {
    QuantumState in = QuantumState::basis(s.dims, {0, 0, fa, fb});
    Vec out = closed_system_final(s, in);
    cx a = in.amps.dot(out);
    REQUIRE(std::abs(a) == Catch::Approx(1.0).margin(1e-9));
    return std::arg(a);
  };
  double inv = phase(2, 2) + phase(0, 0) - phase(2, 0) - phase(0, 2);
  double wrapped = std::remainder(inv, kTwoPi);
  REQUIRE(std::abs(std::abs(wrapped) - kPi) < 1e-9);
}

TEST_CASE("trajectories in the no-decay limit match the closed system with zero jumps") {
  SystemParams p = section_params(4);
  InteractionSequence s = interaction_single_qudit_sequence(p, 0, DecoherenceParams{});
  QuantumState in = QuantumState::basis(p.dims(), {0, 0});
  Vec target = closed_system_final(s, in);
  TrajectoryRun r = run_trajectories(s, in, target, 16, 123);
  REQUIRE(r.total_jumps == 0);
  REQUIRE(r.mean == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(r.std_error < 1e-9);
}

TEST_CASE("step-area calibration guard") {
  SystemParams p = section_params(4);
  InteractionSequence s = interaction_single_qudit_sequence(p, 0, DecoherenceParams{});
  QuantumState in = QuantumState::basis(p.dims(), {0, 0});
  s.steps[1].duration *= 1.001;  // de-calibrate the first 1<->2 pulse
  REQUIRE_THROWS_AS(run_trajectories(s, in, in.amps, 4, 1), numerical_error);
}

TEST_CASE("trajectory unraveling matches the analytic Fock decay law") {
  int levels = 6;
  double t_r = 5e-6, t = 1.2e-6;
  InteractionSequence s = idle_sequence({levels}, single_resonator_channel(levels, t_r), t);
  QuantumState in = QuantumState::basis({levels}, {4});
  TrajectoryRun r = run_trajectories(s, in, in.amps, 1024, 97);
  double law = std::exp(-4.0 * t / t_r);
  REQUIRE(r.total_jumps > 0);
  REQUIRE(std::abs(r.mean - law) < 3.0 * std::max(r.std_error, 1e-4));
}

TEST_CASE("trajectories agree with the dense oracle on a 3x6 system") {
  SystemParams p = section_params(6);
  DecoherenceParams d{3e-6, 15e-6};
  InteractionSequence s = interaction_single_qudit_sequence(p, 0, d);
  QuantumState in = QuantumState::basis(p.dims(), {0, 0});
  Vec target = QuantumState::basis(p.dims(), {0, 1}).amps;

  Mat rho = dense_master_solve(s, Mat(in.amps * in.amps.adjoint()));
  double dense_pop = (target.adjoint() * rho * target)(0, 0).real();

  TrajectoryRun r = run_trajectories(s, in, target, 1024, 2024);
  REQUIRE(r.total_jumps > 0);
  REQUIRE(std::abs(r.mean - dense_pop) < 3.0 * r.std_error);
}

TEST_CASE("seeded trajectory runs are bitwise reproducible") {
  SystemParams p = section_params(5);
  DecoherenceParams d{1e-6, 10e-6};
  InteractionSequence s = interaction_single_qudit_sequence(p, 1, d);
  QuantumState in = QuantumState::basis(p.dims(), {0, 1});
  Vec target = QuantumState::basis(p.dims(), {0, 2}).amps;

  TrajectoryRun r1 = run_trajectories(s, in, target, 64, 7);
  TrajectoryRun r2 = run_trajectories(s, in, target, 64, 7);
  REQUIRE(r1.per_trajectory == r2.per_trajectory);
  REQUIRE(r1.total_jumps == r2.total_jumps);
  REQUIRE(r1.jumps_per_channel == r2.jumps_per_channel);

  TrajectoryOptions two_threads;
  two_threads.threads = 2;
  TrajectoryRun r3 = run_trajectories(s, in, target, 64, 7, two_threads);
  REQUIRE(r1.per_trajectory == r3.per_trajectory);
  REQUIRE(r1.mean == r3.mean);

  TrajectoryRun r4 = run_trajectories(s, in, target, 64, 8);
  REQUIRE(r1.per_trajectory != r4.per_trajectory);
}

TEST_CASE("swap probability degrades monotonically with coherence burden") {
  SystemParams p = section_params(6);
  DecoherenceParams d{1e-6, 10e-6};
  QuantumState in0 = QuantumState::basis(p.dims(), {0, 0});
  QuantumState in3 = QuantumState::basis(p.dims(), {0, 3});

  InteractionSequence s0 = interaction_single_qudit_sequence(p, 0, d);
  InteractionSequence s3 = interaction_single_qudit_sequence(p, 3, d);
  TrajectoryRun r0 = run_trajectories(s0, in0, QuantumState::basis(p.dims(), {0, 1}).amps, 512, 5);
  TrajectoryRun r3 = run_trajectories(s3, in3, QuantumState::basis(p.dims(), {0, 4}).amps, 512, 5);
  REQUIRE(r0.mean < 1.0);
  REQUIRE(r3.mean < r0.mean);
  // Rough scale check against the expected exposure exp(-alpha T/Tq - n T/Tr).
  double t = s3.total_duration;
  REQUIRE(r3.mean > 0.5 * std::exp(-t / d.t_q - 3.0 * t / d.t_r));
}

TEST_CASE("two-qudit trajectories stay close to the product decay law") {
  TwoSystemParams p = pair_params(4);
  DecoherenceParams d{1e-6, 10e-6};
  int n = 2;
  InteractionSequence s = interaction_two_qudit_sequence(p, n, d);
  QuantumState in = QuantumState::basis(s.dims, {0, 0, n, n});
  Vec target = closed_system_final(interaction_two_qudit_sequence(p, n, DecoherenceParams{}),
                                   in);
  TrajectoryRun r = run_trajectories(s, in, target, 512, 31);
  double t = s.total_duration;
  double law = std::exp(-t / d.t_q - 2.0 * n * t / d.t_r);
  REQUIRE(r.total_jumps > 0);
  REQUIRE(std::abs(r.mean - law) < 0.05);
}

TEST_CASE("trajectory run serializes its estimators") {
  SystemParams p = section_params(4);
  InteractionSequence s = interaction_single_qudit_sequence(p, 0, DecoherenceParams{});
  QuantumState in = QuantumState::basis(p.dims(), {0, 0});
  TrajectoryRun r = run_trajectories(s, in, closed_system_final(s, in), 8, 42);
  nlohmann::json o = trajectory_run_to_json(r);
  REQUIRE(o["n_trajectories"] == 8);
  REQUIRE(o["seed"] == 42);
  REQUIRE(o["mean"].get<double>() == Catch::Approx(1.0).margin(1e-6));
  REQUIRE(o["jumps_per_channel"].size() == 2);
}
