#include "rqs/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <sstream>

using namespace rqs;

namespace {

constexpr double GHz = kTwoPi * 1e9;

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

Mat haar_unitary(int d, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Mat z(d, d);
  for (int r = 0; r < d; ++r)
    for (int c = 0; c < d; ++c) z(r, c) = cx(gauss(rng), gauss(rng));
  Eigen::HouseholderQR<Mat> qr(z);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int c = 0; c < d; ++c) q.col(c) *= r(c, c) / std::abs(r(c, c));
  return q;
}

// Largest span among x/composite factors, 0 if none.
int max_span(const GateList& g) {
  int s = 0;
  for (const auto& spec : g.gates)
    if (spec.kind == RotationKind::x || spec.kind == RotationKind::composite)
      s = std::max(s, spec.span());
  return s;
}

}  // namespace

TEST_CASE("x rotation matrix is unitary and closes at 4 pi") {
  RotationSpec x{RotationKind::x, 0, 1, kPi / 3.0, 0.0, 0.0};
  Mat u = rotation_matrix(x, 4);
  REQUIRE((u.adjoint() * u - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);

  // A 2 pi two-level rotation is -1 on the subspace, identity elsewhere.
  Mat full = rotation_matrix({RotationKind::x, 0, 1, kTwoPi, 0.0, 0.0}, 4);
  Mat expect = Mat::Identity(4, 4);
  expect(0, 0) = expect(1, 1) = -1.0;
  REQUIRE((full - expect).cwiseAbs().maxCoeff() < 1e-14);

  Mat twice = rotation_matrix({RotationKind::x, 0, 1, 2.0 * kTwoPi, 0.0, 0.0}, 4);
  REQUIRE((twice - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("composite with zero phi reduces to the x rotation") {
  double lambda = 0.77;
  Mat a = rotation_matrix({RotationKind::composite, 1, 3, 0.0, lambda, 0.0}, 5);
  Mat b = rotation_matrix({RotationKind::x, 1, 3, 2.0 * lambda, 0.0, 0.0}, 5);
  REQUIRE((a - b).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("composite equals its z-x-z factorization") {
  double lambda = 0.6, phi = 1.9;
  Mat zplus = rotation_matrix({RotationKind::z, 0, 2, phi, 0.0, 0.0}, 4);
  Mat x = rotation_matrix({RotationKind::x, 0, 2, 2.0 * lambda, 0.0, 0.0}, 4);
  Mat zminus = rotation_matrix({RotationKind::z, 0, 2, -phi, 0.0, 0.0}, 4);
  Mat composite = rotation_matrix({RotationKind::composite, 0, 2, 0.0, lambda, phi}, 4);
  REQUIRE((composite - zplus * x * zminus).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("controlled phase acts on one joint level of the product space") {
  double theta = 1.1;
  Mat u = rotation_matrix({RotationKind::controlled_phase, 1, 1, theta, 0.0, 0.0}, 3);
  REQUIRE(u.rows() == 9);
  for (long i = 0; i < 9; ++i)
    for (long j = 0; j < 9; ++j) {
      cx expect = i != j ? 0.0 : (i == 4 ? std::exp(-kI * theta) : cx(1.0));
      REQUIRE(std::abs(u(i, j) - expect) < 1e-14);
    }
}

TEST_CASE("rotation specs reject bad level indices") {
  REQUIRE_THROWS_AS(rotation_matrix({RotationKind::x, 2, 2, 1.0, 0.0, 0.0}, 4),
                    validation_error);
  REQUIRE_THROWS_AS(rotation_matrix({RotationKind::x, 0, 4, 1.0, 0.0, 0.0}, 4),
                    validation_error);
  REQUIRE_THROWS_AS(rotation_matrix({RotationKind::z, -1, 1, 1.0, 0.0, 0.0}, 4),
                    validation_error);
}

TEST_CASE("qr_decompose of the identity is an empty list") {
  GateList g = qr_decompose(Mat::Identity(5, 5));
  REQUIRE(g.gates.empty());
  REQUIRE(std::abs(g.global_phase) < 1e-12);
}

TEST_CASE("qr_decompose rejects non-unitary input") {
  Mat m = Mat::Identity(3, 3);
  m(0, 1) = 0.1;
  REQUIRE_THROWS_AS(qr_decompose(m), validation_error);
}

TEST_CASE("qr_decompose of a diagonal unitary emits only the phase layer") {
  Mat d = Mat::Zero(4, 4);
  d(0, 0) = std::exp(kI * 0.3);
  d(1, 1) = std::exp(kI * 1.1);
  d(2, 2) = std::exp(-kI * 0.7);
  d(3, 3) = std::exp(kI * 2.2);
  GateList g = qr_decompose(d);
  for (const auto& spec : g.gates) REQUIRE(spec.kind == RotationKind::z);
  REQUIRE((gate_list_matrix(g) - d).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("qr_decompose reconstructs Haar unitaries within the factor budget") {
  std::mt19937_64 rng(42);
  for (int d = 2; d <= 8; ++d) {
    for (int rep = 0; rep < 8; ++rep) {
      Mat u = haar_unitary(d, rng);
      GateList g = qr_decompose(u);
      int composites = 0, zs = 0;
      for (const auto& spec : g.gates) {
        if (spec.kind == RotationKind::composite) ++composites;
        if (spec.kind == RotationKind::z) ++zs;
      }
      REQUIRE(composites <= d * (d - 1) / 2);
      REQUIRE(zs <= d - 1);
      REQUIRE((gate_list_matrix(g) - u).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("qr_decompose at d = 2 is a z-x-z single-qubit factorization") {
  std::mt19937_64 rng(7);
  Mat u = haar_unitary(2, rng);
  GateList g = qr_decompose(u);
  int composites = 0;
  for (const auto& spec : g.gates)
    if (spec.kind == RotationKind::composite) ++composites;
  REQUIRE(composites <= 1);
  REQUIRE(g.gates.size() <= 2);
  REQUIRE((gate_list_matrix(g) - u).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("routing leaves adjacent lists unchanged") {
  GateList g;
  g.dimension = 4;
  g.gates.push_back({RotationKind::x, 0, 1, 0.4, 0.0, 0.0});
  g.gates.push_back({RotationKind::z, 0, 3, 1.2, 0.0, 0.0});
  g.gates.push_back({RotationKind::composite, 2, 3, 0.0, 0.8, 0.3});
  GateList r = route_to_neighbors(g);
  REQUIRE(r.gates.size() == g.gates.size());
  REQUIRE((gate_list_matrix(r) - gate_list_matrix(g)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("routing expands spans within the swap-layer budget") {
  for (int d : {4, 6, 8}) {
    for (int span = 2; span < d; ++span) {
      GateList g;
      g.dimension = d;
      g.gates.push_back({RotationKind::x, 0, span, 1.234, 0.0, 0.0});
      GateList r = route_to_neighbors(g);
      int swap_layer = 0, central = 0;
      for (const auto& spec : r.gates) {
        REQUIRE((spec.adjacent() || spec.kind == RotationKind::z));
        if (std::abs(std::abs(spec.theta) - kPi) < 1e-12 && spec.kind != RotationKind::z)
          ++swap_layer;
        else if (spec.kind == RotationKind::x && spec.j == span - 1)
          ++central;
        else
          REQUIRE(spec.kind == RotationKind::z);
      }
      REQUIRE(central == 1);
      REQUIRE(int(r.gates.size()) <= 4 * span - 1 + 1);
      REQUIRE((gate_list_matrix(r) - gate_list_matrix(g)).cwiseAbs().maxCoeff() < 1e-9);
    }
  }
}

TEST_CASE("routing a span-2 rotation yields the shift-conjugated ladder") {
  GateList g;
  g.dimension = 4;
  g.gates.push_back({RotationKind::x, 0, 2, 0.9, 0.0, 0.0});
  GateList r = route_to_neighbors(g);
  REQUIRE(r.gates.size() == 5);  // shift (x, z), central, unshift (z, x)
  REQUIRE(r.gates[0].kind == RotationKind::x);
  REQUIRE(r.gates[1].kind == RotationKind::z);
  REQUIRE(r.gates[2].kind == RotationKind::x);
  REQUIRE(r.gates[2].j == 1);
  REQUIRE(r.gates[2].k == 2);
  REQUIRE(r.gates[2].theta == Catch::Approx(0.9));
  REQUIRE((gate_list_matrix(r) - gate_list_matrix(g)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("routing conjugates composite rotations exactly") {
  GateList g;
  g.dimension = 5;
  g.gates.push_back({RotationKind::composite, 0, 3, 0.0, 0.7, -1.1});
  GateList r = route_to_neighbors(g);
  REQUIRE(max_span(r) == 1);
  REQUIRE((gate_list_matrix(r) - gate_list_matrix(g)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decompose, route, reconstruct round-trips Haar unitaries") {
  std::mt19937_64 rng(2024);
  for (int d : {3, 5, 6}) {
    Mat u = haar_unitary(d, rng);
    GateList r = route_to_neighbors(qr_decompose(u));
    REQUIRE(max_span(r) <= 1);
    REQUIRE((gate_list_matrix(r) - u).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("empty gate list lowers to an empty schedule") {
  GateList g;
  g.dimension = 4;
  Schedule s = lower_to_schedule(g, gate_params());
  REQUIRE(s.total_duration == 0.0);
  REQUIRE(s.drive_a.empty());
  REQUIRE(s.flux_a.empty());
  REQUIRE(s.annotations.empty());
}

TEST_CASE("a pi x-rotation lowers to the standard swap sequence") {
  SystemParams p = gate_params();
  GateList g;
  g.dimension = 4;
  g.gates.push_back({RotationKind::x, 0, 1, kPi, 0.0, 0.0});
  Schedule s = lower_to_schedule(g, p);
  Schedule ref = build_single_qudit_sequence(p, 0, kPi / 2.0);
  REQUIRE(s.total_duration == Catch::Approx(ref.total_duration));
  REQUIRE(s.drive_a.size() == ref.drive_a.size());
  REQUIRE(s.flux_a.size() == ref.flux_a.size());
  REQUIRE(s.annotations.size() == ref.annotations.size());
}

TEST_CASE("lowered schedules realize the gate list exactly at the ideal level") {
  SystemParams p = gate_params(6);
  std::mt19937_64 rng(99);
  int d = 4;
  Mat u = haar_unitary(d, rng);
  GateList r = route_to_neighbors(qr_decompose(u));
  Schedule s = lower_to_schedule(r, p);
  Mat ideal = ideal_annotation_product(p, s);

  // The computational block of the lowered product must equal the abstract
  // matrix; atom-ground Fock states above the qudit must be untouched. (The
  // atom-excited rows are scratch space for the encode/decode factors.)
  Mat block(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) block(a, b) = ideal(bare_index(p, 0, a), bare_index(p, 0, b));
  REQUIRE((block - u).cwiseAbs().maxCoeff() < 1e-9);
  long dim = ideal.rows();
  for (int n = d; n < p.resonator_levels; ++n) {
    long c = bare_index(p, 0, n);
    for (long r2 = 0; r2 < dim; ++r2)
      REQUIRE(std::abs(ideal(r2, c) - (r2 == c ? 1.0 : 0.0)) < 1e-9);
  }
}

TEST_CASE("z rotations lower to pure frame updates") {
  SystemParams p = gate_params();
  GateList g;
  g.dimension = 4;
  double theta = 0.85;
  g.gates.push_back({RotationKind::z, 0, 2, theta, 0.0, 0.0});
  Schedule s = lower_to_schedule(g, p);
  REQUIRE(s.total_duration == 0.0);
  REQUIRE(s.drive_a.empty());
  Mat ideal = ideal_annotation_product(p, s);
  Mat expect = Mat::Identity(ideal.rows(), ideal.cols());
  long i0 = bare_index(p, 0, 0), i2 = bare_index(p, 0, 2);
  expect(i0, i0) = std::exp(-kI * theta / 2.0);
  expect(i2, i2) = std::exp(kI * theta / 2.0);
  REQUIRE((ideal - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("single-qudit lowering rejects unrouted and controlled-phase factors") {
  SystemParams p = gate_params();
  GateList wide;
  wide.dimension = 4;
  wide.gates.push_back({RotationKind::x, 0, 2, 1.0, 0.0, 0.0});
  REQUIRE_THROWS_AS(lower_to_schedule(wide, p), validation_error);

  GateList cp;
  cp.dimension = 3;
  cp.gates.push_back({RotationKind::controlled_phase, 1, 1, kPi, 0.0, 0.0});
  REQUIRE_THROWS_AS(lower_to_schedule(cp, p), validation_error);
}

TEST_CASE("controlled phase lowers to the two-qudit sequence") {
  TwoSystemParams p;
  p.a = gate_params(4);
  p.b = gate_params(4);
  p.b.omega01 = 7.31 * GHz;
  p.b.omega12 = 6.89 * GHz;
  p.b.omega23 = 6.40 * GHz;
  p.g_ab = 0.035 * GHz;

  GateList g;
  g.dimension = 3;
  g.gates.push_back({RotationKind::controlled_phase, 1, 1, kPi, 0.0, 0.0});
  Schedule s = lower_to_schedule(g, p);
  Schedule ref = build_two_qudit_sequence(p, 1, 1, kPi);
  REQUIRE(s.two_qudit);
  REQUIRE(s.total_duration == Catch::Approx(ref.total_duration));
  REQUIRE(s.drive_a.size() == ref.drive_a.size());
  REQUIRE(s.drive_b.size() == ref.drive_b.size());
  REQUIRE(s.annotations.size() == ref.annotations.size());

  GateList single;
  single.dimension = 3;
  single.gates.push_back({RotationKind::x, 0, 1, kPi, 0.0, 0.0});
  REQUIRE_THROWS_AS(lower_to_schedule(single, p), validation_error);
}

TEST_CASE("gate list JSON round-trips") {
  GateList g;
  g.dimension = 5;
  g.global_phase = 0.37;
  g.gates.push_back({RotationKind::x, 0, 1, 1.1, 0.0, 0.0});
  g.gates.push_back({RotationKind::z, 1, 4, -0.6, 0.0, 0.0});
  g.gates.push_back({RotationKind::composite, 2, 3, 0.0, 0.9, 2.2});
  g.gates.push_back({RotationKind::controlled_phase, 1, 2, kPi, 0.0, 0.0});

  nlohmann::json o = gate_list_to_json(g);
  GateList back = gate_list_from_json(o);
  REQUIRE(back.dimension == g.dimension);
  REQUIRE(back.global_phase == g.global_phase);
  REQUIRE(back.gates.size() == g.gates.size());
  for (size_t i = 0; i < g.gates.size(); ++i) {
    REQUIRE(back.gates[i].kind == g.gates[i].kind);
    REQUIRE(back.gates[i].j == g.gates[i].j);
    REQUIRE(back.gates[i].k == g.gates[i].k);
    REQUIRE(back.gates[i].theta == g.gates[i].theta);
    REQUIRE(back.gates[i].lambda == g.gates[i].lambda);
    REQUIRE(back.gates[i].phi == g.gates[i].phi);
  }
}

TEST_CASE("unitary JSON round-trips and validates shape") {
  std::mt19937_64 rng(5);
  Mat u = haar_unitary(3, rng);
  Mat back = unitary_from_json(unitary_to_json(u));
  REQUIRE((back - u).cwiseAbs().maxCoeff() == 0.0);

  nlohmann::json bad = nlohmann::json::array({nlohmann::json::array({1.0, 2.0})});
  REQUIRE_THROWS_AS(unitary_from_json(bad), validation_error);
}
