#pragma once

// Batch experiment front-end: flat unit-suffixed JSON configs are normalized
// to rad/s and seconds, dispatched to the library modules, and written out as
// plot-ready CSV/JSON artifacts plus a manifest.  The CLI binary is a thin
// argument-parsing wrapper around run_experiment / validate_config.

#include "rqs/opensys.hpp"
#include "rqs/propagator.hpp"
#include "rqs/synth.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace rqs {

struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Unit normalization.  Keys carry their unit as a suffix; normalization
// rewrites frequencies to *_rad_s and times to *_s.  Already-normalized keys
// pass through unchanged, so normalize(normalize(x)) == normalize(x) and the
// echoed config re-parses to identical values.

namespace detail {

inline bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

inline nlohmann::json scale_value(const nlohmann::json& v, double factor,
                                  const std::string& key) {
  if (v.is_number()) return v.get<double>() * factor;
  if (v.is_array()) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& e : v) {
      if (!e.is_number())
        throw validation_error("config key '" + key + "': array entries must be numbers");
      out.push_back(e.get<double>() * factor);
    }
    return out;
  }
  throw validation_error("config key '" + key + "' must be a number or numeric array");
}

}  // namespace detail

inline nlohmann::json normalize_config(const nlohmann::json& in) {
  if (!in.is_object()) throw validation_error("config must be a JSON object");
  struct Rule {
    const char* suffix;
    double factor;
    const char* canonical;
  };
  static const Rule rules[] = {
      {"_GHz", kTwoPi * 1e9, "_rad_s"}, {"_MHz", kTwoPi * 1e6, "_rad_s"},
      {"_rad_s", 1.0, "_rad_s"},        {"_ns", 1e-9, "_s"},
      {"_us", 1e-6, "_s"},              {"_s", 1.0, "_s"},
  };
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [key, value] : in.items()) {
    bool matched = false;
    for (const auto& r : rules) {
      if (!detail::ends_with(key, r.suffix)) continue;
      std::string base = key.substr(0, key.size() - std::string(r.suffix).size());
      std::string canonical = base + r.canonical;
      if (out.contains(canonical))
        throw validation_error("config: '" + canonical + "' given in more than one unit");
      out[canonical] = detail::scale_value(value, r.factor, key);
      matched = true;
      break;
    }
    if (!matched) out[key] = value;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Config container and parameter extraction.

struct ExperimentConfig {
  std::string kind;
  nlohmann::json n;  // normalized: rad/s, seconds
  std::uint64_t seed = 0;
  int threads = 1;
  std::string out_dir = ".";
};

namespace detail {

inline double num(const nlohmann::json& n, const std::string& key) {
  if (!n.contains(key) || !n[key].is_number())
    throw validation_error("config: missing numeric key '" + key + "'");
  return n[key].get<double>();
}

inline std::vector<double> num_list(const nlohmann::json& n, const std::string& key) {
  if (!n.contains(key)) throw validation_error("config: missing key '" + key + "'");
  if (n[key].is_number()) return {n[key].get<double>()};
  if (n[key].is_array()) {
    std::vector<double> out;
    for (const auto& e : n[key]) out.push_back(e.get<double>());
    return out;
  }
  throw validation_error("config: key '" + key + "' must be a number or array");
}

}  // namespace detail

inline const std::set<std::string>& experiment_kinds() {
  static const std::set<std::string> kinds = {"spectrum",     "stark",      "gate",
                                              "two-qudit",    "trajectories", "synthesize",
                                              "readout"};
  return kinds;
}

inline ExperimentConfig parse_config(const nlohmann::json& raw) {
  ExperimentConfig cfg;
  cfg.n = normalize_config(raw);
  if (!cfg.n.contains("experiment") || !cfg.n["experiment"].is_string())
    throw validation_error("config: missing 'experiment' kind");
  cfg.kind = cfg.n["experiment"].get<std::string>();
  if (!experiment_kinds().count(cfg.kind))
    throw validation_error("config: unknown experiment kind '" + cfg.kind + "'");
  cfg.seed = cfg.n.value("seed", std::uint64_t(0));
  cfg.threads = cfg.n.value("threads", 1);
  cfg.out_dir = cfg.n.value("out_dir", std::string("."));
  if (cfg.threads < 1) throw validation_error("config: threads must be >= 1");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw io_error("cannot open config file: " + path);
  nlohmann::json raw;
  try {
    is >> raw;
  } catch (const nlohmann::json::exception& e) {
    throw validation_error(std::string("config parse error: ") + e.what());
  }
  return parse_config(raw);
}

inline SystemParams system_from_config(const nlohmann::json& n, const std::string& prefix = "") {
  SystemParams p;
  p.omega01 = detail::num(n, prefix + "omega01_rad_s");
  p.omega12 = detail::num(n, prefix + "omega12_rad_s");
  p.omega_r = detail::num(n, prefix + "omega_r_rad_s");
  p.g = detail::num(n, prefix + "g_rad_s");
  p.lambda = n.value(prefix + "lambda", std::sqrt(2.0));
  p.atom_levels = n.value(prefix + "atom_levels", 3);
  p.resonator_levels = n.value(prefix + "resonator_levels", 10);
  if (n.contains(prefix + "omega23_rad_s"))
    p.omega23 = detail::num(n, prefix + "omega23_rad_s");
  if (n.contains(prefix + "mu23")) p.mu23 = n[prefix + "mu23"].get<double>();
  p.validate();
  return p;
}

inline TwoSystemParams two_system_from_config(const nlohmann::json& n) {
  TwoSystemParams p;
  p.a = system_from_config(n, "a_");
  p.b = system_from_config(n, "b_");
  p.g_ab = detail::num(n, "g_ab_rad_s");
  p.validate();
  return p;
}

inline DecoherenceParams decoherence_from_config(const nlohmann::json& n) {
  DecoherenceParams d;
  if (n.contains("t_q_s")) d.t_q = detail::num(n, "t_q_s");
  if (n.contains("t_r_s")) d.t_r = detail::num(n, "t_r_s");
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Artifact plumbing.

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::ofstream open_artifact(const std::filesystem::path& dir, const std::string& name) {
  std::ofstream os(dir / name);
  if (!os) throw io_error("cannot write artifact: " + (dir / name).string());
  os.precision(17);
  return os;
}

// Deterministic standard normal built on the portable uniform; the standard
// library's distribution adaptors are implementation-defined.
inline double gauss(std::mt19937_64& rng) {
  double u1 = 0.0;
  while (u1 == 0.0) u1 = uniform01(rng);
  double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
}

inline Mat haar_unitary(long d, std::mt19937_64& rng) {
  Mat a(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) a(i, j) = cx(gauss(rng), gauss(rng));
  Eigen::HouseholderQR<Mat> qr(a);
  Mat q = qr.householderQ();
  Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (long c = 0; c < d; ++c) {
    cx rc = r(c, c);
    q.col(c) *= (rc == cx(0.0) ? cx(1.0) : rc / std::abs(rc));
  }
  return q;
}

inline std::vector<double> linspace(double a, double b, int npts) {
  if (npts < 2) throw validation_error("sweep needs at least 2 points");
  std::vector<double> g(size_t(npts), 0.0);
  for (int i = 0; i < npts; ++i) g[size_t(i)] = a + (b - a) * double(i) / double(npts - 1);
  return g;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Per-kind runners.  Each returns the artifact file names it wrote.

namespace detail {

inline std::vector<std::string> run_spectrum(const ExperimentConfig& cfg,
                                             const std::filesystem::path& dir) {
  SystemParams p = system_from_config(cfg.n);
  std::string vary_key = cfg.n.value("sweep_parameter", std::string("omega01"));
  SweepParameter vary;
  if (vary_key == "omega01") vary = SweepParameter::omega01;
  else if (vary_key == "omega_r") vary = SweepParameter::omega_r;
  else throw validation_error("config: sweep_parameter must be omega01 or omega_r");

  auto grid = linspace(num(cfg.n, "sweep_start_rad_s"), num(cfg.n, "sweep_stop_rad_s"),
                       cfg.n.value("sweep_points", 201));
  SweepResult r = sweep_spectrum(p, vary, grid, cfg.threads);
  r.anticrossings = find_anticrossings(r);

  {
    auto os = open_artifact(dir, "spectrum.csv");
    write_sweep_csv(r, os);
  }
  nlohmann::json ac = nlohmann::json::array();
  for (const auto& a : r.anticrossings) {
    ac.push_back({{"location_rad_s", a.location},
                  {"gap_rad_s", a.gap},
                  {"lower", std::to_string(a.lower.q) + ":" + std::to_string(a.lower.n)},
                  {"upper", std::to_string(a.upper.q) + ":" + std::to_string(a.upper.n)}});
  }
  open_artifact(dir, "anticrossings.json") << ac.dump(2) << "\n";
  return {"spectrum.csv", "anticrossings.json"};
}

inline std::vector<std::string> run_stark(const ExperimentConfig& cfg,
                                          const std::filesystem::path& dir) {
  SystemParams p = system_from_config(cfg.n);
  int nmax = cfg.n.value("fock_max", 5);
  if (nmax + 1 >= p.resonator_levels)
    throw validation_error("config: fock_max needs resonator_levels >= fock_max + 2");
  auto grid = linspace(num(cfg.n, "sweep_start_rad_s"), num(cfg.n, "sweep_stop_rad_s"),
                       cfg.n.value("sweep_points", 201));

  std::vector<std::vector<double>> numeric(size_t(nmax) + 1);
  for (int n = 0; n <= nmax; ++n) numeric[size_t(n)] = stark_shift_numeric(p, n, grid);

  auto os = open_artifact(dir, "stark.csv");
  os << "omega01_rad_s";
  for (int n = 0; n <= nmax; ++n) os << ",numeric_" << n << "_rad_s";
  for (int n = 0; n <= nmax; ++n) os << ",perturbative_" << n << "_rad_s";
  os << "\n";
  for (size_t i = 0; i < grid.size(); ++i) {
    os << grid[i];
    for (int n = 0; n <= nmax; ++n) os << "," << numeric[size_t(n)][i];
    for (int n = 0; n <= nmax; ++n) {
      double v = std::numeric_limits<double>::quiet_NaN();
      try {
        v = stark_shift_perturbative(p.with_omega01(grid[i]), n);
      } catch (const validation_error&) {
      }
      os << "," << v;
    }
    os << "\n";
  }
  return {"stark.csv"};
}

inline std::vector<std::string> run_gate(const ExperimentConfig& cfg,
                                         const std::filesystem::path& dir) {
  SystemParams p = system_from_config(cfg.n);
  int j = cfg.n.value("fock_j", 0);
  double angle = cfg.n.value("angle_rad", 0.5 * kPi);
  double phase = cfg.n.value("phase_rad", 0.0);
  Schedule s = build_single_qudit_sequence(p, j, angle, phase);

  {
    auto os = open_artifact(dir, "waveform.csv");
    write_waveform_csv(s, os);
  }
  open_artifact(dir, "schedule.json") << schedule_to_json(s).dump(2) << "\n";

  PropagatorOptions opts;
  opts.threads = cfg.threads;
  GateReport rep = gate_tomography(p, s, {{0, j}, {0, j + 1}}, true, opts);
  Mat ideal(2, 2);
  double c = std::cos(angle), sn = std::sin(angle);
  ideal << c, -kI * std::exp(kI * phase) * sn, -kI * std::exp(-kI * phase) * sn, c;

  nlohmann::json rj;
  rj["total_duration_s"] = s.total_duration;
  rj["fock_pair"] = {j, j + 1};
  rj["survival"] = {rep.survival(0), rep.survival(1)};
  rj["min_survival"] = rep.min_survival;
  rj["probe_phase_rad"] = rep.probe_phases.size() > 1 ? rep.probe_phases[1] : 0.0;
  rj["process_fidelity"] = process_fidelity(rep.process, ideal);
  open_artifact(dir, "gate_report.json") << rj.dump(2) << "\n";

  // Population trace from the lower dressed input across the sequence.
  DressedFrame f = dressed_frame(p);
  std::vector<StateLabel> track = {{0, j}, {0, j + 1}, {1, j}, {2, j}, {1, j + 1}};
  Mat basis(f.eig.values.size(), long(track.size()));
  for (size_t m = 0; m < track.size(); ++m)
    basis.col(long(m)) = dressed_state(f, track[m].q, track[m].n);
  QuantumState init(basis.col(0), p.dims());
  SimulationTrace tr = run_schedule(p, s, init, basis);
  auto os = open_artifact(dir, "trace.csv");
  os << "t_s";
  for (const auto& l : track) os << ",p_q" << l.q << "_n" << l.n;
  os << "\n";
  for (size_t i = 0; i < tr.times.size(); ++i) {
    os << tr.times[i];
    for (long k = 0; k < tr.probs[i].size(); ++k) os << "," << tr.probs[i](k);
    os << "\n";
  }
  return {"waveform.csv", "schedule.json", "gate_report.json", "trace.csv"};
}

inline std::vector<std::string> run_two_qudit(const ExperimentConfig& cfg,
                                              const std::filesystem::path& dir) {
  TwoSystemParams p = two_system_from_config(cfg.n);
  int j = cfg.n.value("fock_j", 0);
  int k = cfg.n.value("fock_k", 0);
  double theta = cfg.n.value("theta_rad", kPi);
  Schedule s = build_two_qudit_sequence(p, j, k, theta);

  {
    auto os = open_artifact(dir, "waveform.csv");
    write_waveform_csv(s, os);
  }
  open_artifact(dir, "schedule.json") << schedule_to_json(s).dump(2) << "\n";

  // The four corners of the {j, j+1} x {k, k+1} Fock square the gate acts on;
  // probes measure phases against the (j, k) corner.
  std::vector<std::array<int, 2>> pairs = {
      {j, k}, {j, k + 1}, {j + 1, k}, {j + 1, k + 1}};
  PropagatorOptions opts;
  opts.threads = cfg.threads;
  GateReport rep = gate_tomography(p, s, pairs, true, opts);

  nlohmann::json rj;
  rj["total_duration_s"] = s.total_duration;
  rj["theta_rad"] = theta;
  nlohmann::json basis = nlohmann::json::array(), survival = nlohmann::json::array(),
                 phases = nlohmann::json::array();
  for (size_t m = 0; m < pairs.size(); ++m) {
    basis.push_back({pairs[m][0], pairs[m][1]});
    survival.push_back(rep.survival(long(m)));
    phases.push_back(m < rep.probe_phases.size() ? rep.probe_phases[m] : 0.0);
  }
  rj["fock_pairs"] = basis;
  rj["survival"] = survival;
  rj["probe_phases_rad"] = phases;
  if (pairs.size() == 4) {
    double inv = rep.probe_phases[3] - rep.probe_phases[1] - rep.probe_phases[2];
    rj["phase_invariant_rad"] = std::remainder(inv, kTwoPi);
  }
  open_artifact(dir, "two_qudit_report.json") << rj.dump(2) << "\n";
  return {"waveform.csv", "schedule.json", "two_qudit_report.json"};
}

inline std::vector<std::string> run_trajectories_experiment(const ExperimentConfig& cfg,
                                                            const std::filesystem::path& dir) {
  std::string model = cfg.n.value("model", std::string("single"));
  int n_traj = cfg.n.value("n_trajectories", 1024);
  int fock_max = cfg.n.value("fock_max", 7);
  auto tq = num_list(cfg.n, "t_q_s");
  auto tr = num_list(cfg.n, "t_r_s");
  if (tq.size() != tr.size())
    throw validation_error("config: t_q and t_r setting lists must have equal length");

  TrajectoryOptions topts;
  topts.threads = cfg.threads;

  auto os = open_artifact(dir, "trajectories.csv");
  os << "t_q_s,t_r_s,n,mean,std_error,total_jumps\n";
  nlohmann::json runs = nlohmann::json::array();

  for (size_t si = 0; si < tq.size(); ++si) {
    DecoherenceParams d{tq[si], tr[si]};
    d.validate();
    for (int n = 0; n <= fock_max; ++n) {
      std::uint64_t run_seed =
          splitmix64(cfg.seed ^ splitmix64(std::uint64_t(si) * 4096 + std::uint64_t(n) + 1));
      TrajectoryRun r;
      if (model == "single") {
        SystemParams p = system_from_config(cfg.n);
        if (fock_max + 2 > p.resonator_levels)
          throw validation_error("config: resonator_levels too small for fock_max");
        InteractionSequence seq = interaction_single_qudit_sequence(p, n, d);
        QuantumState init = QuantumState::basis(p.dims(), {0, n});
        Vec target = QuantumState::basis(p.dims(), {0, n + 1}).amps;
        r = run_trajectories(seq, init, target, n_traj, run_seed, topts);
      } else if (model == "two") {
        TwoSystemParams p = two_system_from_config(cfg.n);
        InteractionSequence seq = interaction_two_qudit_sequence(p, n, d);
        QuantumState init = QuantumState::basis(seq.dims, {0, 0, n, n});
        Vec target =
            closed_system_final(interaction_two_qudit_sequence(p, n, DecoherenceParams{}), init);
        r = run_trajectories(seq, init, target, n_traj, run_seed, topts);
      } else {
        throw validation_error("config: model must be 'single' or 'two'");
      }
      os << tq[si] << "," << tr[si] << "," << n << "," << r.mean << "," << r.std_error << ","
         << r.total_jumps << "\n";
      nlohmann::json rj = trajectory_run_to_json(r);
      rj["t_q_s"] = tq[si];
      rj["t_r_s"] = tr[si];
      rj["n"] = n;
      runs.push_back(std::move(rj));
    }
  }
  open_artifact(dir, "trajectories.json") << runs.dump(2) << "\n";
  return {"trajectories.csv", "trajectories.json"};
}

inline std::vector<std::string> run_synthesize(const ExperimentConfig& cfg,
                                               const std::filesystem::path& dir) {
  Mat u;
  if (cfg.n.contains("unitary_file")) {
    std::ifstream is(cfg.n["unitary_file"].get<std::string>());
    if (!is) throw io_error("cannot open unitary file");
    nlohmann::json uj;
    try {
      is >> uj;
    } catch (const nlohmann::json::exception& e) {
      throw validation_error(std::string("unitary parse error: ") + e.what());
    }
    u = unitary_from_json(uj);
  } else {
    long d = cfg.n.value("dimension", 4);
    if (d < 2 || d > 64) throw validation_error("config: dimension must be in [2, 64]");
    std::mt19937_64 rng(splitmix64(cfg.seed + 1));
    u = haar_unitary(d, rng);
  }

  GateList raw = qr_decompose(u);
  GateList routed = route_to_neighbors(raw);
  double raw_err = (gate_list_matrix(raw) - u).cwiseAbs().maxCoeff();
  double routed_err = (gate_list_matrix(routed) - u).cwiseAbs().maxCoeff();
  if (raw_err > 1e-9 || routed_err > 1e-9)
    throw numerical_error("synthesize: reconstruction error above tolerance");

  open_artifact(dir, "unitary.json") << unitary_to_json(u).dump() << "\n";
  open_artifact(dir, "gate_list.json") << gate_list_to_json(raw).dump(2) << "\n";
  open_artifact(dir, "routed_gate_list.json") << gate_list_to_json(routed).dump(2) << "\n";
  nlohmann::json rj;
  rj["dimension"] = raw.dimension;
  rj["raw_factor_count"] = raw.gates.size();
  rj["routed_factor_count"] = routed.gates.size();
  rj["raw_reconstruction_error"] = raw_err;
  rj["routed_reconstruction_error"] = routed_err;
  open_artifact(dir, "synth_report.json") << rj.dump(2) << "\n";
  return {"unitary.json", "gate_list.json", "routed_gate_list.json", "synth_report.json"};
}

inline std::vector<std::string> run_readout(const ExperimentConfig& cfg,
                                            const std::filesystem::path& dir) {
  SystemParams p = system_from_config(cfg.n);
  int comps = cfg.n.value("components", 6);
  if (comps < 2 || comps > p.resonator_levels)
    throw validation_error("config: components must be in [2, resonator_levels]");

  Vec amps = Vec::Zero(p.resonator_levels);
  if (cfg.n.contains("amplitudes_re")) {
    auto re = num_list(cfg.n, "amplitudes_re");
    auto im = num_list(cfg.n, "amplitudes_im");
    if (re.size() != im.size() || long(re.size()) > p.resonator_levels)
      throw validation_error("config: bad amplitude arrays");
    for (size_t i = 0; i < re.size(); ++i) amps(long(i)) = cx(re[i], im[i]);
  } else {
    std::mt19937_64 rng(splitmix64(cfg.seed + 1));
    for (int i = 0; i < comps; ++i) amps(i) = cx(gauss(rng), gauss(rng));
  }
  amps /= amps.norm();
  QuantumState state(amps, {p.resonator_levels});

  double duration = cfg.n.value("duration_s", 6.0 * kPi / p.g);
  ReadoutTrace tr = simulate_rabi_readout(p, state, duration);
  std::vector<double> fit = fit_fock_populations(tr, comps - 1);

  {
    auto os = open_artifact(dir, "readout_trace.csv");
    os << "t_s,p_excited\n";
    for (size_t i = 0; i < tr.times.size(); ++i)
      os << tr.times[i] << "," << tr.p_excited[i] << "\n";
  }
  nlohmann::json rj;
  double max_err = 0.0;
  nlohmann::json truth = nlohmann::json::array(), rec = nlohmann::json::array();
  for (int n = 0; n < comps; ++n) {
    double t = std::norm(amps(n));
    truth.push_back(t);
    rec.push_back(fit[size_t(n)]);
    max_err = std::max(max_err, std::abs(t - fit[size_t(n)]));
  }
  rj["true_populations"] = truth;
  rj["recovered_populations"] = rec;
  rj["max_abs_error"] = max_err;
  rj["duration_s"] = duration;
  open_artifact(dir, "readout_report.json") << rj.dump(2) << "\n";
  return {"readout_trace.csv", "readout_report.json"};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dispatch, manifest, validation.

inline int run_experiment(const ExperimentConfig& cfg, std::ostream& log = std::cout) {
  auto t0 = std::chrono::steady_clock::now();
  std::filesystem::path dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw io_error("cannot create output directory: " + cfg.out_dir);

  std::vector<std::string> artifacts;
  if (cfg.kind == "spectrum") artifacts = detail::run_spectrum(cfg, dir);
  else if (cfg.kind == "stark") artifacts = detail::run_stark(cfg, dir);
  else if (cfg.kind == "gate") artifacts = detail::run_gate(cfg, dir);
  else if (cfg.kind == "two-qudit") artifacts = detail::run_two_qudit(cfg, dir);
  else if (cfg.kind == "trajectories") artifacts = detail::run_trajectories_experiment(cfg, dir);
  else if (cfg.kind == "synthesize") artifacts = detail::run_synthesize(cfg, dir);
  else if (cfg.kind == "readout") artifacts = detail::run_readout(cfg, dir);
  else throw validation_error("unknown experiment kind: " + cfg.kind);

  auto wall =
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0);
  nlohmann::json manifest;
  manifest["experiment"] = cfg.kind;
  manifest["config_hash"] = detail::hex64(detail::fnv1a64(cfg.n.dump()));
  manifest["seed"] = cfg.seed;
  manifest["artifacts"] = artifacts;
  manifest["wall_time_ms"] = wall.count();
  manifest["versions"] = {{"library", "1.0.0"},
                          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION)}};
  detail::open_artifact(dir, "manifest.json") << manifest.dump(2) << "\n";
  log << cfg.kind << ": wrote " << artifacts.size() << " artifact(s) to " << cfg.out_dir << "\n";
  return 0;
}

// Parameter echo plus pre-run feasibility flags; throws validation_error on
// malformed configs, reports soft issues as flags.
inline nlohmann::json validate_config(const ExperimentConfig& cfg) {
  nlohmann::json report;
  report["experiment"] = cfg.kind;
  report["normalized"] = cfg.n;
  nlohmann::json flags = nlohmann::json::array();

  auto check_single = [&](const std::string& prefix) {
    SystemParams p = system_from_config(cfg.n, prefix);
    try {
      dispersive_guard(p);
    } catch (const validation_error& e) {
      flags.push_back(prefix + "selectivity: " + e.what());
    }
    return p;
  };

  if (cfg.kind == "two-qudit") {
    two_system_from_config(cfg.n);
    check_single("a_");
    check_single("b_");
  } else if (cfg.kind == "trajectories") {
    auto tq = detail::num_list(cfg.n, "t_q_s");
    auto tr = detail::num_list(cfg.n, "t_r_s");
    for (size_t i = 0; i < std::min(tq.size(), tr.size()); ++i)
      DecoherenceParams{tq[i], tr[i]}.validate();
    if (cfg.n.value("model", std::string("single")) == "two")
      two_system_from_config(cfg.n);
    else
      system_from_config(cfg.n);
  } else if (cfg.kind == "synthesize") {
    // nothing beyond the shared keys
  } else {
    check_single("");
  }
  report["flags"] = flags;
  return report;
}

}  // namespace rqs
