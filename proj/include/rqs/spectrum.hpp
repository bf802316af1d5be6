#pragma once

// Parameter sweeps of the pair Hamiltonian: eigenvalue tracking across avoided
// crossings, anticrossing location/gap refinement, numeric Stark shifts.

#include "rqs/cqed.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <future>
#include <limits>
#include <ostream>
#include <utility>

namespace rqs {

enum class SweepParameter { omega01, omega_r };

inline SystemParams at_sweep_point(const SystemParams& p, SweepParameter vary, double x) {
  if (vary == SweepParameter::omega01) return p.with_omega01(x);
  SystemParams q = p;
  q.omega_r = x;
  return q;
}

struct StateLabel {
  int q = -1;  // atom level
  int n = -1;  // photon number
  bool valid() const { return q >= 0; }
  bool operator==(const StateLabel&) const = default;
};

struct Anticrossing {
  double location;  // swept parameter value, rad/s
  double gap;       // rad/s
  StateLabel lower, upper;
};

struct SweepResult {
  SystemParams base;
  SweepParameter vary = SweepParameter::omega01;
  std::vector<double> grid;                        // rad/s
  std::vector<Eigen::VectorXd> energies;           // ascending per point
  std::vector<std::vector<StateLabel>> labels;     // labels[i][k] for energies[i][k]
  std::vector<Anticrossing> anticrossings;
};

namespace detail {

inline StateLabel bare_label(const SystemParams& p, long basis_index) {
  int nres = p.resonator_levels;
  return {int(basis_index / nres), int(basis_index % nres)};
}

// Distance of a parameter point from the three resonance conditions, used to
// pick the labeling anchor endpoint.
inline double resonance_distance(const SystemParams& p) {
  return std::min({std::abs(p.omega_r - p.omega01), std::abs(p.omega_r - p.omega12),
                   std::abs(2.0 * p.omega_r - p.omega02())});
}

inline void diagonalize_grid(const SystemParams& p, SweepParameter vary,
                             const std::vector<double>& grid, int threads,
                             std::vector<Eigen::VectorXd>& evals, std::vector<Mat>& evecs) {
  size_t npts = grid.size();
  evals.resize(npts);
  evecs.resize(npts);
  auto work = [&](size_t begin, size_t end) {
    for (size_t i = begin; i < end; ++i) {
      EighResult e = eigh(jc_hamiltonian(at_sweep_point(p, vary, grid[i])));
      evals[i] = std::move(e.values);
      evecs[i] = std::move(e.vectors);
    }
  };
  int nw = std::max(1, threads);
  if (nw == 1 || npts < 8) {
    work(0, npts);
    return;
  }
  std::vector<std::future<void>> futs;
  size_t chunk = (npts + nw - 1) / nw;
  for (int w = 0; w < nw; ++w) {
    size_t b = std::min(npts, w * chunk), e = std::min(npts, (w + 1) * chunk);
    if (b < e) futs.push_back(std::async(std::launch::async, work, b, e));
  }
  for (auto& f : futs) f.get();
}

}  // namespace detail

// Diagonalize at every grid point and assign dressed-state labels by
// maximum-overlap continuation starting from the endpoint farthest from all
// resonances. Grid points diagonalize in parallel; labeling is sequential.
inline SweepResult sweep_spectrum(const SystemParams& p, SweepParameter vary,
                                  const std::vector<double>& grid, int threads = 1) {
  p.validate();
  if (grid.size() < 2) throw validation_error("sweep grid needs at least 2 points");
  for (size_t i = 1; i < grid.size(); ++i)
    if ((grid[i] - grid[i - 1]) * (grid[1] - grid[0]) <= 0.0)
      throw validation_error("sweep grid must be strictly monotone");

  std::vector<Eigen::VectorXd> evals;
  std::vector<Mat> evecs;
  detail::diagonalize_grid(p, vary, grid, threads, evals, evecs);

  size_t npts = grid.size();
  long dim = evals[0].size();
  SweepResult r;
  r.base = p;
  r.vary = vary;
  r.grid = grid;
  r.energies = evals;
  r.labels.assign(npts, std::vector<StateLabel>(dim));

  size_t anchor =
      detail::resonance_distance(at_sweep_point(p, vary, grid.front())) >=
              detail::resonance_distance(at_sweep_point(p, vary, grid.back()))
          ? 0
          : npts - 1;

  // Anchor: each eigenvector takes the label of its dominant bare component.
  {
    std::vector<char> used(dim, 0);
    for (long k = 0; k < dim; ++k) {
      long best = 0;
      evecs[anchor].col(k).cwiseAbs().maxCoeff(&best);
      if (used[best]) throw numerical_error("sweep labeling: anchor assignment is not a bijection");
      used[best] = 1;
      r.labels[anchor][k] = detail::bare_label(at_sweep_point(p, vary, grid[anchor]), best);
    }
  }

  auto continue_from = [&](size_t prev, size_t cur) {
    Eigen::MatrixXd overlap = (evecs[prev].adjoint() * evecs[cur]).cwiseAbs();
    std::vector<char> used(dim, 0);
    for (long k = 0; k < dim; ++k) {
      long best = 0;
      double w = overlap.col(k).maxCoeff(&best);
      if (w * w < 0.5 || used[best])
        throw numerical_error("sweep labeling: grid too coarse near a crossing");
      used[best] = 1;
      r.labels[cur][k] = r.labels[prev][best];
    }
  };
  for (size_t i = anchor; i + 1 < npts; ++i) continue_from(i, i + 1);
  for (size_t i = anchor; i > 0; --i) continue_from(i, i - 1);
  return r;
}

namespace detail {

inline double gap_at(const SystemParams& p, SweepParameter vary, double x, long k) {
  EighResult e = eigh(jc_hamiltonian(at_sweep_point(p, vary, x)));
  return e.values(k + 1) - e.values(k);
}

inline double golden_min(const std::function<double(double)>& f, double a, double b,
                         double rel_tol) {
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - phi * (b - a), d = a + phi * (b - a);
  double fc = f(c), fd = f(d);
  while (std::abs(b - a) > rel_tol * std::max(std::abs(a), std::abs(b))) {
    if (fc < fd) {
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

// Local minima of adjacent-eigenvalue gaps, refined by golden-section search.
inline std::vector<Anticrossing> find_anticrossings(const SweepResult& r, double rel_tol = 1e-6) {
  std::vector<Anticrossing> out;
  size_t npts = r.grid.size();
  long dim = r.energies[0].size();
  for (long k = 0; k + 1 < dim; ++k) {
    for (size_t i = 1; i + 1 < npts; ++i) {
      double gm = r.energies[i - 1](k + 1) - r.energies[i - 1](k);
      double g0 = r.energies[i](k + 1) - r.energies[i](k);
      double gp = r.energies[i + 1](k + 1) - r.energies[i + 1](k);
      if (g0 < gm && g0 <= gp) {
        auto f = [&](double x) { return detail::gap_at(r.base, r.vary, x, k); };
        double lo = r.grid[i - 1], hi = r.grid[i + 1];
        if (lo > hi) std::swap(lo, hi);
        double x = detail::golden_min(f, lo, hi, rel_tol);
        out.push_back({x, f(x), r.labels[i][k], r.labels[i][k + 1]});
      }
    }
  }
  std::sort(out.begin(), out.end(),
            [](const Anticrossing& a, const Anticrossing& b) { return a.location < b.location; });
  return out;
}

// Numeric Stark shift omega01^(n) - omega01 over an omega01 grid. Points where
// the dressed labels cannot be resolved (near crossings) come back as NaN,
// mirroring the diverging perturbative curves.
inline std::vector<double> stark_shift_numeric(const SystemParams& p, int n,
                                               const std::vector<double>& omega01_grid) {
  p.validate();
  if (n + 1 >= p.resonator_levels)
    throw validation_error("stark_shift_numeric: resonator truncation too small for n");
  std::vector<double> out(omega01_grid.size(), std::numeric_limits<double>::quiet_NaN());
  for (size_t i = 0; i < omega01_grid.size(); ++i) {
    SystemParams q = p.with_omega01(omega01_grid[i]);
    EighResult e = eigh(jc_hamiltonian(q));
    long i0 = 0 * q.resonator_levels + n;  // bare |0,n>
    long i1 = 1 * q.resonator_levels + n;  // bare |1,n>
    long k0 = -1, k1 = -1;
    double w0 = 0.0, w1 = 0.0;
    for (long k = 0; k < e.values.size(); ++k) {
      double a0 = std::norm(e.vectors(i0, k));
      double a1 = std::norm(e.vectors(i1, k));
      if (a0 > w0) { w0 = a0; k0 = k; }
      if (a1 > w1) { w1 = a1; k1 = k; }
    }
    if (w0 < 0.5 || w1 < 0.5 || k0 == k1) continue;
    out[i] = e.values(k1) - e.values(k0) - q.omega01;
  }
  return out;
}

// CSV: parameter, E_0.., label_0.. with labels as "q:n".
inline void write_sweep_csv(const SweepResult& r, std::ostream& os) {
  long dim = r.energies[0].size();
  os << "parameter_rad_s";
  for (long k = 0; k < dim; ++k) os << ",E_" << k << "_rad_s";
  for (long k = 0; k < dim; ++k) os << ",label_" << k;
  os << "\n";
  os.precision(17);
  for (size_t i = 0; i < r.grid.size(); ++i) {
    os << r.grid[i];
    for (long k = 0; k < dim; ++k) os << "," << r.energies[i](k);
    for (long k = 0; k < dim; ++k)
      os << "," << r.labels[i][k].q << ":" << r.labels[i][k].n;
    os << "\n";
  }
}

}  // namespace rqs
