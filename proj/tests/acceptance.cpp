// acceptance.cpp: One PASS/FAIL line per acceptance criterion, tolerances pinned.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <thread>

#include "subdyn/dynamics.hpp"
#include "subdyn/fock.hpp"
#include "subdyn/kinetics.hpp"
#include "subdyn/lindblad.hpp"
#include "subdyn/scattering.hpp"
#include "subdyn/thermo.hpp"
#include "subdyn/trajectories.hpp"
#include "support.hpp"

using namespace subdyn;
using testing_support::random_density;
using testing_support::random_generator;
using testing_support::random_hermitian;
using testing_support::random_matrix;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  // records one sub-check
  void check(bool ok, const std::string& what, double value, double bound) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << " " << value << (ok ? " ok" : " FAILS") << " (bound "
           << bound << ")";
  }
  void upper(const std::string& what, double value, double bound) { check(value < bound, what, value, bound); }
  void lower(const std::string& what, double value, double bound) { check(value >= bound, what, value, bound); }
  void flag(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? " ok" : " FAILS");
  }
};

std::string num(double x) {
  std::ostringstream s;
  s << x;
  return s.str();
}

unsigned threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---- 1: algebra layer -------------------------------------------------------

Verdict algebra() {
  Verdict v;
  double ccr = 0.0;
  for (auto st : {fock::Statistics::Bose, fock::Statistics::Fermi}) {
    const int M = 4;
    auto s = fock::enumerate_basis(st, M, st == fock::Statistics::Fermi ? M : 4);
    const double sign = st == fock::Statistics::Fermi ? 1.0 : -1.0;
    // Bose truncation: the relations hold where a creation stays inside the space
    Mat P = Mat::Zero(s.dim(), s.dim());
    for (std::size_t i = 0; i < s.dim(); ++i)
      if (st == fock::Statistics::Fermi || s.is_safe(i)) P(i, i) = 1.0;
    std::vector<Mat> a(M), ad(M);
    for (int f = 0; f < M; ++f) {
      a[f] = fock::annihilate(s, f).dense();
      ad[f] = fock::create(s, f).dense();
    }
    const Mat id = Mat::Identity(s.dim(), s.dim());
    for (int f = 0; f < M; ++f)
      for (int g = 0; g < M; ++g) {
        ccr = std::max(ccr, max_abs((a[f] * ad[g] + sign * ad[g] * a[f] - (f == g ? 1.0 : 0.0) * id) * P));
        ccr = std::max(ccr, max_abs(a[f] * a[g] + sign * a[g] * a[f]));
      }
  }
  v.upper("CCR/CAR residual", ccr, 1e-12);

  // resolvent identity (z - H')^-1 = (z - H0')^-1 + (z - H0')^-1 T(z) (z - H0')^-1, 20 systems
  std::mt19937_64 rng(101);
  double resolvent = 0.0;
  auto basis = modes::build_box_basis(1, {1.0}, 3, 1.0);
  auto space = fock::enumerate_basis(fock::Statistics::Bose, 3, 2);
  Mat H0 = fock::build_hamiltonian(space, basis.energies, modes::zero_tensor(3)).dense();
  for (int trial = 0; trial < 20; ++trial) {
    Mat V = fock::one_body(space, random_hermitian(3, rng, 0.5)).dense();
    Mat H = H0 + V;
    scattering::ScatteringMap T(H, V);
    scattering::CommutatorResolvent r0(H0), r(H);
    Mat B = random_matrix(static_cast<int>(H.rows()), rng);
    cplx z(0.3 + 0.05 * trial, -3.0 + 0.37 * trial);
    Mat lhs = r.apply(z, B);
    Mat rhs = r0.apply(z, B) + r0.apply(z, T.apply(z, r0.apply(z, B)));
    resolvent = std::max(resolvent, max_abs(lhs - rhs) / std::max(1.0, max_abs(lhs)));
  }
  v.upper("resolvent identity (20 systems)", resolvent, 1e-9);

  // adjoint rebuilt from V_R, H_R against the direct adjoint
  double adjoint = 0.0;
  auto b3 = modes::build_box_basis(1, {1.0}, 4, 1.0);
  auto V4 = modes::potential_tensor(b3, {modes::PotentialShape::Gaussian, 1.5, 0.2});
  for (auto st : {fock::Statistics::Bose, fock::Statistics::Fermi}) {
    auto pb = scattering::make_pair_basis(st, 4);
    auto ops = scattering::pair_operators(pb, b3.energies, V4, {0.15, 0.1, 0.05, 0.02});
    for (cplx z : {cplx(12.0, 0.5), cplx(30.0, 0.2), cplx(60.0, 1.0)})
      adjoint = std::max(adjoint, max_abs(scattering::t_matrix_adjoint(ops, z) - scattering::t_matrix(ops, z).adjoint()));
  }
  v.upper("T-matrix adjoint identity", adjoint, 1e-10);
  return v;
}

// ---- 2: generator soundness -------------------------------------------------

const std::vector<double> bath_levels{0.0, 0.45, 1.1, 1.9};
const std::vector<double> system_energies{1.0, 1.55, 2.3};

Mat start_state() {
  Mat r = Mat::Zero(3, 3);
  r(0, 0) = 0.6;
  r(1, 1) = 0.3;
  r(2, 2) = 0.1;
  r(0, 1) = r(1, 0) = 0.1;
  return r;
}

Verdict generator_soundness() {
  Verdict v;
  // pre-enforcement residual is third order in g; weak coupling point g = 0.0025
  double weak = 0.0, prev = 0.0;
  bool third = true;
  for (double g : {0.01, 0.005, 0.0025}) {
    auto e = lindblad::build_embedding(system_energies, lindblad::random_bath(bath_levels, 3, g, 21), 1.0);
    lindblad::MicroOptions mo;
    mo.epsilon = 0.8;
    auto c = lindblad::micro_coefficients(e, mo);
    if (prev > 0.0) third = third && c.raw_trace_residual < prev / 6.0;
    prev = weak = c.raw_trace_residual;
    auto gen = lindblad::micro_generator(e, c);
    if (max_abs(gen.K + gen.sum_LdagL()) != 0.0) third = false;
  }
  v.upper("raw trace residual at g=0.0025", weak, 1e-8);
  v.flag(third, "third-order decay and exact K = -sum L+L after enforcement");

  std::mt19937_64 rng(202);
  double trace = 0.0, herm = 0.0, min_eig = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 2 + trial % 7;
    auto g = random_generator(d, 1 + trial % 4, rng, 0.2 + 0.1 * (trial % 5));
    Mat rho = random_density(d, rng);
    const double T = 10.0 / g.norm();
    std::vector<double> ts;
    for (int i = 1; i <= 10; ++i) ts.push_back(T * i / 10.0);
    auto r = dynamics::evolve_master(g, rho, ts);
    for (const auto& s : r.states) {
      auto c = dynamics::check_density(s);
      trace = std::max(trace, c.trace_error);
      herm = std::max(herm, c.hermiticity_error);
      min_eig = std::min(min_eig, c.min_eigenvalue);
    }
  }
  v.upper("trace drift (100 generators)", trace, 1e-9);
  v.upper("hermiticity", herm, 1e-12);
  v.lower("min eigenvalue", min_eig, -1e-9);
  return v;
}

// ---- 3 and 8: subdynamics oracle and epsilon robustness ---------------------

constexpr double tau0_fixed = 1.0 / 1.6;  // hbar / tau0 = 1.6, the upper window edge

struct SubRun {
  dynamics::SubdynamicsReport rep;
  double delta = 0.0;
};

SubRun subdynamics_at(double g, double eps) {
  auto e = lindblad::build_embedding(system_energies, lindblad::random_bath(bath_levels, 3, g, 21), 1.0);
  lindblad::MicroOptions mo;
  mo.epsilon = eps;
  mo.tau0 = tau0_fixed;
  auto c = lindblad::micro_coefficients(e, mo);
  auto gen = lindblad::micro_generator(e, c);
  dynamics::SubdynamicsOptions o;
  const double t0 = 2.0 * c.tau0, t1 = 0.5 * c.tau1;
  for (int i = 0; i <= 20; ++i) o.times.push_back(t0 + i * (t1 - t0) / 20.0);
  o.tau0 = c.tau0;
  o.tau1 = c.tau1;
  return {dynamics::subdynamics_compare(e, gen, start_state(), dynamics::population_observables(3), o), c.delta};
}

Verdict subdynamics_oracle() {
  Verdict v;
  std::vector<double> dev;
  bool window = true;
  for (double g : {0.04, 0.02, 0.01, 0.005}) {
    auto r = subdynamics_at(g, 0.8);
    dev.push_back(r.rep.max_deviation);
    window = window && r.rep.window_ok;
  }
  bool monotone = true;
  for (std::size_t i = 1; i < dev.size(); ++i) monotone = monotone && dev[i] < dev[i - 1];
  std::ostringstream s;
  s << "deviation by g {0.04,0.02,0.01,0.005}:";
  for (double d : dev) s << " " << d;
  v.detail << s.str();
  v.upper("relative deviation at g_min", dev.back(), 0.05);
  v.flag(monotone, "monotone decrease with g");
  v.flag(window, "horizon inside [tau0, tau1]");
  return v;
}

Verdict epsilon_robustness() {
  Verdict v;
  // drift of the reduced observables against their own scale (the normalisation of
  // the criterion 3 deviation), worst over the coupling scan; the drift against the
  // interaction signal max |exact - free| is reported alongside
  double worst = 0.0, worst_signal = 0.0, delta = 0.0;
  for (double g : {0.04, 0.02, 0.01, 0.005}) {
    auto base = subdynamics_at(g, 0.8);
    delta = base.delta;
    for (double eps : {0.4, 1.6}) {
      auto r = subdynamics_at(g, eps);
      for (std::size_t k = 0; k < base.rep.reduced.size(); ++k) {
        double scale = 0.0, d = 0.0;
        for (std::size_t i = 0; i < base.rep.times.size(); ++i) {
          scale = std::max(scale, std::abs(base.rep.reduced[k][i]));
          d = std::max(d, std::abs(r.rep.reduced[k][i] - base.rep.reduced[k][i]));
        }
        worst = std::max(worst, d / scale);
        worst_signal = std::max(worst_signal, d / base.rep.max_signal);
      }
    }
  }
  v.detail << "window [" << 10.0 * delta << ", " << 1.0 / tau0_fixed << "]; eps 0.8 scaled x2 and /2";
  v.upper("observable drift", worst, 0.02);
  v.detail << "; drift against the interaction signal " << worst_signal << " (reported)";
  for (double eps : {0.1, 3.2}) {
    bool flagged = false;
    try {
      subdynamics_at(0.005, eps);
    } catch (const NumericalError&) {
      flagged = true;
    }
    v.flag(flagged, "eps=" + num(eps) + " outside the window flagged");
  }
  return v;
}

// ---- 4: trajectories --------------------------------------------------------

Verdict trajectory_consistency() {
  Verdict v;
  std::mt19937_64 rng(404);
  auto g = random_generator(3, 2, rng, 0.5);
  Mat rho = random_density(3, rng);
  trajectories::UnravelOptions o;
  o.sample_times = {0.5, 1.0, 2.0};
  o.threads = static_cast<int>(threads());
  auto e = trajectories::unravel(g, rho, 0.0, 2.0, 10000, 17, o);
  auto m = dynamics::evolve_master(g, rho, o.sample_times);
  double ratio = 0.0;
  for (std::size_t s = 0; s < o.sample_times.size(); ++s)
    ratio = std::max(ratio, trajectories::trace_norm(e.mean[s] - m.states[s]) / e.sigma[s]);
  v.check(ratio <= 3.0, "trace-norm gap / sigma (1e4 trajectories)", ratio, 3.0);

  auto sub = trajectories::subcollections(g, rho, 1.0, 3);
  Mat full = dynamics::evolve_master(g, rho, {1.0}).states[0];
  const double gap = trajectories::trace_norm(sub.sum() - full);
  v.check(gap <= sub.remainder + 1e-6, "subcollection gap (<= 3 events)", gap, sub.remainder + 1e-6);

  // constant-rate jump: counts are Poisson(gamma t); every histogram bin within 3 sigma
  const double gamma = 0.8, T = 2.0, lam = gamma * T;
  const int n = 10000;
  auto c = lindblad::assemble_generator(Mat::Zero(2, 2), Mat::Zero(2, 2),
                                        {{std::sqrt(gamma) * Mat::Identity(2, 2), "L"}});
  trajectories::UnravelOptions po;
  po.threads = static_cast<int>(threads());
  auto pe = trajectories::unravel(c, Mat::Identity(2, 2) / 2.0, 0.0, T, n, 23, po);
  std::map<int, int> hist;
  double mean = 0.0;
  for (const auto& r : pe.records) {
    ++hist[r.counts[0]];
    mean += r.counts[0];
  }
  mean /= n;
  double worst = std::abs(mean - lam) / std::sqrt(lam / n);
  double pk = std::exp(-lam);
  for (int k = 0; k < 12; ++k) {
    const double freq = hist.count(k) ? hist[k] / double(n) : 0.0;
    worst = std::max(worst, std::abs(freq - pk) / std::sqrt(pk * (1.0 - pk) / n));
    pk *= lam / (k + 1);
  }
  v.check(worst <= 3.0, "Poisson mean and histogram, worst |z|", worst, 3.0);
  return v;
}

// ---- 5: kinetic structure ---------------------------------------------------

Verdict kinetic_structure() {
  Verdict v;
  // 2D square box, four Fermi modes, Gaussian interaction
  auto sq = modes::build_box_basis(2, {1.0, 1.0}, 2, 1.0);
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, 4);
  auto V = modes::potential_tensor(sq, {modes::PotentialShape::Gaussian, 2.0, 0.2});
  auto n = kinetics::fermi_dirac(sq.energies, 0.05, 0.0);
  lindblad::KineticOptions ko;
  ko.epsilon = 3.0;
  auto ops = lindblad::build_heff_gamma_R_kinetic(pb, sq.energies, V, n, ko);
  auto space = fock::enumerate_basis(fock::Statistics::Fermi, 4, 4);
  auto kin = kinetics::make_kinetic_generator(space, ops);
  auto audit = kinetics::conservation_and_positivity(kin, 1e-3, kinetics::product_state(space, n), 100, 5);
  v.upper("L'N after substitution", audit.mass_residual, 1e-12);
  v.lower("positivity form (100 random vectors)", audit.positivity_min_form, -1e-8);

  auto scan = kinetics::pauli_factorization_check(fock::Statistics::Fermi, 0.2);
  v.upper("Pauli factorisation error, Fermi n <= 0.2", scan.max_error, 0.01);

  // on-shell fixed points: 1D box, 1 + 64 = 16 + 49
  auto line = modes::build_box_basis(1, {1.0}, 8, 1.0);
  {
    auto V8 = modes::potential_tensor(line, {modes::PotentialShape::Gaussian, 2.0, 0.2});
    auto pb8 = scattering::make_pair_basis(fock::Statistics::Fermi, 8);
    auto sp8 = fock::enumerate_basis(fock::Statistics::Fermi, 8, 8);
    auto n8 = kinetics::fermi_dirac(line.energies, 0.05, 0.0);
    kinetics::KineticConfig c;
    c.shell = 1e-9;
    auto k8 = kinetics::make_kinetic_generator(sp8, lindblad::build_heff_gamma_R_kinetic(pb8, line.energies, V8, n8, ko), c);
    double worst = 0.0;
    for (double r : kinetics::collision_rates(k8, kinetics::product_state(sp8, n8))) worst = std::max(worst, std::abs(r));
    v.upper("FD collision rates at equilibrium", worst, 1e-8);
  }
  {
    auto sel = modes::select_modes(line, {0, 3, 6, 7});
    auto Vb = modes::potential_tensor(sel, {modes::PotentialShape::Gaussian, 2.0, 0.2});
    auto pbb = scattering::make_pair_basis(fock::Statistics::Bose, 4);
    auto spb = fock::enumerate_basis(fock::Statistics::Bose, 4, 6);
    auto nb = kinetics::bose_einstein(sel.energies, 0.05, 0.0);
    kinetics::KineticConfig c;
    c.shell = 1e-9;
    auto kb = kinetics::make_kinetic_generator(spb, lindblad::build_heff_gamma_R_kinetic(pbb, sel.energies, Vb, nb, ko), c);
    double worst = 0.0;
    for (double r : kinetics::collision_rates(kb, kinetics::product_state(spb, nb))) worst = std::max(worst, std::abs(r));
    v.upper("BE collision rates at equilibrium", worst, 1e-8);
  }
  return v;
}

// ---- 6 and 7: thermodynamics and memory -------------------------------------

struct Desk {
  modes::ModeBasis basis;
  fock::FockSpace space;
  modes::PotentialTensor V;
  thermo::CellGrid grid;
  thermo::DensityOperatorSet ops, free_ops;
  Mat H;
};

Desk desk(std::vector<std::size_t> keep, double g) {
  Desk d;
  d.basis = modes::select_modes(modes::build_box_basis(1, {1.0}, 8, 1.0), keep);
  const int M = static_cast<int>(keep.size());
  d.space = fock::enumerate_basis(fock::Statistics::Fermi, M, M);
  d.V = modes::potential_tensor(d.basis, {modes::PotentialShape::Gaussian, g, 0.2});
  d.grid = thermo::uniform_cells(d.basis, 2);
  d.ops = thermo::build_density_operators(d.space, d.basis, d.grid, d.V);
  d.free_ops = thermo::build_density_operators(d.space, d.basis, d.grid, modes::PotentialTensor{});
  d.H = fock::build_hamiltonian(d.space, d.basis.energies, d.V).dense();
  return d;
}

thermo::ThermoState fields(const thermo::CellGrid& g, std::vector<double> b, std::vector<double> mu,
                           std::vector<double> v) {
  thermo::ThermoState s;
  s.grid = g;
  s.beta = std::move(b);
  s.mu = std::move(mu);
  s.v = std::move(v);
  return s;
}

Verdict thermodynamics() {
  Verdict v;
  Desk d = desk({0, 3, 6, 7}, 2.0);

  auto truth = fields(d.grid, {0.031, 0.018}, {55.0, 90.0}, {1.5, -2.0});
  auto fit = thermo::fit_fields(thermo::expectations(d.ops, thermo::gibbs_state(truth, d.ops)), d.ops,
                                thermo::uniform_state(d.grid, 0.02, 50.0));
  double rt = 0.0;
  for (std::size_t c = 0; c < 2; ++c) {
    rt = std::max(rt, std::abs(fit.state.beta[c] / truth.beta[c] - 1.0));
    rt = std::max(rt, std::abs(fit.state.mu[c] / truth.mu[c] - 1.0));
    rt = std::max(rt, std::abs(fit.state.v[c] / truth.v[c] - 1.0));
  }
  v.upper("fit round trip, relative field error", rt, 1e-6);

  // max-entropy audit: feasible competitors from HS-orthogonal perturbations
  auto t2 = fields(d.grid, {0.03, 0.02}, {60.0, 80.0}, {0.8, 0.0});
  auto targets = thermo::expectations(d.ops, thermo::gibbs_state(t2, d.ops));
  auto f2 = thermo::fit_fields(targets, d.ops, thermo::uniform_state(d.grid, 0.02, 50.0));
  const double S = thermo::entropy(f2.w);
  const int n = static_cast<int>(d.space.dim());
  std::vector<Mat> on;
  std::vector<Mat> span{Mat::Identity(n, n)};
  for (std::size_t c = 0; c < 2; ++c)
    for (const Mat* A : {&d.ops.energy[c], &d.ops.momentum[c], &d.ops.rho[c]}) span.push_back(*A);
  for (Mat B : span) {
    for (const Mat& Q : on) B -= (Q.adjoint() * B).trace() * Q;
    if (B.norm() > 1e-10) on.push_back(B / B.norm());
  }
  const double lmin = Eigen::SelfAdjointEigenSolver<Mat>(f2.w).eigenvalues().minCoeff();
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int beaten = 0, feasible = 0;
  for (int k = 0; k < 100; ++k) {
    Mat D = random_hermitian(n, rng);
    for (const Mat& Q : on) D -= (Q.adjoint() * D).trace() * Q;
    D = 0.5 * (D + D.adjoint());
    const double scale = u(rng) * lmin / Eigen::SelfAdjointEigenSolver<Mat>(D).eigenvalues().cwiseAbs().maxCoeff();
    Mat w2 = f2.w + scale * D;
    auto e2 = thermo::expectations(d.ops, w2);
    bool ok = true;
    for (std::size_t c = 0; c < 2; ++c)
      ok = ok && std::abs(e2.energy[c] - targets.energy[c]) < 1e-6 && std::abs(e2.rho[c] - targets.rho[c]) < 1e-6 &&
           std::abs(e2.momentum[c] - targets.momentum[c]) < 1e-6;
    feasible += ok;
    beaten += ok && thermo::entropy(w2) <= S + 1e-12;
  }
  v.check(beaten == 100, "fit entropy >= feasible competitors", beaten, 100);

  // full L' evolution on 2 cells, 4 modes
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, 4);
  lindblad::KineticOptions ko;
  ko.epsilon = 3.0;
  auto kops = lindblad::build_heff_gamma_R_kinetic(pb, d.basis.energies, d.V,
                                                   kinetics::fermi_dirac(d.basis.energies, 0.025, 28.0), ko);
  kinetics::KineticConfig kc;
  kc.shell = 1e-9;
  auto kin = kinetics::make_kinetic_generator(d.space, kops, kc);
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(0.02 * i);
  thermo::ThermoOptions o;
  o.hamiltonian = d.H;
  auto series = thermo::evolve_thermo(fields(d.grid, {0.03, 0.015}, {20.0, 35.0}, {0.0, 0.0}), d.free_ops, kin, t, o);
  v.flag(series.completed, "evolution completed");
  double step = std::numeric_limits<double>::infinity(), flux = 0.0;
  for (std::size_t i = 1; i < series.entropy.size(); ++i) step = std::min(step, series.entropy[i] - series.entropy[i - 1]);
  for (double f : series.hamiltonian_flux) flux = std::max(flux, f);
  v.lower("min entropy step", step, -1e-10);
  v.upper("Hamiltonian-only flux at Gibbs states", flux, 1e-10);
  return v;
}

Verdict memory_identity() {
  Verdict v;
  Desk d = desk({0, 1, 2}, 3.0);
  thermo::MemoryHistory h;
  h.step = 0.05;
  for (int i = 0; i < 13; ++i) {
    const double t = 0.05 * i;
    h.times.push_back(t);
    h.states.push_back(fields(d.grid, {0.2 + 0.05 * std::sin(t), 0.15 + 0.04 * t}, {12.0 + 3.0 * t, 15.0 - 2.0 * t * t},
                              {0.4 * std::cos(t), -0.3 * t}));
  }
  double worst = 0.0;
  for (double t : {0.05, 0.21, 0.37, 0.6}) worst = std::max(worst, thermo::memory_state(h, d.ops, d.H, t).agreement);
  v.upper("direct vs split memory forms", worst, 1e-8);
  auto m0 = thermo::memory_state(h, d.ops, d.H, 0.0);
  const Mat w0 = thermo::gibbs_state(h.states[0], d.ops);
  const double at_T = std::max(max_abs(m0.state_direct - w0), max_abs(m0.state_split - w0));
  v.check(at_T == 0.0, "t = T against the Gibbs state", at_T, 0.0);
  return v;
}

// ---- 9: Fokker-Planck cross-check -------------------------------------------

Verdict fokker_planck() {
  Verdict v;
  const int K = 20, d = 2 * K + 1;
  const double q = 0.3, r = 0.7, mass = 2.0;
  Mat P = Mat::Zero(d, d), up = Mat::Zero(d, d), down = Mat::Zero(d, d);
  for (int i = 0; i < d; ++i) P(i, i) = (i - K) * q;
  for (int i = 0; i + 1 < d; ++i) {
    up(i + 1, i) = 1.0;
    down(i, i + 1) = 1.0;
  }
  Mat X = cplx(0.0, 0.5 / q) * (down - up);
  auto gen = lindblad::assemble_generator(P * P / (2.0 * mass), Mat::Zero(d, d),
                                          {{std::sqrt(r) * up, "+q"}, {std::sqrt(r) * down, "-q"}});
  Mat rho = Mat::Zero(d, d);
  rho(K, K) = 1.0;
  auto fp = dynamics::fokker_planck_reduce(gen, X, P, mass, rho);

  trajectories::UnravelOptions o;
  for (int i = 1; i <= 4; ++i) o.sample_times.push_back(0.5 * i);
  o.threads = static_cast<int>(threads());
  auto e = trajectories::unravel(gen, rho, 0.0, 2.0, 10000, 31, o);
  // least-squares slope of Var p through the samples, Var p(0) = 0
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t s = 0; s < o.sample_times.size(); ++s) {
    const Mat& m = e.mean[s];
    const double p1 = (P * m).trace().real(), p2 = (P * P * m).trace().real();
    sxy += o.sample_times[s] * (p2 - p1 * p1);
    sxx += o.sample_times[s] * o.sample_times[s];
  }
  const double slope = sxy / sxx, target = 2.0 * fp.D_pp;  // hbar = 1
  v.detail << "slope " << slope << " vs 2 hbar^2 D_pp " << target;
  v.upper("relative gap", std::abs(slope / target - 1.0), 0.10);
  v.flag(fp.expansion_valid, "moment expansion valid");
  return v;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"algebra layer", algebra},
      {"generator soundness", generator_soundness},
      {"subdynamics oracle", subdynamics_oracle},
      {"trajectory consistency", trajectory_consistency},
      {"kinetic structure", kinetic_structure},
      {"thermodynamics", thermodynamics},
      {"memory identity", memory_identity},
      {"epsilon robustness", epsilon_robustness},
      {"Fokker-Planck cross-check", fokker_planck},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail << "threw: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !v.pass;
    std::printf("criterion %zu %s: %s [%s] (%.1f s)\n", i + 1, v.pass ? "PASS" : "FAIL", criteria[i].first.c_str(),
                v.detail.str().c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria pass\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
