#include <doctest.h>

#include <cmath>
#include <random>

#include "subdyn/thermo.hpp"
#include "support.hpp"

using namespace subdyn;
using namespace subdyn::thermo;
using testing_support::random_density;
using testing_support::random_hermitian;

namespace {

struct Desk {
  modes::ModeBasis basis;
  fock::FockSpace space;
  modes::PotentialTensor V;
  CellGrid grid;
  DensityOperatorSet ops, free_ops;
  Mat H;
};

// 1D box modes n = 1, 4, 7, 8: the pair swap {1, 8} <-> {4, 7} is on shell
Desk desk(std::vector<std::size_t> keep = {0, 3, 6, 7}, int cells = 2, double g = 2.0) {
  Desk d;
  d.basis = modes::select_modes(modes::build_box_basis(1, {1.0}, 8, 1.0), keep);
  const int M = static_cast<int>(keep.size());
  d.space = fock::enumerate_basis(fock::Statistics::Fermi, M, M);
  d.V = modes::potential_tensor(d.basis, {modes::PotentialShape::Gaussian, g, 0.2});
  d.grid = uniform_cells(d.basis, cells);
  d.ops = build_density_operators(d.space, d.basis, d.grid, d.V);
  d.free_ops = build_density_operators(d.space, d.basis, d.grid, modes::PotentialTensor{});
  d.H = fock::build_hamiltonian(d.space, d.basis.energies, d.V).dense();
  return d;
}

ThermoState fields(const CellGrid& g, std::vector<double> b, std::vector<double> mu, std::vector<double> v) {
  ThermoState s;
  s.grid = g;
  s.beta = b;
  s.mu = mu;
  s.v = v;
  return s;
}

double tr(const Mat& A, const Mat& w) { return (A * w).trace().real(); }

}  // namespace

TEST_CASE("cell densities add up to the global operators") {
  Desk d = desk();
  Mat e = Mat::Zero(d.H.rows(), d.H.cols()), r = e;
  for (std::size_t c = 0; c < d.ops.cells(); ++c) {
    e += d.ops.energy[c];
    r += d.ops.rho[c];
    Eigen::SelfAdjointEigenSolver<Mat> es(d.ops.rho[c]);
    CHECK(es.eigenvalues().minCoeff() > -1e-12);
  }
  CHECK(max_abs(e - d.H) < 1e-8);
  CHECK(max_abs(r - fock::charge_operators(d.space, 1.0).mass.dense()) < 1e-12);
  auto one = build_density_operators(d.space, d.basis, uniform_cells(d.basis, 1), d.V);
  CHECK(max_abs(one.rho[0] - fock::charge_operators(d.space, 1.0).mass.dense()) < 1e-12);
}

TEST_CASE("rest-frame energy density from the shifted derivative") {
  Desk d = desk({0, 1, 2}, 3);
  const double v = 0.7;
  for (std::size_t c = 0; c < 3; ++c) {
    // (1/2m) int (i hbar u_h' - m v u_h) (-i hbar u_k' - m v u_k) over the cell
    auto q = modes::gauss_legendre(80, d.grid.edges[c], d.grid.edges[c + 1]);
    Mat e0 = Mat::Zero(3, 3);
    for (std::size_t i = 0; i < q.nodes.size(); ++i)
      for (int h = 0; h < 3; ++h)
        for (int k = 0; k < 3; ++k) {
          const std::array<double, 3> x{q.nodes[i], 0.0, 0.0};
          cplx left = I * d.basis.gradient(h, x)[0] - v * d.basis.value(h, x);
          cplx right = -I * d.basis.gradient(k, x)[0] - v * d.basis.value(k, x);
          e0(h, k) += q.weights[i] * 0.5 * left * right;
        }
    CHECK(max_abs(fock::one_body(d.space, e0).dense() - d.free_ops.energy_rest(c, v)) < 1e-10);
  }
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10; ++k) {
    Mat w = random_density(static_cast<int>(d.space.dim()), rng);
    for (std::size_t c = 0; c < 3; ++c) {
      const double lhs = tr(d.ops.momentum[c], w) - tr(d.ops.momentum_rest(c, v), w);
      CHECK(std::abs(lhs - v * tr(d.ops.rho[c], w)) < 1e-8);
    }
  }
}

TEST_CASE("single-mode grand canonical occupation") {
  auto b = modes::select_modes(modes::build_box_basis(1, {1.0}, 2, 1.0), {1});
  auto g = uniform_cells(b, 1);
  const double beta = 0.4, mu = 15.0, E = b.energies[0];
  {
    auto sp = fock::enumerate_basis(fock::Statistics::Fermi, 1, 1);
    auto ops = build_density_operators(sp, b, g, modes::PotentialTensor{});
    Mat w = gibbs_state(uniform_state(g, beta, mu), ops);
    CHECK(tr(ops.rho[0], w) == doctest::Approx(1.0 / (std::exp(beta * (E - mu)) + 1.0)).epsilon(1e-12));
  }
  {
    auto sp = fock::enumerate_basis(fock::Statistics::Bose, 1, 60);
    auto ops = build_density_operators(sp, b, g, modes::PotentialTensor{});
    Mat w = gibbs_state(uniform_state(g, beta, mu), ops);
    CHECK(tr(ops.rho[0], w) == doctest::Approx(1.0 / (std::exp(beta * (E - mu)) - 1.0)).epsilon(1e-10));
  }
}

TEST_CASE("Gibbs state: additivity and the zero-temperature limit") {
  Desk d = desk();
  auto one = build_density_operators(d.space, d.basis, uniform_cells(d.basis, 1), d.V);
  auto s2 = uniform_state(d.grid, 0.03, 40.0, 0.5);
  auto s1 = uniform_state(uniform_cells(d.basis, 1), 0.03, 40.0, 0.5);
  CHECK(max_abs(gibbs_state(s2, d.ops) - gibbs_state(s1, one)) < 1e-12);
  CHECK(std::abs(gibbs_state(s2, d.ops).trace().real() - 1.0) < 1e-14);

  auto cold = fields(d.grid, {1e4, 2e4}, {30.0, 30.0}, {0.0, 0.0});
  Mat X = exponent(cold, d.ops);
  Eigen::SelfAdjointEigenSolver<Mat> es(X);
  const double x0 = es.eigenvalues()(0);
  Mat P = Mat::Zero(X.rows(), X.cols());
  int deg = 0;
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    if (es.eigenvalues()(i) - x0 < 1e-6 * std::abs(x0) + 1e-9) {
      P += es.eigenvectors().col(i) * es.eigenvectors().col(i).adjoint();
      ++deg;
    }
  CHECK(max_abs(gibbs_state(cold, d.ops) - P / deg) < 1e-12);
  CHECK_THROWS_AS(gibbs_state(fields(d.grid, {-1.0, 1.0}, {0, 0}, {0, 0}), d.ops), ValidationError);
}

TEST_CASE("entropy") {
  std::mt19937_64 rng(2);
  Vec psi = Vec::Random(5).normalized();
  CHECK(std::abs(entropy(psi * psi.adjoint())) < 1e-12);
  CHECK(entropy(Mat::Identity(6, 6) / 6.0) == doctest::Approx(std::log(6.0)).epsilon(1e-14));
  CHECK(entropy(Mat::Identity(6, 6) / 6.0, 2.0) == doctest::Approx(2.0 * std::log(6.0)).epsilon(1e-14));
  Mat a = random_density(3, rng), b = random_density(4, rng);
  Mat ab(12, 12);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) ab.block(4 * i, 4 * j, 4, 4) = a(i, j) * b;
  CHECK(std::abs(entropy(ab) - entropy(a) - entropy(b)) < 1e-10);
}

TEST_CASE("field fit round trip") {
  Desk d = desk();
  auto truth = fields(d.grid, {0.031, 0.018}, {55.0, 90.0}, {1.5, -2.0});
  Mat w = gibbs_state(truth, d.ops);
  auto fit = fit_fields(expectations(d.ops, w), d.ops, uniform_state(d.grid, 0.02, 50.0));
  CHECK(fit.mismatch < 1e-8);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(fit.state.beta[c] == doctest::Approx(truth.beta[c]).epsilon(1e-6));
    CHECK(fit.state.mu[c] == doctest::Approx(truth.mu[c]).epsilon(1e-6));
    CHECK(fit.state.v[c] == doctest::Approx(truth.v[c]).epsilon(1e-6));
  }
  CHECK(max_abs(fit.w - w) < 1e-8);
}

TEST_CASE("single-mode fit against the closed-form inversion") {
  auto b = modes::select_modes(modes::build_box_basis(1, {1.0}, 3, 1.0), {2});
  auto g = uniform_cells(b, 1);
  auto sp = fock::enumerate_basis(fock::Statistics::Fermi, 1, 1);
  auto ops = build_density_operators(sp, b, g, modes::PotentialTensor{});
  for (double n : {0.05, 0.3, 0.8}) {
    Targets t{{n}, {0.0}, {b.energies[0] * n}};
    auto fit = fit_fields(t, ops, uniform_state(g, 1.0, 0.0));
    const double x = fit.state.beta[0] * (b.energies[0] - fit.state.mu[0]);
    CHECK(x == doctest::Approx(std::log(1.0 / n - 1.0)).epsilon(1e-8));
  }
}

TEST_CASE("fit is the entropy maximiser among feasible states") {
  Desk d = desk();
  auto truth = fields(d.grid, {0.03, 0.02}, {60.0, 80.0}, {0.8, 0.0});
  auto targets = expectations(d.ops, gibbs_state(truth, d.ops));
  auto fit = fit_fields(targets, d.ops, uniform_state(d.grid, 0.02, 50.0));
  const double S = entropy(fit.w);
  const int n = static_cast<int>(d.space.dim());
  // Hilbert-Schmidt orthonormal basis of span{1, constraints}
  std::vector<Mat> basis{Mat::Identity(n, n)};
  for (std::size_t c = 0; c < 2; ++c)
    for (const Mat* A : {&d.ops.energy[c], &d.ops.momentum[c], &d.ops.rho[c]}) basis.push_back(*A);
  std::vector<Mat> on;
  for (Mat B : basis) {
    for (const Mat& Q : on) B -= (Q.adjoint() * B).trace() * Q;
    if (B.norm() > 1e-10) on.push_back(B / B.norm());
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(fit.w);
  const double lmin = es.eigenvalues().minCoeff();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  int checked = 0;
  for (int k = 0; k < 100; ++k) {
    Mat D = random_hermitian(n, rng);
    for (const Mat& Q : on) D -= (Q.adjoint() * D).trace() * Q;
    D = 0.5 * (D + D.adjoint());
    Eigen::SelfAdjointEigenSolver<Mat> ed(D);
    const double scale = u(rng) * lmin / ed.eigenvalues().cwiseAbs().maxCoeff();
    Mat w2 = fit.w + scale * D;
    auto t2 = expectations(d.ops, w2);
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(t2.energy[c] - targets.energy[c]) < 1e-6);
      CHECK(std::abs(t2.rho[c] - targets.rho[c]) < 1e-6);
      CHECK(std::abs(t2.momentum[c] - targets.momentum[c]) < 1e-6);
    }
    CHECK(entropy(w2) <= S + 1e-12);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("infeasible targets are diagnosed") {
  Desk d = desk();
  Targets bad{{-0.1, 0.5}, {0.0, 0.0}, {10.0, 10.0}};
  CHECK_THROWS_AS(fit_fields(bad, d.ops, uniform_state(d.grid, 0.02, 50.0)), NumericalError);
}

namespace {

kinetics::KineticGenerator kinetic_for(const Desk& d, double beta, double mu) {
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, static_cast<int>(d.basis.size()));
  lindblad::KineticOptions o;
  o.epsilon = 3.0;
  auto n = kinetics::fermi_dirac(d.basis.energies, beta, mu);
  auto kops = lindblad::build_heff_gamma_R_kinetic(pb, d.basis.energies, d.V, n, o);
  kinetics::KineticConfig c;
  c.shell = 1e-9;
  return kinetics::make_kinetic_generator(d.space, kops, c);
}

}  // namespace

TEST_CASE("global equilibrium is stationary") {
  Desk d = desk();
  const double beta = 0.02, mu = 30.0;
  auto kin = kinetic_for(d, beta, mu);
  auto s0 = uniform_state(d.grid, beta, mu);
  auto series = evolve_thermo(s0, d.free_ops, kin, {0.0, 0.1, 0.2, 0.3});
  REQUIRE(series.completed);
  for (std::size_t i = 1; i < series.states.size(); ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      CHECK(std::abs(series.states[i].beta[c] - series.states[i - 1].beta[c]) < 1e-8);
      CHECK(std::abs(series.states[i].mu[c] - series.states[i - 1].mu[c]) < 1e-8);
    }
  for (double f : series.kinetic_flux) CHECK(f < 1e-8);
}

TEST_CASE("Hamiltonian-only fluxes vanish at a Gibbs state, L' does not") {
  Desk d = desk();
  auto s = fields(d.grid, {0.03, 0.015}, {20.0, 35.0}, {0.0, 0.0});
  Mat w = gibbs_state(s, d.free_ops);
  auto hr = hamiltonian_rates(d.free_ops, d.H, w);
  for (std::size_t c = 0; c < 2; ++c) {
    CHECK(std::abs(hr.rho[c]) < 1e-10);
    CHECK(std::abs(hr.energy[c]) < 1e-10);
  }
  auto kin = kinetic_for(d, 0.025, 28.0);
  auto kr = kinetic_rates(d.free_ops, kin, w);
  CHECK(std::max(std::abs(kr.energy[0]), std::abs(kr.rho[0])) > 1e-6);
  CHECK_THROWS_AS(kinetic_rates(d.ops, kin, w), ValidationError);
}

TEST_CASE("entropy does not decrease along the kinetic evolution") {
  Desk d = desk();
  auto kin = kinetic_for(d, 0.025, 28.0);
  auto s0 = fields(d.grid, {0.03, 0.015}, {20.0, 35.0}, {0.0, 0.0});
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(0.02 * i);
  ThermoOptions o;
  o.hamiltonian = d.H;
  auto series = evolve_thermo(s0, d.free_ops, kin, t, o);
  REQUIRE(series.completed);
  double gain = 0.0;
  for (std::size_t i = 1; i < series.entropy.size(); ++i) {
    CHECK(series.entropy[i] - series.entropy[i - 1] >= -1e-10);
    gain += series.entropy[i] - series.entropy[i - 1];
  }
  CHECK(gain > 0.0);
  for (double p : series.entropy_production) CHECK(p >= -1e-10);
  for (double f : series.hamiltonian_flux) CHECK(f < 1e-10);
  CHECK(series.max_mismatch < 1e-8);
}

namespace {

MemoryHistory smooth_history(const CellGrid& g, double step, int n) {
  MemoryHistory h;
  h.step = step;
  for (int i = 0; i < n; ++i) {
    const double t = step * i;
    h.times.push_back(t);
    h.states.push_back(fields(g, {0.2 + 0.05 * std::sin(t), 0.15 + 0.04 * t}, {12.0 + 3.0 * t, 15.0 - 2.0 * t * t},
                              {0.4 * std::cos(t), -0.3 * t}));
  }
  return h;
}

}  // namespace

TEST_CASE("memory state: direct and split forms agree") {
  Desk d = desk({0, 1, 2}, 2, 3.0);
  auto hist = smooth_history(d.grid, 0.05, 13);
  for (double t : {0.05, 0.37, 0.6}) {
    auto m = memory_state(hist, d.ops, d.H, t);
    CHECK(m.agreement < 1e-8);
    CHECK(m.exponent_gap < 1e-8);
    CHECK(m.boundary_series.size() == m.times.size());
  }
  auto m0 = memory_state(hist, d.ops, d.H, 0.0);
  CHECK(max_abs(m0.state_direct - gibbs_state(hist.states[0], d.ops)) == 0.0);
  CHECK(max_abs(m0.state_split - gibbs_state(hist.states[0], d.ops)) == 0.0);
}

TEST_CASE("memory state: stationary commuting case") {
  Desk d = desk({0, 1, 2}, 1, 0.0);
  MemoryHistory h;
  h.step = 0.1;
  for (int i = 0; i < 6; ++i) {
    h.times.push_back(0.1 * i);
    h.states.push_back(uniform_state(d.grid, 0.2, 10.0));
  }
  auto m = memory_state(h, d.ops, d.H, 0.43);
  CHECK(max_abs(m.state_direct - gibbs_state(h.states[0], d.ops)) < 1e-12);
  CHECK(max_abs(m.state_split - gibbs_state(h.states[0], d.ops)) < 1e-12);
}

TEST_CASE("memory history is validated") {
  Desk d = desk({0, 1, 2}, 2, 1.0);
  auto h = smooth_history(d.grid, 0.05, 6);
  h.times[3] += 0.01;
  CHECK_THROWS_AS(memory_state(h, d.ops, d.H, 0.1), ValidationError);
  auto h2 = smooth_history(d.grid, 0.05, 6);
  CHECK_THROWS_AS(memory_state(h2, d.ops, d.H, 0.3), ValidationError);
  CHECK_THROWS_AS(memory_state(h2, d.ops, d.H, -0.1), ValidationError);
}
