#include <doctest.h>

#include <cmath>

#include "subdyn/lindblad.hpp"
#include "support.hpp"

using namespace subdyn;
using namespace subdyn::lindblad;

namespace {

MicroOptions loose(double eps) {
  MicroOptions o;
  o.epsilon = eps;
  o.check_window = false;
  return o;
}

// Second-order time-convolutionless coefficient of the left-acting part of
// the one-particle Redfield generator, plus the first-order mean field.
Mat tcl2_Q(const MicroEmbedding& e, double eps) {
  const int M = e.system_modes;
  const Eigen::Index d = e.bath_dim;
  std::vector<Mat> W(M * M);
  for (int i = 0; i < M * M; ++i) W[i] = e.bath_states.adjoint() * e.coupling[i] * e.bath_states;
  Mat Q = Mat::Zero(M, M);
  for (int k = 0; k < M; ++k)
    for (int f = 0; f < M; ++f) {
      cplx s = 0;
      for (Eigen::Index mu = 0; mu < d; ++mu) {
        s += -I * e.pi(mu) * W[k * M + f](mu, mu);
        for (int g = 0; g < M; ++g)
          for (Eigen::Index nu = 0; nu < d; ++nu)
            s += e.pi(mu) * W[k * M + g](mu, nu) * W[g * M + f](nu, mu) * I /
                 (e.energies[g] + e.bath_energies(nu) - e.energies[f] - e.bath_energies(mu) - I * eps);
        }
      Q(k, f) = s;
    }
  return Q;
}

}  // namespace

TEST_CASE("bath state from H_M") {
  MacroSpec m;
  m.H_M = Mat::Zero(2, 2);
  m.H_M(1, 1) = 0.9;
  m.coupling.assign(1, Mat::Zero(2, 2));
  auto e = build_embedding({1.0}, m, 2.0);
  CHECK(std::abs(e.rho_M.trace() - 1.0) < 1e-14);
  CHECK(e.pi(0) == doctest::Approx(1.0 / (1.0 + std::exp(-1.8))).epsilon(1e-14));
  CHECK(e.pi(1) == doctest::Approx(std::exp(-1.8) / (1.0 + std::exp(-1.8))).epsilon(1e-14));
  auto g = build_embedding({1.0}, m, std::numeric_limits<double>::infinity());
  CHECK(g.pi(0) == 1.0);
  CHECK(g.pi(1) == 0.0);
  // microsystem charge zero
  for (const auto& a : e.a) CHECK(max_abs(a * e.rho_M_full) == 0.0);
  CHECK_THROWS_AS(build_embedding({1.0}, m, std::nan("")), NumericalError);
}

TEST_CASE("no coupling gives no optical potential or jumps") {
  auto macro = random_bath({0.0, 0.6, 1.3}, 2, 0.0, 3);
  auto e = build_embedding({1.0, 1.7}, macro, 1.0);
  auto c = micro_coefficients(e, loose(0.3));
  CHECK(max_abs(c.Q) == 0.0);
  for (const auto& j : c.jumps) CHECK(max_abs(j.op) == 0.0);
}

TEST_CASE("ground-state bath keeps a single xi label") {
  auto macro = random_bath({0.0, 0.6, 1.3}, 2, 0.05, 4);
  auto e = build_embedding({1.0, 1.7}, macro, std::numeric_limits<double>::infinity());
  auto c = micro_coefficients(e, loose(0.3));
  REQUIRE(c.jumps.size() == 3);
  for (const auto& j : c.jumps) CHECK(j.xi == 0);
}

TEST_CASE("optical potential against second-order TCL") {
  auto macro = random_bath({0.0, 0.8}, 2, 0.02, 11);
  auto e = build_embedding({1.0, 1.5}, macro, 1.0);
  const double eps = 0.2;
  auto c = micro_coefficients(e, loose(eps));
  Mat Qt = tcl2_Q(e, eps).cwiseProduct(c.retained);
  CHECK((c.Q - Qt).norm() < 0.1 * Qt.norm());
  // dissipative part alone
  Mat D = c.Q + c.Q.adjoint(), Dt = Qt + Qt.adjoint();
  CHECK((D - Dt).norm() < 0.1 * Dt.norm());
}

TEST_CASE("trace identity at weak coupling and sign of Q + Q+") {
  double prev = 1.0;
  for (double g : {0.02, 0.01, 0.005}) {
    auto macro = random_bath({0.0, 0.7, 1.5, 2.6}, 3, g, 7);
    auto e = build_embedding({1.0, 2.0, 3.2}, macro, 1.0);
    auto c = micro_coefficients(e, loose(0.3));
    auto gen = micro_generator(e, c);
    CHECK(gen.q_hermitian_max_eig <= 0.0);
    // residual is third order: halving g divides it by about 8
    CHECK(c.raw_trace_residual < prev / 6.0);
    prev = c.raw_trace_residual;
  }
  CHECK(prev < 5e-8);
}

TEST_CASE("secular cut drops fast pairs") {
  auto macro = random_bath({0.0, 0.7}, 3, 0.05, 9);
  auto e = build_embedding({1.0, 1.0005, 3.0}, macro, 1.0);
  MicroOptions o = loose(0.3);
  o.tau1 = 100.0;
  auto c = micro_coefficients(e, o);
  CHECK(c.retained(0, 1) == 1.0);
  CHECK(c.retained(0, 2) == 0.0);
  CHECK(c.Q(0, 2) == cplx{});
  CHECK(c.dropped.size() == 4);
}

TEST_CASE("epsilon outside the window is rejected") {
  auto macro = random_bath({0.0, 0.7, 1.5}, 2, 0.05, 9);
  auto e = build_embedding({1.0, 2.0}, macro, 1.0);
  auto [delta, width] = pole_scales(e);
  MicroOptions o;
  o.epsilon = delta;
  CHECK_THROWS_AS(micro_coefficients(e, o), NumericalError);
  o.epsilon = 20.0 * delta;
  CHECK_NOTHROW(micro_coefficients(e, o));
  MicroOptions d;
  auto c = micro_coefficients(e, d);
  CHECK(c.epsilon >= 10.0 * delta);
}

TEST_CASE("Hamiltonian-only generator") {
  std::mt19937_64 rng(1);
  Mat H0 = testing_support::random_hermitian(3, rng);
  Mat B = testing_support::random_hermitian(3, rng);
  Mat Q = I * B;
  auto g = assemble_generator(H0, Q, {});
  Mat rho = testing_support::random_density(3, rng);
  Mat d = g.apply(rho);
  CHECK(std::abs(d.trace()) < 1e-14);
  CHECK(std::abs((rho * d).trace()) < 1e-13);
  CHECK(max_abs(g.H_eff - (H0 - B)) < 1e-14);
}

TEST_CASE("trace preservation after enforcement") {
  auto macro = random_bath({0.0, 0.7, 1.5, 2.6}, 3, 0.2, 5);
  auto e = build_embedding({1.0, 2.0, 3.2}, macro, 0.5);
  auto c = micro_coefficients(e, loose(0.3));
  auto g = micro_generator(e, c);
  std::mt19937_64 rng(2);
  for (int i = 0; i < 10; ++i) {
    Mat rho = testing_support::random_density(3, rng);
    CHECK(std::abs(g.apply(rho).trace()) < 1e-10);
  }
  CHECK(max_abs(g.H_eff - g.H_eff.adjoint()) < 1e-12);
  CHECK(max_abs(g.K + g.sum_LdagL()) == 0.0);
  CHECK(max_abs(g.gamma_half_from_jumps() * 2.0 - g.sum_LdagL()) < 1e-15);
  AssembleOptions strict;
  strict.tolerance = 1e-6;
  Mat H0 = Mat::Zero(3, 3);
  CHECK_THROWS_AS(assemble_generator(H0, c.Q, c.jumps, strict), NumericalError);
}

TEST_CASE("superoperator matches the elementwise master equation") {
  auto macro = random_bath({0.0, 0.7, 1.5}, 3, 0.1, 6);
  auto e = build_embedding({1.0, 1.2, 1.3}, macro, 1.0);
  auto c = micro_coefficients(e, loose(0.5));
  AssembleOptions raw;
  raw.enforce = false;
  auto g = micro_generator(e, c, raw);
  const int d = 3;
  Mat S = g.superoperator();
  Mat slow = Mat::Zero(d * d, d * d);
  Mat Qd = c.Q.adjoint();
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      Mat rho = Mat::Zero(d, d);
      rho(a, b) = 1.0;
      Mat out = Mat::Zero(d, d);
      for (int gg = 0; gg < d; ++gg)
        for (int f = 0; f < d; ++f) {
          cplx v = -I * (e.energies[gg] - e.energies[f]) * rho(gg, f);
          for (int h = 0; h < d; ++h) v += rho(gg, h) * Qd(h, f);
          for (int k = 0; k < d; ++k) v += c.Q(gg, k) * rho(k, f);
          for (const auto& j : c.jumps)
            for (int h = 0; h < d; ++h)
              for (int k = 0; k < d; ++k) v += j.op(gg, k) * rho(k, h) * std::conj(j.op(f, h));
          out(gg, f) = v;
        }
      for (int gg = 0; gg < d; ++gg)
        for (int f = 0; f < d; ++f) slow(gg + d * f, a + d * b) = out(gg, f);
    }
  CHECK(max_abs(S - slow) < 1e-13);
}

TEST_CASE("kinetic operators: Born order and zero coupling") {
  auto basis = modes::build_box_basis(1, {1.0}, 4, 1.0);
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, 4);
  auto V = modes::potential_tensor(basis, {modes::PotentialShape::Gaussian, 1.0, 0.2});
  KineticOptions o;
  o.epsilon = 1.0;
  o.born_only = true;
  auto k = build_heff_gamma_R_kinetic(pb, basis.energies, V, {0.1, 0.1, 0.05, 0.0}, o);
  for (auto v : k.gamma.data) CHECK(std::abs(v) < 1e-15);
  // antisymmetrized bare potential
  for (int l1 = 0; l1 < 4; ++l1)
    for (int l2 = 0; l2 < 4; ++l2)
      for (int f1 = 0; f1 < 4; ++f1)
        for (int f2 = 0; f2 < 4; ++f2) {
          cplx va = 0.5 * (V(l1, l2, f2, f1) - V(l2, l1, f2, f1));
          CHECK(std::abs(k.veff(l1, l2, f2, f1) - va) < 1e-14);
        }
  auto sp = fock::enumerate_basis(fock::Statistics::Fermi, 4, 3);
  CHECK(max_abs(fock::two_body(sp, k.veff).dense() - fock::two_body(sp, V).dense()) < 1e-13);
  o.born_only = false;
  auto z = build_heff_gamma_R_kinetic(pb, basis.energies, modes::zero_tensor(4), {0, 0, 0, 0}, o);
  for (auto v : z.veff.data) CHECK(v == cplx{});
  for (auto v : z.gamma.data) CHECK(v == cplx{});
  for (const auto& r : z.R) CHECK(max_abs(r) == 0.0);
  auto space = fock::enumerate_basis(fock::Statistics::Fermi, 4, 4);
  auto kf = kinetic_fock(space, z);
  CHECK(max_abs(kf.H_eff - fock::build_hamiltonian(space, basis.energies, modes::zero_tensor(4)).dense()) == 0.0);
}

TEST_CASE("kinetic gamma against one quarter of sum R+R") {
  auto basis = modes::build_box_basis(1, {1.0}, 5, 1.0);
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, 5);
  std::vector<double> nbar{0.15, 0.1, 0.08, 0.05, 0.02};
  KineticOptions o;
  o.epsilon = 2.0;
  std::vector<double> abs_err;
  for (double g : {1.0, 0.5, 0.25}) {
    auto V = modes::potential_tensor(basis, {modes::PotentialShape::Gaussian, g, 0.15});
    auto k = build_heff_gamma_R_kinetic(pb, basis.energies, V, nbar, o);
    CHECK_FALSE(k.gamma_flag);
    abs_err.push_back(k.gamma_mismatch_shell_abs);
    Mat G = pair_matrix(pb, k.gamma);
    CHECK(max_abs(G - G.adjoint()) < 1e-14);
    Eigen::SelfAdjointEigenSolver<Mat> es(pair_matrix(pb, k.gamma_quarter));
    CHECK(es.eigenvalues().minCoeff() > -1e-10);
  }
  // at least third order in g, or already at rounding level
  CHECK((abs_err[1] <= abs_err[0] / 8.0 * 1.01 || abs_err[1] < 1e-15));
  CHECK((abs_err[2] <= abs_err[1] / 8.0 * 1.01 || abs_err[2] < 1e-15));
}

TEST_CASE("Fock kinetic operators and number conservation") {
  auto basis = modes::build_box_basis(1, {1.0}, 4, 1.0);
  auto pb = scattering::make_pair_basis(fock::Statistics::Fermi, 4);
  auto V = modes::potential_tensor(basis, {modes::PotentialShape::Gaussian, 1.5, 0.2});
  KineticOptions o;
  o.epsilon = 1.5;
  auto k = build_heff_gamma_R_kinetic(pb, basis.energies, V, {0.2, 0.1, 0.05, 0.0}, o);
  auto space = fock::enumerate_basis(fock::Statistics::Fermi, 4, 4);
  auto kf = kinetic_fock(space, k);
  CHECK(max_abs(kf.H_eff - kf.H_eff.adjoint()) < 1e-12);
  CHECK(max_abs(kf.Gamma - kf.Gamma.adjoint()) < 1e-12);
  Mat sum = Mat::Zero(space.dim(), space.dim());
  for (const auto& r : kf.R) sum += r.adjoint() * r;
  CHECK(max_abs(kf.Gamma_quarter - 0.25 * sum) < 1e-12);
  // L'N with the quarter substitution
  Mat LN = Mat::Zero(space.dim(), space.dim());
  for (int h = 0; h < 4; ++h) {
    Mat a = fock::annihilate(space, h).dense(), ad = a.adjoint();
    const Mat& G = kf.Gamma_quarter;
    LN += I * (kf.H_eff * ad * a - ad * a * kf.H_eff) - ((G * ad - ad * G) * a - ad * (G * a - a * G));
  }
  LN += sum;
  CHECK(max_abs(LN) < 1e-12);
}
