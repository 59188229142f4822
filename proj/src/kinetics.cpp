#include "subdyn/kinetics.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace subdyn::kinetics {

int KineticGenerator::r_index(int k, int lambda) const {
  for (std::size_t i = 0; i < ops.R_labels.size(); ++i)
    if (ops.R_labels[i].first == k && ops.R_labels[i].second == lambda) return static_cast<int>(i);
  return -1;
}

KineticGenerator make_kinetic_generator(const fock::FockSpace& space, const lindblad::KineticOperators& ops,
                                        const KineticConfig& config) {
  if (space.modes != ops.modes) throw ValidationError("Fock space and kinetic operators disagree on modes");
  KineticGenerator k;
  k.space = space;
  k.ops = ops;
  k.config = config;
  k.hbar = ops.hbar;
  k.energies = ops.energies;
  const int M = ops.modes;
  const auto& E = ops.energies;
  if (config.shell >= 0.0)
    for (std::size_t i = 0; i < k.ops.R.size(); ++i) {
      auto [kk, lam] = k.ops.R_labels[i];
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2)
          if (std::abs(E[kk] + E[lam] - E[f1] - E[f2]) > config.shell) k.ops.R[i](f2, f1) = 0.0;
    }
  auto kf = lindblad::kinetic_fock(space, k.ops);
  k.H_eff = kf.H_eff;
  k.R = kf.R;
  if (config.substitute) {
    k.Gamma = Mat::Zero(space.dim(), space.dim());
    for (const auto& r : k.R) k.Gamma += r.adjoint() * r;
    k.Gamma *= 0.25;
  } else {
    k.Gamma = kf.Gamma;
  }
  for (int f = 0; f < M; ++f) k.a.push_back(fock::annihilate(space, f).dense());
  return k;
}

namespace {

Mat gain_part(const KineticGenerator& kin, int h, int k) {
  Mat g = Mat::Zero(kin.H_eff.rows(), kin.H_eff.cols());
  for (int lam = 0; lam < kin.ops.modes; ++lam) {
    int ih = kin.r_index(h, lam), ik = kin.r_index(k, lam);
    if (ih >= 0 && ik >= 0) g += kin.R[ih].adjoint() * kin.R[ik];
  }
  return g / kin.hbar;
}

Mat loss_part(const KineticGenerator& kin, int h, int k) {
  const Mat ad = kin.a[h].adjoint();
  const Mat& ak = kin.a[k];
  const Mat& G = kin.Gamma;
  return -(commutator(G, ad) * ak - ad * commutator(G, ak)) / kin.hbar;
}

}  // namespace

Mat generator_action(const KineticGenerator& kin, int h, int k) {
  const int M = kin.ops.modes;
  if (h < 0 || k < 0 || h >= M || k >= M) throw ValidationError("mode index out of range");
  const Mat A = kin.a[h].adjoint() * kin.a[k];
  return (I / kin.hbar) * commutator(kin.H_eff, A) + loss_part(kin, h, k) + gain_part(kin, h, k);
}

Mat apply_generator(const KineticGenerator& kin, int h, int k) {
  if (kin.config.tau1 > 0.0 && h != k) {
    const double r = std::abs(kin.energies[h] - kin.energies[k]) * kin.config.tau1 / kin.hbar;
    if (r >= 1.0)
      throw ValidationError("pair (" + std::to_string(h) + "," + std::to_string(k) +
                            ") not diagonal enough: |E_h - E_k| tau1 / hbar = " + std::to_string(r));
  }
  return generator_action(kin, h, k);
}

BoltzmannParts boltzmann_decompose(const KineticGenerator& kin, int h) {
  BoltzmannParts b;
  const Mat A = kin.a[h].adjoint() * kin.a[h];
  b.streaming = (I / kin.hbar) * commutator(kin.H_eff, A);
  b.gain = gain_part(kin, h, h);
  b.loss = loss_part(kin, h, h);
  return b;
}

Mat product_state(const fock::FockSpace& space, const std::vector<double>& n) {
  if (static_cast<int>(n.size()) != space.modes) throw ValidationError("occupation list size mismatch");
  Mat w = Mat::Zero(space.dim(), space.dim());
  double total = 0.0;
  for (std::size_t i = 0; i < space.dim(); ++i) {
    double p = 1.0;
    for (int f = 0; f < space.modes; ++f) {
      const int o = space.states[i][f];
      if (space.statistics == fock::Statistics::Fermi) {
        p *= o ? n[f] : 1.0 - n[f];
      } else {
        // geometric distribution with mean n
        p *= std::pow(n[f] / (1.0 + n[f]), o) / (1.0 + n[f]);
      }
    }
    w(i, i) = p;
    total += p;
  }
  if (!(total > 0.0)) throw NumericalError("product state has zero weight in the truncated space");
  return w / total;
}

std::vector<double> fermi_dirac(const std::vector<double>& E, double beta, double mu) {
  std::vector<double> n;
  for (double e : E) n.push_back(1.0 / (std::exp(beta * (e - mu)) + 1.0));
  return n;
}

std::vector<double> bose_einstein(const std::vector<double>& E, double beta, double mu) {
  std::vector<double> n;
  for (double e : E) {
    if (!(e > mu)) throw ValidationError("Bose occupation needs E > mu");
    n.push_back(1.0 / (std::exp(beta * (e - mu)) - 1.0));
  }
  return n;
}

std::vector<double> collision_rates(const KineticGenerator& kin, const Mat& w) {
  std::vector<double> r;
  for (int h = 0; h < kin.ops.modes; ++h) {
    auto b = boltzmann_decompose(kin, h);
    r.push_back(((b.gain + b.loss) * w).trace().real());
  }
  return r;
}

AuditReport conservation_and_positivity(const KineticGenerator& kin, double tau, const Mat& w, int draws,
                                        std::uint64_t seed) {
  const int M = kin.ops.modes;
  const Eigen::Index D = kin.H_eff.rows();
  AuditReport rep;
  Mat LN = Mat::Zero(D, D), LE = Mat::Zero(D, D);
  for (int h = 0; h < M; ++h) {
    Mat l = generator_action(kin, h, h);
    LN += l;
    LE += kin.energies[h] * l;
    auto b = boltzmann_decompose(kin, h);
    rep.collision_rate += std::abs((b.gain * w).trace()) + std::abs((b.loss * w).trace());
  }
  rep.mass_residual = max_abs(LN);
  rep.energy_residual = std::abs((LE * w).trace());
  rep.energy_relative = rep.collision_rate > 0.0 ? rep.energy_residual / rep.collision_rate : 0.0;
  rep.energy_ok = rep.energy_relative < 0.01;

  // block operator X[(h, i), (k, j)] = <i| a+_h a_k + tau L'(a+_h a_k) |j>
  Mat X(M * D, M * D);
  for (int h = 0; h < M; ++h)
    for (int k = 0; k < M; ++k)
      X.block(h * D, k * D, D, D) = kin.a[h].adjoint() * kin.a[k] + tau * generator_action(kin, h, k);
  Mat Xh = 0.5 * (X + X.adjoint());
  rep.positivity_min_eig = Eigen::SelfAdjointEigenSolver<Mat>(Xh, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  rep.positivity_min_form = std::numeric_limits<double>::infinity();
  for (int d = 0; d < draws; ++d) {
    Vec psi(M * D);
    for (Eigen::Index i = 0; i < psi.size(); ++i) psi(i) = cplx(g(rng), g(rng));
    psi.normalize();
    rep.positivity_min_form = std::min(rep.positivity_min_form, (psi.adjoint() * X * psi)(0, 0).real());
  }
  if (draws == 0) rep.positivity_min_form = 0.0;
  return rep;
}

double PhaseSpaceDensity::total() const {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < p.size(); ++j) s += f(i, j) * wx[i] * wp[j];
  return s;
}

std::vector<double> PhaseSpaceDensity::momentum_marginal() const {
  std::vector<double> m(p.size(), 0.0);
  for (std::size_t j = 0; j < p.size(); ++j)
    for (std::size_t i = 0; i < x.size(); ++i) m[j] += f(i, j) * wx[i];
  return m;
}

PhaseSpaceDensity boltzmann_density(const Mat& rho1, const modes::ModeBasis& basis, const PhaseGrid& grid,
                                    double sigma) {
  if (basis.dimension != 1) throw ValidationError("phase-space density implemented for 1D boxes");
  const Eigen::Index M = static_cast<Eigen::Index>(basis.size());
  if (rho1.rows() != M) throw ValidationError("one-particle matrix does not match the basis");
  const double L = basis.lengths[0], hb = basis.hbar;
  const double x0 = -6.0 * sigma, x1 = L + 6.0 * sigma;
  if (!(sigma > 0.0) || sigma < (x1 - x0) / grid.nx)
    throw ValidationError("smearing width below the grid resolution");
  const double c = hb * pi * basis.cutoff / L + hb / (2.0 * sigma);
  double pmax = grid.p_max;
  if (pmax <= 0.0) pmax = 100.0 * c;

  PhaseSpaceDensity d;
  d.sigma = sigma;
  auto qx = modes::gauss_legendre(grid.nx, x0, x1);
  const double umax = std::asinh(pmax / c);
  auto qp = modes::gauss_legendre(grid.np, -umax, umax);
  d.x = qx.nodes;
  d.wx = qx.weights;
  for (std::size_t k = 0; k < qp.nodes.size(); ++k) {
    d.p.push_back(c * std::sinh(qp.nodes[k]));
    d.wp.push_back(qp.weights[k] * c * std::cosh(qp.nodes[k]));
  }
  // overlaps <x,p|u_f>: composite Gauss-Legendre in y with panels short enough
  // to resolve exp(-i p y / hbar) at the largest p
  const int per_panel = 32;
  const int panels = std::max(4, static_cast<int>(std::ceil(pmax * L / (hb * 8.0))));
  std::vector<double> yn, yw;
  for (int q = 0; q < panels; ++q) {
    auto g = modes::gauss_legendre(per_panel, L * q / panels, L * (q + 1) / panels);
    yn.insert(yn.end(), g.nodes.begin(), g.nodes.end());
    yw.insert(yw.end(), g.weights.begin(), g.weights.end());
  }
  const Eigen::Index ny = static_cast<Eigen::Index>(yn.size());
  const Eigen::Index nx = static_cast<Eigen::Index>(d.x.size()), np = static_cast<Eigen::Index>(d.p.size());
  const double norm = std::pow(2.0 * pi * sigma * sigma, -0.25);
  RMat G(nx, ny);
  for (Eigen::Index i = 0; i < nx; ++i)
    for (Eigen::Index j = 0; j < ny; ++j) {
      const double dy = yn[j] - d.x[i];
      G(i, j) = norm * std::exp(-dy * dy / (4.0 * sigma * sigma));
    }
  Mat Ph(ny, np);
  for (Eigen::Index j = 0; j < ny; ++j)
    for (Eigen::Index k = 0; k < np; ++k) Ph(j, k) = std::exp(-I * d.p[k] * yn[j] / hb);
  std::vector<Mat> C(M);  // C[f](i, k) = <x_i, p_k | u_f>
  for (Eigen::Index f = 0; f < M; ++f) {
    RVec wu(ny);
    for (Eigen::Index j = 0; j < ny; ++j) wu(j) = yw[j] * basis.value(f, {yn[j], 0.0, 0.0});
    C[f] = (G * wu.asDiagonal()).cast<cplx>() * Ph;
  }
  const Mat r = 0.5 * (rho1 + rho1.adjoint());
  d.f = RMat::Zero(nx, np);
  // <x,p| rho1 |x,p> with rho1 = sum_kh rho_kh |u_k><u_h|
  for (Eigen::Index a = 0; a < M; ++a)
    for (Eigen::Index b = 0; b < M; ++b)
      if (r(a, b) != cplx{}) d.f += (r(a, b) * C[a].array() * C[b].conjugate().array()).real().matrix();
  d.f *= basis.mass / (2.0 * pi * hb);
  return d;
}

double pauli_factorization_error(fock::Statistics s, double nl, double nh, double nk) {
  const double sg = s == fock::Statistics::Bose ? 1.0 : -1.0;
  const double lhs = 1.0 + sg * nl + sg * 0.5 * (nh + nk);
  const double a = 1.0 + sg * nl + sg * nh, b = 1.0 + sg * nl + sg * nk;
  if (a < 0.0 || b < 0.0) throw ValidationError("Pauli factor negative");
  return std::abs(lhs - std::sqrt(a * b)) / std::abs(lhs);
}

PauliScan pauli_factorization_check(fock::Statistics s, double n_max, int points) {
  PauliScan scan;
  const int n = std::max(2, points);
  std::vector<double> grid;
  for (int i = 0; i < n; ++i) grid.push_back(n_max * i / (n - 1));
  scan.spread = grid;
  scan.error.assign(n, 0.0);
  for (double nl : grid)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double e = pauli_factorization_error(s, nl, grid[i], grid[j]);
        int sp = std::abs(i - j);
        scan.error[sp] = std::max(scan.error[sp], e);
        scan.max_error = std::max(scan.max_error, e);
      }
  return scan;
}

}  // namespace subdyn::kinetics
