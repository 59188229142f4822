// lindblad.cpp: Optical potential, jump families and the kinetic operators.
#include "subdyn/lindblad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include <unsupported/Eigen/KroneckerProduct>

namespace subdyn::lindblad {

namespace {

Mat kron(const Mat& a, const Mat& b) { return Eigen::kroneckerProduct(a, b).eval(); }

Mat random_unit(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Mat m(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j) m(i, j) = cplx(g(rng), g(rng));
  return m / m.norm();
}

double spectral_norm(const Mat& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Mat> svd(m);
  return svd.singularValues()(0);
}

}  // namespace

MacroSpec random_bath(const std::vector<double>& levels, int system_modes, double g,
                      std::uint64_t seed, double internal) {
  const Eigen::Index d = static_cast<Eigen::Index>(levels.size());
  if (d < 1) throw ValidationError("bath needs at least one level");
  std::mt19937_64 rng(seed);
  MacroSpec m;
  m.H_M = Mat::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) m.H_M(i, i) = levels[i];
  if (internal != 0.0) {
    Mat x = random_unit(d, rng);
    Mat h = 0.5 * (x + x.adjoint());
    h.diagonal().setZero();
    m.H_M += internal * h;
  }
  const int M = system_modes;
  m.coupling.assign(M * M, Mat::Zero(d, d));
  for (int p = 0; p < M; ++p)
    for (int q = p; q < M; ++q) {
      Mat x = random_unit(d, rng);
      if (p == q) {
        m.coupling[p * M + p] = g * 0.5 * (x + x.adjoint());
      } else {
        m.coupling[p * M + q] = g * x;
        m.coupling[q * M + p] = g * x.adjoint();
      }
    }
  return m;
}

Vec MicroEmbedding::bath_ket(const Vec& v) const {
  Vec out = Vec::Zero(joint_dim());
  out.head(bath_dim) = v;
  return out;
}

Mat MicroEmbedding::full_state(const Mat& rho1) const {
  Mat r = Mat::Zero(joint_dim(), joint_dim());
  for (int g = 0; g < system_modes; ++g)
    for (int f = 0; f < system_modes; ++f)
      if (rho1(g, f) != cplx{}) r += rho1(g, f) * a[g].adjoint() * rho_M_full * a[f];
  return r;
}

Mat MicroEmbedding::reduce(const Mat& rho) const {
  Mat out(system_modes, system_modes);
  for (int k = 0; k < system_modes; ++k)
    for (int h = 0; h < system_modes; ++h) out(k, h) = (a[h].adjoint() * a[k] * rho).trace();
  return out;
}

MicroEmbedding build_embedding(const std::vector<double>& energies, const MacroSpec& macro,
                               double beta, double hbar) {
  const int M = static_cast<int>(energies.size());
  if (M < 1) throw ValidationError("need at least one microsystem mode");
  const Eigen::Index d = macro.H_M.rows();
  if (macro.H_M.cols() != d || d < 1) throw ValidationError("H_M must be square");
  if (max_abs(macro.H_M - macro.H_M.adjoint()) > 1e-12) throw ValidationError("H_M not hermitian");
  if (static_cast<int>(macro.coupling.size()) != M * M) throw ValidationError("need M*M coupling blocks");
  for (int p = 0; p < M; ++p)
    for (int q = 0; q < M; ++q)
      if (max_abs(macro.coupling[p * M + q] - macro.coupling[q * M + p].adjoint()) > 1e-12)
        throw ValidationError("coupling blocks must satisfy W_qp = W_pq+");

  MicroEmbedding e;
  e.system_modes = M;
  e.energies = energies;
  e.beta = beta;
  e.hbar = hbar;
  e.H_M = macro.H_M;
  e.coupling = macro.coupling;
  Eigen::SelfAdjointEigenSolver<Mat> es(macro.H_M);
  e.bath_energies = es.eigenvalues();
  e.bath_states = es.eigenvectors();
  e.pi = RVec::Zero(d);
  const double e0 = e.bath_energies(0);
  if (std::isinf(beta) && beta > 0) {
    int n = 0;
    for (Eigen::Index i = 0; i < d; ++i)
      if (e.bath_energies(i) - e0 < 1e-10) ++n;
    for (Eigen::Index i = 0; i < d; ++i)
      if (e.bath_energies(i) - e0 < 1e-10) e.pi(i) = 1.0 / n;
  } else {
    double z = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) z += std::exp(-beta * (e.bath_energies(i) - e0));
    if (!std::isfinite(z) || !(z > 0.0)) throw NumericalError("bath state is not normalizable");
    for (Eigen::Index i = 0; i < d; ++i) e.pi(i) = std::exp(-beta * (e.bath_energies(i) - e0)) / z;
  }
  e.rho_M = e.bath_states * e.pi.cast<cplx>().asDiagonal() * e.bath_states.adjoint();

  e.sys = fock::enumerate_basis(fock::Statistics::Fermi, M, 1);
  e.bath_dim = d;
  const Eigen::Index ds = static_cast<Eigen::Index>(e.sys.dim());
  const Mat Ib = Mat::Identity(d, d), Is = Mat::Identity(ds, ds);
  std::vector<Mat> as;
  for (int f = 0; f < M; ++f) {
    as.push_back(fock::annihilate(e.sys, f).dense());
    e.a.push_back(kron(as.back(), Ib));
  }
  Mat h0 = Mat::Zero(ds, ds);
  for (int f = 0; f < M; ++f) h0 += energies[f] * as[f].adjoint() * as[f];
  e.H0 = kron(h0, Ib);
  e.HM = kron(Is, macro.H_M);
  e.V = Mat::Zero(ds * d, ds * d);
  for (int p = 0; p < M; ++p)
    for (int q = 0; q < M; ++q) e.V += kron(as[p].adjoint() * as[q], macro.coupling[p * M + q]);
  e.H = e.H0 + e.HM + e.V;
  Mat vac = Mat::Zero(ds, ds);
  vac(0, 0) = 1.0;
  e.rho_M_full = kron(vac, e.rho_M);
  return e;
}

std::pair<double, double> pole_scales(const MicroEmbedding& emb) {
  scattering::CommutatorResolvent r(emb.H, emb.hbar);
  const auto& p = r.poles();
  double width = p.empty() ? 0.0 : p.back() - p.front();
  double delta = p.size() > 1 ? width / static_cast<double>(p.size() - 1) : 0.0;
  return {delta, width};
}

MicroCoefficients micro_coefficients(const MicroEmbedding& emb, const MicroOptions& opts) {
  const int M = emb.system_modes;
  const double hbar = emb.hbar;
  MicroCoefficients c;
  auto [delta, width] = pole_scales(emb);
  c.delta = delta;
  double eps = opts.epsilon;
  if (eps <= 0.0) {
    double hi = opts.tau0 > 0.0 ? hbar / opts.tau0 : std::numeric_limits<double>::infinity();
    eps = std::min(std::max(std::sqrt(delta * width), 10.0 * delta), hi);
  }
  c.epsilon = eps;
  c.tau0 = opts.tau0 > 0.0 ? opts.tau0 : hbar / eps;
  c.tau1 = opts.tau1 > 0.0 ? opts.tau1 : 100.0 * c.tau0;
  if (opts.check_window && (eps < 10.0 * delta || eps > hbar / c.tau0 * (1.0 + 1e-12)))
    throw NumericalError("epsilon " + std::to_string(eps) + " outside the window [" +
                         std::to_string(10.0 * delta) + ", " + std::to_string(hbar / c.tau0) + "]");

  scattering::ScatteringMap T(emb.H, emb.V, hbar);
  std::vector<Mat> X(M);
  for (int k = 0; k < M; ++k) X[k] = T.apply(cplx(eps, -emb.energies[k] / hbar), emb.a[k]);

  // secular cut: same cluster (gap tolerance hbar/(10 tau1)) and |dE| < hbar/tau1
  std::vector<int> order(M);
  for (int i = 0; i < M; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](int x, int y) { return emb.energies[x] < emb.energies[y]; });
  std::vector<int> cluster(M, 0);
  for (int i = 1; i < M; ++i)
    cluster[order[i]] = cluster[order[i - 1]] +
                        (emb.energies[order[i]] - emb.energies[order[i - 1]] > hbar / (10.0 * c.tau1) ? 1 : 0);
  c.retained = Mat::Zero(M, M);
  c.Q = Mat::Zero(M, M);
  for (int k = 0; k < M; ++k)
    for (int f = 0; f < M; ++f) {
      bool keep = cluster[k] == cluster[f] && std::abs(emb.energies[k] - emb.energies[f]) < hbar / c.tau1;
      if (!keep) {
        c.dropped.emplace_back(k, f);
        continue;
      }
      c.retained(k, f) = 1.0;
      c.Q(k, f) = hbar * (X[k] * emb.a[f].adjoint() * emb.rho_M_full).trace();
    }

  const Eigen::Index d = emb.bath_dim;
  const Mat& S = emb.bath_states;
  // B[k][f] = <lambda| X_k a+_f |xi> on the microsystem-vacuum block
  std::vector<std::vector<Mat>> B(M, std::vector<Mat>(M));
  for (int k = 0; k < M; ++k)
    for (int f = 0; f < M; ++f) {
      Mat Y = X[k] * emb.a[f].adjoint();
      B[k][f] = S.adjoint() * Y.topLeftCorner(d, d) * S;
    }
  for (Eigen::Index xi = 0; xi < d; ++xi) {
    if (emb.pi(xi) <= opts.pi_cutoff) continue;
    const double pref = std::sqrt(2.0 * eps * hbar * hbar * hbar * emb.pi(xi));
    for (Eigen::Index lam = 0; lam < d; ++lam) {
      Jump j;
      j.lambda = static_cast<int>(lam);
      j.xi = static_cast<int>(xi);
      j.label = "L(" + std::to_string(lam) + "," + std::to_string(xi) + ")";
      j.op = Mat::Zero(M, M);
      for (int k = 0; k < M; ++k)
        for (int f = 0; f < M; ++f)
          j.op(k, f) = pref * B[k][f](lam, xi) /
                       (emb.energies[k] + emb.bath_energies(lam) - emb.energies[f] - emb.bath_energies(xi) -
                        I * hbar * eps);
      c.jumps.push_back(std::move(j));
    }
  }
  Mat sum = Mat::Zero(M, M);
  for (const auto& j : c.jumps) sum += j.op.adjoint() * j.op;
  Mat r = (c.Q + c.Q.adjoint() + sum).cwiseProduct(c.retained);
  c.raw_trace_residual = max_abs(r);
  return c;
}

Mat LindbladGenerator::sum_LdagL() const {
  Mat s = Mat::Zero(dim(), dim());
  for (const auto& j : jumps) s += j.op.adjoint() * j.op;
  return s;
}

Mat LindbladGenerator::apply(const Mat& rho) const {
  Mat out = (-I / hbar) * (H_eff * rho - rho * H_eff) + (0.5 / hbar) * (K * rho + rho * K);
  for (const auto& j : jumps) out += (1.0 / hbar) * j.op * rho * j.op.adjoint();
  return out;
}

Mat LindbladGenerator::adjoint_apply(const Mat& A) const {
  Mat out = (I / hbar) * (H_eff * A - A * H_eff) + (0.5 / hbar) * (K * A + A * K);
  for (const auto& j : jumps) out += (1.0 / hbar) * j.op.adjoint() * A * j.op;
  return out;
}

Mat LindbladGenerator::superoperator() const {
  const Eigen::Index n = dim();
  const Mat Id = Mat::Identity(n, n);
  Mat S = (-I / hbar) * (kron(Id, H_eff) - kron(H_eff.transpose(), Id)) +
          (0.5 / hbar) * (kron(Id, K) + kron(K.transpose(), Id));
  for (const auto& j : jumps) S += (1.0 / hbar) * kron(j.op.conjugate(), j.op);
  return S;
}

double LindbladGenerator::norm() const {
  double s = 2.0 * spectral_norm(H_eff) + spectral_norm(K);
  for (const auto& j : jumps) {
    double l = spectral_norm(j.op);
    s += l * l;
  }
  return s / hbar;
}

LindbladGenerator assemble_generator(const Mat& H0, const Mat& Q, const std::vector<Jump>& jumps,
                                     const AssembleOptions& opts) {
  const Eigen::Index n = H0.rows();
  if (H0.cols() != n || Q.rows() != n || Q.cols() != n) throw ValidationError("generator shapes disagree");
  for (const auto& j : jumps)
    if (j.op.rows() != n || j.op.cols() != n) throw ValidationError("jump operator shape disagrees");
  LindbladGenerator g;
  g.hbar = opts.hbar;
  g.Q = Q;
  g.jumps = jumps;
  g.H_eff = H0 + 0.5 * I * (Q - Q.adjoint());
  g.H_eff = 0.5 * (g.H_eff + g.H_eff.adjoint());
  Mat sum = g.sum_LdagL();
  Mat herm = Q + Q.adjoint();
  g.raw_trace_residual = max_abs(herm + sum);
  if (n > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> es(herm);
    g.q_hermitian_max_eig = es.eigenvalues().maxCoeff();
  }
  if (opts.tolerance > 0.0) {
    double scale = std::max(max_abs(sum), 1e-300);
    if (g.raw_trace_residual > opts.tolerance * scale)
      throw NumericalError("trace identity residual " + std::to_string(g.raw_trace_residual) +
                           " exceeds tolerance; check epsilon and truncation");
  }
  g.enforced = opts.enforce;
  g.K = opts.enforce ? Mat(-sum) : herm;
  return g;
}

LindbladGenerator micro_generator(const MicroEmbedding& emb, const MicroCoefficients& c,
                                  const AssembleOptions& opts) {
  const int M = emb.system_modes;
  Mat H0 = Mat::Zero(M, M);
  for (int f = 0; f < M; ++f) H0(f, f) = emb.energies[f];
  AssembleOptions o = opts;
  o.hbar = emb.hbar;
  LindbladGenerator g = assemble_generator(H0, c.Q, c.jumps, o);
  g.raw_trace_residual = c.raw_trace_residual;
  return g;
}

Mat pair_matrix(const scattering::PairBasis& pb, const Tensor4& c) {
  const int M = pb.modes;
  Mat ord(M * M, M * M);
  for (int l1 = 0; l1 < M; ++l1)
    for (int l2 = 0; l2 < M; ++l2)
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2) ord(pb.ordered(l1, l2), pb.ordered(f1, f2)) = c(l1, l2, f2, f1);
  const Mat B = pb.isometry.cast<cplx>();
  return B.transpose() * ord * B;
}

KineticOperators build_heff_gamma_R_kinetic(const scattering::PairBasis& pb,
                                            const std::vector<double>& E,
                                            const modes::PotentialTensor& tensor,
                                            const std::vector<double>& occ,
                                            const KineticOptions& opts) {
  const int M = pb.modes;
  const double hbar = opts.hbar, eps = opts.epsilon;
  if (!(eps > 0.0)) throw ValidationError("epsilon must be positive");
  auto ops = scattering::pair_operators(pb, E, tensor, occ);
  const Mat B = pb.isometry.cast<cplx>();
  // ordered-pair T2 at each distinct pair energy
  std::map<double, Mat> cache;
  auto T_at = [&](double energy) -> const Mat& {
    for (auto& [key, val] : cache)
      if (std::abs(key - energy) < 1e-12) return val;
    Mat tu = opts.born_only ? ops.V : scattering::t_matrix(ops, cplx(energy, hbar * eps));
    return cache[energy] = B * tu * B.transpose();
  };
  auto idx = [&](int a, int b) { return static_cast<Eigen::Index>(pb.ordered(a, b)); };

  KineticOperators k;
  k.statistics = pb.statistics;
  k.modes = M;
  k.energies = E;
  k.occupations = occ;
  k.epsilon = eps;
  k.hbar = hbar;
  k.veff = modes::zero_tensor(M);
  k.gamma = modes::zero_tensor(M);
  for (int l1 = 0; l1 < M; ++l1)
    for (int l2 = 0; l2 < M; ++l2)
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2) {
          const Mat& Tf = T_at(E[f1] + E[f2]);
          const Mat& Tl = T_at(E[l1] + E[l2]);
          cplx a = Tf(idx(l1, l2), idx(f1, f2));
          cplx b = std::conj(Tl(idx(f1, f2), idx(l1, l2)));
          k.veff(l1, l2, f2, f1) = 0.5 * (a + b);
          k.gamma(l1, l2, f2, f1) = 0.5 * I * (a - b);
        }
  const double s = pb.statistics == fock::Statistics::Bose ? 1.0 : -1.0;
  for (int kk = 0; kk < M; ++kk)
    for (int lam = 0; lam < M; ++lam) {
      Mat c = Mat::Zero(M, M);
      if (pb.statistics == fock::Statistics::Fermi && kk == lam) {  // no such pair state
        k.R.push_back(c);
        k.R_labels.emplace_back(kk, lam);
        continue;
      }
      double p = 1.0 + s * occ[lam] + s * occ[kk];
      if (p < 0.0) throw NumericalError("Pauli factor negative; occupations too large");
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2) {
          const Mat& Tf = T_at(E[f1] + E[f2]);
          c(f2, f1) = -I * std::sqrt(2.0 * hbar * eps * p) * Tf(idx(lam, kk), idx(f1, f2)) /
                      (E[kk] + E[lam] - E[f1] - E[f2] - I * hbar * eps);
        }
      k.R.push_back(c);
      k.R_labels.emplace_back(kk, lam);
    }
  k.gamma_quarter = modes::zero_tensor(M);
  for (const auto& c : k.R)
    for (int g1 = 0; g1 < M; ++g1)
      for (int g2 = 0; g2 < M; ++g2)
        for (int f1 = 0; f1 < M; ++f1)
          for (int f2 = 0; f2 < M; ++f2) k.gamma_quarter(g1, g2, f2, f1) += 0.5 * std::conj(c(g2, g1)) * c(f2, f1);
  k.gamma_half = k.gamma_quarter;
  for (auto& v : k.gamma_half.data) v *= 2.0;

  Mat G = pair_matrix(pb, k.gamma), Gq = pair_matrix(pb, k.gamma_quarter);
  double gn = G.norm();
  k.gamma_mismatch = gn > 0.0 ? (G - Gq).norm() / gn : (Gq.norm() > 0.0 ? 1.0 : 0.0);
  const double shell = opts.shell_tol < 0.0 ? 0.1 * hbar * eps : opts.shell_tol;
  Mat mask = Mat::Zero(G.rows(), G.cols());
  for (Eigen::Index p = 0; p < G.rows(); ++p)
    for (Eigen::Index q = 0; q < G.cols(); ++q) {
      auto [a1, a2] = pb.pairs[p];
      auto [b1, b2] = pb.pairs[q];
      if (std::abs(E[a1] + E[a2] - E[b1] - E[b2]) <= shell) mask(p, q) = 1.0;
    }
  Mat Gs = G.cwiseProduct(mask), Gqs = Gq.cwiseProduct(mask);
  k.gamma_mismatch_shell_abs = (Gs - Gqs).norm();
  k.gamma_mismatch_shell = Gs.norm() > 0.0 ? (Gs - Gqs).norm() / Gs.norm() : (Gqs.norm() > 0.0 ? 1.0 : 0.0);
  k.gamma_flag = k.gamma_mismatch_shell > opts.gamma_threshold;
  return k;
}

KineticFock kinetic_fock(const fock::FockSpace& space, const KineticOperators& k) {
  const int M = k.modes;
  if (space.modes != M) throw ValidationError("Fock space and kinetic operators disagree on modes");
  KineticFock out;
  Mat h = Mat::Zero(M, M);
  for (int f = 0; f < M; ++f) h(f, f) = k.energies[f];
  out.H_eff = fock::one_body(space, h).dense() + fock::two_body(space, k.veff).dense();
  out.Gamma = fock::two_body(space, k.gamma).dense();
  out.Gamma_quarter = fock::two_body(space, k.gamma_quarter).dense();
  out.Gamma_half = fock::two_body(space, k.gamma_half).dense();
  std::vector<Mat> a;
  for (int f = 0; f < M; ++f) a.push_back(fock::annihilate(space, f).dense());
  for (const auto& c : k.R) {
    Mat r = Mat::Zero(space.dim(), space.dim());
    for (int f1 = 0; f1 < M; ++f1)
      for (int f2 = 0; f2 < M; ++f2)
        if (c(f2, f1) != cplx{}) r += c(f2, f1) * a[f2] * a[f1];
    out.R.push_back(r);
  }
  return out;
}

}  // namespace subdyn::lindblad
