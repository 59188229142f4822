// scattering.cpp: Resolvent solves, scattering map and pair T-matrices.
#include "subdyn/scattering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace subdyn::scattering {

std::vector<double> distinct_sorted(std::vector<double> v, double tol) {
  std::sort(v.begin(), v.end());
  std::vector<double> out;
  for (double x : v)
    if (out.empty() || x - out.back() > tol) out.push_back(x);
  return out;
}

double local_spacing(const std::vector<double>& poles, double y) {
  if (poles.size() < 2) return 0.0;
  auto it = std::lower_bound(poles.begin(), poles.end(), y);
  std::size_t i = static_cast<std::size_t>(it - poles.begin());
  if (i == poles.size() || (i > 0 && y - poles[i - 1] < poles[i] - y)) --i;
  double s = std::numeric_limits<double>::infinity();
  if (i > 0) s = std::min(s, poles[i] - poles[i - 1]);
  if (i + 1 < poles.size()) s = std::min(s, poles[i + 1] - poles[i]);
  return s;
}

double mean_spacing(const std::vector<double>& levels) {
  auto d = distinct_sorted(levels);
  if (d.size() < 2) return 0.0;
  return (d.back() - d.front()) / static_cast<double>(d.size() - 1);
}

Vec resolvent_apply(const Mat& H, cplx z, const Vec& b) {
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + es.eigenvalues().size());
  double delta = local_spacing(distinct_sorted(ev), z.real());
  if (std::abs(z.imag()) < 0.01 * delta)
    throw NumericalError("resolvent near-singular: |Im z| = " + std::to_string(std::abs(z.imag())) +
                         " below 1% of level spacing " + std::to_string(delta));
  const Mat& U = es.eigenvectors();
  Vec c = U.adjoint() * b;
  for (Eigen::Index i = 0; i < c.size(); ++i) c[i] /= (z - es.eigenvalues()[i]);
  return U * c;
}

CommutatorResolvent::CommutatorResolvent(const Mat& H, double hbar) : H_(H), hbar_(hbar) {
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  evals_ = es.eigenvalues();
  evecs_ = es.eigenvectors();
  std::vector<double> w;
  w.reserve(evals_.size() * evals_.size());
  for (Eigen::Index a = 0; a < evals_.size(); ++a)
    for (Eigen::Index b = 0; b < evals_.size(); ++b) w.push_back((evals_[a] - evals_[b]) / hbar);
  poles_ = distinct_sorted(w);
}

Mat CommutatorResolvent::apply(cplx z, const Mat& B) const {
  double delta = local_spacing(poles_, z.imag());
  if (!(z.real() > 0.0) || z.real() < 0.01 * delta)
    throw NumericalError("commutator resolvent near-singular: eps = " + std::to_string(z.real()) +
                         " against local spacing " + std::to_string(delta));
  Mat Bt = evecs_.adjoint() * B * evecs_;
  const Eigen::Index n = evals_.size();
  for (Eigen::Index a = 0; a < n; ++a)
    for (Eigen::Index b = 0; b < n; ++b) Bt(a, b) /= z - I * (evals_[a] - evals_[b]) / hbar_;
  return evecs_ * Bt * evecs_.adjoint();
}

Mat CommutatorResolvent::forward(cplx z, const Mat& X) const {
  return z * X - commutator_action(H_, X, hbar_);
}

Mat commutator_action(const Mat& V, const Mat& B, double hbar) {
  return (I / hbar) * (V * B - B * V);
}

ScatteringMap::ScatteringMap(const Mat& H, const Mat& V, double hbar)
    : V_(V), res_(H, hbar), hbar_(hbar) {}

Mat ScatteringMap::apply(cplx z, const Mat& B) const {
  Mat x = commutator_action(V_, B, hbar_);
  return x + commutator_action(V_, res_.apply(z, x), hbar_);
}

PairBasis make_pair_basis(fock::Statistics statistics, int modes) {
  PairBasis pb;
  pb.statistics = statistics;
  pb.modes = modes;
  const bool bose = statistics == fock::Statistics::Bose;
  const double sgn = bose ? 1.0 : -1.0;
  const int M = modes;
  for (int l1 = 0; l1 < M; ++l1)
    for (int l2 = l1; l2 < M; ++l2)
      if (bose || l1 != l2) pb.pairs.emplace_back(l1, l2);
  pb.isometry = RMat::Zero(M * M, pb.pairs.size());
  for (std::size_t p = 0; p < pb.pairs.size(); ++p) {
    auto [l1, l2] = pb.pairs[p];
    if (l1 == l2) {
      pb.isometry(pb.ordered(l1, l1), p) = 1.0;
      pb.conversion.push_back(1.0);
    } else {
      pb.isometry(pb.ordered(l1, l2), p) = 1.0 / std::sqrt(2.0);
      pb.isometry(pb.ordered(l2, l1), p) = sgn / std::sqrt(2.0);
      pb.conversion.push_back(1.0 / std::sqrt(2.0));
    }
  }
  pb.symmetrizer = RMat::Zero(M * M, M * M);
  for (int l1 = 0; l1 < M; ++l1)
    for (int l2 = 0; l2 < M; ++l2)
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2)
          pb.symmetrizer(pb.ordered(l1, l2), pb.ordered(f1, f2)) =
              0.5 * ((l1 == f1 && l2 == f2 ? 1.0 : 0.0) + sgn * (l1 == f2 && l2 == f1 ? 1.0 : 0.0));
  return pb;
}

PairOperators pair_operators(const PairBasis& pb, const std::vector<double>& energies,
                             const modes::PotentialTensor& tensor,
                             const std::vector<double>& occ) {
  const int M = pb.modes;
  if (static_cast<int>(energies.size()) != M || static_cast<int>(tensor.modes) != M ||
      static_cast<int>(occ.size()) != M)
    throw ValidationError("pair operator inputs disagree on the mode count");
  const bool bose = pb.statistics == fock::Statistics::Bose;
  for (double n : occ)
    if (n < 0.0 || (!bose && n > 1.0)) throw ValidationError("occupation outside the allowed range");
  Mat Vord(M * M, M * M);
  for (int l1 = 0; l1 < M; ++l1)
    for (int l2 = 0; l2 < M; ++l2)
      for (int f1 = 0; f1 < M; ++f1)
        for (int f2 = 0; f2 < M; ++f2) Vord(pb.ordered(l1, l2), pb.ordered(f1, f2)) = tensor(l1, l2, f2, f1);
  const Mat B = pb.isometry.cast<cplx>();
  PairOperators ops;
  const Eigen::Index P = static_cast<Eigen::Index>(pb.size());
  ops.V = B.transpose() * Vord * B;
  ops.H0 = Mat::Zero(P, P);
  ops.pauli.resize(P);
  const double s = bose ? 1.0 : -1.0;
  for (Eigen::Index p = 0; p < P; ++p) {
    auto [l1, l2] = pb.pairs[p];
    ops.H0(p, p) = energies[l1] + energies[l2];
    ops.pauli[p] = 1.0 + s * occ[l1] + s * occ[l2];
  }
  ops.VL = ops.pauli.cast<cplx>().asDiagonal() * ops.V;
  ops.HL = ops.H0 + ops.VL;
  ops.VR = ops.VL.adjoint();
  ops.HR = ops.HL.adjoint();
  return ops;
}

namespace {

void check_pair_poles(const Mat& HL, cplx z) {
  Eigen::ComplexEigenSolver<Mat> es(HL, false);
  std::vector<double> re;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) re.push_back(es.eigenvalues()[i].real());
  double delta = local_spacing(distinct_sorted(re), z.real());
  double dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    dist = std::min(dist, std::abs(z - es.eigenvalues()[i]));
  if (std::abs(z.imag()) < 0.01 * delta && dist < 0.01 * delta)
    throw NumericalError("pair resolvent near-singular at z = (" + std::to_string(z.real()) + ", " +
                         std::to_string(z.imag()) + ")");
}

}  // namespace

Mat t_matrix(const PairOperators& ops, cplx z) {
  check_pair_poles(ops.HL, z);
  const Eigen::Index P = ops.H0.rows();
  Mat A = z * Mat::Identity(P, P) - ops.HL;
  return ops.V + ops.V * A.partialPivLu().solve(ops.VL);
}

Mat t_matrix_adjoint(const PairOperators& ops, cplx z) {
  const Eigen::Index P = ops.H0.rows();
  Mat A = std::conj(z) * Mat::Identity(P, P) - ops.HR;
  return ops.V + ops.VR * A.partialPivLu().solve(ops.V);
}

Mat t_matrix_pair(const PairBasis& basis, const std::vector<double>& energies,
                  const modes::PotentialTensor& tensor, const std::vector<double>& occupations,
                  cplx z) {
  return t_matrix(pair_operators(basis, energies, tensor, occupations), z);
}

cplx pair_element(const PairBasis& pb, const Mat& X, int l1, int l2, int f2, int f1) {
  const Mat B = pb.isometry.cast<cplx>();
  Eigen::Index r = static_cast<Eigen::Index>(pb.ordered(l1, l2));
  Eigen::Index c = static_cast<Eigen::Index>(pb.ordered(f1, f2));
  return (B.row(r) * X * B.row(c).transpose())(0, 0);
}

namespace {

double rel_change(const Mat& a, const Mat& ref) {
  double n = ref.norm();
  if (n == 0.0) return (a - ref).norm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return (a - ref).norm() / n;
}

double window_variation(const Builder& b, double y0, double dy, double eps, const Mat& ref) {
  double v = 0.0;
  const int n = 8;
  for (int k = 0; k <= n; ++k) {
    double y = y0 - 0.5 * dy + dy * k / n;
    v = std::max(v, rel_change(b(y, eps), ref));
  }
  return v;
}

}  // namespace

SmoothnessReport smoothness_scan(const Builder& builder, double y0, double dy,
                                 const std::vector<double>& epsilons,
                                 const std::vector<double>& poles, double hbar, double threshold) {
  if (epsilons.empty()) throw ValidationError("epsilon list is empty");
  auto eps = epsilons;
  std::sort(eps.begin(), eps.end());
  if (eps.front() <= 0.0) throw ValidationError("epsilon must be positive");
  if (eps.back() < 10.0 * eps.front()) throw ValidationError("epsilon list must span a decade");
  SmoothnessReport r;
  r.spacing = local_spacing(distinct_sorted(poles), y0);
  const double eps_mid = std::sqrt(eps.front() * eps.back());
  Mat ref = builder(y0, eps_mid);
  r.y_variation = window_variation(builder, y0, dy, eps_mid, ref);
  for (double e : eps) r.eps_variation = std::max(r.eps_variation, rel_change(builder(y0, e), ref));
  double widest = 0.0;
  for (int k = -10; k <= 10; ++k) {
    double w = dy * std::pow(2.0, k);
    if (window_variation(builder, y0, w, eps_mid, ref) < threshold) widest = w;
    else break;
  }
  r.tau0 = widest > 0.0 ? hbar / widest : std::numeric_limits<double>::infinity();
  if (eps.front() < r.spacing) {
    r.valid = false;
    r.reason = "epsilon below the local pole spacing";
  } else if (r.y_variation >= threshold) {
    r.valid = false;
    r.reason = "T varies by more than the threshold over the window";
  } else if (r.eps_variation >= threshold) {
    r.valid = false;
    r.reason = "T depends on epsilon beyond the threshold";
  }
  return r;
}

double default_epsilon(double delta, double width, double tau0, double hbar) {
  double lo = 10.0 * delta, hi = hbar / tau0;
  if (hi < lo)
    throw NumericalError("no admissible epsilon: 10*delta = " + std::to_string(lo) +
                         " exceeds hbar/tau0 = " + std::to_string(hi));
  return std::clamp(std::sqrt(delta * width), lo, hi);
}

}  // namespace subdyn::scattering
