// scattering.hpp: Resolvents, the commutator scattering map and pair T-matrices.
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"

namespace subdyn::scattering {

// Local spacing of a sorted set of distinct pole positions around y.
double local_spacing(const std::vector<double>& poles, double y);

// Distinct values of a list after merging entries closer than tol.
std::vector<double> distinct_sorted(std::vector<double> v, double tol = 1e-9);

// Solves (z - H)x = b for hermitian H. Throws NumericalError when the
// distance from z to the spectrum is below 1% of the local level spacing.
Vec resolvent_apply(const Mat& H, cplx z, const Vec& b);

// Resolvent of the commutator superoperator K = (i/hbar)[H, .] for hermitian
// H, diagonalised once. z = i y + eps with eps > 0.
class CommutatorResolvent {
 public:
  explicit CommutatorResolvent(const Mat& H, double hbar = 1.0);
  // (z - K)^{-1} B. Throws NumericalError if Re z < 0.01 delta(y).
  Mat apply(cplx z, const Mat& B) const;
  // (z - K) X, for residual checks.
  Mat forward(cplx z, const Mat& X) const;
  // Bohr frequencies (E_a - E_b)/hbar, distinct and sorted.
  const std::vector<double>& poles() const { return poles_; }
  const RVec& energies() const { return evals_; }
  const Mat& eigenvectors() const { return evecs_; }
  double hbar() const { return hbar_; }

 private:
  Mat H_;
  RVec evals_;
  Mat evecs_;
  std::vector<double> poles_;
  double hbar_;
};

inline Mat resolvent_apply(const CommutatorResolvent& r, cplx z, const Mat& B) { return r.apply(z, B); }

// (i/hbar)[V, B]
Mat commutator_action(const Mat& V, const Mat& B, double hbar = 1.0);

// T(z)[B] = V'[B] + V'[(z - H')^{-1} V'[B]]
class ScatteringMap {
 public:
  ScatteringMap(const Mat& H, const Mat& V, double hbar = 1.0);
  Mat apply(cplx z, const Mat& B) const;
  Mat born(const Mat& B) const { return commutator_action(V_, B, hbar_); }
  const CommutatorResolvent& resolvent() const { return res_; }

 private:
  Mat V_;
  CommutatorResolvent res_;
  double hbar_;
};

// Pair kets over ordered mode pairs restricted to the exchange-symmetric
// (Bose) or antisymmetric (Fermi) subspace. Unit-norm kets: for l1 < l2
// (|l1 l2> +- |l2 l1>)/sqrt2, and |l l> for Bose. The kets of the 1/2!
// overlap convention are `conversion` times the unit kets.
struct PairBasis {
  fock::Statistics statistics = fock::Statistics::Bose;
  int modes = 0;
  std::vector<std::pair<int, int>> pairs;  // (l1, l2), l1 <= l2
  RMat isometry;                           // M^2 x P, columns are unit kets
  RMat symmetrizer;                        // M^2 x M^2, (1/2!)(dd +- dd)
  std::vector<double> conversion;          // 1/sqrt2 off-diagonal, 1 diagonal
  std::size_t size() const { return pairs.size(); }
  std::size_t ordered(int l1, int l2) const { return static_cast<std::size_t>(l1 * modes + l2); }
};

PairBasis make_pair_basis(fock::Statistics statistics, int modes);

// Two-particle matrices in the unit pair basis (P x P).
struct PairOperators {
  Mat H0;
  Mat V;
  Mat VL;
  Mat HL;
  Mat VR;
  Mat HR;
  RVec pauli;  // 1 +- n_l1 +- n_l2 per ordered pair
};

// Two-particle matrices with Pauli factors from the occupation background.
PairOperators pair_operators(const PairBasis& basis, const std::vector<double>& energies,
                             const modes::PotentialTensor& tensor,
                             const std::vector<double>& occupations);

// T2(z) = V + V (z - H_L)^{-1} V_L; z is an energy, typically E + i hbar eps.
Mat t_matrix(const PairOperators& ops, cplx z);
// Adjoint rebuilt from V_R, H_R: V + V_R (z* - H_R)^{-1} V.
Mat t_matrix_adjoint(const PairOperators& ops, cplx z);

// T2 in the unit-norm pair basis (P x P).
Mat t_matrix_pair(const PairBasis& basis, const std::vector<double>& energies,
                  const modes::PotentialTensor& tensor, const std::vector<double>& occupations,
                  cplx z);

// Matrix element <l2 l1| X |f2 f1> in the 1/2! overlap convention, X in the
// unit pair basis.
cplx pair_element(const PairBasis& basis, const Mat& ordered, int l1, int l2, int f2, int f1);

struct SmoothnessReport {
  double y_variation = 0.0;    // max relative change over the y window
  double eps_variation = 0.0;  // max relative change across the eps list
  double tau0 = 0.0;           // hbar / widest window with < 5% variation
  double spacing = 0.0;
  bool valid = true;
  std::string reason;
};

using Builder = std::function<Mat(double y, double eps)>;

// Scans builder around y0 over [y0 - dy/2, y0 + dy/2] and across epsilons.
// poles are the pole positions in y units (for the eps >> delta check).
SmoothnessReport smoothness_scan(const Builder& builder, double y0, double dy,
                                 const std::vector<double>& epsilons,
                                 const std::vector<double>& poles, double hbar = 1.0,
                                 double threshold = 0.05);

// Geometric mean of spacing and width, clamped to [10 delta, hbar/tau0].
double default_epsilon(double delta, double width, double tau0, double hbar = 1.0);

// Mean spacing of distinct levels.
double mean_spacing(const std::vector<double>& levels);

struct ScatteringData {
  cplx z;
  double epsilon = 0.0;
  double tau0_estimate = 0.0;
  std::vector<double> occupations;
  PairBasis basis;
  Mat t2;  // unit pair basis
};

}  // namespace subdyn::scattering
