// lindblad.hpp: Microsystem-in-matter generators and kinetic operator families.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"
#include "subdyn/scattering.hpp"

namespace subdyn::lindblad {

// Macrosystem description: H_M on the bath space and the coupling
// V = sum_pq a+_p a_q (x) W_pq, stored row-major in p.
struct MacroSpec {
  Mat H_M;
  std::vector<Mat> coupling;
};

// Bath with the given levels and a random hermitian coupling pattern of unit
// size scaled by g. Deterministic in seed.
MacroSpec random_bath(const std::vector<double>& levels, int system_modes, double g,
                      std::uint64_t seed, double internal = 0.0);

struct MicroEmbedding {
  int system_modes = 0;
  std::vector<double> energies;  // E_f of the one-particle space
  double beta = 1.0;
  double hbar = 1.0;
  Mat H_M;
  RVec bath_energies;  // E_lambda, ascending
  Mat bath_states;     // columns |lambda>, also the eigenvectors of rho_M
  RVec pi;             // populations pi_xi on bath_states
  Mat rho_M;
  std::vector<Mat> coupling;
  // joint space: (vacuum + one particle) (x) bath
  fock::FockSpace sys;
  Eigen::Index bath_dim = 0;
  std::vector<Mat> a;  // a_f on the joint space
  Mat H0, HM, V, H;    // joint operators, H = H0 + HM + V
  Mat rho_M_full;      // |0><0| (x) rho_M

  Eigen::Index joint_dim() const { return static_cast<Eigen::Index>(sys.dim()) * bath_dim; }
  // |0> (x) |v>
  Vec bath_ket(const Vec& v) const;
  // Collision state: sum a+_g rho_M a_f rho1_gf
  Mat full_state(const Mat& rho1) const;
  // one-particle matrix rho_kh = Tr(a+_h a_k rho)
  Mat reduce(const Mat& rho_full) const;
};

// beta = +inf selects the ground projector (uniform over a degenerate ground level).
MicroEmbedding build_embedding(const std::vector<double>& energies, const MacroSpec& macro,
                               double beta, double hbar = 1.0);

struct Jump {
  Mat op;
  std::string label;
  int lambda = -1;
  int xi = -1;
};

struct MicroOptions {
  double epsilon = 0.0;  // <= 0 selects the default window value
  double tau0 = 0.0;     // <= 0: estimated as hbar / epsilon
  double tau1 = 0.0;     // <= 0: 100 tau0
  bool check_window = true;
  double pi_cutoff = 1e-14;
};

struct MicroCoefficients {
  Mat Q;
  std::vector<Jump> jumps;
  std::vector<std::pair<int, int>> dropped;  // (k, f) removed by the secular cut
  Mat retained;                              // 1 where (k, f) passes the cut
  double epsilon = 0.0;
  double tau0 = 0.0;
  double tau1 = 0.0;
  double delta = 0.0;  // mean spacing of the commutator poles
  double raw_trace_residual = 0.0;  // on retained entries
};

// Pole spacing delta and spectral width of the joint commutator.
std::pair<double, double> pole_scales(const MicroEmbedding& emb);

MicroCoefficients micro_coefficients(const MicroEmbedding& emb, const MicroOptions& opts = {});

// Generic generator
//   d rho/dt = -(i/hbar)[H, rho] + (1/2hbar){K, rho} + (1/hbar) sum L rho L+
// with K = Q + Q+ (raw) or K = -sum L+L (enforced).
struct LindbladGenerator {
  Mat H_eff;
  Mat Q;
  Mat K;
  std::vector<Jump> jumps;
  double hbar = 1.0;
  bool enforced = false;
  double raw_trace_residual = 0.0;
  double q_hermitian_max_eig = 0.0;  // largest eigenvalue of Q + Q+, expected <= 0

  Eigen::Index dim() const { return H_eff.rows(); }
  Mat apply(const Mat& rho) const;
  // Heisenberg form: (i/hbar)[H, A] + (1/2hbar){K, A} + (1/hbar) sum L+ A L
  Mat adjoint_apply(const Mat& A) const;
  // column-major vectorised superoperator
  Mat superoperator() const;
  Mat sum_LdagL() const;
  // -1/2 (Q + Q+) and 1/2 sum L+L: the one-body gamma and its jump form
  Mat gamma() const { return -0.5 * (Q + Q.adjoint()); }
  Mat gamma_half_from_jumps() const { return 0.5 * sum_LdagL(); }
  double norm() const;  // operator-norm scale of the superoperator
};

struct AssembleOptions {
  bool enforce = true;
  // Relative tolerance on the raw residual against ||sum L+L||; 0 disables.
  double tolerance = 0.0;
  double hbar = 1.0;
};

LindbladGenerator assemble_generator(const Mat& H0, const Mat& Q, const std::vector<Jump>& jumps,
                                     const AssembleOptions& opts = {});

// Full path: embedding -> coefficients -> generator.
LindbladGenerator micro_generator(const MicroEmbedding& emb, const MicroCoefficients& c,
                                  const AssembleOptions& opts = {});

struct KineticOptions {
  double epsilon = 1.0;
  double hbar = 1.0;
  bool born_only = false;     // replace T2 by V2
  double shell_tol = -1.0;    // on-shell window; < 0 selects 0.1 hbar eps
  double gamma_threshold = 0.1;
};

// Two-body coefficient tensor C_{l1 l2 f2 f1} of 1/2 sum a+ a+ C a a.
using Tensor4 = modes::PotentialTensor;

struct KineticOperators {
  fock::Statistics statistics = fock::Statistics::Fermi;
  int modes = 0;
  std::vector<double> energies;
  std::vector<double> occupations;
  double epsilon = 0.0;
  double hbar = 1.0;
  Tensor4 veff;
  Tensor4 gamma;
  Tensor4 gamma_quarter;  // from 1/4 sum R+R
  Tensor4 gamma_half;     // from 1/2 sum R+R, labelled variant
  // R_{k lambda} = sum c_{f2 f1} a_f2 a_f1, coefficient matrix c(f2, f1)
  std::vector<Mat> R;
  std::vector<std::pair<int, int>> R_labels;  // (k, lambda)
  double gamma_mismatch = 0.0;        // ||Gamma - 1/4 R+R|| / ||Gamma||, pair basis
  double gamma_mismatch_shell = 0.0;  // same, on-shell blocks only
  double gamma_mismatch_shell_abs = 0.0;
  bool gamma_flag = false;
};

KineticOperators build_heff_gamma_R_kinetic(const scattering::PairBasis& basis,
                                            const std::vector<double>& energies,
                                            const modes::PotentialTensor& tensor,
                                            const std::vector<double>& occupations,
                                            const KineticOptions& opts = {});

// Pair-basis matrix of a two-body coefficient tensor.
Mat pair_matrix(const scattering::PairBasis& basis, const Tensor4& c);

struct KineticFock {
  Mat H_eff;
  Mat Gamma;
  Mat Gamma_quarter;
  Mat Gamma_half;
  std::vector<Mat> R;
};

KineticFock kinetic_fock(const fock::FockSpace& space, const KineticOperators& k);

}  // namespace subdyn::lindblad
