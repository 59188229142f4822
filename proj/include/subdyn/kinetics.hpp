// kinetics.hpp: Kinetic generator on one-body monomials, Boltzmann gain/loss split,
// conservation and positivity audits, phase-space density.
#pragma once

#include <cstdint>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"
#include "subdyn/lindblad.hpp"
#include "subdyn/modes.hpp"

namespace subdyn::kinetics {

struct KineticConfig {
  double tau1 = 0.0;         // diagonal-enough cut |E_h - E_k| < hbar/tau1; <= 0 disables
  bool substitute = true;    // Gamma -> 1/4 sum R+R
  double shell = -1.0;       // keep collisions with |E_k+E_l-E_f1-E_f2| <= shell; < 0 keeps all
};

struct KineticGenerator {
  fock::FockSpace space;
  lindblad::KineticOperators ops;
  KineticConfig config;
  double hbar = 1.0;
  std::vector<double> energies;
  Mat H_eff;
  Mat Gamma;             // the Gamma used in L' (raw or substituted)
  std::vector<Mat> R;    // Fock operators, same order as ops.R_labels
  std::vector<Mat> a;    // annihilators
  int r_index(int k, int lambda) const;
};

KineticGenerator make_kinetic_generator(const fock::FockSpace& space, const lindblad::KineticOperators& ops,
                                        const KineticConfig& config = {});

// L'(a+_h a_k) =  (i/hbar)[H_eff, a+_h a_k]
//               - (1/hbar)([Gamma, a+_h] a_k - a+_h [Gamma, a_k])
//               + (1/hbar) sum_lambda R+_{h lambda} R_{k lambda}
// Rejects pairs failing the diagonal-enough cut.
Mat apply_generator(const KineticGenerator& kin, int h, int k);
// same formula, no cut
Mat generator_action(const KineticGenerator& kin, int h, int k);

struct BoltzmannParts {
  Mat gain, loss, streaming;
};
BoltzmannParts boltzmann_decompose(const KineticGenerator& kin, int h);

// Fock-space density of the quasi-free state with occupations n (grand canonical).
Mat product_state(const fock::FockSpace& space, const std::vector<double>& n);
std::vector<double> fermi_dirac(const std::vector<double>& E, double beta, double mu);
std::vector<double> bose_einstein(const std::vector<double>& E, double beta, double mu);

// Tr(w (gain_h + loss_h)) for every mode.
std::vector<double> collision_rates(const KineticGenerator& kin, const Mat& w);

struct AuditReport {
  double mass_residual = 0.0;      // max |L'N| entry
  double energy_residual = 0.0;    // |<L' sum E_h n_h>_w|
  double collision_rate = 0.0;     // sum_h |<gain_h>_w| + |<loss_h>_w|
  double energy_relative = 0.0;    // energy_residual / collision_rate
  bool energy_ok = true;           // energy_relative < 1%
  double positivity_min_form = 0.0;  // over random psi draws, normalised
  double positivity_min_eig = 0.0;   // block form, exact
};

// Short-time audit: X_hk = a+_h a_k + tau L'(a+_h a_k); the block operator
// [X_hk] over all modes is tested on `draws` random families {psi_h}.
AuditReport conservation_and_positivity(const KineticGenerator& kin, double tau, const Mat& w, int draws = 100,
                                        std::uint64_t seed = 1);

// Gaussian-smeared phase-space POVM (Husimi form) for a 1D box basis:
//   F(x,p) = (1/2 pi hbar) |x,p><x,p|,  <y|x,p> = (2 pi s^2)^(-1/4) exp(-(y-x)^2/(4 s^2) + i p y / hbar)
// Cells are Gauss-Legendre nodes over x in [-6s, L+6s]; in p the nodes are
// Gauss-Legendre in u with p = c sinh(u), c = hbar pi cutoff / L + hbar / (2s),
// so the slowly decaying momentum tails of box modes stay inside the grid.
struct PhaseSpaceDensity {
  std::vector<double> x, p, wx, wp;  // nodes and weights
  RMat f;                            // f(x_i, p_j)
  double sigma = 0.0;
  double total() const;              // sum f w_x w_p
  std::vector<double> momentum_marginal() const;
};

struct PhaseGrid {
  int nx = 96;
  int np = 192;
  double p_max = 0.0;  // <= 0: 100 c
};

// rho1_kh = <a+_h a_k>
PhaseSpaceDensity boltzmann_density(const Mat& rho1, const modes::ModeBasis& basis, const PhaseGrid& grid,
                                    double sigma);

struct PauliScan {
  double max_error = 0.0;
  std::vector<double> spread, error;  // |n_h - n_k| against max relative error at that spread
};

// Relative error of 2e(1 +- n_l +- (n_h + n_k)/2) against sqrt(2e(1 +- n_l +- n_h)) sqrt(2e(1 +- n_l +- n_k))
// over an exhaustive grid of occupations in [0, n_max].
double pauli_factorization_error(fock::Statistics s, double nl, double nh, double nk);
PauliScan pauli_factorization_check(fock::Statistics s, double n_max, int points = 41);

}  // namespace subdyn::kinetics
