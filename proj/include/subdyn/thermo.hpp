// thermo.hpp: Generalised Gibbs states on cell-wise fields, max-entropy fitting,
// closed thermodynamic evolution and the memory-carrying Gibbs state.
#pragma once

#include <string>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/fock.hpp"
#include "subdyn/kinetics.hpp"
#include "subdyn/modes.hpp"

namespace subdyn::thermo {

// Cells partition the box [0, L] of a 1D basis.
struct CellGrid {
  std::vector<double> edges;
  std::size_t cells() const { return edges.empty() ? 0 : edges.size() - 1; }
};
CellGrid uniform_cells(const modes::ModeBasis& basis, int n);

struct ThermoState {
  CellGrid grid;
  std::vector<double> beta, mu, v;
  std::size_t cells() const { return beta.size(); }
  void validate() const;
};

ThermoState uniform_state(const CellGrid& grid, double beta, double mu, double v = 0.0);

// Per cell, integrated over the cell:
//   rho_m(c) = m int psi+ psi
//   e(c)     = (hbar^2/2m) int grad psi+ grad psi + two-body part with pair midpoint in c
//   p(c)     = (1/2) int psi+ (-i hbar d) psi + h.c.
// The rest-frame forms at velocity v are
//   e0(c, v) = e(c) - v p(c) + (v^2/2) rho_m(c),   p0(c, v) = p(c) - v rho_m(c).
struct DensityOperatorSet {
  CellGrid grid;
  double mass = 1.0;
  double hbar = 1.0;
  bool interacting = false;
  std::vector<Mat> rho1, kinetic1, momentum1;  // one-body matrices
  std::vector<Mat> rho, energy, momentum;      // Fock operators
  std::size_t cells() const { return rho.size(); }
  Mat energy_rest(std::size_t c, double v) const;
  Mat momentum_rest(std::size_t c, double v) const;
};

// tensor may be empty (modes == 0) for the non-interacting energy density.
DensityOperatorSet build_density_operators(const fock::FockSpace& space, const modes::ModeBasis& basis,
                                           const CellGrid& grid, const modes::PotentialTensor& tensor,
                                           int order = 0);

// sum_c beta_c [e0(c, v_c) - mu_c rho_m(c)]
Mat exponent(const ThermoState& state, const DensityOperatorSet& ops);

struct GibbsState {
  Mat w;
  double log_z = 0.0;
};
// exp(-X) / Tr exp(-X), spectrum shifted by its minimum before exponentiating.
GibbsState gibbs_from_exponent(const Mat& X);
Mat gibbs_state(const ThermoState& state, const DensityOperatorSet& ops);

// Lab-frame expectations per cell.
struct Targets {
  std::vector<double> rho, momentum, energy;
};
Targets expectations(const DensityOperatorSet& ops, const Mat& w);

// Multipliers of (e, p, rho) per cell: (beta, -beta v, beta (v^2/2 - mu)).
std::vector<double> multipliers(const ThermoState& state);
ThermoState from_multipliers(const CellGrid& grid, const std::vector<double>& lambda);

struct FitOptions {
  double tolerance = 1e-8;  // max |<A> - target|
  int max_iterations = 200;
  double blowup = 1e8;      // multiplier norm treated as divergence
  double max_exponent_step = 2.0;
};

struct FitResult {
  ThermoState state;
  Mat w;
  double mismatch = 0.0;
  int iterations = 0;
};

// Damped Newton on the convex dual log Z(lambda) + lambda . y; the Hessian is the
// Kubo-Mori covariance of the constraint operators under the current w.
// Directions the operators cannot resolve are left at the initial guess.
FitResult fit_fields(const Targets& targets, const DensityOperatorSet& ops, const ThermoState& guess,
                     const FitOptions& opts = {});

// -k sum l log l over eigenvalues >= 1e-14
double entropy(const Mat& rho, double k = 1.0);

struct Rates {
  std::vector<double> rho, momentum, energy;
  double max_abs() const;
};

// d<A>/dt = Tr((L'A) w) for the one-body cell operators.
Rates kinetic_rates(const DensityOperatorSet& ops, const kinetics::KineticGenerator& kin, const Mat& w);
// d<A>/dt = (i/hbar) Tr([H, A] w)
Rates hamiltonian_rates(const DensityOperatorSet& ops, const Mat& H, const Mat& w, double hbar = 1.0);

struct ThermoOptions {
  FitOptions fit;
  Mat hamiltonian;  // optional: reports the Hamiltonian-only fluxes at each Gibbs state
};

struct ThermoSeries {
  std::vector<double> times;
  std::vector<ThermoState> states;
  std::vector<double> entropy;
  std::vector<double> entropy_production;  // Tr((L' X) w), X the Gibbs exponent
  std::vector<double> hamiltonian_flux;    // max |rate| of rho_m and e under (i/hbar)[H, .]
  std::vector<double> kinetic_flux;        // same under L'
  double max_mismatch = 0.0;
  bool completed = true;
  std::string failure;
};

// RK4 on the lab targets with a re-fit of the fields at every stage. The energy
// density must be one-body (L' is defined on a+_h a_k monomials). A failed fit
// stops the series at the last valid state.
ThermoSeries evolve_thermo(const ThermoState& state0, const DensityOperatorSet& ops,
                           const kinetics::KineticGenerator& kin, const std::vector<double>& times,
                           const ThermoOptions& opts = {});

// Field history on [T, t0], uniform sampling; fields are linear between samples.
struct MemoryHistory {
  std::vector<double> times;
  std::vector<ThermoState> states;
  double step = 0.0;
  void validate() const;
};

struct MemoryOptions {
  int order = 16;  // Gauss-Legendre points per history segment
};

struct MemoryResult {
  Mat state_direct;      // U(t-T) w(T) U+
  Mat state_split;       // local exponent at t plus the history integral
  Mat exponent_direct;   // X with rho = exp(-X)/Z
  Mat exponent_split;
  double agreement = 0.0;  // max |state_direct - state_split|
  double exponent_gap = 0.0;
  Mat bulk, gradient, boundary;  // the three integrals of the split form
  std::vector<double> times;     // history samples in [T, t]
  std::vector<double> boundary_series;  // Frobenius norm of the boundary integrand
};

MemoryResult memory_state(const MemoryHistory& history, const DensityOperatorSet& ops, const Mat& H, double t,
                          const MemoryOptions& opts = {});

}  // namespace subdyn::thermo
