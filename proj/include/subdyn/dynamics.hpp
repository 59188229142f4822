// dynamics.hpp: Master-equation integration, exact unitary reference, subdynamics
// comparison and Fokker–Planck coefficients.
#pragma once

#include <string>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/lindblad.hpp"

namespace subdyn::dynamics {

struct DensityCheck {
  double trace_error = 0.0;
  double hermiticity_error = 0.0;
  double min_eigenvalue = 0.0;
  bool ok(double psd_tol = 1e-9) const {
    return trace_error < 1e-9 && hermiticity_error < 1e-12 && min_eigenvalue >= -psd_tol;
  }
};

DensityCheck check_density(const Mat& rho);

// Clip eigenvalues in [-tol, 0) to zero and renormalise. Below -10 tol the
// state is not repaired: NumericalError. Returns true if anything was clipped.
bool repair_density(Mat& rho, double tol);

enum class Method { Auto, Exponential, RK4 };

struct EvolveOptions {
  Method method = Method::Auto;
  double psd_tol = 1e-9;
  double rk_tol = 1e-12;  // per-step local error, relative to ||rho||
  int exponential_limit = 200;  // Auto uses the exponential up to this Hilbert dimension
};

struct EvolveResult {
  std::vector<double> times;
  std::vector<Mat> states;
  Method method = Method::Auto;
  int repairs = 0;
  int steps = 0;
  double max_trace_drift = 0.0;
  double min_eigenvalue = 0.0;
};

// times ascending, starting at or after 0; rho0 is the state at t = 0.
EvolveResult evolve_master(const lindblad::LindbladGenerator& gen, const Mat& rho0,
                           const std::vector<double>& times, const EvolveOptions& opts = {});

// exp(-iHt/hbar) from one eigendecomposition.
class UnitaryEvolution {
 public:
  explicit UnitaryEvolution(const Mat& H, double hbar = 1.0);
  Mat propagator(double t) const;
  Vec evolve(const Vec& psi, double t) const;
  Mat evolve_density(const Mat& rho, double t) const;
  Mat heisenberg(const Mat& A, double t) const;  // U+ A U
  const RVec& energies() const { return E_; }

 private:
  RVec E_;
  Mat U_;
  double hbar_;
};

Mat evolve_exact(const Mat& H, const Mat& rho0, double t, double hbar = 1.0);
Vec evolve_exact(const Mat& H, const Vec& psi0, double t, double hbar = 1.0);

struct Observable {
  std::string label;
  Mat op;  // one-particle matrix A_gf, second quantised as sum A_gf a+_g a_f
};

// populations n_f and the number operator
std::vector<Observable> population_observables(int modes);

struct SubdynamicsReport {
  std::vector<double> times;
  std::vector<std::string> labels;
  std::vector<std::vector<double>> exact, reduced, free;  // [observable][time]
  std::vector<double> max_relative;  // per observable, |exact - reduced| / signal scale
  double max_deviation = 0.0;        // max over observables of max_relative
  double max_abs_deviation = 0.0;
  double max_signal = 0.0;  // max |exact - free|, the interaction effect
  double number_drift_exact = 0.0;
  double number_drift_reduced = 0.0;
  bool window_ok = true;
  std::string window_note;
};

struct SubdynamicsOptions {
  std::vector<double> times;
  double tau0 = 0.0;  // validity window [tau0, tau1]; 0 skips the check
  double tau1 = 0.0;
  EvolveOptions evolve;
};

SubdynamicsReport subdynamics_compare(const lindblad::MicroEmbedding& emb,
                                      const lindblad::LindbladGenerator& gen, const Mat& rho1,
                                      const std::vector<Observable>& observables,
                                      const SubdynamicsOptions& opts);

// (rho1(t) - rho1(0)) / t from exact evolution against the generator applied to
// rho1(0), both in the interaction picture of H0, on the entries where
// retained is nonzero (the secular pairs). Relative Frobenius gap.
double one_step_deviation(const lindblad::MicroEmbedding& emb, const lindblad::LindbladGenerator& gen,
                          const Mat& rho1, double t, const Mat& retained);

struct FPCoefficients {
  double D_pp = 0.0;
  double D_qq = 0.0;
  double eta = 0.0;
  double mass = 1.0;
  double drift = 0.0;          // mean momentum transfer rate
  double third_ratio = 0.0;    // |m3| / m2^(3/2)
  bool expansion_valid = true;
  std::string warning;
};

// Moments of momentum (and position) transfer over the jump family, taken in
// the eigenbasis of P (X) and weighted by the reference state's populations
// there. With rate(f -> g) = (1/hbar) sum_L |<g|L|f>|^2 and dp = p_g - p_f:
//   m_n   = sum_f w_f sum_g rate(f -> g) dp^n
//   D_pp  = m_2 / (2 hbar^2),   D_qq = m_2(x) / 2
//   eta   = -M * slope of m_1(f) against p_f (weighted least squares)
// Expansion flagged invalid when |m_3| > 0.1 m_2^(3/2).
FPCoefficients fokker_planck_reduce(const lindblad::LindbladGenerator& gen, const Mat& X, const Mat& P,
                                    double mass, const Mat& reference);

}  // namespace subdyn::dynamics
