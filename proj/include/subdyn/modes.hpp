// modes.hpp: Confined box eigenmodes and the two-body potential tensor.
#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "subdyn/common.hpp"

namespace subdyn::modes {

// Gauss–Legendre nodes and weights on [a, b].
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};
Quadrature gauss_legendre(int order, double a, double b);

struct BasisOptions {
  int quad_order = 64;
  std::size_t max_modes = 64;
  double hbar = 1.0;
};

// Dirichlet sine modes u_f(x) = prod_a sqrt(2/L_a) sin(pi n_a x_a / L_a).
struct ModeBasis {
  int dimension = 1;
  std::vector<double> lengths;
  int cutoff = 1;
  double mass = 1.0;
  double hbar = 1.0;
  int quad_order = 64;
  std::vector<std::array<int, 3>> labels;  // axis quantum numbers, unused axes are 0
  std::vector<double> energies;

  std::size_t size() const { return energies.size(); }
  double value(std::size_t f, const std::array<double, 3>& x) const;
  std::array<double, 3> gradient(std::size_t f, const std::array<double, 3>& x) const;
  double laplacian(std::size_t f, const std::array<double, 3>& x) const;
  // Single-axis factor sqrt(2/L) sin(pi n x / L).
  double axis_value(int axis, int n, double x) const;
};

ModeBasis build_box_basis(int dimension, const std::vector<double>& lengths, int cutoff,
                          double mass, const BasisOptions& opts = {});

// Keeps the listed modes, in the listed order; cutoff is unchanged.
ModeBasis select_modes(const ModeBasis& basis, const std::vector<std::size_t>& keep);

// Tensor product quadrature grid over the box.
struct Grid {
  std::vector<std::array<double, 3>> points;
  std::vector<double> weights;
};
Grid box_grid(const ModeBasis& basis, int order);

// max |int u_f u_g - delta_fg| on the basis quadrature grid.
double orthonormality_error(const ModeBasis& basis);
// max over grid of |-(hbar^2/2m) Lap u_f - E_f u_f|.
double laplacian_residual(const ModeBasis& basis);

enum class PotentialShape { None, Contact, Gaussian };

// V(r) = g exp(-r^2 / (2 range^2)) for Gaussian; g delta(r) for Contact,
// regularised in dim > 1 as a unit-normalised Gaussian of width `range`.
struct Potential {
  PotentialShape shape = PotentialShape::None;
  double strength = 0.0;
  double range = 0.1;
  double operator()(double r2) const;  // takes squared distance, Gaussian forms only
};

struct PotentialTensor {
  std::size_t modes = 0;
  std::vector<cplx> data;  // row-major [l1][l2][f2][f1]
  Potential potential;
  int quad_order = 0;
  double convergence_delta = 0.0;

  cplx& operator()(std::size_t l1, std::size_t l2, std::size_t f2, std::size_t f1) {
    return data[((l1 * modes + l2) * modes + f2) * modes + f1];
  }
  cplx operator()(std::size_t l1, std::size_t l2, std::size_t f2, std::size_t f1) const {
    return data[((l1 * modes + l2) * modes + f2) * modes + f1];
  }
  // max violation of exchange and hermitian symmetry
  double symmetry_error() const;
};

// Computes the tensor at `order` (0 = basis order) and again at twice that
// order; throws NumericalError when any element moves by more than `tol`.
PotentialTensor potential_tensor(const ModeBasis& basis, const Potential& potential,
                                 int order = 0, double tol = 1e-7);

// Single evaluation without the doubling check.
PotentialTensor potential_tensor_at(const ModeBasis& basis, const Potential& potential,
                                    int order);

PotentialTensor zero_tensor(std::size_t modes);

}  // namespace subdyn::modes
