// fock.hpp: Truncated Fock space with charge sectors and second-quantized operators.
#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/modes.hpp"

namespace subdyn::fock {

enum class Statistics { Bose, Fermi };

using Occupation = std::vector<int>;

struct FockSpace {
  Statistics statistics = Statistics::Fermi;
  int modes = 0;
  int n_max = 0;
  int n_cap = 1;
  std::vector<Occupation> states;
  std::vector<std::size_t> sector_offset;  // sector q occupies [offset[q], offset[q+1])
  std::map<Occupation, std::size_t> index;

  std::size_t dim() const { return states.size(); }
  int sector_of(std::size_t i) const;
  std::size_t sector_dim(int q) const { return sector_offset[q + 1] - sector_offset[q]; }
  std::optional<std::size_t> find(const Occupation& n) const;
  // True when every creation from state i stays inside the truncation.
  bool is_safe(std::size_t i) const;
};

constexpr std::size_t default_dim_cap = 20000;

FockSpace enumerate_basis(Statistics statistics, int modes, int n_max, int n_cap = -1,
                          std::size_t dim_cap = default_dim_cap);

struct Operator {
  SpMat mat;
  int sector_shift = 0;
  bool hermitian = false;
  Mat dense() const { return Mat(mat); }
};

enum class LadderKind { Create, Annihilate };

// Acts with a single ladder operator on an occupation vector; returns the
// amplitude (0 when the result leaves the truncation or vanishes).
double ladder_action(const FockSpace& space, Occupation& n, int f, LadderKind kind);

Operator ladder(const FockSpace& space, int f, LadderKind kind);
inline Operator annihilate(const FockSpace& s, int f) { return ladder(s, f, LadderKind::Annihilate); }
inline Operator create(const FockSpace& s, int f) { return ladder(s, f, LadderKind::Create); }

// H = sum E_f a+_f a_f + 1/2 sum V_{l1 l2 f2 f1} a+_l1 a+_l2 a_f2 a_f1.
Operator build_hamiltonian(const FockSpace& space, const std::vector<double>& energies,
                           const modes::PotentialTensor& tensor, double herm_tol = 1e-10);

// Two-body part alone.
Operator two_body(const FockSpace& space, const modes::PotentialTensor& tensor);

// One-body operator sum_{fg} h_fg a+_f a_g.
Operator one_body(const FockSpace& space, const Mat& h);

struct ChargeOperators {
  Operator number;
  Operator mass;
};
ChargeOperators charge_operators(const FockSpace& space, double mass = 1.0);

// Energy operator assembled as the integral of the energy density over the
// box: gradient term from quadrature plus the two-body tensor.
Operator energy_operator(const FockSpace& space, const modes::ModeBasis& basis,
                         const modes::PotentialTensor& tensor);

// psi(x) = sum_f u_f(x) a_f.
Mat field_operator(const FockSpace& space, const modes::ModeBasis& basis,
                   const std::array<double, 3>& x);

// Non-zero blocks of op only connect sectors q -> q + sector_shift.
bool respects_sectors(const FockSpace& space, const Operator& op);

// Projector onto the given sector, dim x dim.
SpMat sector_projector(const FockSpace& space, int q);

}  // namespace subdyn::fock
