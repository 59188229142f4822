// fock.cpp: Occupation-number basis, ladder operators and field Hamiltonians.
#include "subdyn/fock.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace subdyn::fock {

int FockSpace::sector_of(std::size_t i) const {
  auto it = std::upper_bound(sector_offset.begin(), sector_offset.end(), i);
  return static_cast<int>(it - sector_offset.begin()) - 1;
}

std::optional<std::size_t> FockSpace::find(const Occupation& n) const {
  auto it = index.find(n);
  if (it == index.end()) return std::nullopt;
  return it->second;
}

bool FockSpace::is_safe(std::size_t i) const {
  const Occupation& n = states[i];
  int total = 0;
  for (int v : n) {
    total += v;
    if (statistics == Statistics::Bose && v >= n_cap) return false;
  }
  return total < n_max;
}

namespace {

double count_states(int modes, int n_max, int cap) {
  // ways[q] = number of occupation vectors with total q
  std::vector<double> ways(n_max + 1, 0.0);
  ways[0] = 1.0;
  for (int f = 0; f < modes; ++f) {
    std::vector<double> next(n_max + 1, 0.0);
    for (int q = 0; q <= n_max; ++q)
      for (int k = 0; k <= cap && q + k <= n_max; ++k) next[q + k] += ways[q];
    ways = next;
  }
  double s = 0.0;
  for (double w : ways) s += w;
  return s;
}

}  // namespace

FockSpace enumerate_basis(Statistics statistics, int modes, int n_max, int n_cap,
                          std::size_t dim_cap) {
  if (modes < 1) throw ValidationError("need at least one mode");
  if (n_max < 0) throw ValidationError("N_max must be >= 0");
  if (statistics == Statistics::Fermi) {
    if (n_max > modes) throw ValidationError("Fermi N_max cannot exceed the mode count");
    n_cap = 1;
  } else if (n_cap < 0) {
    n_cap = n_max;
  }
  double count = count_states(modes, n_max, n_cap);
  if (count > static_cast<double>(dim_cap))
    throw ValidationError("Fock dimension " + std::to_string(static_cast<long long>(count)) +
                          " exceeds cap " + std::to_string(dim_cap));

  FockSpace s;
  s.statistics = statistics;
  s.modes = modes;
  s.n_max = n_max;
  s.n_cap = n_cap;
  std::vector<std::vector<Occupation>> by_sector(n_max + 1);
  Occupation n(modes, 0);
  std::function<void(int, int)> rec = [&](int f, int left) {
    if (f == modes) {
      by_sector[n_max - left].push_back(n);
      return;
    }
    for (int k = 0; k <= std::min(left, n_cap); ++k) {
      n[f] = k;
      rec(f + 1, left - k);
    }
    n[f] = 0;
  };
  rec(0, n_max);
  s.sector_offset.push_back(0);
  for (auto& sec : by_sector) {
    // earlier modes fill first: 10 before 01
    std::sort(sec.begin(), sec.end(), std::greater<>());
    for (auto& o : sec) {
      s.index[o] = s.states.size();
      s.states.push_back(o);
    }
    s.sector_offset.push_back(s.states.size());
  }
  return s;
}

double ladder_action(const FockSpace& space, Occupation& n, int f, LadderKind kind) {
  if (f < 0 || f >= space.modes) throw ValidationError("mode index out of range");
  double sign = 1.0;
  if (space.statistics == Statistics::Fermi) {
    int before = 0;
    for (int g = 0; g < f; ++g) before += n[g];
    if (before % 2) sign = -1.0;
  }
  if (kind == LadderKind::Annihilate) {
    if (n[f] == 0) return 0.0;
    double amp = std::sqrt(static_cast<double>(n[f]));
    --n[f];
    return sign * amp;
  }
  int total = 0;
  for (int v : n) total += v;
  if (n[f] >= space.n_cap || total >= space.n_max) return 0.0;
  ++n[f];
  return sign * std::sqrt(static_cast<double>(n[f]));
}

Operator ladder(const FockSpace& space, int f, LadderKind kind) {
  if (f < 0 || f >= space.modes) throw ValidationError("mode index out of range");
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t j = 0; j < space.dim(); ++j) {
    Occupation n = space.states[j];
    double amp = ladder_action(space, n, f, kind);
    if (amp != 0.0) trip.emplace_back(static_cast<int>(*space.find(n)), static_cast<int>(j), amp);
  }
  Operator op;
  op.mat.resize(space.dim(), space.dim());
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.sector_shift = kind == LadderKind::Create ? 1 : -1;
  return op;
}

Operator one_body(const FockSpace& space, const Mat& h) {
  std::vector<Eigen::Triplet<cplx>> trip;
  const int M = space.modes;
  for (std::size_t j = 0; j < space.dim(); ++j)
    for (int g = 0; g < M; ++g) {
      Occupation n = space.states[j];
      double a = ladder_action(space, n, g, LadderKind::Annihilate);
      if (a == 0.0) continue;
      for (int f = 0; f < M; ++f) {
        if (h(f, g) == cplx{}) continue;
        Occupation m = n;
        double b = ladder_action(space, m, f, LadderKind::Create);
        if (b == 0.0) continue;
        trip.emplace_back(static_cast<int>(*space.find(m)), static_cast<int>(j), h(f, g) * a * b);
      }
    }
  Operator op;
  op.mat.resize(space.dim(), space.dim());
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.hermitian = max_abs(h - h.adjoint()) < 1e-12;
  return op;
}

Operator two_body(const FockSpace& space, const modes::PotentialTensor& V) {
  const int M = space.modes;
  if (static_cast<int>(V.modes) != M) throw ValidationError("tensor size does not match mode count");
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t j = 0; j < space.dim(); ++j)
    for (int f1 = 0; f1 < M; ++f1) {
      Occupation n1 = space.states[j];
      double a1 = ladder_action(space, n1, f1, LadderKind::Annihilate);
      if (a1 == 0.0) continue;
      for (int f2 = 0; f2 < M; ++f2) {
        Occupation n2 = n1;
        double a2 = ladder_action(space, n2, f2, LadderKind::Annihilate);
        if (a2 == 0.0) continue;
        for (int l2 = 0; l2 < M; ++l2) {
          Occupation n3 = n2;
          double c2 = ladder_action(space, n3, l2, LadderKind::Create);
          if (c2 == 0.0) continue;
          for (int l1 = 0; l1 < M; ++l1) {
            cplx v = V(l1, l2, f2, f1);
            if (v == cplx{}) continue;
            Occupation n4 = n3;
            double c1 = ladder_action(space, n4, l1, LadderKind::Create);
            if (c1 == 0.0) continue;
            trip.emplace_back(static_cast<int>(*space.find(n4)), static_cast<int>(j),
                              0.5 * v * a1 * a2 * c2 * c1);
          }
        }
      }
    }
  Operator op;
  op.mat.resize(space.dim(), space.dim());
  op.mat.setFromTriplets(trip.begin(), trip.end());
  op.hermitian = true;
  return op;
}

Operator build_hamiltonian(const FockSpace& space, const std::vector<double>& energies,
                           const modes::PotentialTensor& tensor, double herm_tol) {
  const int M = space.modes;
  if (static_cast<int>(energies.size()) != M) throw ValidationError("energies do not match mode count");
  Mat h = Mat::Zero(M, M);
  for (int f = 0; f < M; ++f) h(f, f) = energies[f];
  Operator op;
  op.mat = one_body(space, h).mat + two_body(space, tensor).mat;
  op.mat.makeCompressed();
  SpMat diff = op.mat - SpMat(op.mat.adjoint());
  double err = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SpMat::InnerIterator it(diff, k); it; ++it) err = std::max(err, std::abs(it.value()));
  if (err > herm_tol)
    throw NumericalError("Hamiltonian not hermitian (error " + std::to_string(err) +
                         "); check the potential tensor");
  op.hermitian = true;
  return op;
}

ChargeOperators charge_operators(const FockSpace& space, double mass) {
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t i = 0; i < space.dim(); ++i) {
    int total = 0;
    for (int v : space.states[i]) total += v;
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), static_cast<double>(total));
  }
  ChargeOperators c;
  c.number.mat.resize(space.dim(), space.dim());
  c.number.mat.setFromTriplets(trip.begin(), trip.end());
  c.number.hermitian = true;
  c.mass.mat = mass * c.number.mat;
  c.mass.hermitian = true;
  return c;
}

Operator energy_operator(const FockSpace& space, const modes::ModeBasis& basis,
                         const modes::PotentialTensor& tensor) {
  const std::size_t M = basis.size();
  modes::Grid g = modes::box_grid(basis, basis.quad_order);
  const double c = basis.hbar * basis.hbar / (2.0 * basis.mass);
  Mat h = Mat::Zero(M, M);
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    std::vector<std::array<double, 3>> grad(M);
    for (std::size_t f = 0; f < M; ++f) grad[f] = basis.gradient(f, g.points[i]);
    for (std::size_t f = 0; f < M; ++f)
      for (std::size_t k = 0; k < M; ++k) {
        double d = 0.0;
        for (int a = 0; a < basis.dimension; ++a) d += grad[f][a] * grad[k][a];
        h(f, k) += c * g.weights[i] * d;
      }
  }
  Operator op;
  op.mat = one_body(space, h).mat + two_body(space, tensor).mat;
  op.hermitian = true;
  return op;
}

Mat field_operator(const FockSpace& space, const modes::ModeBasis& basis,
                   const std::array<double, 3>& x) {
  Mat psi = Mat::Zero(space.dim(), space.dim());
  for (int f = 0; f < space.modes; ++f) psi += basis.value(f, x) * annihilate(space, f).dense();
  return psi;
}

bool respects_sectors(const FockSpace& space, const Operator& op) {
  for (int k = 0; k < op.mat.outerSize(); ++k)
    for (SpMat::InnerIterator it(op.mat, k); it; ++it) {
      if (std::abs(it.value()) == 0.0) continue;
      if (space.sector_of(it.row()) != space.sector_of(it.col()) + op.sector_shift) return false;
    }
  return true;
}

SpMat sector_projector(const FockSpace& space, int q) {
  SpMat p(space.dim(), space.dim());
  if (q < 0 || q > space.n_max) return p;
  std::vector<Eigen::Triplet<cplx>> trip;
  for (std::size_t i = space.sector_offset[q]; i < space.sector_offset[q + 1]; ++i)
    trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
  p.setFromTriplets(trip.begin(), trip.end());
  return p;
}

}  // namespace subdyn::fock
