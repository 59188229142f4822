// modes.cpp: Box eigenmodes, quadrature and potential tensor assembly.
#include "subdyn/modes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace subdyn::modes {

Quadrature gauss_legendre(int order, double a, double b) {
  if (order < 1) throw ValidationError("quadrature order must be >= 1");
  Quadrature q;
  q.nodes.resize(order);
  q.weights.resize(order);
  const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    double z = std::cos(pi * (i + 0.75) / (order + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int k = 1; k <= order; ++k) {
        double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p2) / k;
      }
      dp = order * (z * p0 - p1) / (z * z - 1.0);
      double dz = p0 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-16) break;
    }
    double w = 2.0 / ((1.0 - z * z) * dp * dp);
    q.nodes[i] = mid - half * z;
    q.nodes[order - 1 - i] = mid + half * z;
    q.weights[i] = q.weights[order - 1 - i] = half * w;
  }
  return q;
}

double ModeBasis::axis_value(int axis, int n, double x) const {
  const double L = lengths[axis];
  return std::sqrt(2.0 / L) * std::sin(pi * n * x / L);
}

double ModeBasis::value(std::size_t f, const std::array<double, 3>& x) const {
  double v = 1.0;
  for (int a = 0; a < dimension; ++a) v *= axis_value(a, labels[f][a], x[a]);
  return v;
}

std::array<double, 3> ModeBasis::gradient(std::size_t f, const std::array<double, 3>& x) const {
  std::array<double, 3> g{0.0, 0.0, 0.0};
  for (int a = 0; a < dimension; ++a) {
    const double L = lengths[a];
    const double k = pi * labels[f][a] / L;
    double d = std::sqrt(2.0 / L) * k * std::cos(k * x[a]);
    for (int b = 0; b < dimension; ++b)
      if (b != a) d *= axis_value(b, labels[f][b], x[b]);
    g[a] = d;
  }
  return g;
}

double ModeBasis::laplacian(std::size_t f, const std::array<double, 3>& x) const {
  double s = 0.0;
  for (int a = 0; a < dimension; ++a) {
    const double k = pi * labels[f][a] / lengths[a];
    double d = -k * k * axis_value(a, labels[f][a], x[a]);
    for (int b = 0; b < dimension; ++b)
      if (b != a) d *= axis_value(b, labels[f][b], x[b]);
    s += d;
  }
  return s;
}

ModeBasis build_box_basis(int dimension, const std::vector<double>& lengths, int cutoff,
                          double mass, const BasisOptions& opts) {
  if (dimension < 1 || dimension > 3) throw ValidationError("dimension must be 1, 2 or 3");
  if (static_cast<int>(lengths.size()) != dimension)
    throw ValidationError("need one length per axis");
  for (double L : lengths)
    if (!(L > 0)) throw ValidationError("box lengths must be positive");
  if (cutoff < 1) throw ValidationError("cutoff must be >= 1");
  if (!(mass > 0)) throw ValidationError("mass must be positive");
  double count = std::pow(static_cast<double>(cutoff), dimension);
  if (count > static_cast<double>(opts.max_modes))
    throw ValidationError("cutoff gives " + std::to_string(static_cast<long>(count)) +
                          " modes, above the limit of " + std::to_string(opts.max_modes));

  ModeBasis b;
  b.dimension = dimension;
  b.lengths = lengths;
  b.cutoff = cutoff;
  b.mass = mass;
  b.hbar = opts.hbar;
  b.quad_order = opts.quad_order;

  std::vector<std::array<int, 3>> labels;
  std::array<int, 3> n{1, dimension > 1 ? 1 : 0, dimension > 2 ? 1 : 0};
  for (;;) {
    labels.push_back(n);
    int a = dimension - 1;
    while (a >= 0 && n[a] == cutoff) n[a--] = 1;
    if (a < 0) break;
    ++n[a];
  }
  auto energy = [&](const std::array<int, 3>& l) {
    double e = 0.0;
    for (int a = 0; a < dimension; ++a) {
      double k = pi * l[a] / lengths[a];
      e += k * k;
    }
    return opts.hbar * opts.hbar * e / (2.0 * mass);
  };
  // energy order, exact ties kept in lexicographic order
  std::stable_sort(labels.begin(), labels.end(),
                   [&](const auto& x, const auto& y) { return energy(x) < energy(y); });
  b.labels = labels;
  for (const auto& l : labels) b.energies.push_back(energy(l));
  return b;
}

Grid box_grid(const ModeBasis& basis, int order) {
  std::vector<Quadrature> axes;
  for (int a = 0; a < basis.dimension; ++a)
    axes.push_back(gauss_legendre(order, 0.0, basis.lengths[a]));
  Grid g;
  std::array<int, 3> idx{0, 0, 0};
  for (;;) {
    std::array<double, 3> p{0.0, 0.0, 0.0};
    double w = 1.0;
    for (int a = 0; a < basis.dimension; ++a) {
      p[a] = axes[a].nodes[idx[a]];
      w *= axes[a].weights[idx[a]];
    }
    g.points.push_back(p);
    g.weights.push_back(w);
    int a = basis.dimension - 1;
    while (a >= 0 && idx[a] == order - 1) idx[a--] = 0;
    if (a < 0) break;
    ++idx[a];
  }
  return g;
}

double orthonormality_error(const ModeBasis& basis) {
  Grid g = box_grid(basis, basis.quad_order);
  const std::size_t M = basis.size();
  RMat U(g.points.size(), M);
  for (std::size_t i = 0; i < g.points.size(); ++i)
    for (std::size_t f = 0; f < M; ++f) U(i, f) = basis.value(f, g.points[i]);
  RVec w = Eigen::Map<const RVec>(g.weights.data(), g.weights.size());
  RMat S = U.transpose() * w.asDiagonal() * U;
  return (S - RMat::Identity(M, M)).cwiseAbs().maxCoeff();
}

double laplacian_residual(const ModeBasis& basis) {
  Grid g = box_grid(basis, basis.quad_order);
  const double c = basis.hbar * basis.hbar / (2.0 * basis.mass);
  double worst = 0.0;
  for (std::size_t f = 0; f < basis.size(); ++f)
    for (const auto& p : g.points)
      worst = std::max(worst,
                       std::abs(-c * basis.laplacian(f, p) - basis.energies[f] * basis.value(f, p)));
  return worst;
}

double Potential::operator()(double r2) const {
  if (shape == PotentialShape::None) return 0.0;
  return strength * std::exp(-r2 / (2.0 * range * range));
}

double PotentialTensor::symmetry_error() const {
  double e = 0.0;
  const std::size_t M = modes;
  for (std::size_t a = 0; a < M; ++a)
    for (std::size_t b = 0; b < M; ++b)
      for (std::size_t c = 0; c < M; ++c)
        for (std::size_t d = 0; d < M; ++d) {
          cplx v = (*this)(a, b, c, d);
          e = std::max(e, std::abs(v - (*this)(b, a, d, c)));
          e = std::max(e, std::abs(v - std::conj((*this)(d, c, b, a))));
        }
  return e;
}

PotentialTensor zero_tensor(std::size_t modes) {
  PotentialTensor t;
  t.modes = modes;
  t.data.assign(modes * modes * modes * modes, cplx{0.0, 0.0});
  return t;
}

namespace {

// Per-axis integrals I[n1][m1][n2][m2] = int int phi_n1(x) phi_m1(x) K(x-y)
// phi_n2(y) phi_m2(y), or the single integral of four factors for a 1D contact.
RMat axis_integrals(const ModeBasis& basis, int axis, const Potential& pot, int order,
                    bool contact_1d) {
  const int c = basis.cutoff;
  Quadrature q = gauss_legendre(order, 0.0, basis.lengths[axis]);
  const int n = order;
  RMat P(n, c * c);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < c; ++a)
      for (int b = 0; b < c; ++b)
        P(i, a * c + b) = basis.axis_value(axis, a + 1, q.nodes[i]) *
                          basis.axis_value(axis, b + 1, q.nodes[i]);
  RVec w = Eigen::Map<const RVec>(q.weights.data(), n);
  if (contact_1d) {
    RMat out(c * c, c * c);
    for (int p = 0; p < c * c; ++p)
      for (int r = 0; r < c * c; ++r) out(p, r) = (w.array() * P.col(p).array() * P.col(r).array()).sum();
    return out;
  }
  const double s = pot.range;
  double norm = 1.0;
  if (pot.shape == PotentialShape::Contact) norm = 1.0 / std::sqrt(2.0 * pi * s * s);
  RMat K(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double d = q.nodes[i] - q.nodes[j];
      K(i, j) = w[i] * w[j] * norm * std::exp(-d * d / (2.0 * s * s));
    }
  return P.transpose() * K * P;
}

}  // namespace

ModeBasis select_modes(const ModeBasis& basis, const std::vector<std::size_t>& keep) {
  if (keep.empty()) throw ValidationError("mode selection is empty");
  ModeBasis b = basis;
  b.labels.clear();
  b.energies.clear();
  for (std::size_t i = 0; i < keep.size(); ++i) {
    if (keep[i] >= basis.size()) throw ValidationError("mode index out of range");
    for (std::size_t j = 0; j < i; ++j)
      if (keep[j] == keep[i]) throw ValidationError("mode selected twice");
    b.labels.push_back(basis.labels[keep[i]]);
    b.energies.push_back(basis.energies[keep[i]]);
  }
  return b;
}

PotentialTensor potential_tensor_at(const ModeBasis& basis, const Potential& pot, int order) {
  const std::size_t M = basis.size();
  PotentialTensor t = zero_tensor(M);
  t.potential = pot;
  t.quad_order = order;
  if (pot.shape == PotentialShape::None || pot.strength == 0.0) return t;
  if (!(pot.range > 0)) throw ValidationError("potential range must be positive");
  const bool contact_1d = pot.shape == PotentialShape::Contact && basis.dimension == 1;
  std::vector<RMat> ax;
  for (int a = 0; a < basis.dimension; ++a)
    ax.push_back(axis_integrals(basis, a, pot, order, contact_1d));
  const int c = basis.cutoff;
  for (std::size_t l1 = 0; l1 < M; ++l1)
    for (std::size_t l2 = 0; l2 < M; ++l2)
      for (std::size_t f2 = 0; f2 < M; ++f2)
        for (std::size_t f1 = 0; f1 < M; ++f1) {
          double v = pot.strength;
          for (int a = 0; a < basis.dimension; ++a) {
            int p = (basis.labels[l1][a] - 1) * c + (basis.labels[f1][a] - 1);
            int r = (basis.labels[l2][a] - 1) * c + (basis.labels[f2][a] - 1);
            v *= ax[a](p, r);
          }
          t(l1, l2, f2, f1) = v;
        }
  return t;
}

PotentialTensor potential_tensor(const ModeBasis& basis, const Potential& pot, int order,
                                 double tol) {
  if (order <= 0) order = basis.quad_order;
  PotentialTensor t = potential_tensor_at(basis, pot, order);
  PotentialTensor fine = potential_tensor_at(basis, pot, 2 * order);
  double delta = 0.0;
  for (std::size_t i = 0; i < t.data.size(); ++i)
    delta = std::max(delta, std::abs(t.data[i] - fine.data[i]));
  t.convergence_delta = delta;
  if (delta > tol)
    throw NumericalError("potential tensor not converged: doubling quadrature order moved an "
                         "element by " + std::to_string(delta));
  return t;
}

}  // namespace subdyn::modes
