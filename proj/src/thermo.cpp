// thermo.cpp
#include "subdyn/thermo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "subdyn/dynamics.hpp"

namespace subdyn::thermo {

namespace {

double expect(const Mat& A, const Mat& w) { return (A.transpose().cwiseProduct(w)).sum().real(); }

void check_grid(const CellGrid& g) {
  if (g.edges.size() < 2) throw ValidationError("cell grid needs at least one cell");
  for (std::size_t i = 1; i < g.edges.size(); ++i)
    if (!(g.edges[i] > g.edges[i - 1])) throw ValidationError("cell edges must increase");
}

std::size_t cell_of(const CellGrid& g, double x) {
  const std::size_t n = g.cells();
  for (std::size_t c = 0; c + 1 < n; ++c)
    if (x < g.edges[c + 1]) return c;
  return n - 1;
}

// constraint operators in multiplier order: per cell (e, p, rho)
std::vector<const Mat*> constraint_ops(const DensityOperatorSet& ops) {
  std::vector<const Mat*> out;
  for (std::size_t c = 0; c < ops.cells(); ++c) {
    out.push_back(&ops.energy[c]);
    out.push_back(&ops.momentum[c]);
    out.push_back(&ops.rho[c]);
  }
  return out;
}

std::vector<double> flatten(const Targets& t) {
  std::vector<double> y;
  for (std::size_t c = 0; c < t.rho.size(); ++c) {
    y.push_back(t.energy[c]);
    y.push_back(t.momentum[c]);
    y.push_back(t.rho[c]);
  }
  return y;
}

Targets unflatten(const std::vector<double>& y) {
  Targets t;
  for (std::size_t i = 0; i + 2 < y.size(); i += 3) {
    t.energy.push_back(y[i]);
    t.momentum.push_back(y[i + 1]);
    t.rho.push_back(y[i + 2]);
  }
  return t;
}

Mat exponent_from(const std::vector<const Mat*>& A, const std::vector<double>& lambda) {
  Mat X = Mat::Zero(A[0]->rows(), A[0]->cols());
  for (std::size_t i = 0; i < A.size(); ++i) X += lambda[i] * *A[i];
  return 0.5 * (X + X.adjoint());
}

struct Spectral {
  RVec x;  // exponent eigenvalues
  Mat Q;
  RVec p;  // Gibbs weights
  double log_z = 0.0;
};

Spectral spectral_gibbs(const Mat& X) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (X + X.adjoint()));
  if (es.info() != Eigen::Success) throw NumericalError("Gibbs exponent diagonalisation failed");
  Spectral s;
  s.x = es.eigenvalues();
  s.Q = es.eigenvectors();
  if (!s.x.allFinite()) throw NumericalError("Gibbs exponent is not finite");
  const double x0 = s.x.minCoeff();
  s.p = (-(s.x.array() - x0)).exp();
  const double z = s.p.sum();
  s.p /= z;
  s.log_z = -x0 + std::log(z);
  return s;
}

struct KineticCache {
  int M = 0;
  std::vector<Mat> G;  // L'(a+_h a_k), index h * M + k
};

KineticCache cache_generator(const kinetics::KineticGenerator& kin) {
  KineticCache k;
  k.M = static_cast<int>(kin.a.size());
  for (int h = 0; h < k.M; ++h)
    for (int j = 0; j < k.M; ++j) k.G.push_back(kinetics::generator_action(kin, h, j));
  return k;
}

Rates rates_from_cache(const DensityOperatorSet& ops, const KineticCache& kc, const Mat& w) {
  if (ops.interacting)
    throw ValidationError("L' acts on one-body monomials: build the density operators without the two-body energy");
  const int M = kc.M;
  if (ops.rho1.empty() || ops.rho1[0].rows() != M) throw ValidationError("kinetic generator does not match the modes");
  Mat g(M, M);  // g_hk = Tr(L'(a+_h a_k) w)
  for (int h = 0; h < M; ++h)
    for (int k = 0; k < M; ++k) g(h, k) = expect(kc.G[h * M + k], w);
  auto rate = [&](const Mat& A) { return A.cwiseProduct(g).sum().real(); };
  Rates r;
  for (std::size_t c = 0; c < ops.cells(); ++c) {
    r.rho.push_back(rate(ops.rho1[c]));
    r.momentum.push_back(rate(ops.momentum1[c]));
    r.energy.push_back(rate(ops.kinetic1[c]));
  }
  return r;
}

double dissipative_max(const Rates& r) {
  double m = 0.0;
  for (double x : r.rho) m = std::max(m, std::abs(x));
  for (double x : r.energy) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace

CellGrid uniform_cells(const modes::ModeBasis& basis, int n) {
  if (basis.dimension != 1) throw ValidationError("cell grids are implemented for 1D boxes");
  if (n < 1) throw ValidationError("need at least one cell");
  CellGrid g;
  for (int i = 0; i <= n; ++i) g.edges.push_back(basis.lengths[0] * i / n);
  return g;
}

void ThermoState::validate() const {
  check_grid(grid);
  if (beta.size() != grid.cells() || mu.size() != grid.cells() || v.size() != grid.cells())
    throw ValidationError("thermodynamic fields do not match the cell grid");
  for (std::size_t c = 0; c < beta.size(); ++c) {
    if (!(beta[c] > 0.0)) throw ValidationError("beta must be positive in every cell");
    if (!std::isfinite(beta[c]) || !std::isfinite(mu[c]) || !std::isfinite(v[c]))
      throw ValidationError("thermodynamic fields must be finite");
  }
}

ThermoState uniform_state(const CellGrid& grid, double beta, double mu, double v) {
  ThermoState s;
  s.grid = grid;
  s.beta.assign(grid.cells(), beta);
  s.mu.assign(grid.cells(), mu);
  s.v.assign(grid.cells(), v);
  return s;
}

Mat DensityOperatorSet::energy_rest(std::size_t c, double v) const {
  return energy[c] - v * momentum[c] + (0.5 * v * v) * rho[c];
}

Mat DensityOperatorSet::momentum_rest(std::size_t c, double v) const { return momentum[c] - v * rho[c]; }

DensityOperatorSet build_density_operators(const fock::FockSpace& space, const modes::ModeBasis& basis,
                                           const CellGrid& grid, const modes::PotentialTensor& tensor, int order) {
  if (basis.dimension != 1) throw ValidationError("density operators are implemented for 1D boxes");
  check_grid(grid);
  const double L = basis.lengths[0];
  if (std::abs(grid.edges.front()) > 1e-12 || std::abs(grid.edges.back() - L) > 1e-12 * L)
    throw ValidationError("cells must partition the box");
  const std::size_t M = basis.size();
  if (static_cast<std::size_t>(space.modes) != M) throw ValidationError("Fock space and basis disagree on modes");
  if (order <= 0) order = basis.quad_order;
  const double m = basis.mass, hb = basis.hbar;

  DensityOperatorSet ops;
  ops.grid = grid;
  ops.mass = m;
  ops.hbar = hb;
  ops.interacting = tensor.modes > 0 && tensor.potential.shape != modes::PotentialShape::None &&
                    tensor.potential.strength != 0.0;
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    auto q = modes::gauss_legendre(order, grid.edges[c], grid.edges[c + 1]);
    Mat r = Mat::Zero(M, M), kin = Mat::Zero(M, M), p = Mat::Zero(M, M);
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
      const std::array<double, 3> x{q.nodes[i], 0.0, 0.0};
      RVec u(M), du(M);
      for (std::size_t f = 0; f < M; ++f) {
        u(f) = basis.value(f, x);
        du(f) = basis.gradient(f, x)[0];
      }
      const double w = q.weights[i];
      r += (w * m) * (u * u.transpose()).cast<cplx>();
      kin += (w * hb * hb / (2.0 * m)) * (du * du.transpose()).cast<cplx>();
      p += (-0.5 * I * hb * w) * (u * du.transpose() - du * u.transpose()).cast<cplx>();
    }
    ops.rho1.push_back(r);
    ops.kinetic1.push_back(kin);
    ops.momentum1.push_back(p);
    ops.rho.push_back(fock::one_body(space, r).dense());
    ops.momentum.push_back(fock::one_body(space, p).dense());
    ops.energy.push_back(fock::one_body(space, kin).dense());
  }
  if (!ops.interacting) return ops;

  // two-body part: the tensor's quadrature with the pair midpoint sorted into cells
  if (tensor.modes != M) throw ValidationError("potential tensor does not match the basis");
  const auto& pot = tensor.potential;
  const int qo = tensor.quad_order > 0 ? tensor.quad_order : basis.quad_order;
  auto q = modes::gauss_legendre(qo, 0.0, L);
  const int n = qo;
  const int cut = basis.cutoff;
  RMat P(n, cut * cut);
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < cut; ++a)
      for (int b = 0; b < cut; ++b)
        P(i, a * cut + b) = basis.axis_value(0, a + 1, q.nodes[i]) * basis.axis_value(0, b + 1, q.nodes[i]);
  const bool contact = pot.shape == modes::PotentialShape::Contact;
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    RMat K = RMat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
      if (contact) {
        if (cell_of(grid, q.nodes[i]) == c) K(i, i) = q.weights[i];
        continue;
      }
      for (int j = 0; j < n; ++j) {
        if (cell_of(grid, 0.5 * (q.nodes[i] + q.nodes[j])) != c) continue;
        const double d = q.nodes[i] - q.nodes[j];
        K(i, j) = q.weights[i] * q.weights[j] * std::exp(-d * d / (2.0 * pot.range * pot.range));
      }
    }
    RMat ax = P.transpose() * K * P;
    modes::PotentialTensor tc = modes::zero_tensor(M);
    tc.potential = pot;
    for (std::size_t l1 = 0; l1 < M; ++l1)
      for (std::size_t l2 = 0; l2 < M; ++l2)
        for (std::size_t f2 = 0; f2 < M; ++f2)
          for (std::size_t f1 = 0; f1 < M; ++f1) {
            const int pi_ = (basis.labels[l1][0] - 1) * cut + (basis.labels[f1][0] - 1);
            const int ri = (basis.labels[l2][0] - 1) * cut + (basis.labels[f2][0] - 1);
            tc(l1, l2, f2, f1) = pot.strength * ax(pi_, ri);
          }
    ops.energy[c] += fock::two_body(space, tc).dense();
  }
  return ops;
}

Mat exponent(const ThermoState& state, const DensityOperatorSet& ops) {
  state.validate();
  if (state.cells() != ops.cells()) throw ValidationError("state and operators have different cells");
  return exponent_from(constraint_ops(ops), multipliers(state));
}

GibbsState gibbs_from_exponent(const Mat& X) {
  Spectral s = spectral_gibbs(X);
  GibbsState g;
  g.w = s.Q * s.p.cast<cplx>().asDiagonal() * s.Q.adjoint();
  g.log_z = s.log_z;
  return g;
}

Mat gibbs_state(const ThermoState& state, const DensityOperatorSet& ops) {
  return gibbs_from_exponent(exponent(state, ops)).w;
}

Targets expectations(const DensityOperatorSet& ops, const Mat& w) {
  Targets t;
  for (std::size_t c = 0; c < ops.cells(); ++c) {
    t.rho.push_back(expect(ops.rho[c], w));
    t.momentum.push_back(expect(ops.momentum[c], w));
    t.energy.push_back(expect(ops.energy[c], w));
  }
  return t;
}

std::vector<double> multipliers(const ThermoState& s) {
  std::vector<double> l;
  for (std::size_t c = 0; c < s.cells(); ++c) {
    l.push_back(s.beta[c]);
    l.push_back(-s.beta[c] * s.v[c]);
    l.push_back(s.beta[c] * (0.5 * s.v[c] * s.v[c] - s.mu[c]));
  }
  return l;
}

ThermoState from_multipliers(const CellGrid& grid, const std::vector<double>& l) {
  if (l.size() != 3 * grid.cells()) throw ValidationError("multiplier count does not match the cells");
  ThermoState s;
  s.grid = grid;
  for (std::size_t c = 0; c < grid.cells(); ++c) {
    const double b = l[3 * c];
    if (!(b > 0.0))
      throw NumericalError("fitted beta is not positive in cell " + std::to_string(c) + " (beta = " +
                           std::to_string(b) + ")");
    const double v = -l[3 * c + 1] / b;
    s.beta.push_back(b);
    s.v.push_back(v);
    s.mu.push_back(0.5 * v * v - l[3 * c + 2] / b);
  }
  return s;
}

FitResult fit_fields(const Targets& targets, const DensityOperatorSet& ops, const ThermoState& guess,
                     const FitOptions& opts) {
  guess.validate();
  if (targets.rho.size() != ops.cells() || targets.energy.size() != ops.cells() ||
      targets.momentum.size() != ops.cells())
    throw ValidationError("targets do not match the cells");
  const auto A = constraint_ops(ops);
  const std::vector<double> y = flatten(targets);
  const std::size_t n = A.size();
  std::vector<double> lam = multipliers(guess);

  // Constraints that are linear combinations of others (and of the identity)
  // are dropped, rho first, then p, then e: their multipliers stay at the guess.
  std::vector<bool> active(n, false);
  {
    const Eigen::Index d = A[0]->rows();
    std::vector<Mat> kept;
    std::vector<std::size_t> order;
    for (std::size_t k : {2, 1, 0})
      for (std::size_t c = 0; c < ops.cells(); ++c) order.push_back(3 * c + k);
    for (std::size_t i : order) {
      Mat r = *A[i] - (A[i]->trace() / static_cast<double>(d)) * Mat::Identity(d, d);
      const double n0 = r.norm();
      for (const Mat& q : kept) r -= (q.adjoint() * r).trace() * q;
      if (n0 > 0.0 && r.norm() > 1e-9 * n0) {
        kept.push_back(r / r.norm());
        active[i] = true;
      }
    }
  }

  // dual objective log Z + lambda . y and its gradient y - <A>
  auto evaluate = [&](const std::vector<double>& l, Spectral& s, RVec& grad, double& F) {
    s = spectral_gibbs(exponent_from(A, l));
    grad.resize(n);
    F = s.log_z;
    for (std::size_t i = 0; i < n; ++i) {
      Mat At = s.Q.adjoint() * *A[i] * s.Q;
      double e = 0.0;
      for (Eigen::Index a = 0; a < s.p.size(); ++a) e += s.p(a) * At(a, a).real();
      grad(i) = y[i] - e;
      F += l[i] * y[i];
    }
  };

  Spectral s;
  RVec grad;
  double F = 0.0;
  evaluate(lam, s, grad, F);
  FitResult res;
  for (int it = 0; it < opts.max_iterations; ++it) {
    res.iterations = it;
    res.mismatch = grad.cwiseAbs().maxCoeff();
    if (res.mismatch < opts.tolerance) break;
    // Kubo-Mori covariance in the exponent eigenbasis
    const Eigen::Index d = s.p.size();
    RMat K(d, d);
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) {
        const double gap = s.x(b) - s.x(a);
        K(a, b) = std::abs(gap) < 1e-12 ? s.p(a) : s.p(a) * -std::expm1(-gap) / gap;
      }
    std::vector<Mat> At(n);
    RVec mean(n);
    for (std::size_t i = 0; i < n; ++i) {
      At[i] = s.Q.adjoint() * *A[i] * s.Q;
      mean(i) = y[i] - grad(i);
    }
    RMat H(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) {
        const double v =
            (At[i].cwiseProduct(At[j].transpose()).real().cwiseProduct(K)).sum() - mean(i) * mean(j);
        H(i, j) = H(j, i) = v;
      }
    RVec ga = grad;
    for (std::size_t i = 0; i < n; ++i)
      if (!active[i]) {
        H.row(i).setZero();
        H.col(i).setZero();
        ga(i) = 0.0;
      }
    Eigen::CompleteOrthogonalDecomposition<RMat> cod(H);
    cod.setThreshold(1e-12);
    RVec step = cod.solve(ga);  // grad F = y - <A>, Newton moves lambda by -step
    // trust region: the exponent moves by at most max_exponent_step in spectral norm
    {
      Mat dX = exponent_from(A, std::vector<double>(step.data(), step.data() + n));
      Eigen::SelfAdjointEigenSolver<Mat> ed(dX, Eigen::EigenvaluesOnly);
      const double span = ed.eigenvalues().cwiseAbs().maxCoeff();
      if (span > opts.max_exponent_step) step *= opts.max_exponent_step / span;
    }
    double t = 1.0;
    std::vector<double> trial(n);
    Spectral s2;
    RVec g2;
    double F2 = 0.0;
    const double slope = -ga.dot(step);
    bool accepted = false;
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t i = 0; i < n; ++i) trial[i] = lam[i] - t * step(i);
      evaluate(trial, s2, g2, F2);
      if (F2 <= F + 1e-4 * t * slope || g2.cwiseAbs().maxCoeff() < res.mismatch * (1.0 - 1e-4 * t)) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    lam = trial;
    s = s2;
    grad = g2;
    F = F2;
    double norm = 0.0;
    for (double l : lam) norm = std::max(norm, std::abs(l));
    if (!std::isfinite(norm) || norm > opts.blowup)
      throw NumericalError("field fit diverged: multiplier norm " + std::to_string(norm) +
                           " (targets outside the realisable set?)");
  }
  res.mismatch = grad.cwiseAbs().maxCoeff();
  if (res.mismatch >= opts.tolerance)
    throw NumericalError("field fit did not converge: mismatch " + std::to_string(res.mismatch));
  res.state = from_multipliers(guess.grid, lam);
  res.w = s.Q * s.p.cast<cplx>().asDiagonal() * s.Q.adjoint();
  return res;
}

double entropy(const Mat& rho, double k) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (rho + rho.adjoint()), Eigen::EigenvaluesOnly);
  double s = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double l = es.eigenvalues()(i);
    if (l >= 1e-14) s -= l * std::log(l);
  }
  return k * s;
}

double Rates::max_abs() const {
  double m = 0.0;
  for (double x : rho) m = std::max(m, std::abs(x));
  for (double x : momentum) m = std::max(m, std::abs(x));
  for (double x : energy) m = std::max(m, std::abs(x));
  return m;
}

Rates kinetic_rates(const DensityOperatorSet& ops, const kinetics::KineticGenerator& kin, const Mat& w) {
  return rates_from_cache(ops, cache_generator(kin), w);
}

Rates hamiltonian_rates(const DensityOperatorSet& ops, const Mat& H, const Mat& w, double hbar) {
  // (i/hbar) Tr([H, A] w) = (i/hbar) Tr(A [w, H])
  const Mat C = (I / hbar) * commutator(w, H);
  Rates r;
  for (std::size_t c = 0; c < ops.cells(); ++c) {
    r.rho.push_back(expect(ops.rho[c], C));
    r.momentum.push_back(expect(ops.momentum[c], C));
    r.energy.push_back(expect(ops.energy[c], C));
  }
  return r;
}

ThermoSeries evolve_thermo(const ThermoState& state0, const DensityOperatorSet& ops,
                           const kinetics::KineticGenerator& kin, const std::vector<double>& times,
                           const ThermoOptions& opts) {
  state0.validate();
  if (ops.interacting)
    throw ValidationError("L' acts on one-body monomials: build the density operators without the two-body energy");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1])) throw ValidationError("time grid must increase");
  const KineticCache kc = cache_generator(kin);

  ThermoSeries out;
  ThermoState state = state0;
  Mat w = gibbs_state(state, ops);
  auto record = [&](double t) {
    out.times.push_back(t);
    out.states.push_back(state);
    out.entropy.push_back(entropy(w));
    Rates r = rates_from_cache(ops, kc, w);
    const auto lam = multipliers(state);
    const auto yd = flatten(Targets{r.rho, r.momentum, r.energy});
    double prod = 0.0;
    for (std::size_t i = 0; i < lam.size(); ++i) prod += lam[i] * yd[i];
    out.entropy_production.push_back(prod);
    out.kinetic_flux.push_back(dissipative_max(r));
    out.hamiltonian_flux.push_back(
        opts.hamiltonian.size() ? dissipative_max(hamiltonian_rates(ops, opts.hamiltonian, w, kin.hbar)) : 0.0);
  };
  if (times.empty()) return out;
  record(times[0]);

  auto derivative = [&](const std::vector<double>& y, ThermoState& guess) {
    FitResult f = fit_fields(unflatten(y), ops, guess, opts.fit);
    out.max_mismatch = std::max(out.max_mismatch, f.mismatch);
    guess = f.state;
    Rates r = rates_from_cache(ops, kc, f.w);
    return flatten(Targets{r.rho, r.momentum, r.energy});
  };

  for (std::size_t i = 1; i < times.size(); ++i) {
    const double h = times[i] - times[i - 1];
    try {
      std::vector<double> y = flatten(expectations(ops, w));
      ThermoState g = state;
      auto axpy = [&](const std::vector<double>& k, double a) {
        std::vector<double> r = y;
        for (std::size_t j = 0; j < r.size(); ++j) r[j] += a * k[j];
        return r;
      };
      auto k1 = derivative(y, g);
      auto k2 = derivative(axpy(k1, 0.5 * h), g);
      auto k3 = derivative(axpy(k2, 0.5 * h), g);
      auto k4 = derivative(axpy(k3, h), g);
      for (std::size_t j = 0; j < y.size(); ++j) y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
      FitResult f = fit_fields(unflatten(y), ops, g, opts.fit);
      out.max_mismatch = std::max(out.max_mismatch, f.mismatch);
      state = f.state;
      w = f.w;
    } catch (const NumericalError& e) {
      out.completed = false;
      out.failure = e.what();
      break;
    }
    record(times[i]);
  }
  return out;
}

void MemoryHistory::validate() const {
  if (times.size() < 2) throw ValidationError("memory history needs at least two samples");
  if (states.size() != times.size()) throw ValidationError("memory history: one state per time stamp");
  if (!(step > 0.0)) throw ValidationError("memory history step must be positive");
  for (std::size_t i = 1; i < times.size(); ++i) {
    const double d = times[i] - times[i - 1];
    if (!(d > 0.0)) throw ValidationError("memory history time stamps must increase");
    if (std::abs(d - step) > 1e-9 * std::max(1.0, step))
      throw ValidationError("memory history has a gap at t = " + std::to_string(times[i - 1]));
  }
  for (const auto& s : states) {
    s.validate();
    if (s.cells() != states[0].cells()) throw ValidationError("memory history: cell count changes");
  }
}

MemoryResult memory_state(const MemoryHistory& history, const DensityOperatorSet& ops, const Mat& H, double t,
                          const MemoryOptions& opts) {
  history.validate();
  const double T = history.times.front();
  if (t < T || t > history.times.back() + 1e-12)
    throw ValidationError("memory time outside the recorded history");
  if (history.states[0].cells() != ops.cells()) throw ValidationError("history and operators have different cells");
  const auto A = constraint_ops(ops);
  const std::size_t C = ops.cells(), n = A.size();
  const double hb = ops.hbar;

  // fields and their time derivatives at tau, linear between samples
  auto fields = [&](double tau, std::vector<double>& lam, std::vector<double>& dlam) {
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(std::floor((tau - T) / history.step)),
                                           history.times.size() - 2);
    const double s = (tau - history.times[i]) / history.step;
    const auto& a = history.states[i];
    const auto& b = history.states[i + 1];
    lam.assign(n, 0.0);
    dlam.assign(n, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
      const double be = a.beta[c] + s * (b.beta[c] - a.beta[c]), db = (b.beta[c] - a.beta[c]) / history.step;
      const double v = a.v[c] + s * (b.v[c] - a.v[c]), dv = (b.v[c] - a.v[c]) / history.step;
      const double m = a.mu[c] + s * (b.mu[c] - a.mu[c]), dm = (b.mu[c] - a.mu[c]) / history.step;
      lam[3 * c] = be;
      lam[3 * c + 1] = -be * v;
      lam[3 * c + 2] = be * (0.5 * v * v - m);
      dlam[3 * c] = db;
      dlam[3 * c + 1] = -(db * v + be * dv);
      dlam[3 * c + 2] = db * (0.5 * v * v - m) + be * (v * dv - dm);
    }
  };

  MemoryResult res;
  std::vector<double> lam, dlam;
  fields(t, lam, dlam);
  const Mat Xt = exponent_from(A, lam);
  const std::size_t iT = 0;
  const Mat XT = exponent(history.states[iT], ops);
  const Eigen::Index d = H.rows();
  res.bulk = res.gradient = res.boundary = Mat::Zero(d, d);
  if (t == T) {
    res.exponent_direct = res.exponent_split = XT;
    res.state_direct = res.state_split = gibbs_from_exponent(XT).w;
    res.times = {T};
    res.boundary_series = {0.0};
    return res;
  }
  dynamics::UnitaryEvolution U(H, hb);
  res.exponent_direct = U.evolve_density(XT, t - T);

  // (i/hbar)[H, A_i]
  std::vector<Mat> CA(n);
  for (std::size_t i = 0; i < n; ++i) CA[i] = (I / hb) * commutator(H, *A[i]);
  // integrands at tau': U(t-tau') [ Xdot | gradient part | boundary part ] U+
  auto integrands = [&](double tau, Mat& bulk, Mat& grad, Mat& bnd) {
    fields(tau, lam, dlam);
    Mat Xd = Mat::Zero(d, d);
    for (std::size_t i = 0; i < n; ++i) Xd += dlam[i] * *A[i];
    // summation by parts over cells for each operator kind
    Mat G = Mat::Zero(d, d), B = Mat::Zero(d, d);
    for (std::size_t k = 0; k < 3; ++k) {
      Mat S = Mat::Zero(d, d);
      for (std::size_t c = 0; c < C; ++c) {
        S += CA[3 * c + k];
        if (c + 1 < C)
          G += (lam[3 * c + k] - lam[3 * (c + 1) + k]) * S;
        else
          B += lam[3 * c + k] * S;
      }
    }
    const Mat P = U.propagator(t - tau);
    bulk = P * Xd * P.adjoint();
    grad = P * G * P.adjoint();
    bnd = P * B * P.adjoint();
  };

  auto gl = modes::gauss_legendre(std::max(2, opts.order), 0.0, 1.0);
  Mat b, g, bd;
  for (std::size_t i = 0; i + 1 < history.times.size(); ++i) {
    const double lo = history.times[i];
    if (lo >= t) break;
    const double hi = std::min(history.times[i + 1], t);
    res.times.push_back(lo);
    integrands(lo, b, g, bd);
    res.boundary_series.push_back(bd.norm());
    for (std::size_t q = 0; q < gl.nodes.size(); ++q) {
      const double tau = lo + (hi - lo) * gl.nodes[q], w = (hi - lo) * gl.weights[q];
      integrands(tau, b, g, bd);
      res.bulk += w * b;
      res.gradient += w * g;
      res.boundary += w * bd;
    }
  }
  res.times.push_back(t);
  integrands(t, b, g, bd);
  res.boundary_series.push_back(bd.norm());

  res.exponent_split = Xt - (res.bulk + res.gradient + res.boundary);
  res.state_direct = gibbs_from_exponent(res.exponent_direct).w;
  res.state_split = gibbs_from_exponent(res.exponent_split).w;
  res.agreement = max_abs(res.state_direct - res.state_split);
  res.exponent_gap = max_abs(res.exponent_direct - res.exponent_split);
  return res;
}

}  // namespace subdyn::thermo
