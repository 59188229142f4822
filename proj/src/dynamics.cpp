#include "subdyn/dynamics.hpp"

#include <algorithm>
#include <cmath>

namespace subdyn::dynamics {

DensityCheck check_density(const Mat& rho) {
  DensityCheck c;
  c.trace_error = std::abs(rho.trace() - 1.0);
  c.hermiticity_error = max_abs(rho - rho.adjoint());
  Mat h = 0.5 * (rho + rho.adjoint());
  c.min_eigenvalue = Eigen::SelfAdjointEigenSolver<Mat>(h, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  return c;
}

bool repair_density(Mat& rho, double tol) {
  rho = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<Mat> es(rho);
  const double lo = es.eigenvalues().minCoeff();
  if (lo >= 0.0) return false;
  if (lo < -10.0 * tol)
    throw NumericalError("density matrix eigenvalue " + std::to_string(lo) + " below -10 x psd tolerance");
  if (lo < -tol) return false;  // between tol and 10 tol: reported, not clipped
  const cplx tr = rho.trace();
  RVec ev = es.eigenvalues().cwiseMax(0.0);
  rho = es.eigenvectors() * ev.cast<cplx>().asDiagonal() * es.eigenvectors().adjoint();
  rho *= tr / rho.trace();
  rho = 0.5 * (rho + rho.adjoint());
  return true;
}

namespace {

void record(EvolveResult& r, Mat rho, double t, double tol, const cplx tr0) {
  rho = 0.5 * (rho + rho.adjoint());
  if (repair_density(rho, tol)) ++r.repairs;
  DensityCheck c = check_density(rho);
  r.max_trace_drift = std::max(r.max_trace_drift, std::abs(rho.trace() - tr0));
  r.min_eigenvalue = std::min(r.min_eigenvalue, c.min_eigenvalue);
  r.times.push_back(t);
  r.states.push_back(std::move(rho));
}

Mat rk4_step(const lindblad::LindbladGenerator& g, const Mat& y, double h) {
  Mat k1 = g.apply(y);
  Mat k2 = g.apply(y + 0.5 * h * k1);
  Mat k3 = g.apply(y + 0.5 * h * k2);
  Mat k4 = g.apply(y + h * k3);
  return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

EvolveResult evolve_master(const lindblad::LindbladGenerator& gen, const Mat& rho0,
                           const std::vector<double>& times, const EvolveOptions& opts) {
  const Eigen::Index d = gen.dim();
  if (rho0.rows() != d || rho0.cols() != d) throw ValidationError("rho0 does not match generator dimension");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (times[i] < 0.0 || (i > 0 && times[i] < times[i - 1]))
      throw ValidationError("time grid must be non-negative and ascending");
  EvolveResult r;
  r.method = opts.method;
  if (r.method == Method::Auto) r.method = d <= opts.exponential_limit ? Method::Exponential : Method::RK4;
  const cplx tr0 = rho0.trace();

  if (r.method == Method::Exponential) {
    // exp(tS) applied to rho: sub-steps with ||S|| h <= 1, Taylor series summed
    // until the terms drop below rounding
    const double nrm = gen.norm();
    Mat y = rho0;
    double t = 0.0;
    for (double target : times) {
      const double dt = target - t;
      if (dt > 0.0 && nrm > 0.0) {
        const int n = std::max(1, static_cast<int>(std::ceil(nrm * dt)));
        const double h = dt / n;
        for (int s = 0; s < n; ++s) {
          Mat term = y, sum = y;
          for (int k = 1; k < 200; ++k) {
            term = gen.apply(term) * (h / k);
            sum += term;
            if (term.norm() <= 1e-17 * sum.norm()) break;
          }
          y = sum;
          ++r.steps;
        }
      }
      t = target;
      record(r, y, t, opts.psd_tol, tr0);
      y = r.states.back();
    }
    return r;
  }

  // step doubling RK4
  Mat y = rho0;
  double t = 0.0;
  const double scale = std::max(gen.norm(), 1e-300);
  double h = 0.5 / scale;
  for (double target : times) {
    while (t < target) {
      double step = std::min(h, target - t);
      Mat full = rk4_step(gen, y, step);
      Mat half = rk4_step(gen, rk4_step(gen, y, 0.5 * step), 0.5 * step);
      double err = (half - full).norm() / 15.0;
      double tol = opts.rk_tol * std::max(1.0, y.norm());
      if (err <= tol || step < 1e-14 * std::max(1.0, target)) {
        y = half + (half - full) / 15.0;
        y = 0.5 * (y + y.adjoint());
        t += step;
        ++r.steps;
      }
      double fac = err > 0.0 ? 0.9 * std::pow(tol / err, 0.2) : 4.0;
      h = step * std::clamp(fac, 0.2, 4.0);
      if (t >= target - 1e-15 * std::max(1.0, target)) t = target;
    }
    record(r, y, t, opts.psd_tol, tr0);
    y = r.states.back();
  }
  return r;
}

UnitaryEvolution::UnitaryEvolution(const Mat& H, double hbar) : hbar_(hbar) {
  if (max_abs(H - H.adjoint()) > 1e-10 * std::max(1.0, max_abs(H))) throw ValidationError("H not hermitian");
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (H + H.adjoint()));
  E_ = es.eigenvalues();
  U_ = es.eigenvectors();
}

Mat UnitaryEvolution::propagator(double t) const {
  Vec ph(E_.size());
  for (Eigen::Index i = 0; i < E_.size(); ++i) ph(i) = std::exp(-I * E_(i) * t / hbar_);
  return U_ * ph.asDiagonal() * U_.adjoint();
}

Vec UnitaryEvolution::evolve(const Vec& psi, double t) const {
  Vec c = U_.adjoint() * psi;
  for (Eigen::Index i = 0; i < E_.size(); ++i) c(i) *= std::exp(-I * E_(i) * t / hbar_);
  return U_ * c;
}

Mat UnitaryEvolution::evolve_density(const Mat& rho, double t) const {
  Mat U = propagator(t);
  return U * rho * U.adjoint();
}

Mat UnitaryEvolution::heisenberg(const Mat& A, double t) const {
  Mat U = propagator(t);
  return U.adjoint() * A * U;
}

Mat evolve_exact(const Mat& H, const Mat& rho0, double t, double hbar) {
  return UnitaryEvolution(H, hbar).evolve_density(rho0, t);
}

Vec evolve_exact(const Mat& H, const Vec& psi0, double t, double hbar) {
  return UnitaryEvolution(H, hbar).evolve(psi0, t);
}

std::vector<Observable> population_observables(int modes) {
  std::vector<Observable> out;
  for (int f = 0; f < modes; ++f) {
    Mat A = Mat::Zero(modes, modes);
    A(f, f) = 1.0;
    out.push_back({"n" + std::to_string(f), A});
  }
  out.push_back({"N", Mat::Identity(modes, modes)});
  return out;
}

SubdynamicsReport subdynamics_compare(const lindblad::MicroEmbedding& emb,
                                      const lindblad::LindbladGenerator& gen, const Mat& rho1,
                                      const std::vector<Observable>& observables,
                                      const SubdynamicsOptions& opts) {
  const int M = emb.system_modes;
  if (gen.dim() != M || rho1.rows() != M) throw ValidationError("one-particle dimensions disagree");
  SubdynamicsReport rep;
  rep.times = opts.times;
  for (double t : opts.times)
    if ((opts.tau0 > 0.0 && t < opts.tau0) || (opts.tau1 > 0.0 && t > opts.tau1)) {
      rep.window_ok = false;
      rep.window_note = "time " + std::to_string(t) + " outside [tau0, tau1]";
    }
  UnitaryEvolution U(emb.H, emb.hbar);
  const Mat full0 = emb.full_state(rho1);
  auto master = evolve_master(gen, rho1, opts.times, opts.evolve);
  Mat H0 = Mat::Zero(M, M);
  for (int f = 0; f < M; ++f) H0(f, f) = emb.energies[f];
  UnitaryEvolution U0(H0, emb.hbar);

  const std::size_t nt = opts.times.size(), no = observables.size();
  rep.exact.assign(no, std::vector<double>(nt));
  rep.reduced = rep.exact;
  rep.free = rep.exact;
  const double n0 = rho1.trace().real();
  for (std::size_t it = 0; it < nt; ++it) {
    const double t = opts.times[it];
    Mat r_exact = emb.reduce(U.evolve_density(full0, t));
    Mat r_free = U0.evolve_density(rho1, t);
    const Mat& r_gen = master.states[it];
    rep.number_drift_exact = std::max(rep.number_drift_exact, std::abs(r_exact.trace().real() - n0));
    rep.number_drift_reduced = std::max(rep.number_drift_reduced, std::abs(r_gen.trace().real() - n0));
    for (std::size_t o = 0; o < no; ++o) {
      const Mat& A = observables[o].op;
      rep.exact[o][it] = (A * r_exact).trace().real();
      rep.reduced[o][it] = (A * r_gen).trace().real();
      rep.free[o][it] = (A * r_free).trace().real();
    }
  }
  for (std::size_t o = 0; o < no; ++o) {
    rep.labels.push_back(observables[o].label);
    double scale = 0.0, dev = 0.0;
    for (std::size_t it = 0; it < nt; ++it) {
      scale = std::max(scale, std::abs(rep.exact[o][it]));
      dev = std::max(dev, std::abs(rep.exact[o][it] - rep.reduced[o][it]));
      rep.max_signal = std::max(rep.max_signal, std::abs(rep.exact[o][it] - rep.free[o][it]));
    }
    if (scale == 0.0) scale = std::max(observables[o].op.norm(), 1e-300);
    rep.max_relative.push_back(dev / scale);
    rep.max_deviation = std::max(rep.max_deviation, dev / scale);
    rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
  }
  return rep;
}

double one_step_deviation(const lindblad::MicroEmbedding& emb, const lindblad::LindbladGenerator& gen,
                          const Mat& rho1, double t, const Mat& retained) {
  const int M = emb.system_modes;
  if (!(t > 0.0)) throw ValidationError("t must be positive");
  Mat H0 = Mat::Zero(M, M);
  for (int f = 0; f < M; ++f) H0(f, f) = emb.energies[f];
  UnitaryEvolution U(emb.H, emb.hbar), U0(H0, emb.hbar);
  Mat r = emb.reduce(U.evolve_density(emb.full_state(rho1), t));
  Mat r_int = U0.evolve_density(r, -t);
  Mat exact = ((r_int - rho1) / t).cwiseProduct(retained);
  Mat model = (gen.apply(rho1) + (I / emb.hbar) * commutator(H0, rho1)).cwiseProduct(retained);
  const double n = std::max(exact.norm(), model.norm());
  return n > 0.0 ? (exact - model).norm() / n : 0.0;
}

namespace {

struct Moments {
  double m1 = 0.0, m2 = 0.0, m3 = 0.0, slope = 0.0;
};

Moments transfer_moments(const lindblad::LindbladGenerator& gen, const Mat& A, const Mat& reference) {
  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (A + A.adjoint()));
  const Mat& W = es.eigenvectors();
  const RVec& a = es.eigenvalues();
  const Eigen::Index d = a.size();
  RVec w = (W.adjoint() * reference * W).diagonal().real();
  RMat rate = RMat::Zero(d, d);  // rate(g, f) for f -> g
  for (const auto& j : gen.jumps) rate += (W.adjoint() * j.op * W).cwiseAbs2() / gen.hbar;
  Moments m;
  RVec m1f = RVec::Zero(d);
  for (Eigen::Index f = 0; f < d; ++f)
    for (Eigen::Index g = 0; g < d; ++g) {
      const double dp = a(g) - a(f), r = rate(g, f);
      m1f(f) += r * dp;
      m.m1 += w(f) * r * dp;
      m.m2 += w(f) * r * dp * dp;
      m.m3 += w(f) * r * dp * dp * dp;
    }
  // weighted least squares of m1(f) on a_f
  double sw = w.sum(), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (Eigen::Index f = 0; f < d; ++f) {
    sx += w(f) * a(f);
    sy += w(f) * m1f(f);
    sxx += w(f) * a(f) * a(f);
    sxy += w(f) * a(f) * m1f(f);
  }
  const double den = sw * sxx - sx * sx;
  m.slope = std::abs(den) > 1e-14 * std::max(1.0, sw * sxx) ? (sw * sxy - sx * sy) / den : 0.0;
  return m;
}

}  // namespace

FPCoefficients fokker_planck_reduce(const lindblad::LindbladGenerator& gen, const Mat& X, const Mat& P,
                                    double mass, const Mat& reference) {
  if (!(mass > 0.0)) throw ValidationError("mass must be positive");
  const Eigen::Index d = gen.dim();
  if (X.rows() != d || P.rows() != d || reference.rows() != d)
    throw ValidationError("phase-space operators do not match generator dimension");
  FPCoefficients c;
  c.mass = mass;
  if (gen.jumps.empty()) return c;
  const double hb = gen.hbar;
  Moments mp = transfer_moments(gen, P, reference);
  Moments mx = transfer_moments(gen, X, reference);
  c.D_pp = mp.m2 / (2.0 * hb * hb);
  c.D_qq = mx.m2 / 2.0;
  c.eta = -mass * mp.slope;
  c.drift = mp.m1;
  c.third_ratio = mp.m2 > 0.0 ? std::abs(mp.m3) / std::pow(mp.m2, 1.5) : 0.0;
  if (c.third_ratio > 0.1) {
    c.expansion_valid = false;
    c.warning = "third moment of momentum transfer not small against the second";
  }
  return c;
}

}  // namespace subdyn::dynamics
