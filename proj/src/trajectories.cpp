#include "subdyn/trajectories.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace subdyn::trajectories {

int TrajectoryRecord::count_before(int jump, double t) const {
  int n = 0;
  for (const auto& e : events)
    if (e.jump == jump && e.time <= t) ++n;
  return n;
}

double trace_norm(const Mat& A) { return Eigen::BDCSVD<Mat>(A).singularValues().sum(); }

namespace {

// psi(s) = exp(sA) psi, Taylor summed, assuming ||A|| s <= 1
Vec taylor(const Mat& A, const Vec& psi, double s) {
  Vec term = psi, sum = psi;
  for (int k = 1; k < 100; ++k) {
    term = (A * term) * (s / k);
    sum += term;
    if (term.norm() <= 1e-17 * sum.norm()) break;
  }
  return sum;
}

Vec propagate(const Mat& A, double hmax, const Vec& psi, double s) {
  const int n = std::max(1, static_cast<int>(std::ceil(s / hmax)));
  Vec v = psi;
  for (int i = 0; i < n; ++i) v = taylor(A, v, s / n);
  return v;
}

struct Context {
  const lindblad::LindbladGenerator& gen;
  Mat A;  // (-iH + K/2)/hbar
  double hmax;
  std::vector<double> samples;
  double t0, t1;
  double max_decay;
  RVec p0;  // initial-state weights
  Mat v0;   // initial-state vectors
};

TrajectoryRecord run_one(const Context& c, std::uint64_t seed, std::uint64_t index, int& rejected) {
  Stream rng(seed, index);
  TrajectoryRecord rec;
  rec.seed = seed;
  rec.index = index;
  rec.counts.assign(c.gen.jumps.size(), 0);
  // initial eigenvector
  double u0 = rng.uniform(), acc = 0.0;
  Eigen::Index pick = c.p0.size() - 1;
  for (Eigen::Index i = 0; i < c.p0.size(); ++i) {
    acc += c.p0(i);
    if (u0 < acc) {
      pick = i;
      break;
    }
  }
  Vec psi = c.v0.col(pick);
  double t = c.t0;
  double u = rng.uniform_open();
  std::size_t next_sample = 0;
  auto take_samples = [&]() {
    while (next_sample < c.samples.size() && c.samples[next_sample] <= t + 1e-14 * std::max(1.0, std::abs(t))) {
      rec.samples.push_back(psi / psi.norm());
      ++next_sample;
    }
  };
  take_samples();
  double h = c.hmax;
  while (t < c.t1) {
    double stop = c.t1;
    if (next_sample < c.samples.size()) stop = std::min(stop, c.samples[next_sample]);
    double step = std::min(h, stop - t);
    const double n_now = psi.squaredNorm();
    Vec next = propagate(c.A, c.hmax, psi, step);
    const double n_next = next.squaredNorm();
    if (n_next < (1.0 - c.max_decay) * n_now) {
      ++rejected;
      h = 0.5 * step;
      continue;
    }
    if (n_next > u) {
      psi = next;
      t = (stop - t <= step) ? stop : t + step;
      h = std::min(c.hmax, 2.0 * h);
      take_samples();
      continue;
    }
    // jump inside (t, t + step]: locate by bisection on the survival probability
    double lo = 0.0, hi = step;
    for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(t)); ++it) {
      double mid = 0.5 * (lo + hi);
      if (propagate(c.A, c.hmax, psi, mid).squaredNorm() > u)
        lo = mid;
      else
        hi = mid;
    }
    Vec at = propagate(c.A, c.hmax, psi, hi);
    t += hi;
    std::vector<double> w(c.gen.jumps.size());
    double total = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) total += (w[k] = (c.gen.jumps[k].op * at).squaredNorm());
    if (!(total > 0.0)) throw NumericalError("jump with vanishing total rate");
    double r = rng.uniform() * total, run = 0.0;
    std::size_t k = w.size() - 1;
    for (std::size_t i = 0; i < w.size(); ++i) {
      run += w[i];
      if (r < run) {
        k = i;
        break;
      }
    }
    Vec j = c.gen.jumps[k].op * at;
    psi = j / j.norm();
    rec.events.push_back({t, static_cast<int>(k)});
    ++rec.counts[k];
    u = rng.uniform_open();
    take_samples();
  }
  rec.final_state = psi / psi.norm();
  return rec;
}

}  // namespace

Ensemble unravel(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t0, double t1, int n_traj,
                 std::uint64_t seed, const UnravelOptions& opts) {
  const Eigen::Index d = gen.dim();
  if (rho0.rows() != d) throw ValidationError("rho0 does not match generator dimension");
  if (!(t1 >= t0)) throw ValidationError("t1 must not precede t0");
  if (n_traj < 0) throw ValidationError("negative trajectory count");
  const Mat LL = gen.sum_LdagL();
  if (max_abs(gen.K + LL) > 1e-10 * std::max(1.0, max_abs(LL)))
    throw ValidationError("unraveling needs the trace identity K = -sum L+L");
  for (double s : opts.sample_times)
    if (s < t0 || s > t1) throw ValidationError("sample time outside [t0, t1]");
  if (!std::is_sorted(opts.sample_times.begin(), opts.sample_times.end()))
    throw ValidationError("sample times must be ascending");

  Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (rho0 + rho0.adjoint()));
  RVec p = es.eigenvalues().cwiseMax(0.0);
  p /= p.sum();
  Context c{gen, (-I * gen.H_eff + 0.5 * gen.K) / gen.hbar, 0.0, opts.sample_times, t0, t1, opts.max_decay, p,
            es.eigenvectors()};
  const double an = std::max(1e-300, c.A.operatorNorm());
  c.hmax = 1.0 / an;

  Ensemble ens;
  ens.sample_times = opts.sample_times;
  ens.records.resize(n_traj);
  const int threads = std::max(1, std::min(opts.threads, std::max(1, n_traj)));
  std::vector<int> rejected(threads, 0);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](int w) {
    try {
      for (int i = w; i < n_traj; i += threads) ens.records[i] = run_one(c, seed, i, rejected[w]);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  for (int r : rejected) ens.rejected_steps += r;

  // index-ordered reduction
  const std::size_t ns = opts.sample_times.size();
  ens.mean.assign(ns, Mat::Zero(d, d));
  for (const auto& rec : ens.records)
    for (std::size_t s = 0; s < ns; ++s) ens.mean[s] += rec.samples[s] * rec.samples[s].adjoint();
  for (std::size_t s = 0; s < ns; ++s) {
    if (n_traj > 0) ens.mean[s] /= double(n_traj);
    const double purity = (ens.mean[s] * ens.mean[s]).trace().real();
    ens.sigma.push_back(n_traj > 0 ? std::sqrt(d * std::max(0.0, 1.0 - purity) / n_traj) : 0.0);
  }
  if (!opts.keep_samples)
    for (auto& rec : ens.records) rec.samples.clear();
  return ens;
}

Mat SubcollectionExpansion::sum() const {
  Mat s = Mat::Zero(terms.empty() ? 0 : terms[0].rows(), terms.empty() ? 0 : terms[0].cols());
  for (const auto& m : terms) s += m;
  return s;
}

namespace {

void check_spec(const SubsetSpec& spec, int njumps) {
  for (std::size_t a = 0; a < spec.constraints.size(); ++a) {
    const auto& c = spec.constraints[a];
    if (c.min_count < 0 || c.max_count < c.min_count) throw ValidationError("bad count range");
    if (!(c.hi > c.lo)) throw ValidationError("empty constraint window");
    for (int j : c.jumps)
      if (j < 0 || j >= njumps) throw ValidationError("constraint names an unknown jump");
    for (std::size_t b = 0; b < a; ++b) {
      const auto& o = spec.constraints[b];
      bool time = c.lo < o.hi && o.lo < c.hi;
      bool jumps = c.jumps.empty() || o.jumps.empty();
      for (int j : c.jumps)
        if (o.jumps.count(j)) jumps = true;
      if (time && jumps) throw ValidationError("overlapping constraints");
    }
  }
}

// Hierarchy over the constrained counts. Entry n = (n_0, ..., n_{C-1}) holds
// the unnormalised state of histories with those counts so far; a count
// passing max_count leaves the hierarchy.
struct Hierarchy {
  const lindblad::LindbladGenerator& gen;
  const SubsetSpec& spec;
  std::vector<int> dims, stride;
  int size = 1;

  Hierarchy(const lindblad::LindbladGenerator& g, const SubsetSpec& s) : gen(g), spec(s) {
    for (const auto& c : spec.constraints) {
      stride.push_back(size);
      dims.push_back(c.max_count + 1);
      size *= c.max_count + 1;
    }
  }

  Mat jump_part(const Mat& rho, const std::vector<int>& js) const {
    Mat out = Mat::Zero(rho.rows(), rho.cols());
    for (int k : js) out += gen.jumps[k].op * rho * gen.jumps[k].op.adjoint();
    return out / gen.hbar;
  }

  // derivative with the windows active at time s
  std::vector<Mat> deriv(const std::vector<Mat>& T, double s) const {
    const double hb = gen.hbar;
    std::vector<int> owner(gen.jumps.size(), -1);
    for (std::size_t c = 0; c < spec.constraints.size(); ++c) {
      const auto& con = spec.constraints[c];
      if (s < con.lo || s >= con.hi) continue;
      for (std::size_t k = 0; k < gen.jumps.size(); ++k)
        if (con.jumps.empty() || con.jumps.count(static_cast<int>(k))) owner[k] = static_cast<int>(c);
    }
    std::vector<int> free_js;
    std::vector<std::vector<int>> marked(spec.constraints.size());
    for (std::size_t k = 0; k < owner.size(); ++k)
      (owner[k] < 0 ? free_js : marked[owner[k]]).push_back(static_cast<int>(k));
    std::vector<Mat> D(size);
    for (int n = 0; n < size; ++n) {
      const Mat& r = T[n];
      D[n] = (-I / hb) * commutator(gen.H_eff, r) + (0.5 / hb) * anticommutator(gen.K, r) + jump_part(r, free_js);
    }
    for (int n = 0; n < size; ++n)
      for (std::size_t c = 0; c < spec.constraints.size(); ++c) {
        if (marked[c].empty()) continue;
        const int nc = (n / stride[c]) % dims[c];
        if (nc + 1 < dims[c]) D[n + stride[c]] += jump_part(T[n], marked[c]);
      }
    return D;
  }

  std::vector<Mat> integrate(const Mat& rho0, double t, int nsteps) const {
    std::vector<double> cuts{0.0, t};
    for (const auto& c : spec.constraints)
      for (double x : {c.lo, c.hi})
        if (x > 0.0 && x < t) cuts.push_back(x);
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<Mat> T(size, Mat::Zero(rho0.rows(), rho0.cols()));
    T[0] = rho0;
    auto axpy = [](const std::vector<Mat>& a, const std::vector<Mat>& b, double h) {
      std::vector<Mat> out(a.size());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + h * b[i];
      return out;
    };
    for (std::size_t seg = 0; seg + 1 < cuts.size(); ++seg) {
      const double a = cuts[seg], b = cuts[seg + 1];
      const double mid = 0.5 * (a + b);
      const int n = std::max(1, static_cast<int>(std::ceil(nsteps * (b - a) / t)));
      const double h = (b - a) / n;
      for (int i = 0; i < n; ++i) {
        auto k1 = deriv(T, mid);
        auto k2 = deriv(axpy(T, k1, 0.5 * h), mid);
        auto k3 = deriv(axpy(T, k2, 0.5 * h), mid);
        auto k4 = deriv(axpy(T, k3, h), mid);
        for (int j = 0; j < size; ++j) T[j] += (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
      }
    }
    return T;
  }

  // integrate with step doubling until the hierarchy changes by < tol
  std::vector<Mat> converged(const Mat& rho0, double t, const QuadratureOptions& o, int& steps,
                             double& change) const {
    int n = std::max(o.initial_steps, static_cast<int>(std::ceil(gen.norm() * t)));
    auto prev = integrate(rho0, t, n);
    while (true) {
      if (2 * n > o.max_steps) throw NumericalError("subcollection quadrature did not converge");
      auto next = integrate(rho0, t, 2 * n);
      change = 0.0;
      for (int j = 0; j < size; ++j) change = std::max(change, max_abs(next[j] - prev[j]));
      n *= 2;
      if (change < o.tolerance) {
        steps = n;
        return next;
      }
      prev = std::move(next);
    }
  }
};

}  // namespace

SubcollectionExpansion subcollections(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t,
                                      int max_events, const QuadratureOptions& opts) {
  if (max_events < 0) throw ValidationError("max_events must be non-negative");
  if (!(t >= 0.0)) throw ValidationError("t must be non-negative");
  SubcollectionExpansion e;
  e.t = t;
  if (t == 0.0) {
    e.terms.push_back(rho0);
    for (int k = 0; k < max_events; ++k) e.terms.push_back(Mat::Zero(rho0.rows(), rho0.cols()));
  } else {
    SubsetSpec spec;
    spec.constraints.push_back({{}, 0.0, t * (1.0 + 1e-12) + 1e-300, 0, max_events});
    Hierarchy h(gen, spec);
    e.terms = h.converged(rho0, t, opts, e.steps, e.convergence);
  }
  double total = 0.0;
  for (auto& m : e.terms) {
    m = 0.5 * (m + m.adjoint());
    e.probabilities.push_back(m.trace().real());
    total += e.probabilities.back();
  }
  e.remainder = rho0.trace().real() - total;
  return e;
}

double event_probability(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t, const SubsetSpec& spec,
                         const QuadratureOptions& opts) {
  check_spec(spec, static_cast<int>(gen.jumps.size()));
  if (!(t > 0.0)) throw ValidationError("t must be positive");
  Hierarchy h(gen, spec);
  int steps = 0;
  double change = 0.0;
  auto T = h.converged(rho0, t, opts, steps, change);
  double p = 0.0;
  for (int n = 0; n < h.size; ++n) {
    bool ok = true;
    for (std::size_t c = 0; c < spec.constraints.size(); ++c)
      if ((n / h.stride[c]) % h.dims[c] < spec.constraints[c].min_count) ok = false;
    if (ok) p += T[n].trace().real();
  }
  return p;
}

bool satisfies(const TrajectoryRecord& rec, const SubsetSpec& spec, double t) {
  for (const auto& c : spec.constraints) {
    int n = 0;
    for (const auto& e : rec.events)
      if (e.time <= t && e.time >= c.lo && e.time < c.hi && (c.jumps.empty() || c.jumps.count(e.jump))) ++n;
    if (n < c.min_count || n > c.max_count) return false;
  }
  return true;
}

}  // namespace subdyn::trajectories
