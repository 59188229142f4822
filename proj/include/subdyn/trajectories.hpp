// trajectories.hpp: Jump unraveling, subcollection expansion and counting statistics.
#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "subdyn/common.hpp"
#include "subdyn/lindblad.hpp"

namespace subdyn::trajectories {

// Counter-based stream: the k-th draw is a hash of (seed, stream, k), so a
// trajectory's numbers do not depend on scheduling.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t stream) : key_(mix(seed ^ mix(stream + 0x632be59bd9b4e019ULL))) {}
  std::uint64_t next_u64() { return mix(key_ + 0x9e3779b97f4a7c15ULL * ++counter_); }
  double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }  // [0, 1)
  double uniform_open() {                                      // (0, 1]
    return 1.0 - uniform();
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

struct Event {
  double time = 0.0;
  int jump = -1;  // index into the generator's jump list
};

struct TrajectoryRecord {
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
  std::vector<Event> events;
  Vec final_state;
  std::vector<int> counts;  // per jump, up to t1
  std::vector<Vec> samples;  // normalised state at the sample times
  int count_before(int jump, double t) const;
};

struct UnravelOptions {
  std::vector<double> sample_times;  // within [t0, t1]
  double max_decay = 0.2;            // largest norm-squared loss per deterministic step
  int threads = 1;
  bool keep_samples = false;  // keep per-trajectory sample states
};

struct Ensemble {
  std::vector<TrajectoryRecord> records;
  std::vector<double> sample_times;
  std::vector<Mat> mean;  // ensemble-averaged density at the sample times
  // trace-norm Monte Carlo scale at each sample time: sqrt(d (1 - Tr rho^2) / n)
  std::vector<double> sigma;
  int rejected_steps = 0;
};

// rho0 mixed: each trajectory starts in an eigenvector of rho0 drawn with its
// eigenvalue as probability. Needs K = -sum L+L (enforced generator).
Ensemble unravel(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t0, double t1, int n_traj,
                 std::uint64_t seed, const UnravelOptions& opts = {});

struct SubcollectionExpansion {
  double t = 0.0;
  std::vector<Mat> terms;  // term k: exactly k events in [0, t]
  std::vector<double> probabilities;
  double remainder = 0.0;  // 1 - sum p_k
  int steps = 0;
  double convergence = 0.0;  // step-halving change
  Mat sum() const;
};

struct QuadratureOptions {
  int initial_steps = 64;
  int max_steps = 1 << 16;
  double tolerance = 1e-10;
};

SubcollectionExpansion subcollections(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t,
                                      int max_events, const QuadratureOptions& opts = {});

// Count constraint: jumps in `jumps` (empty = all) occurring in [lo, hi)
// number between min_count and max_count.
struct Constraint {
  std::set<int> jumps;
  double lo = 0.0;
  double hi = 0.0;
  int min_count = 0;
  int max_count = 0;
};

// Events matching no constraint are unrestricted. Constraints may not overlap
// (shared jump during a shared time).
struct SubsetSpec {
  std::vector<Constraint> constraints;
};

double event_probability(const lindblad::LindbladGenerator& gen, const Mat& rho0, double t, const SubsetSpec& spec,
                         const QuadratureOptions& opts = {});

bool satisfies(const TrajectoryRecord& rec, const SubsetSpec& spec, double t);

double trace_norm(const Mat& A);

}  // namespace subdyn::trajectories
