// support.hpp: Random matrices and small systems shared by the tests.
#pragma once

#include <random>

#include "subdyn/common.hpp"
#include "subdyn/lindblad.hpp"

namespace testing_support {

using subdyn::cplx;
using subdyn::Mat;

inline Mat random_matrix(int n, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = cplx(g(rng), g(rng));
  return a;
}

inline Mat random_hermitian(int n, std::mt19937_64& rng, double scale = 1.0) {
  Mat a = random_matrix(n, rng, scale);
  return 0.5 * (a + a.adjoint());
}

inline Mat random_density(int n, std::mt19937_64& rng) {
  Mat a = random_matrix(n, rng);
  Mat r = a * a.adjoint();
  return r / r.trace().real();
}

// Lindblad generator with random hermitian H and n random jumps, trace
// identity enforced.
inline subdyn::lindblad::LindbladGenerator random_generator(int n, int jumps, std::mt19937_64& rng,
                                                            double jump_scale = 0.3) {
  std::vector<subdyn::lindblad::Jump> js;
  for (int j = 0; j < jumps; ++j) js.push_back({random_matrix(n, rng, jump_scale), "L" + std::to_string(j)});
  return subdyn::lindblad::assemble_generator(random_hermitian(n, rng), Mat::Zero(n, n), js);
}

}  // namespace testing_support
