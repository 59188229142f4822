// common.hpp: Shared numeric types and error classes.
#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace subdyn {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<cplx>;

inline constexpr double pi = 3.14159265358979323846;
inline constexpr cplx I{0.0, 1.0};

// Bad input or configuration (CLI exit code 2).
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A numerical validity condition failed: non-convergence, near-singular
// solve, broken secular cut (CLI exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A structural property the construction must guarantee did not hold
// (CLI exit code 4).
struct AssertionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double max_abs(const Mat& a) { return a.size() ? a.cwiseAbs().maxCoeff() : 0.0; }

inline Mat dagger(const Mat& a) { return a.adjoint(); }

inline Mat commutator(const Mat& a, const Mat& b) { return a * b - b * a; }

inline Mat anticommutator(const Mat& a, const Mat& b) { return a * b + b * a; }

}  // namespace subdyn
