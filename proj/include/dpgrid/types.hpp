#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dpgrid {

using Complex = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;
using VecD = Eigen::VectorXd;
using MatD = Eigen::MatrixXd;
using VecI = Eigen::VectorXi;

/// Invalid user input: malformed files, violated model invariants, bad arguments.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

/// A computation could not be completed: singular systems, solver divergence,
/// rejection-sampler starvation, nonpositive bound denominators.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// The privacy accountant's admissibility condition failed (alpha >= 1/4).
struct InadmissibleError : std::runtime_error {
  explicit InadmissibleError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kPi = 3.14159265358979323846;

/// Formats a double with 17 significant digits (lossless decimal round trip).
std::string format_double(double x);

}  // namespace dpgrid
