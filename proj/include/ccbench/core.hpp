#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace ccbench {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;
using Index = Eigen::Index;

template <typename Scalar>
using MatX3T = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;
using MatX3 = MatX3T<double>;

/// Base error for all library failures.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid data or contract violation in an input.
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what) {}
};

/// File or stream level failure.
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& m) {
  return m.allFinite();
}

}  // namespace ccbench
