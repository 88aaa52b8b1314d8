#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace wap {

// All internal computation is double precision; float32 appears only at the
// file-format boundary.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline bool all_finite(const Mat& m) { return m.allFinite(); }
inline bool all_finite(const MatF& m) { return m.allFinite(); }

// Fixed-width scientific notation so log and report files are stable across
// reruns and locales.
std::string fmt_sci(double v);
// Fixed six decimals, used for metrics in [0,1].
std::string fmt_fixed(double v);

}  // namespace wap
