#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include <Eigen/Dense>

#include "deconf/errors.hpp"

namespace deconf {

/// Row-major dense matrix. Flat index `r * cols + c` is the coordinate
/// system shared by delta records and weight masks.
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Tensor = MatrixX<double>;
using Index = Eigen::Index;

template <typename Derived>
void check_finite(const Eigen::MatrixBase<Derived>& m, const char* where) {
  if (!m.allFinite()) {
    throw ValidationError(std::string("non-finite value produced by ") + where);
  }
}

template <typename Derived>
void check_same_shape(const Eigen::MatrixBase<Derived>& a,
                      const Eigen::MatrixBase<Derived>& b, const char* where) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(where) + ": shape mismatch");
  }
}

/// Row-wise softmax with per-row max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out = x;
  for (Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const Scalar mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    row /= row.sum();
  }
  return out;
}

template <typename Scalar>
inline constexpr Scalar kInvSqrt2 = Scalar(0.70710678118654752440084436210484903928);

template <typename Scalar>
Scalar gelu(Scalar x) {
  return Scalar(0.5) * x * (Scalar(1) + std::erf(x * kInvSqrt2<Scalar>));
}

template <typename Scalar>
Scalar gelu_derivative(Scalar x) {
  const Scalar cdf = Scalar(0.5) * (Scalar(1) + std::erf(x * kInvSqrt2<Scalar>));
  const Scalar pdf = std::exp(Scalar(-0.5) * x * x) * std::numbers::inv_sqrtpi_v<Scalar> *
                     kInvSqrt2<Scalar>;
  return cdf + x * pdf;
}

}  // namespace deconf
