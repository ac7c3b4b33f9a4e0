#pragma once

#include <Eigen/Dense>

#include <string>

#include "dtam/errors.hpp"

namespace dtam {

// Column-major storage (Eigen default); row-major only on the wire.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatXd = Mat<double>;
using VecXd = Vec<double>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

// A trainable tensor: current value plus the gradient accumulated by the
// last backward pass. Copying a Param copies both.
template <typename S>
struct Param {
  Mat<S> value;
  Mat<S> grad;

  Param() = default;
  explicit Param(Mat<S> v) : value(std::move(v)), grad(Mat<S>::Zero(value.rows(), value.cols())) {}

  Eigen::Index rows() const { return value.rows(); }
  Eigen::Index cols() const { return value.cols(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Diagonal Gaussian, stddev strictly positive.
template <typename S>
struct DiagGaussian {
  Vec<S> mean;
  Vec<S> stddev;

  DiagGaussian() = default;
  DiagGaussian(Vec<S> m, Vec<S> s) : mean(std::move(m)), stddev(std::move(s)) {
    require_dims(mean.size() == stddev.size(), "DiagGaussian: mean/stddev length mismatch");
    if ((stddev.array() <= S(0)).any()) throw DomainError("DiagGaussian: stddev must be > 0");
  }

  Eigen::Index dim() const { return mean.size(); }

  static DiagGaussian standard(Eigen::Index n) {
    return DiagGaussian(Vec<S>::Zero(n), Vec<S>::Ones(n));
  }
};

}  // namespace dtam
