#pragma once

#include <cmath>
#include <random>
#include <type_traits>

#include "dtam/numcore/ops.hpp"

namespace dtam {

enum class Axis { Rows, Cols };

// Softmax along `axis`: Axis::Cols normalises each row (over columns),
// Axis::Rows normalises each column.
template <typename S>
Mat<S> softmax(const Mat<S>& v, Axis axis = Axis::Cols) {
  if (!v.allFinite()) throw DomainError("softmax: non-finite input");
  if (axis == Axis::Cols) return softmax_rows_value<S>(v);
  return softmax_rows_value<S>(Mat<S>(v.transpose())).transpose();
}

template <typename S>
Vec<S> softmax(const Vec<S>& v) {
  Mat<S> row = v.transpose();
  return softmax<S>(row, Axis::Cols).transpose();
}

// Source of standard-normal draws. Every stochastic routine takes one so that
// tests can inject zeros or replay a fixed stream.
template <typename S>
class NoiseSource {
 public:
  virtual ~NoiseSource() = default;
  virtual Mat<S> normal(Eigen::Index rows, Eigen::Index cols) = 0;
};

template <typename S>
class GaussianNoise final : public NoiseSource<S> {
 public:
  explicit GaussianNoise(std::uint64_t seed) : rng_(seed) {}
  Mat<S> normal(Eigen::Index rows, Eigen::Index cols) override {
    Mat<S> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist_(rng_));
    return m;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_;
};

template <typename S>
class ZeroNoise final : public NoiseSource<S> {
 public:
  Mat<S> normal(Eigen::Index rows, Eigen::Index cols) override { return Mat<S>::Zero(rows, cols); }
};

// mean + stddev * noise.
template <typename S>
Vec<S> gaussian_reparam_sample(const DiagGaussian<S>& g, const std::type_identity_t<Vec<S>>& noise) {
  require_dims(noise.size() == g.dim(), "gaussian_reparam_sample: noise length mismatch");
  if ((g.stddev.array() <= S(0)).any()) throw DomainError("gaussian_reparam_sample: stddev must be > 0");
  return g.mean + g.stddev.cwiseProduct(noise);
}

// Differentiable form: mean + stddev ⊙ noise on row batches.
template <typename S>
Var<S> gaussian_reparam_sample(Var<S> mean, Var<S> stddev, const std::type_identity_t<Mat<S>>& noise) {
  require_dims(mean.rows() == stddev.rows() && mean.cols() == stddev.cols(), "gaussian_reparam_sample: mean/stddev shape mismatch");
  require_dims(noise.rows() == mean.rows() && noise.cols() == mean.cols(), "gaussian_reparam_sample: noise shape mismatch");
  if ((stddev.value().array() <= S(0)).any()) throw DomainError("gaussian_reparam_sample: stddev must be > 0");
  Tape<S>& t = *mean.tape;
  return add(mean, cmul(stddev, t.constant(noise)));
}

// Closed-form KL(q || p) for diagonal Gaussians.
template <typename S>
S kl_diag_gaussian(const DiagGaussian<S>& q, const DiagGaussian<S>& p) {
  require_dims(q.dim() == p.dim(), "kl_diag_gaussian: dimension mismatch");
  const auto vq = q.stddev.array().square();
  const auto vp = p.stddev.array().square();
  return ((p.stddev.array().log() - q.stddev.array().log()) + (vq + (q.mean - p.mean).array().square()) / (S(2) * vp) - S(0.5)).sum();
}

// Differentiable KL summed over every row of a batch of diagonal Gaussians,
// parameterised by log-stddev.
template <typename S>
Var<S> kl_diag_gaussian(Var<S> q_mean, Var<S> q_logstd, Var<S> p_mean, Var<S> p_logstd) {
  require_dims(q_mean.rows() == p_mean.rows() && q_mean.cols() == p_mean.cols(), "kl_diag_gaussian: dimension mismatch");
  require_dims(q_logstd.rows() == q_mean.rows() && q_logstd.cols() == q_mean.cols(), "kl_diag_gaussian: q shape mismatch");
  require_dims(p_logstd.rows() == p_mean.rows() && p_logstd.cols() == p_mean.cols(), "kl_diag_gaussian: p shape mismatch");
  // log sp - log sq + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
  Var<S> inv_var_p = exp(scale(p_logstd, S(-2)));
  Var<S> var_q = exp(scale(q_logstd, S(2)));
  Var<S> diff2 = square(sub(q_mean, p_mean));
  Var<S> ratio = cmul(add(var_q, diff2), inv_var_p);
  Var<S> per = add_scalar(add(sub(p_logstd, q_logstd), scale(ratio, S(0.5))), S(-0.5));
  return sum(per);
}

}  // namespace dtam
