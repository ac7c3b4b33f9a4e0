#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dtam/numcore/tape.hpp"

namespace dtam {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_entry;
  std::size_t entries_checked = 0;
  bool passed = false;
};

template <typename S>
using NamedParams = std::vector<std::pair<std::string, Param<S>*>>;

// Compares reverse-mode gradients of `f` (Tape& -> scalar Var) to the five-point
// central difference with step eps^(1/5) * max(1, |x|). Relative error is
// |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
// `stride` > 1 checks every stride-th entry of each parameter.
template <typename S, typename F>
GradCheckReport grad_check(F&& f, const NamedParams<S>& params, double tol, double abs_floor = 1e-6, std::size_t stride = 1) {
  auto eval = [&]() {
    Tape<S> t;
    Var<S> y = f(t);
    require_dims(y.rows() == 1 && y.cols() == 1, "grad_check: function must return a scalar");
    const S v = y.scalar();
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite function value");
    return v;
  };

  for (auto& [name, p] : params) p->zero_grad();
  {
    Tape<S> t;
    Var<S> y = f(t);
    require_dims(y.rows() == 1 && y.cols() == 1, "grad_check: function must return a scalar");
    if (!std::isfinite(static_cast<double>(y.scalar()))) throw NumericError("grad_check: non-finite function value");
    t.backward(y);
  }
  std::vector<Mat<S>> analytic;
  analytic.reserve(params.size());
  for (auto& [name, p] : params) analytic.push_back(p->grad);

  GradCheckReport rep;
  const double h_base = std::pow(static_cast<double>(std::numeric_limits<S>::epsilon()), 0.2);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& [name, p] = params[k];
    for (Eigen::Index i = 0; i < p->value.size(); i += static_cast<Eigen::Index>(std::max<std::size_t>(stride, 1))) {
      S& x = p->value.data()[i];
      const S x0 = x;
      const S h = static_cast<S>(h_base * std::max(1.0, std::abs(static_cast<double>(x0))));
      auto at = [&](S offset) {
        x = x0 + offset;
        return static_cast<double>(eval());
      };
      const double fp2 = at(2 * h), fp1 = at(h), fm1 = at(-h), fm2 = at(-2 * h);
      x = x0;
      const double numeric = (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * static_cast<double>(h));
      const double a = static_cast<double>(analytic[k].data()[i]);
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), abs_floor});
      ++rep.entries_checked;
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        char buf[64];
        std::snprintf(buf, sizeof buf, "] analytic=%.6e numeric=%.6e", a, numeric);
        rep.worst_entry = name + "[" + std::to_string(i) + buf;
      }
    }
  }
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace dtam
