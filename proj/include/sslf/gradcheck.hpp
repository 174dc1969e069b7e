#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "sslf/tensor.hpp"

namespace sslf {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<std::pair<std::string, double>> per_parameter_errors;
  bool passed = false;
};

// Central finite-difference check of reverse-mode gradients. `fn` rebuilds
// the computation on the given tape and returns a scalar; it must read the
// current values of `params` each call. Relative error per coordinate is
// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class T>
GradCheckResult grad_check(const std::function<TensorT<T>(Tape<T>&)>& fn,
                           std::vector<std::pair<std::string, TensorT<T>>> params,
                           double tolerance = 1e-4, double step = 1e-4) {
  require(step > 0, ErrorKind::Config, "grad_check: step must be positive");
  for (auto& [name, p] : params) {
    if (!p.requires_grad()) p.set_requires_grad(true);
    p.zero_grad();
  }

  Tape<T> tape;
  TensorT<T> loss = fn(tape);
  require(loss.size() == 1, ErrorKind::Shape, "grad_check: function output must be scalar, got ",
          shape_str(loss.shape()));
  tape.backward(loss);

  auto eval = [&fn]() -> double {
    Tape<T> scratch;
    TensorT<T> out = fn(scratch);
    require(out.size() == 1, ErrorKind::Shape, "grad_check: function output must be scalar");
    return static_cast<double>(out.at(0));
  };

  GradCheckResult result;
  for (auto& [name, p] : params) {
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const T saved = p.at(i);
      p.at(i) = saved + static_cast<T>(step);
      const double f_plus = eval();
      p.at(i) = saved - static_cast<T>(step);
      const double f_minus = eval();
      p.at(i) = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * step);
      const double analytic = static_cast<double>(p.grad()[i]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    result.per_parameter_errors.emplace_back(name, worst);
    result.max_relative_error = std::max(result.max_relative_error, worst);
  }
  result.passed = result.max_relative_error < tolerance;
  return result;
}

}  // namespace sslf
