#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "canet/tensor.hpp"

namespace canet {

struct GradCheckTarget {
  std::string name;
  Tensor* tensor;
};

struct GradCheckReport {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords = 0;
  double eps = 0.0;
  double tol = 0.0;

  std::string summary() const;
};

// Central-difference check of an analytic gradient. `loss` evaluates the
// scalar objective at the current parameter values and must be
// deterministic; `analytic_grads` returns d(loss)/d(param) for each target,
// in the same order. Relative error per coordinate is
// |g_ad - g_fd| / max(1, |g_ad|, |g_fd|).
GradCheckReport gradcheck(const std::function<double()>& loss,
                          const std::function<std::vector<Tensor>()>& analytic_grads,
                          std::span<const GradCheckTarget> params, double eps = 1e-5,
                          double tol = 1e-4);

}  // namespace canet
