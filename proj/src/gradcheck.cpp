#include "canet/gradcheck.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace canet {

std::string GradCheckReport::summary() const {
  char buf[256];
  if (coords == 0) return "gradcheck: no coordinates";
  std::snprintf(buf, sizeof(buf), "gradcheck %s: max rel err %.3e at %s[%zu] (ad %.6e, fd %.6e), %zu coords",
                pass ? "PASS" : "FAIL", max_rel_err, worst_param.c_str(), worst_index,
                worst_analytic, worst_numeric, coords);
  return buf;
}

GradCheckReport gradcheck(const std::function<double()>& loss,
                          const std::function<std::vector<Tensor>()>& analytic_grads,
                          std::span<const GradCheckTarget> params, double eps, double tol) {
  GradCheckReport report;
  report.eps = eps;
  report.tol = tol;
  std::vector<Tensor> ad = analytic_grads();
  if (ad.size() != params.size())
    throw std::invalid_argument("analytic_grads returned " + std::to_string(ad.size()) +
                                " tensors for " + std::to_string(params.size()) + " parameters");
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& theta = *params[p].tensor;
    if (ad[p].shape() != theta.shape())
      throw std::invalid_argument("gradient shape mismatch for " + params[p].name + ": " +
                                  shape_str(ad[p].shape()) + " vs " + shape_str(theta.shape()));
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double saved = theta[i];
      theta[i] = saved + eps;
      double up = loss();
      theta[i] = saved - eps;
      double down = loss();
      theta[i] = saved;
      double fd = (up - down) / (2.0 * eps);
      double an = ad[p][i];
      double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
      ++report.coords;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].name;
        report.worst_index = i;
        report.worst_analytic = an;
        report.worst_numeric = fd;
      }
    }
  }
  report.pass = report.max_rel_err < tol;
  return report;
}

}  // namespace canet
