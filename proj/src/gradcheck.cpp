#include "amcl/gradcheck.hpp"

#include "amcl/errors.hpp"

#include <cmath>
#include <vector>

namespace amcl {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn, std::size_t param, std::size_t coord) {
  const double v = loss_fn().item();
  if (!std::isfinite(v)) {
    throw EvaluationError("finite_diff_check: non-finite loss while probing parameter " +
                          std::to_string(param) + " coordinate " + std::to_string(coord));
  }
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params,
                                  double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) {
    throw ContractViolation("finite_diff_check: step " + std::to_string(h) + " outside [1e-7, 1e-3]");
  }
  for (auto& p : params) p.zero_grad();
  const Tensor loss = loss_fn();
  if (!std::isfinite(loss.item())) throw EvaluationError("finite_diff_check: non-finite loss");
  backward(loss);

  std::vector<Eigen::VectorXd> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad());

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Eigen::VectorXd& v = params[pi].leaf_values();
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double saved = v[i];
      v[i] = saved + h;
      const double up = evaluate(loss_fn, pi, static_cast<std::size_t>(i));
      v[i] = saved - h;
      const double down = evaluate(loss_fn, pi, static_cast<std::size_t>(i));
      v[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      ++report.coordinates;
      if (err > report.max_rel_error || report.coordinates == 1) {
        report.max_rel_error = err;
        report.param = pi;
        report.coord = static_cast<std::size_t>(i);
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace amcl
