#pragma once

#include "amcl/tensor.hpp"

#include <functional>
#include <span>

namespace amcl {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t param = 0;  // index of the worst parameter
  std::size_t coord = 0;  // flat coordinate within it
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step `h` over every coordinate of every tensor in `params`. The
/// error for one coordinate is |analytic - numeric| / max(1, |analytic|).
///
/// `loss_fn` must rebuild its graph from the current leaf values on each
/// call. Throws EvaluationError on a non-finite loss and ContractViolation
/// when h is outside [1e-7, 1e-3].
GradCheckReport finite_diff_check(const std::function<Tensor()>& loss_fn,
                                  std::span<Tensor> params, double h = 1e-5);

}  // namespace amcl
