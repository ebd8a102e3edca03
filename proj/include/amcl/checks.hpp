#pragma once

// Verification suites shared by the CLI (`gradcheck`, `reduce-check`), the
// unit tests and the acceptance binary.

#include "amcl/losses.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace amcl {

struct CheckResult {
  std::string name;
  double error = 0.0;  // max relative error observed
  double tolerance = 0.0;
  bool passed() const { return error < tolerance; }
};

/// Finite-difference check of every loss variant: NT-Xent and InfoNCE under
/// both negative aggregations, adaptive and constant temperatures,
/// C in {1, 3}, kappa in {1, 3}; SimSiam and Barlow Twins under both
/// temperature modes and head counts; and the four baselines. Random
/// instances use d' = 8 and N = 6 negatives per anchor.
std::vector<CheckResult> gradcheck_suite(std::uint64_t seed, double tolerance = 1e-4);

struct EquivalenceResult {
  double value_error = 0.0;  // max relative value mismatch
  double grad_error = 0.0;   // max relative gradient mismatch
  std::size_t instances = 0;
};

/// Softmax-aggregated AMCL NT-Xent / InfoNCE (beta = 1) against the
/// Gaussian-ratio likelihood, up to the C (d'/2) log(2 pi) offset, over
/// seeded random instances with adaptive and constant temperatures.
EquivalenceResult mle_equivalence(LossVariant variant, std::uint64_t seed, std::size_t instances);

struct StopGradientProbe {
  double max_abs_analytic = 0.0;  // over every stop-gradient branch coordinate
  double min_fd_sensitivity = 0.0;  // smallest per-branch max |dL/dx| by central differences
};

/// Analytic gradient and finite-difference sensitivity of the AMCL SimSiam
/// loss with respect to its stop-gradient branches.
StopGradientProbe simsiam_stop_gradient_probe(std::uint64_t seed);

}  // namespace amcl
