#pragma once

// Plain scalar forms of the temperature machinery. The autodiff versions in
// losses.hpp/nets.hpp are built from tensor primitives; these are used for
// reporting, schedules and as independent references in tests.

#include <cmath>
#include <numbers>

namespace amcl {

struct TempBounds {
  double eta = 1e-5;  // lower limit
  double iota = 2.0;  // range width
  double lower() const { return eta; }
  double upper() const { return eta + iota; }
};

/// Temperature prior (d'/2) log tau + 1/tau; minimized at tau = 2/d'.
template <typename Scalar>
Scalar omega(Scalar tau, Scalar d_prime) {
  using std::log;
  return d_prime / Scalar(2) * log(tau) + Scalar(1) / tau;
}

template <typename Scalar>
Scalar omega_derivative(Scalar tau, Scalar d_prime) {
  return d_prime / (Scalar(2) * tau) - Scalar(1) / (tau * tau);
}

/// Pre-activation magnitude beyond which the bounded sigmoid saturates.
/// At 30 the output stays strictly inside (eta, eta + iota) for any eta
/// above ~1e-20, so emitted temperatures never touch the bounds.
inline constexpr double kSigmoidSaturation = 30.0;

/// iota / (1 + exp(r)) + eta, evaluated without overflow.
template <typename Scalar>
Scalar bounded_sigmoid(Scalar r, const TempBounds& b) {
  using std::exp;
  if (r > Scalar(kSigmoidSaturation)) r = Scalar(kSigmoidSaturation);
  if (r < Scalar(-kSigmoidSaturation)) r = Scalar(-kSigmoidSaturation);
  const Scalar s = r >= Scalar(0) ? exp(-r) / (Scalar(1) + exp(-r)) : Scalar(1) / (Scalar(1) + exp(r));
  return Scalar(b.iota) * s + Scalar(b.eta);
}

/// -log of an isotropic Gaussian density with variance `tau` in `d_prime`
/// dimensions evaluated at squared distance `dist2`.
template <typename Scalar>
Scalar gaussian_nll(Scalar dist2, Scalar tau, Scalar d_prime) {
  using std::log;
  return d_prime / Scalar(2) * log(Scalar(2) * std::numbers::pi_v<Scalar> * tau) + dist2 / (Scalar(2) * tau);
}

}  // namespace amcl
