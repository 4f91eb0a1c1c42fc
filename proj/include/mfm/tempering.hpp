#pragma once

#include <vector>

#include "mfm/common.hpp"

namespace mfm {

struct TemperState {
  double beta = 0.0;
  double alpha_target = 0.5;
  std::vector<double> history{0.0};

  void validate() const;
};

/// Normalized log importance weights (beta - beta_prev) * log_ratios,
/// shifted so the largest is 0.
Vector tempering_log_weights(const Vector& log_ratios, double beta_prev,
                             double beta);

/// [sum w]^2 / (N sum w^2) for w_i = exp((beta - beta_prev) log_ratios_i),
/// evaluated in log space.
double ess_fraction(const Vector& log_ratios, double beta_prev, double beta);

/// Smallest beta in (state.beta, 1] whose ESS fraction equals the target,
/// found by bisection; jumps to 1 when the fraction never drops below it.
TemperState next_beta(const Vector& log_ratios, const TemperState& state);

}  // namespace mfm
