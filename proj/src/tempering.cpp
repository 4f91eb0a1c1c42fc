#include "mfm/tempering.hpp"

#include <cmath>

namespace mfm {

void TemperState::validate() const {
  if (!(alpha_target > 0.0 && alpha_target < 1.0))
    throw PreconditionError("target ESS fraction must lie in (0, 1)");
  if (!(beta >= 0.0 && beta <= 1.0))
    throw PreconditionError("inverse temperature must lie in [0, 1]");
}

Vector tempering_log_weights(const Vector& log_ratios, double beta_prev,
                             double beta) {
  require(beta >= beta_prev, "tempering weights need beta >= beta_prev");
  require(log_ratios.size() > 0, "tempering weights need at least one particle");
  require(log_ratios.allFinite(), "log ratios must be finite");
  Vector lw = (beta - beta_prev) * log_ratios;
  lw.array() -= lw.maxCoeff();
  return lw;
}

double ess_fraction(const Vector& log_ratios, double beta_prev, double beta) {
  const Vector lw = tempering_log_weights(log_ratios, beta_prev, beta);
  const double s1 = lw.array().exp().sum();
  const double s2 = (2.0 * lw.array()).exp().sum();
  return s1 * s1 / (double(lw.size()) * s2);
}

TemperState next_beta(const Vector& log_ratios, const TemperState& state) {
  state.validate();
  require(state.beta < 1.0, "next_beta called after reaching beta = 1");
  TemperState out = state;
  const double lo0 = state.beta;
  if (ess_fraction(log_ratios, lo0, 1.0) >= state.alpha_target) {
    out.beta = 1.0;
  } else {
    double lo = lo0;
    double hi = 1.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (ess_fraction(log_ratios, lo0, mid) >= state.alpha_target) lo = mid;
      else hi = mid;
    }
    // hi always has ESS below the target, lo above it; lo keeps the
    // sequence strictly increasing only when it moved.
    out.beta = lo > lo0 ? lo : hi;
  }
  out.history.push_back(out.beta);
  return out;
}

}  // namespace mfm
