#pragma once

#include <cstdint>

#include "mfm/common.hpp"
#include "mfm/flow.hpp"
#include "mfm/nn.hpp"
#include "mfm/rng.hpp"
#include "mfm/targets.hpp"

namespace mfm {

/// Optimal-transport conditional path: mean t x1, scale 1 - (1 - sigma_min) t.
struct OtPathConfig {
  double sigma_min = 1e-2;
  void validate() const;
};

/// (1 - (1 - sigma_min) t) x0 + t x1
Vector interpolant(const OtPathConfig& cfg, double t, const Vector& x0,
                   const Vector& x1);
/// (x1 - (1 - sigma_min) x) / (1 - (1 - sigma_min) t)
Vector conditional_field(const OtPathConfig& cfg, double t, const Vector& x,
                         const Vector& x1);

/// Per-particle noise for one loss evaluation: a time and a reference draw
/// for every particle.
struct CfmNoise {
  Vector ts;  // N
  Matrix x0;  // dim x N
};

/// t_i ~ U(0,1), x0_i ~ N(0, I) from the per-particle stream of (seed, step).
CfmNoise draw_cfm_noise(int dim, Eigen::Index n, std::uint64_t seed,
                        std::uint64_t step);
/// Same draws taken sequentially from one generator.
CfmNoise draw_cfm_noise(int dim, Eigen::Index n, Rng& rng);

struct LossAndGrad {
  double loss = 0.0;
  Vector grad;
};

/// Monte Carlo flow-matching loss (1/N) sum_i |v(t_i, x_t) - u(t_i, x_t | x1_i)|^2
/// over the particle columns and its gradient in the flattened parameter
/// layout. Work is split into fixed chunks and reduced in chunk order.
LossAndGrad cfm_loss_and_grad(const FlowParams& flow, const TargetDensity& target,
                              const OtPathConfig& cfg, const Matrix& particles,
                              const CfmNoise& noise, int workers = 1);
LossAndGrad cfm_loss_and_grad(const FlowParams& flow, const TargetDensity& target,
                              const OtPathConfig& cfg, const Matrix& particles,
                              Rng& rng);

/// One Adam step on the flow-matching gradient; returns the loss.
double train_step(FlowParams& flow, AdamState& adam, const TargetDensity& target,
                  const OtPathConfig& cfg, const Matrix& particles,
                  const CfmNoise& noise, int workers = 1);
double train_step(FlowParams& flow, AdamState& adam, const TargetDensity& target,
                  const OtPathConfig& cfg, const Matrix& particles, Rng& rng);

}  // namespace mfm
