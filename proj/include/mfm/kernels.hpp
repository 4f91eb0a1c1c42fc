#pragma once

#include <optional>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/flow.hpp"
#include "mfm/rng.hpp"
#include "mfm/targets.hpp"

namespace mfm {

/// Result of one Markov transition. For conditional importance sampling
/// `accepted` means the selected candidate differs from the current state.
struct KernelOutcome {
  Vector new_x;
  bool accepted = false;
  double log_alpha = 0.0;     // log acceptance probability, <= 0
  bool flow_failure = false;  // non-finite ODE state, counted as rejection
};

struct MalaConfig {
  double tau = 0.2;
  void validate() const;
};

/// log q(y | x) for the Langevin proposal N(x + tau grad log pi(x), 2 tau I),
/// dropping the constant shared by both directions.
double mala_log_proposal(const TargetDensity& target, const MalaConfig& cfg,
                         const Vector& x, const Vector& y);

KernelOutcome mala_step(const TargetDensity& target, const MalaConfig& cfg,
                        const Vector& x, Rng& rng);

/// 2.38 / sqrt(d)
double rwmh_sigma(int dim);

// Flow-informed kernels. The batched forms move every column of xs, column b
// drawing all of its randomness from rngs[b]. `target` is the density the
// Metropolis step targets; `score` is the density whose gradient enters the
// vector field (they differ while tempering). The single-step forms use the
// target for both.

std::vector<KernelOutcome> flow_rwmh_batch(const TargetDensity& target,
                                           const FlowParams& flow,
                                           const TargetDensity& score,
                                           const OdeConfig& cfg, const Matrix& xs,
                                           std::vector<Rng>& rngs,
                                           std::optional<double> sigma = {});
KernelOutcome flow_rwmh_step(const TargetDensity& target, const FlowParams& flow,
                             const OdeConfig& cfg, const Vector& x, Rng& rng,
                             std::optional<double> sigma = {});

std::vector<KernelOutcome> flow_imh_batch(const TargetDensity& target,
                                          const FlowParams& flow,
                                          const TargetDensity& score,
                                          const OdeConfig& cfg,
                                          const TargetDensity& p0,
                                          const Matrix& xs, std::vector<Rng>& rngs);
KernelOutcome flow_imh_step(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& p0,
                            const Vector& x, Rng& rng);

std::vector<KernelOutcome> flow_cis_batch(const TargetDensity& target,
                                          const FlowParams& flow,
                                          const TargetDensity& score,
                                          const OdeConfig& cfg,
                                          const TargetDensity& q0,
                                          const Matrix& xs, int n_candidates,
                                          std::vector<Rng>& rngs);
KernelOutcome flow_cis_step(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& q0,
                            const Vector& x, int n_candidates, Rng& rng);

/// Log importance weights of conditional importance sampling: entry 0 for
/// the current state, entries 1..K for the candidates. Exposed for tests.
struct CisWeights {
  Vector log_w;
  Matrix candidates;  // dim x (K + 1), column 0 is the current state
};
CisWeights flow_cis_weights(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& q0,
                            const Vector& x, int n_candidates, Rng& rng);

/// Samples an index with probability proportional to exp(log_w); returns -1
/// when every weight is zero or non-finite.
int select_log_weighted(const Vector& log_w, Rng& rng);

}  // namespace mfm
