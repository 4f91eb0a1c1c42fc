#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "mfm/common.hpp"
#include "mfm/nn.hpp"
#include "mfm/rng.hpp"
#include "mfm/targets.hpp"

namespace mfm {

/// Parameters of the vector field
///   v_t(x) = [net_x(x, ff(t)) + net_t(ff(t)) * score(x)] / scale(t),
///   scale(t) = 0.1 + softplus(net_scale(ff(t))).
struct FlowParams {
  int dim = 0;
  FourierFeatures fourier;
  MlpParams net_x;      // (dim + 2F) -> dim
  MlpParams net_t;      // 2F -> dim
  MlpParams net_scale;  // 2F -> 1

  Eigen::Index size() const {
    return net_x.size() + net_t.size() + net_scale.size();
  }
  Vector flatten() const;
  void assign(const Vector& flat);
  bool all_finite() const;
};

inline constexpr double kScaleFloor = 0.1;

/// Random hidden layers; net_x's output layer starts at zero.
FlowParams init_flow(int dim, int hidden, const FourierFeatures& ff, Rng& rng);
/// Every weight zero: v = 0 for any target.
FlowParams zero_flow(int dim, int hidden, const FourierFeatures& ff);

/// 0.1 + softplus(u)
double scale_from_raw(double u);
/// The raw net_scale output u producing a given divisor.
double raw_for_scale(double scale);

enum class DivergenceMode { Exact, Hutchinson };

struct OdeConfig {
  int n_steps = 32;
  DivergenceMode divergence = DivergenceMode::Exact;
  int n_probes = 1;

  void validate() const;
};

/// Position plus the accumulated -int div v dt along the traversed direction.
struct AugmentedState {
  Vector x;
  double delta_logp = 0.0;
};

Vector vector_field(const FlowParams& params, const TargetDensity& target,
                    double t, const Vector& x);
/// Exact trace from dim forward probes, or the Rademacher estimate
/// averaged over cfg.n_probes probes drawn from rng.
double divergence(const FlowParams& params, const TargetDensity& target,
                  double t, const Vector& x, const OdeConfig& cfg,
                  Rng* rng = nullptr);

AugmentedState integrate_forward(const FlowParams& params,
                                 const TargetDensity& target,
                                 const AugmentedState& state0,
                                 const OdeConfig& cfg, Rng* rng = nullptr);
AugmentedState integrate_backward(const FlowParams& params,
                                  const TargetDensity& target,
                                  const AugmentedState& state1,
                                  const OdeConfig& cfg, Rng* rng = nullptr);

/// Log-density of the target pulled back to reference space at x.
double pullback_log_density(const FlowParams& params,
                            const TargetDensity& target, const Vector& x,
                            const OdeConfig& cfg, Rng* rng = nullptr);

/// Result of integrating a batch of columns. Columns whose state became
/// non-finite are flagged instead of aborting the whole batch.
struct BatchFlowResult {
  Matrix x;
  Vector delta_logp;
  std::vector<bool> ok;
};

/// Integrates every column of xs from `t_start` to `t_end` (0 -> 1 or
/// 1 -> 0). In Hutchinson mode column b draws its probes from rngs[b].
BatchFlowResult integrate_columns(const FlowParams& params,
                                  const TargetDensity& target, const Matrix& xs,
                                  double t_start, double t_end,
                                  const OdeConfig& cfg, std::vector<Rng>* rngs,
                                  bool track_divergence = true);

/// Rowwise integrate_forward over an n x dim batch; throws NonFiniteState
/// naming the first bad row.
std::vector<AugmentedState> integrate_forward_batch(
    const FlowParams& params, const TargetDensity& target,
    const std::vector<AugmentedState>& rows, const OdeConfig& cfg,
    std::vector<Rng>* rngs = nullptr);

// ---------------------------------------------------------------------------
// Per-sample-time evaluation with a reverse pass, used by flow matching.

struct FieldTape {
  MlpTape x_tape;
  MlpTape t_tape;
  MlpTape scale_tape;
  Matrix scores;     // dim x B
  Matrix numerator;  // net_x + net_t * score
  Vector scale;      // per column
  Matrix value;      // v
};

FieldTape field_forward(const FlowParams& params, const TargetDensity& target,
                        const Vector& ts, const Matrix& xs);
/// Adds d(sum_b cot_b . v_b)/dtheta into grad (flattened layout).
void field_backward(const FlowParams& params, const FieldTape& tape,
                    const Matrix& cotangents, Vector& grad);

// ---------------------------------------------------------------------------

void save_flow(const std::filesystem::path& path, const FlowParams& params,
               const nlohmann::json& meta = nlohmann::json::object());
/// Returns the parameters and the stored metadata object.
std::pair<FlowParams, nlohmann::json> load_flow(const std::filesystem::path& path);

}  // namespace mfm
