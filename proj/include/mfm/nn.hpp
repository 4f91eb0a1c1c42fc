#pragma once

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/rng.hpp"

namespace mfm {

/// sin/cos features of t at frequencies scale * 2^j, j = 0..n-1.
struct FourierFeatures {
  int n_frequencies = 4;
  double scale = 3.14159265358979323846;

  int size() const { return 2 * n_frequencies; }
  double max_frequency() const;
  /// [sin(f_0 t) .. sin(f_{n-1} t), cos(f_0 t) .. cos(f_{n-1} t)]
  Vector embed(double t) const;
};

/// Dense MLP with tanh hidden layers and a linear output layer. All weights
/// live in one flat vector; layer l stores W_l (out x in, column-major)
/// followed by b_l.
class MlpParams {
 public:
  MlpParams() = default;
  /// widths = {input, hidden..., output}; every entry starts at zero.
  explicit MlpParams(std::vector<int> widths);

  const std::vector<int>& widths() const { return widths_; }
  int n_layers() const { return static_cast<int>(widths_.size()) - 1; }
  int input_size() const { return widths_.front(); }
  int output_size() const { return widths_.back(); }
  Eigen::Index size() const { return theta_.size(); }

  Vector& theta() { return theta_; }
  const Vector& theta() const { return theta_; }

  Eigen::Map<Matrix> weight(int layer);
  Eigen::Map<const Matrix> weight(int layer) const;
  Eigen::Map<Vector> bias(int layer);
  Eigen::Map<const Vector> bias(int layer) const;

  bool same_shape(const MlpParams& other) const {
    return widths_ == other.widths_;
  }

 private:
  std::vector<int> widths_;
  std::vector<Eigen::Index> offsets_;
  Vector theta_;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases. With
/// zero_last the output layer starts at zero.
MlpParams init_mlp(const std::vector<int>& widths, Rng& rng,
                   bool zero_last = false);

/// Activations of a batched forward pass; columns are samples.
struct MlpTape {
  std::vector<Matrix> h;  // h[0] input, h[n_layers] output
  const Matrix& output() const { return h.back(); }
};

MlpTape mlp_forward_tape(const MlpParams& p, const Matrix& inputs);
Matrix mlp_forward_batch(const MlpParams& p, const Matrix& inputs);
Vector mlp_forward(const MlpParams& p, const Vector& input);

/// Reverse pass over a tape. Adds d(sum_b cot_b . out_b)/dtheta into the
/// p.size() doubles at grad_theta (when non-null) and writes the input
/// cotangents into grad_input (when non-null).
void mlp_backward(const MlpParams& p, const MlpTape& tape,
                  const Matrix& cotangents, double* grad_theta,
                  Matrix* grad_input);

/// d(cotangent . f(input))/dtheta, shaped like p.
MlpParams mlp_param_gradient(const MlpParams& p, const Vector& input,
                             const Vector& cotangent);
/// Reverse-mode input gradient: J(input)^T cotangent.
Vector mlp_input_vjp(const MlpParams& p, const Vector& input,
                     const Vector& cotangent);

/// Forward-mode: J(input) tangent.
Vector mlp_input_jvp(const MlpParams& p, const Vector& input,
                     const Vector& tangent);
/// Per-column tangents pushed through a recorded batch: column b of the
/// result is J(x_b) t_b.
Matrix mlp_jvp_batch(const MlpParams& p, const MlpTape& tape,
                     const Matrix& tangents);
/// Many tangents at one recorded point (column `col` of the tape): returns
/// J(x) T.
Matrix mlp_jvp_probes(const MlpParams& p, const MlpTape& tape,
                      Eigen::Index col, const Matrix& tangents);

// ---------------------------------------------------------------------------

/// Adam with bias correction and a linear step-size decay
/// eps_k = eps_1 * (1 - k / K), clamped at zero.
struct AdamState {
  double initial_step = 1e-3;
  long total_steps = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  Vector m;
  Vector v;

  AdamState() = default;
  AdamState(Eigen::Index n_params, double initial_step, long total_steps);
  double step_size(long k) const;
};

/// One Adam update of `params` along `gradient` (descent). Throws
/// NonFiniteGradient on NaN/Inf input.
void adam_step(AdamState& state, Vector& params, const Vector& gradient);

// ---------------------------------------------------------------------------

/// Checkpoint blob: "MFMBLOB1", u64 header length, JSON header, then the
/// payload as little-endian doubles.
void write_blob(const std::filesystem::path& path, const nlohmann::json& header,
                const Vector& payload);
std::pair<nlohmann::json, Vector> read_blob(const std::filesystem::path& path);

nlohmann::json mlp_shape_json(const MlpParams& p);

}  // namespace mfm
