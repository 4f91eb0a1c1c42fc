#include "mfm/cfm.hpp"

#include <cmath>

#include "mfm/parallel.hpp"

namespace mfm {

void OtPathConfig::validate() const {
  if (!(sigma_min > 0.0 && sigma_min < 1.0))
    throw PreconditionError("sigma_min must lie strictly between 0 and 1");
}

Vector interpolant(const OtPathConfig& cfg, double t, const Vector& x0,
                   const Vector& x1) {
  cfg.validate();
  require(t >= 0.0 && t <= 1.0, "interpolant time must lie in [0, 1]");
  return (1.0 - (1.0 - cfg.sigma_min) * t) * x0 + t * x1;
}

Vector conditional_field(const OtPathConfig& cfg, double t, const Vector& x,
                         const Vector& x1) {
  cfg.validate();
  require(t >= 0.0 && t <= 1.0, "conditional field time must lie in [0, 1]");
  const double shrink = 1.0 - cfg.sigma_min;
  return (x1 - shrink * x) / (1.0 - shrink * t);
}

CfmNoise draw_cfm_noise(int dim, Eigen::Index n, std::uint64_t seed,
                        std::uint64_t step) {
  CfmNoise noise{Vector(n), Matrix(dim, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    Rng rng = stream_rng(seed, Stream::Train, step, static_cast<std::uint64_t>(i));
    noise.ts[i] = rng.uniform();
    Vector z(dim);
    rng.fill_normal(z);
    noise.x0.col(i) = z;
  }
  return noise;
}

CfmNoise draw_cfm_noise(int dim, Eigen::Index n, Rng& rng) {
  CfmNoise noise{Vector(n), Matrix(dim, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    noise.ts[i] = rng.uniform();
    Vector z(dim);
    rng.fill_normal(z);
    noise.x0.col(i) = z;
  }
  return noise;
}

LossAndGrad cfm_loss_and_grad(const FlowParams& flow, const TargetDensity& target,
                              const OtPathConfig& cfg, const Matrix& particles,
                              const CfmNoise& noise, int workers) {
  cfg.validate();
  const Eigen::Index n = particles.cols();
  require(n >= 1, "flow matching needs at least one particle");
  if (particles.rows() != flow.dim || noise.x0.rows() != flow.dim ||
      noise.x0.cols() != n || noise.ts.size() != n)
    throw ShapeMismatch("flow matching batch shapes are inconsistent");
  for (Eigen::Index i = 0; i < n; ++i)
    if (!particles.col(i).allFinite())
      throw NonFiniteLoss("flow matching particle " + std::to_string(i) + " is not finite");

  const double shrink = 1.0 - cfg.sigma_min;
  const std::size_t chunks = chunk_count(static_cast<std::size_t>(n));
  std::vector<double> chunk_loss(chunks, 0.0);
  std::vector<Vector> chunk_grad(chunks);

  parallel_chunks(static_cast<std::size_t>(n), workers, [&](const ChunkRange& r) {
    const Eigen::Index b0 = static_cast<Eigen::Index>(r.begin);
    const Eigen::Index m = static_cast<Eigen::Index>(r.end - r.begin);
    const Vector ts = noise.ts.segment(b0, m);
    const Matrix x1 = particles.middleCols(b0, m);
    const Matrix x0 = noise.x0.middleCols(b0, m);
    Matrix xt(flow.dim, m);
    Matrix target_v(flow.dim, m);
    for (Eigen::Index b = 0; b < m; ++b) {
      const double t = ts[b];
      xt.col(b) = (1.0 - shrink * t) * x0.col(b) + t * x1.col(b);
      target_v.col(b) = (x1.col(b) - shrink * xt.col(b)) / (1.0 - shrink * t);
    }
    FieldTape tape;
    try {
      tape = field_forward(flow, target, ts, xt);
    } catch (const NonFiniteScore& e) {
      throw NonFiniteLoss(std::string("flow matching loss: ") + e.what());
    }
    const Matrix residual = tape.value - target_v;
    chunk_loss[r.index] = residual.squaredNorm();
    Vector g = Vector::Zero(flow.size());
    field_backward(flow, tape, (2.0 / double(n)) * residual, g);
    chunk_grad[r.index] = std::move(g);
  });

  LossAndGrad out;
  out.grad = Vector::Zero(flow.size());
  for (std::size_t c = 0; c < chunks; ++c) {
    out.loss += chunk_loss[c];
    out.grad += chunk_grad[c];
  }
  out.loss /= double(n);
  if (!std::isfinite(out.loss)) throw NonFiniteLoss("flow matching loss is not finite");
  return out;
}

LossAndGrad cfm_loss_and_grad(const FlowParams& flow, const TargetDensity& target,
                              const OtPathConfig& cfg, const Matrix& particles,
                              Rng& rng) {
  const CfmNoise noise = draw_cfm_noise(flow.dim, particles.cols(), rng);
  return cfm_loss_and_grad(flow, target, cfg, particles, noise);
}

double train_step(FlowParams& flow, AdamState& adam, const TargetDensity& target,
                  const OtPathConfig& cfg, const Matrix& particles,
                  const CfmNoise& noise, int workers) {
  const LossAndGrad lg = cfm_loss_and_grad(flow, target, cfg, particles, noise, workers);
  Vector theta = flow.flatten();
  adam_step(adam, theta, lg.grad);
  flow.assign(theta);
  return lg.loss;
}

double train_step(FlowParams& flow, AdamState& adam, const TargetDensity& target,
                  const OtPathConfig& cfg, const Matrix& particles, Rng& rng) {
  const CfmNoise noise = draw_cfm_noise(flow.dim, particles.cols(), rng);
  return train_step(flow, adam, target, cfg, particles, noise);
}

}  // namespace mfm
