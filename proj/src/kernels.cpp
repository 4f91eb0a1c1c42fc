#include "mfm/kernels.hpp"

#include <cmath>
#include <limits>

namespace mfm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double finite_or_neg_inf(double v) { return std::isnan(v) ? kNegInf : v; }

// min(0, r) with NaN mapped to rejection.
double clamp_log_alpha(double r) {
  if (std::isnan(r)) return kNegInf;
  return std::min(0.0, r);
}

bool accept(double log_alpha, Rng& rng) {
  return std::log(rng.uniform_pos()) <= log_alpha && log_alpha > kNegInf;
}

}  // namespace

void MalaConfig::validate() const {
  if (!(tau > 0.0)) throw PreconditionError("MALA step size must be positive");
}

double mala_log_proposal(const TargetDensity& target, const MalaConfig& cfg,
                         const Vector& x, const Vector& y) {
  const Vector mean = x + cfg.tau * target.grad_log_density(x);
  return -(y - mean).squaredNorm() / (4.0 * cfg.tau);
}

KernelOutcome mala_step(const TargetDensity& target, const MalaConfig& cfg,
                        const Vector& x, Rng& rng) {
  cfg.validate();
  require(x.allFinite(), "MALA needs a finite state");
  const Vector grad_x = target.grad_log_density(x);
  Vector noise(x.size());
  rng.fill_normal(noise);
  const Vector y = x + cfg.tau * grad_x + std::sqrt(2.0 * cfg.tau) * noise;
  if (!y.allFinite()) throw NonFiniteProposal("MALA proposal is not finite");

  const Vector grad_y = target.grad_log_density(y);
  const double log_fwd = -(y - x - cfg.tau * grad_x).squaredNorm() / (4.0 * cfg.tau);
  const double log_bwd = -(x - y - cfg.tau * grad_y).squaredNorm() / (4.0 * cfg.tau);
  const double ratio = finite_or_neg_inf(target.log_density(y)) -
                       target.log_density(x) + log_bwd - log_fwd;

  KernelOutcome out;
  out.log_alpha = clamp_log_alpha(ratio);
  out.accepted = accept(out.log_alpha, rng);
  out.new_x = out.accepted ? y : x;
  return out;
}

double rwmh_sigma(int dim) { return 2.38 / std::sqrt(double(dim)); }

// ---------------------------------------------------------------------------

std::vector<KernelOutcome> flow_rwmh_batch(const TargetDensity& target,
                                           const FlowParams& flow,
                                           const TargetDensity& score,
                                           const OdeConfig& cfg, const Matrix& xs,
                                           std::vector<Rng>& rngs,
                                           std::optional<double> sigma) {
  const Eigen::Index B = xs.cols();
  require(static_cast<Eigen::Index>(rngs.size()) == B, "one generator per chain");
  require(xs.allFinite(), "flow RWMH needs finite states");
  const double step = sigma.value_or(rwmh_sigma(flow.dim));

  const BatchFlowResult back = integrate_columns(flow, score, xs, 1.0, 0.0, cfg, &rngs);
  Matrix y0 = back.x;
  for (Eigen::Index b = 0; b < B; ++b) {
    Vector z(flow.dim);
    rngs[b].fill_normal(z);
    if (back.ok[b]) y0.col(b) += step * z;
    else y0.col(b).setZero();
  }
  const BatchFlowResult fwd = integrate_columns(flow, score, y0, 0.0, 1.0, cfg, &rngs);

  std::vector<KernelOutcome> out(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    KernelOutcome& o = out[b];
    o.new_x = xs.col(b);
    if (!back.ok[b] || !fwd.ok[b]) {
      o.flow_failure = true;
      o.log_alpha = kNegInf;
      rngs[b].uniform();  // keep the stream layout independent of failures
      continue;
    }
    const double num = target.log_density(fwd.x.col(b)) - fwd.delta_logp[b];
    const double den = target.log_density(xs.col(b)) + back.delta_logp[b];
    o.log_alpha = clamp_log_alpha(finite_or_neg_inf(num) - den);
    o.accepted = accept(o.log_alpha, rngs[b]);
    if (o.accepted) o.new_x = fwd.x.col(b);
  }
  return out;
}

KernelOutcome flow_rwmh_step(const TargetDensity& target, const FlowParams& flow,
                             const OdeConfig& cfg, const Vector& x, Rng& rng,
                             std::optional<double> sigma) {
  std::vector<Rng> rngs{rng};
  auto out = flow_rwmh_batch(target, flow, target, cfg, x, rngs, sigma);
  rng = rngs.front();
  return out.front();
}

// ---------------------------------------------------------------------------

std::vector<KernelOutcome> flow_imh_batch(const TargetDensity& target,
                                          const FlowParams& flow,
                                          const TargetDensity& score,
                                          const OdeConfig& cfg,
                                          const TargetDensity& p0,
                                          const Matrix& xs, std::vector<Rng>& rngs) {
  const Eigen::Index B = xs.cols();
  require(static_cast<Eigen::Index>(rngs.size()) == B, "one generator per chain");
  require(xs.allFinite(), "flow IMH needs finite states");
  if (p0.dim() != flow.dim) throw DimensionMismatch("reference dimension mismatch");

  const BatchFlowResult back = integrate_columns(flow, score, xs, 1.0, 0.0, cfg, &rngs);
  Matrix fresh(flow.dim, B);
  for (Eigen::Index b = 0; b < B; ++b) fresh.col(b) = p0.sample(rngs[b]);
  const BatchFlowResult fwd = integrate_columns(flow, score, fresh, 0.0, 1.0, cfg, &rngs);

  std::vector<KernelOutcome> out(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    KernelOutcome& o = out[b];
    o.new_x = xs.col(b);
    if (!back.ok[b] || !fwd.ok[b]) {
      o.flow_failure = true;
      o.log_alpha = kNegInf;
      rngs[b].uniform();
      continue;
    }
    // log q(x1) of the fresh proposal and of the current state.
    const double log_q_prop = p0.log_density(fresh.col(b)) + fwd.delta_logp[b];
    const double log_q_curr = p0.log_density(back.x.col(b)) - back.delta_logp[b];
    const double ratio = finite_or_neg_inf(target.log_density(fwd.x.col(b))) +
                         log_q_curr - log_q_prop - target.log_density(xs.col(b));
    o.log_alpha = clamp_log_alpha(ratio);
    o.accepted = accept(o.log_alpha, rngs[b]);
    if (o.accepted) o.new_x = fwd.x.col(b);
  }
  return out;
}

KernelOutcome flow_imh_step(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& p0,
                            const Vector& x, Rng& rng) {
  std::vector<Rng> rngs{rng};
  auto out = flow_imh_batch(target, flow, target, cfg, p0, x, rngs);
  rng = rngs.front();
  return out.front();
}

// ---------------------------------------------------------------------------

int select_log_weighted(const Vector& log_w, Rng& rng) {
  double top = kNegInf;
  for (double w : log_w)
    if (!std::isnan(w)) top = std::max(top, w);
  if (!std::isfinite(top)) return -1;
  Vector w(log_w.size());
  for (Eigen::Index k = 0; k < log_w.size(); ++k)
    w[k] = std::isnan(log_w[k]) ? 0.0 : std::exp(log_w[k] - top);
  const double u = rng.uniform() * w.sum();
  double acc = 0.0;
  for (Eigen::Index k = 0; k < w.size(); ++k) {
    acc += w[k];
    if (u < acc) return static_cast<int>(k);
  }
  for (Eigen::Index k = w.size() - 1; k >= 0; --k)
    if (w[k] > 0.0) return static_cast<int>(k);
  return -1;
}

namespace {

std::vector<CisWeights> cis_weights_batch(const TargetDensity& target,
                                          const FlowParams& flow,
                                          const TargetDensity& score,
                                          const OdeConfig& cfg,
                                          const TargetDensity& q0,
                                          const Matrix& xs, int n_candidates,
                                          std::vector<Rng>& rngs) {
  require(n_candidates >= 1, "conditional importance sampling needs K >= 1");
  const Eigen::Index B = xs.cols();
  const Eigen::Index K = n_candidates;
  require(static_cast<Eigen::Index>(rngs.size()) == B, "one generator per chain");
  require(xs.allFinite(), "flow CIS needs finite states");
  if (q0.dim() != flow.dim) throw DimensionMismatch("reference dimension mismatch");

  const BatchFlowResult back = integrate_columns(flow, score, xs, 1.0, 0.0, cfg, &rngs);
  Matrix fresh(flow.dim, B * K);
  std::vector<Rng> cand_rngs;
  cand_rngs.reserve(B * K);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (Eigen::Index k = 0; k < K; ++k) {
      fresh.col(b * K + k) = q0.sample(rngs[b]);
      cand_rngs.emplace_back(rngs[b](), static_cast<std::uint64_t>(k));
    }
  }
  const BatchFlowResult fwd =
      integrate_columns(flow, score, fresh, 0.0, 1.0, cfg, &cand_rngs);

  std::vector<CisWeights> out(B);
  for (Eigen::Index b = 0; b < B; ++b) {
    CisWeights& w = out[b];
    w.log_w.resize(K + 1);
    w.candidates.resize(flow.dim, K + 1);
    w.candidates.col(0) = xs.col(b);
    w.log_w[0] = back.ok[b]
                     ? target.log_density(xs.col(b)) -
                           (q0.log_density(back.x.col(b)) - back.delta_logp[b])
                     : kNegInf;
    for (Eigen::Index k = 0; k < K; ++k) {
      const Eigen::Index c = b * K + k;
      if (!fwd.ok[c]) {
        w.log_w[k + 1] = kNegInf;
        w.candidates.col(k + 1) = xs.col(b);
        continue;
      }
      w.candidates.col(k + 1) = fwd.x.col(c);
      const double log_p = q0.log_density(fresh.col(c)) + fwd.delta_logp[c];
      w.log_w[k + 1] = finite_or_neg_inf(target.log_density(fwd.x.col(c))) - log_p;
    }
  }
  return out;
}

}  // namespace

CisWeights flow_cis_weights(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& q0,
                            const Vector& x, int n_candidates, Rng& rng) {
  std::vector<Rng> rngs{rng};
  auto out = cis_weights_batch(target, flow, target, cfg, q0, x, n_candidates, rngs);
  rng = rngs.front();
  return out.front();
}

std::vector<KernelOutcome> flow_cis_batch(const TargetDensity& target,
                                          const FlowParams& flow,
                                          const TargetDensity& score,
                                          const OdeConfig& cfg,
                                          const TargetDensity& q0,
                                          const Matrix& xs, int n_candidates,
                                          std::vector<Rng>& rngs) {
  const auto weights = cis_weights_batch(target, flow, score, cfg, q0, xs, n_candidates, rngs);
  std::vector<KernelOutcome> out(weights.size());
  for (std::size_t b = 0; b < weights.size(); ++b) {
    const CisWeights& w = weights[b];
    KernelOutcome& o = out[b];
    o.new_x = w.candidates.col(0);
    const int pick = select_log_weighted(w.log_w, rngs[b]);
    if (pick < 0) {
      // every weight underflowed: keep the current state
      o.flow_failure = true;
      o.log_alpha = kNegInf;
      continue;
    }
    const double top = w.log_w.maxCoeff();
    const double total = (w.log_w.array() - top).exp().sum();
    const double stay = std::isfinite(w.log_w[0]) ? std::exp(w.log_w[0] - top) / total : 0.0;
    o.log_alpha = stay >= 1.0 ? kNegInf : std::log1p(-stay);
    o.accepted = pick != 0;
    o.new_x = w.candidates.col(pick);
  }
  return out;
}

KernelOutcome flow_cis_step(const TargetDensity& target, const FlowParams& flow,
                            const OdeConfig& cfg, const TargetDensity& q0,
                            const Vector& x, int n_candidates, Rng& rng) {
  std::vector<Rng> rngs{rng};
  auto out = flow_cis_batch(target, flow, target, cfg, q0, x, n_candidates, rngs);
  rng = rngs.front();
  return out.front();
}

}  // namespace mfm
