#include "mfm/driver.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <mutex>

#include "mfm/parallel.hpp"

namespace mfm {

void MfmConfig::validate() const {
  if (iterations < 1) throw PreconditionError("iterations must be >= 1");
  if (particles < 1) throw PreconditionError("particles must be >= 1");
  if (k_q < 1) throw PreconditionError("k_q must be >= 1");
  if (!(alpha_target > 0.0 && alpha_target < 1.0))
    throw PreconditionError("alpha_target must lie in (0, 1)");
  if (cis_candidates < 1) throw PreconditionError("CIS needs at least one candidate");
  if (hidden < 1) throw PreconditionError("hidden width must be positive");
  if (smc_mala_steps < 1) throw PreconditionError("AT-SMC needs at least one MALA pass");
  if (workers < 1) throw PreconditionError("workers must be >= 1");
  mala.validate();
  ode.validate();
  ot.validate();
}

double AcceptanceCounters::local_rate() const {
  return local_attempts ? double(local_accepts) / double(local_attempts)
                        : std::numeric_limits<double>::quiet_NaN();
}

double AcceptanceCounters::flow_rate() const {
  return flow_attempts ? double(flow_accepts) / double(flow_attempts)
                       : std::numeric_limits<double>::quiet_NaN();
}

namespace {

void check_problem(const Problem& problem) {
  const int d = problem.target.dim();
  if (problem.base.dim() != d || problem.initial().dim() != d)
    throw DimensionMismatch("base, target and initial distributions must share a dimension");
  if (!problem.initial().has_sampler())
    throw PreconditionError("initial distribution must be samplable");
}

Matrix initial_positions(const Problem& problem, const MfmConfig& cfg) {
  const int d = problem.target.dim();
  Matrix pos(d, cfg.particles);
  for (int i = 0; i < cfg.particles; ++i) {
    Rng rng = stream_rng(cfg.seed, Stream::Init, 0, static_cast<std::uint64_t>(i));
    pos.col(i) = problem.initial().sample(rng);
  }
  return pos;
}

Vector log_ratios(const Problem& problem, const Matrix& pos) {
  Vector lr(pos.cols());
  for (Eigen::Index i = 0; i < pos.cols(); ++i) {
    lr[i] = problem.target.log_density(pos.col(i)) - problem.base.log_density(pos.col(i));
    if (!std::isfinite(lr[i]))
      throw DegenerateWeights("non-finite tempering log-ratio at particle " +
                              std::to_string(i));
  }
  return lr;
}

void local_sweep(const TargetDensity& pik, const MfmConfig& cfg, Matrix& pos,
                 std::uint64_t key, AcceptanceCounters& counters) {
  const std::size_t n = static_cast<std::size_t>(pos.cols());
  std::vector<long> accepts(chunk_count(n), 0);
  std::vector<long> failures(chunk_count(n), 0);
  parallel_chunks(n, cfg.workers, [&](const ChunkRange& r) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      Rng rng = stream_rng(cfg.seed, Stream::Local, key, i);
      try {
        const KernelOutcome o = mala_step(pik, cfg.mala, pos.col(i), rng);
        if (o.accepted) {
          pos.col(i) = o.new_x;
          ++accepts[r.index];
        }
      } catch (const NonFiniteProposal&) {
        ++failures[r.index];
      }
    }
  });
  counters.local_attempts += static_cast<long>(n);
  for (long a : accepts) counters.local_accepts += a;
  for (long f : failures) counters.local_failures += f;
}

void flow_sweep(const TargetDensity& pik, const TargetDensity& score,
                const FlowParams& flow, const MfmConfig& cfg, Matrix& pos,
                std::uint64_t key, AcceptanceCounters& counters) {
  const std::size_t n = static_cast<std::size_t>(pos.cols());
  const TargetDensity reference = make_standard_normal(flow.dim);
  std::vector<long> accepts(chunk_count(n), 0);
  std::vector<long> failures(chunk_count(n), 0);
  parallel_chunks(n, cfg.workers, [&](const ChunkRange& r) {
    const Eigen::Index b0 = static_cast<Eigen::Index>(r.begin);
    const Eigen::Index m = static_cast<Eigen::Index>(r.end - r.begin);
    std::vector<Rng> rngs;
    rngs.reserve(m);
    for (std::size_t i = r.begin; i < r.end; ++i)
      rngs.push_back(stream_rng(cfg.seed, Stream::Flow, key, i));
    const Matrix xs = pos.middleCols(b0, m);
    std::vector<KernelOutcome> outs;
    switch (cfg.nonlocal) {
      case NonlocalKernel::Rwmh:
        outs = flow_rwmh_batch(pik, flow, score, cfg.ode, xs, rngs);
        break;
      case NonlocalKernel::Imh:
        outs = flow_imh_batch(pik, flow, score, cfg.ode, reference, xs, rngs);
        break;
      case NonlocalKernel::Cis:
        outs = flow_cis_batch(pik, flow, score, cfg.ode, reference, xs,
                              cfg.cis_candidates, rngs);
        break;
    }
    for (Eigen::Index b = 0; b < m; ++b) {
      if (outs[b].flow_failure) ++failures[r.index];
      if (outs[b].accepted) {
        pos.col(b0 + b) = outs[b].new_x;
        ++accepts[r.index];
      }
    }
  });
  counters.flow_attempts += static_cast<long>(n);
  for (long a : accepts) counters.flow_accepts += a;
  for (long f : failures) counters.flow_failures += f;
}

}  // namespace

RunArtifacts run_mfm(const Problem& problem, const MfmConfig& cfg) {
  cfg.validate();
  check_problem(problem);
  const int d = problem.target.dim();

  RunArtifacts art;
  {
    Rng rng = stream_rng(cfg.seed, Stream::Init, 1, 0);
    art.flow = init_flow(d, cfg.hidden, cfg.fourier, rng);
  }
  AdamState adam(art.flow.size(), cfg.learning_rate, cfg.iterations);

  ChainEnsemble& ens = art.ensemble;
  ens.positions = initial_positions(problem, cfg);
  ens.temper.alpha_target = cfg.alpha_target;
  ens.temper.beta = cfg.anneal ? 0.0 : 1.0;
  ens.temper.history = {ens.temper.beta};
  art.log.reserve(static_cast<std::size_t>(cfg.iterations));

  int consecutive_bad = 0;
  for (long k = 0; k < cfg.iterations; ++k) {
    if (ens.temper.beta < 1.0)
      ens.temper = next_beta(log_ratios(problem, ens.positions), ens.temper);
    const TargetDensity pik = tempered(problem.base, problem.target, ens.temper.beta);

    const auto key = static_cast<std::uint64_t>(k);
    if (is_flow_iteration(k, cfg.k_q))
      flow_sweep(pik, problem.target, art.flow, cfg, ens.positions, key, ens.counters);
    else
      local_sweep(pik, cfg, ens.positions, key, ens.counters);

    double loss = std::numeric_limits<double>::quiet_NaN();
    try {
      const CfmNoise noise = draw_cfm_noise(d, ens.positions.cols(), cfg.seed, key);
      loss = train_step(art.flow, adam, problem.target, cfg.ot, ens.positions, noise,
                        cfg.workers);
      consecutive_bad = 0;
    } catch (const NonFiniteLoss&) {
      ++adam.step;
      ++consecutive_bad;
    } catch (const NonFiniteGradient&) {
      ++consecutive_bad;
    } catch (const NonFiniteScore&) {
      ++adam.step;
      ++consecutive_bad;
    }
    if (consecutive_bad >= 100)
      throw NonFiniteLoss("flow matching loss non-finite for 100 consecutive iterations at k=" +
                          std::to_string(k + 1));

    ens.iteration = k + 1;
    art.log.push_back({k + 1, ens.temper.beta, loss, ens.counters.local_rate(),
                       ens.counters.flow_rate()});
  }
  if (!art.flow.all_finite()) throw NonFiniteState("trained flow parameters are not finite");
  return art;
}

// ---------------------------------------------------------------------------

std::vector<int> multinomial_resample(const Vector& log_weights, std::size_t n,
                                      Rng& rng) {
  const double top = log_weights.maxCoeff();
  if (!std::isfinite(top)) throw DegenerateWeights("every resampling weight is zero");
  std::vector<double> cdf(static_cast<std::size_t>(log_weights.size()));
  double acc = 0.0;
  for (Eigen::Index i = 0; i < log_weights.size(); ++i) {
    acc += std::exp(log_weights[i] - top);
    cdf[i] = acc;
  }
  std::vector<int> idx(n);
  for (std::size_t j = 0; j < n; ++j) {
    const double u = rng.uniform() * acc;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    idx[j] = static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(),
                                                       static_cast<std::ptrdiff_t>(cdf.size()) - 1));
  }
  return idx;
}

SmcResult run_atsmc(const Problem& problem, const MfmConfig& cfg) {
  cfg.validate();
  check_problem(problem);
  SmcResult res;
  ChainEnsemble& ens = res.ensemble;
  ens.positions = initial_positions(problem, cfg);
  ens.temper.alpha_target = cfg.alpha_target;
  ens.temper.beta = 0.0;
  ens.temper.history = {0.0};

  std::uint64_t sweep = 0;
  auto mutate = [&](double beta) {
    const TargetDensity pik = tempered(problem.base, problem.target, beta);
    for (int s = 0; s < cfg.smc_mala_steps; ++s)
      local_sweep(pik, cfg, ens.positions, sweep++, ens.counters);
  };

  constexpr long kMaxTemperatures = 100000;
  while (ens.temper.beta < 1.0) {
    if (res.resampling_steps >= kMaxTemperatures)
      throw DegenerateWeights("AT-SMC did not reach beta = 1");
    const Vector lr = log_ratios(problem, ens.positions);
    const double beta_prev = ens.temper.beta;
    ens.temper = next_beta(lr, ens.temper);
    const Vector lw = tempering_log_weights(lr, beta_prev, ens.temper.beta);
    Rng rng = stream_rng(cfg.seed, Stream::Resample,
                         static_cast<std::uint64_t>(res.resampling_steps), 0);
    const std::vector<int> idx =
        multinomial_resample(lw, static_cast<std::size_t>(cfg.particles), rng);
    Matrix next(ens.positions.rows(), ens.positions.cols());
    for (std::size_t j = 0; j < idx.size(); ++j) next.col(j) = ens.positions.col(idx[j]);
    ens.positions = std::move(next);
    ++res.resampling_steps;
    mutate(ens.temper.beta);
    ens.iteration = res.resampling_steps;
  }
  mutate(1.0);
  return res;
}

// ---------------------------------------------------------------------------

FlowParams run_fm_oracle(const TargetDensity& target, const MfmConfig& cfg) {
  cfg.validate();
  if (!target.has_sampler())
    throw PreconditionError("FM oracle needs exact samples; '" + target.name() +
                            "' has no sampler");
  const int d = target.dim();
  Rng init_rng = stream_rng(cfg.seed, Stream::Init, 1, 0);
  FlowParams flow = init_flow(d, cfg.hidden, cfg.fourier, init_rng);
  AdamState adam(flow.size(), cfg.learning_rate, cfg.iterations);
  Matrix batch(d, cfg.particles);
  for (long k = 0; k < cfg.iterations; ++k) {
    const auto key = static_cast<std::uint64_t>(k);
    for (int i = 0; i < cfg.particles; ++i) {
      Rng rng = stream_rng(cfg.seed, Stream::Oracle, key, static_cast<std::uint64_t>(i));
      batch.col(i) = target.sample(rng);
    }
    const CfmNoise noise = draw_cfm_noise(d, cfg.particles, cfg.seed, key);
    train_step(flow, adam, target, cfg.ot, batch, noise, cfg.workers);
  }
  return flow;
}

// ---------------------------------------------------------------------------

Matrix sample_flow(const FlowParams& flow, const TargetDensity& score,
                   std::size_t n, std::uint64_t seed, const OdeConfig& ode,
                   int workers, std::size_t* failures) {
  Matrix x0(flow.dim, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng = stream_rng(seed, Stream::Reference, 0, i);
    x0.col(i) = rng.normal_vector(flow.dim);
  }
  // An endpoint where log pi or its score overflows is as unusable as a
  // non-finite one.
  auto usable = [&score](const Vector& x) {
    try {
      return std::isfinite(score.log_density(x)) && score.grad_log_density(x).allFinite();
    } catch (const Error&) {
      return false;
    }
  };
  Matrix out(flow.dim, static_cast<Eigen::Index>(n));
  std::vector<char> ok(n, 0);
  parallel_chunks(n, workers, [&](const ChunkRange& r) {
    const auto b0 = static_cast<Eigen::Index>(r.begin);
    const auto m = static_cast<Eigen::Index>(r.end - r.begin);
    const BatchFlowResult res =
        integrate_columns(flow, score, x0.middleCols(b0, m), 0.0, 1.0, ode, nullptr, false);
    out.middleCols(b0, m) = res.x;
    for (Eigen::Index b = 0; b < m; ++b) ok[r.begin + b] = res.ok[b] && usable(res.x.col(b)) ? 1 : 0;
  });
  std::size_t good = 0;
  for (char c : ok) good += c;
  if (failures) *failures = n - good;
  if (good == n) return out;
  Matrix kept(flow.dim, static_cast<Eigen::Index>(good));
  Eigen::Index j = 0;
  for (std::size_t i = 0; i < n; ++i)
    if (ok[i]) kept.col(j++) = out.col(i);
  return kept;
}

}  // namespace mfm
