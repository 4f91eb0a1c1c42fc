#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "mfm/cfm.hpp"
#include "mfm/common.hpp"
#include "mfm/diagnostics.hpp"
#include "mfm/flow.hpp"
#include "mfm/kernels.hpp"
#include "mfm/tempering.hpp"
#include "mfm/targets.hpp"

namespace mfm {

/// Base, target and the distribution the chains start from.
struct Problem {
  TargetDensity base;    // pi_0 of the tempering path
  TargetDensity target;  // pi
  std::optional<TargetDensity> init;  // defaults to base

  const TargetDensity& initial() const { return init ? *init : base; }
};

enum class NonlocalKernel { Rwmh, Imh, Cis };

struct MfmConfig {
  long iterations = 1000;  // K
  int particles = 128;     // N
  long k_q = 10;           // flow step on every k_q-th iteration
  double alpha_target = 0.5;
  MalaConfig mala;
  OdeConfig ode;
  OtPathConfig ot;
  NonlocalKernel nonlocal = NonlocalKernel::Rwmh;
  int cis_candidates = 4;
  std::uint64_t seed = 0;
  int hidden = 128;
  FourierFeatures fourier;
  double learning_rate = 1e-3;
  bool anneal = true;     // false starts at beta = 1
  int smc_mala_steps = 5;  // MALA passes per temperature in AT-SMC
  int workers = 1;

  void validate() const;
};

/// True when iteration k (0-based) applies the flow-informed kernel.
inline bool is_flow_iteration(long k, long k_q) { return k % k_q == k_q - 1; }

struct AcceptanceCounters {
  long local_attempts = 0;
  long local_accepts = 0;
  long flow_attempts = 0;
  long flow_accepts = 0;
  long flow_failures = 0;
  long local_failures = 0;

  /// NaN when the kernel was never used.
  double local_rate() const;
  double flow_rate() const;
};

struct ChainEnsemble {
  Matrix positions;  // dim x N
  TemperState temper;
  long iteration = 0;
  AcceptanceCounters counters;
};

struct RunLogRow {
  long iteration = 0;
  double beta = 0.0;
  double loss = 0.0;
  double acceptance_local = 0.0;
  double acceptance_flow = 0.0;
};

struct RunArtifacts {
  FlowParams flow;
  ChainEnsemble ensemble;
  std::vector<RunLogRow> log;
  std::optional<DiagnosticsReport> diagnostics;
};

/// Markovian flow matching: tempered local MALA moves interleaved with
/// flow-informed moves, with one flow-matching update per iteration.
RunArtifacts run_mfm(const Problem& problem, const MfmConfig& cfg);

struct SmcResult {
  ChainEnsemble ensemble;
  long resampling_steps = 0;
};

/// Adaptive tempered SMC with multinomial resampling and MALA moves.
SmcResult run_atsmc(const Problem& problem, const MfmConfig& cfg);

/// Flow matching on exact target draws (fresh N draws per step).
FlowParams run_fm_oracle(const TargetDensity& target, const MfmConfig& cfg);

/// Multinomial resampling indices for normalized log weights.
std::vector<int> multinomial_resample(const Vector& log_weights, std::size_t n,
                                      Rng& rng);

/// Pushes n reference draws through the flow (no log-density tracking).
/// Draws whose trajectory became non-finite, or whose endpoint has a
/// non-finite log density or score, are dropped; `failures` reports how many.
Matrix sample_flow(const FlowParams& flow, const TargetDensity& score,
                   std::size_t n, std::uint64_t seed, const OdeConfig& ode,
                   int workers = 1, std::size_t* failures = nullptr);

}  // namespace mfm
