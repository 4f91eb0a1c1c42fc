#pragma once

#include <optional>

#include "mfm/common.hpp"
#include "mfm/targets.hpp"

namespace mfm {

/// Inverse multi-quadric kernel (1 + |x - y|^2)^beta.
struct ImqKernel {
  double beta = -0.5;

  double operator()(const Vector& x, const Vector& y) const;
};

// Sample sets are dim x n matrices, one sample per column. Pairwise sums
// accumulate row by row and then across rows in index order, so results do
// not depend on the worker count.

/// Unbiased estimate of the squared MMD between two equally sized sets.
double mmd2_unbiased(const Matrix& xs, const Matrix& ys,
                     const ImqKernel& kernel = {}, int workers = 1);

/// Langevin Stein kernel of the IMQ base kernel.
double stein_kernel(const TargetDensity& target, const ImqKernel& kernel,
                    const Vector& x, const Vector& y);
/// Same, from precomputed scores.
double stein_kernel_from_scores(const ImqKernel& kernel, const Vector& x,
                                const Vector& y, const Vector& sx,
                                const Vector& sy);

double ksd_u(const TargetDensity& target, const ImqKernel& kernel,
             const Matrix& ys, int workers = 1);
double ksd_v(const TargetDensity& target, const ImqKernel& kernel,
             const Matrix& ys, int workers = 1);

double mean_log_target(const TargetDensity& target, const Matrix& samples);

struct DiagnosticsReport {
  std::optional<double> mmd2_unbiased;  // only when exact samples exist
  double ksd_u = 0.0;
  double ksd_v = 0.0;
  double mean_logpi = 0.0;
  double wall_seconds = 0.0;
};

/// KSD U/V and mean log-target on `samples`; MMD^2 against `reference`
/// when it is non-empty.
DiagnosticsReport evaluate_samples(const TargetDensity& target,
                                   const Matrix& samples,
                                   const Matrix& reference,
                                   const ImqKernel& kernel = {},
                                   int workers = 1);

}  // namespace mfm
