#include "mfm/diagnostics.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "mfm/parallel.hpp"

namespace mfm {

double ImqKernel::operator()(const Vector& x, const Vector& y) const {
  return std::pow(1.0 + (x - y).squaredNorm(), beta);
}

namespace {

// sum over i of (sum over j of f(i, j)), skipping j == i when off_diagonal.
double pair_sum(Eigen::Index n_rows, Eigen::Index n_cols, bool off_diagonal,
                int workers, const std::function<double(Eigen::Index, Eigen::Index)>& f) {
  std::vector<double> row_sums(static_cast<std::size_t>(n_rows), 0.0);
  parallel_chunks(static_cast<std::size_t>(n_rows), workers, [&](const ChunkRange& r) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n_cols; ++j) {
        if (off_diagonal && j == static_cast<Eigen::Index>(i)) continue;
        s += f(static_cast<Eigen::Index>(i), j);
      }
      row_sums[i] = s;
    }
  });
  double total = 0.0;
  for (double s : row_sums) total += s;
  return total;
}

}  // namespace

double mmd2_unbiased(const Matrix& xs, const Matrix& ys, const ImqKernel& kernel,
                     int workers) {
  const Eigen::Index m = xs.cols();
  if (m < 2 || ys.cols() < 2) throw TooFewSamples("MMD needs at least two samples per set");
  if (ys.cols() != m) throw PreconditionError("MMD sample sets must have equal sizes");
  if (xs.rows() != ys.rows()) throw DimensionMismatch("MMD sample dimensions differ");
  const double md = double(m);
  const double kxx = pair_sum(m, m, true, workers, [&](auto i, auto j) {
    return kernel(xs.col(i), xs.col(j));
  });
  const double kyy = pair_sum(m, m, true, workers, [&](auto i, auto j) {
    return kernel(ys.col(i), ys.col(j));
  });
  const double kxy = pair_sum(m, m, false, workers, [&](auto i, auto j) {
    return kernel(xs.col(i), ys.col(j));
  });
  return kxx / (md * (md - 1.0)) - 2.0 * kxy / (md * md) + kyy / (md * (md - 1.0));
}

double stein_kernel_from_scores(const ImqKernel& kernel, const Vector& x,
                                const Vector& y, const Vector& sx,
                                const Vector& sy) {
  const double beta = kernel.beta;
  const Vector u = x - y;
  const double r2 = u.squaredNorm();
  const double base = 1.0 + r2;
  const double k = std::pow(base, beta);
  const double k1 = std::pow(base, beta - 1.0);
  const double k2 = k1 / base;
  const double d = double(x.size());
  // grad_x k = 2 beta u base^(beta-1), grad_y k = -grad_x k
  const double trace = -2.0 * beta * d * k1 - 4.0 * beta * (beta - 1.0) * r2 * k2;
  const double cross = 2.0 * beta * k1 * u.dot(sy - sx);
  return trace + cross + k * sx.dot(sy);
}

double stein_kernel(const TargetDensity& target, const ImqKernel& kernel,
                    const Vector& x, const Vector& y) {
  return stein_kernel_from_scores(kernel, x, y, target.grad_log_density(x),
                                  target.grad_log_density(y));
}

namespace {

Matrix scores_of(const TargetDensity& target, const Matrix& ys) {
  Matrix s(ys.rows(), ys.cols());
  for (Eigen::Index i = 0; i < ys.cols(); ++i) s.col(i) = target.grad_log_density(ys.col(i));
  return s;
}

double stein_sum(const TargetDensity& target, const ImqKernel& kernel,
                 const Matrix& ys, bool off_diagonal, int workers) {
  const Matrix s = scores_of(target, ys);
  return pair_sum(ys.cols(), ys.cols(), off_diagonal, workers, [&](auto i, auto j) {
    return stein_kernel_from_scores(kernel, ys.col(i), ys.col(j), s.col(i), s.col(j));
  });
}

}  // namespace

double ksd_u(const TargetDensity& target, const ImqKernel& kernel,
             const Matrix& ys, int workers) {
  const double n = double(ys.cols());
  if (ys.cols() < 2) throw TooFewSamples("KSD U-statistic needs at least two samples");
  return stein_sum(target, kernel, ys, true, workers) / (n * (n - 1.0));
}

double ksd_v(const TargetDensity& target, const ImqKernel& kernel,
             const Matrix& ys, int workers) {
  const double n = double(ys.cols());
  if (ys.cols() < 1) throw TooFewSamples("KSD V-statistic needs a sample");
  return stein_sum(target, kernel, ys, false, workers) / (n * n);
}

double mean_log_target(const TargetDensity& target, const Matrix& samples) {
  require(samples.cols() > 0, "mean log-target needs samples");
  double s = 0.0;
  for (Eigen::Index i = 0; i < samples.cols(); ++i) s += target.log_density(samples.col(i));
  return s / double(samples.cols());
}

DiagnosticsReport evaluate_samples(const TargetDensity& target, const Matrix& samples,
                                   const Matrix& reference, const ImqKernel& kernel,
                                   int workers) {
  const auto start = std::chrono::steady_clock::now();
  DiagnosticsReport r;
  if (reference.cols() > 0) r.mmd2_unbiased = mmd2_unbiased(samples, reference, kernel, workers);
  r.ksd_u = ksd_u(target, kernel, samples, workers);
  r.ksd_v = ksd_v(target, kernel, samples, workers);
  r.mean_logpi = mean_log_target(target, samples);
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace mfm
