#pragma once

#include <Eigen/Cholesky>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mfm/common.hpp"
#include "mfm/rng.hpp"

namespace mfm {

/// Unnormalized log-density on R^dim with its gradient and Hessian-vector
/// product. Evaluation is pure, so one instance may be shared by any number
/// of threads. The optional sampler draws exact samples when the
/// distribution admits them.
class TargetDensity {
 public:
  using LogDensityFn = std::function<double(const Vector&)>;
  using GradFn = std::function<Vector(const Vector&)>;
  using HvpFn = std::function<Vector(const Vector&, const Vector&)>;
  using SamplerFn = std::function<Vector(Rng&)>;

  TargetDensity() = default;
  TargetDensity(std::string name, int dim, LogDensityFn log_density,
                GradFn grad, HvpFn hvp, SamplerFn sampler = {});

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }

  double log_density(const Vector& x) const { return log_density_(x); }
  Vector grad_log_density(const Vector& x) const { return grad_(x); }
  Vector hvp_log_density(const Vector& x, const Vector& v) const {
    return hvp_(x, v);
  }

  bool has_sampler() const { return static_cast<bool>(sampler_); }
  /// Throws PreconditionError when no exact sampler exists.
  Vector sample(Rng& rng) const;
  /// n exact draws as the columns of a dim x n matrix.
  Matrix sample_columns(std::size_t n, Rng& rng) const;

 private:
  std::string name_;
  int dim_ = 0;
  LogDensityFn log_density_;
  GradFn grad_;
  HvpFn hvp_;
  SamplerFn sampler_;
};

// ---------------------------------------------------------------------------
// Gaussians and mixtures

/// N(mean, scale^2 I), normalized.
TargetDensity make_isotropic_gaussian(const Vector& mean, double scale);
TargetDensity make_standard_normal(int dim);

struct GaussianMixtureSpec {
  std::vector<Vector> means;
  std::vector<double> variances;  // isotropic, one per component
};

/// Equal-weight mixture of isotropic Gaussians, evaluated with log-sum-exp.
TargetDensity make_gmm(const GaussianMixtureSpec& spec, std::string name);

GaussianMixtureSpec gmm4_spec();
/// 4x4 lattice {-12,-4,4,12}^2 with LogNormal(0, 0.25) variances drawn once
/// from `seed`.
GaussianMixtureSpec gmm16_spec(std::uint64_t seed);

TargetDensity make_gmm4();
TargetDensity make_gmm16(std::uint64_t seed);

// ---------------------------------------------------------------------------
// Many Well: 16 independent copies of a 2-d double well (dim 32).

TargetDensity make_many_well();

// ---------------------------------------------------------------------------
// Allen-Cahn field system with zero Dirichlet boundaries.

struct FieldSystemSpec {
  int d = 64;
  double a = 0.1;
  double b = 10.0;
  double beta = 20.0;
  double delta_s() const { return 1.0 / d; }
};

/// Energy U(x) such that log pi = -beta * U.
double field_energy(const FieldSystemSpec& spec, const Vector& x);
TargetDensity make_field_system(const FieldSystemSpec& spec);

// ---------------------------------------------------------------------------
// Log-Gaussian Cox process on an M x M grid.

struct LgcpSpec {
  int grid_side = 40;
  double sigma2 = 1.91;
  double beta_len = 1.0 / 33.0;
  double mu0() const;
  double cell_area() const { return 1.0 / (double(grid_side) * grid_side); }
  int dim() const { return grid_side * grid_side; }
};

/// Prior covariance sigma2 * exp(-|m - n| / (grid_side * beta_len)), where
/// |m - n| is the Euclidean distance between integer cell coordinates.
Matrix lgcp_covariance(const LgcpSpec& spec);
/// Cholesky factorization of the prior covariance. Throws
/// FactorizationFailure when the matrix is numerically indefinite.
Eigen::LLT<Matrix> lgcp_factorize(const LgcpSpec& spec);
/// Draws a counts grid (row-major) from the generative model.
std::vector<int> sample_lgcp_counts(const LgcpSpec& spec, std::uint64_t seed);

TargetDensity make_lgcp(const LgcpSpec& spec, const std::vector<int>& counts);

// ---------------------------------------------------------------------------

/// Geometric interpolation: log pi_beta = beta log target + (1 - beta) log base.
TargetDensity tempered(const TargetDensity& base, const TargetDensity& target,
                       double beta);

}  // namespace mfm
