#include "mfm/targets.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace mfm {

TargetDensity::TargetDensity(std::string name, int dim,
                             LogDensityFn log_density, GradFn grad, HvpFn hvp,
                             SamplerFn sampler)
    : name_(std::move(name)),
      dim_(dim),
      log_density_(std::move(log_density)),
      grad_(std::move(grad)),
      hvp_(std::move(hvp)),
      sampler_(std::move(sampler)) {
  require(dim_ > 0, "target dimension must be positive");
}

Vector TargetDensity::sample(Rng& rng) const {
  if (!sampler_)
    throw PreconditionError("target '" + name_ + "' has no exact sampler");
  return sampler_(rng);
}

Matrix TargetDensity::sample_columns(std::size_t n, Rng& rng) const {
  Matrix out(dim_, static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) out.col(i) = sample(rng);
  return out;
}

// ---------------------------------------------------------------------------

TargetDensity make_isotropic_gaussian(const Vector& mean, double scale) {
  require(scale > 0.0, "gaussian scale must be positive");
  const int d = static_cast<int>(mean.size());
  const double inv_var = 1.0 / (scale * scale);
  const double log_norm =
      -0.5 * d * std::log(2.0 * std::numbers::pi * scale * scale);
  return TargetDensity(
      "gaussian", d,
      [=](const Vector& x) {
        return log_norm - 0.5 * inv_var * (x - mean).squaredNorm();
      },
      [=](const Vector& x) -> Vector { return -inv_var * (x - mean); },
      [=](const Vector&, const Vector& v) -> Vector { return -inv_var * v; },
      [=](Rng& rng) -> Vector { return mean + scale * rng.normal_vector(d); });
}

TargetDensity make_standard_normal(int dim) {
  auto t = make_isotropic_gaussian(Vector::Zero(dim), 1.0);
  return t;
}

// ---------------------------------------------------------------------------

namespace {

struct MixtureData {
  std::vector<Vector> means;
  std::vector<double> inv_var;
  std::vector<double> log_coef;  // log weight + log normalizer per component
  std::vector<double> scale;
};

// Responsibilities r_k and per-component log terms at x; returns log pi(x).
double mixture_terms(const MixtureData& m, const Vector& x, Vector& resp) {
  const std::size_t k = m.means.size();
  resp.resize(static_cast<Eigen::Index>(k));
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < k; ++c) {
    resp[c] = m.log_coef[c] - 0.5 * m.inv_var[c] * (x - m.means[c]).squaredNorm();
    top = std::max(top, resp[c]);
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    resp[c] = std::exp(resp[c] - top);
    sum += resp[c];
  }
  resp /= sum;
  return top + std::log(sum);
}

}  // namespace

TargetDensity make_gmm(const GaussianMixtureSpec& spec, std::string name) {
  require(!spec.means.empty(), "mixture needs at least one component");
  require(spec.means.size() == spec.variances.size(),
          "mixture means/variances length mismatch");
  const int d = static_cast<int>(spec.means.front().size());
  auto data = std::make_shared<MixtureData>();
  const double log_w = -std::log(double(spec.means.size()));
  for (std::size_t c = 0; c < spec.means.size(); ++c) {
    const double var = spec.variances[c];
    require(var > 0.0, "mixture variances must be positive");
    require(spec.means[c].size() == d, "mixture means must share a dimension");
    data->means.push_back(spec.means[c]);
    data->inv_var.push_back(1.0 / var);
    data->log_coef.push_back(log_w -
                             0.5 * d * std::log(2.0 * std::numbers::pi * var));
    data->scale.push_back(std::sqrt(var));
  }
  return TargetDensity(
      std::move(name), d,
      [data](const Vector& x) {
        Vector r;
        return mixture_terms(*data, x, r);
      },
      [data](const Vector& x) -> Vector {
        Vector r;
        mixture_terms(*data, x, r);
        Vector g = Vector::Zero(x.size());
        for (std::size_t c = 0; c < data->means.size(); ++c)
          g -= r[c] * data->inv_var[c] * (x - data->means[c]);
        return g;
      },
      [data](const Vector& x, const Vector& v) -> Vector {
        // H = sum_k r_k (g_k g_k^T - I / var_k) - g g^T
        Vector r;
        mixture_terms(*data, x, r);
        Vector g = Vector::Zero(x.size());
        Vector out = Vector::Zero(x.size());
        for (std::size_t c = 0; c < data->means.size(); ++c) {
          const Vector gk = -data->inv_var[c] * (x - data->means[c]);
          g += r[c] * gk;
          out += r[c] * (gk * gk.dot(v) - data->inv_var[c] * v);
        }
        out -= g * g.dot(v);
        return out;
      },
      [data, d](Rng& rng) -> Vector {
        const std::size_t c = rng.index(data->means.size());
        return data->means[c] + data->scale[c] * rng.normal_vector(d);
      });
}

GaussianMixtureSpec gmm4_spec() {
  GaussianMixtureSpec s;
  for (double sx : {1.0, -1.0})
    for (double sy : {1.0, -1.0}) s.means.push_back(Vector{{8.0 * sx, 8.0 * sy}});
  s.variances.assign(4, 1.0);
  return s;
}

GaussianMixtureSpec gmm16_spec(std::uint64_t seed) {
  GaussianMixtureSpec s;
  const double coords[] = {-12.0, -4.0, 4.0, 12.0};
  for (double cx : coords)
    for (double cy : coords) s.means.push_back(Vector{{cx, cy}});
  Rng rng(seed, 0x16);
  std::lognormal_distribution<double> lognormal(0.0, 0.25);
  for (std::size_t c = 0; c < s.means.size(); ++c)
    s.variances.push_back(lognormal(rng));
  return s;
}

TargetDensity make_gmm4() { return make_gmm(gmm4_spec(), "gmm4"); }

TargetDensity make_gmm16(std::uint64_t seed) {
  return make_gmm(gmm16_spec(seed), "gmm16");
}

// ---------------------------------------------------------------------------

namespace {

double double_well_log(double a) { return -a * a * a * a + 6.0 * a * a + 0.5 * a; }

// Exact draws from exp(-a^4 + 6a^2 + a/2) by rejection from a uniform
// envelope on [-4, 4]; the mass outside is below exp(-80).
class DoubleWellSampler {
 public:
  DoubleWellSampler() {
    double best = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 80000; ++i)
      best = std::max(best, double_well_log(-4.0 + 8.0 * i / 80000.0));
    log_bound_ = best + 1e-3;
  }
  double operator()(Rng& rng) const {
    for (;;) {
      const double a = -4.0 + 8.0 * rng.uniform();
      if (std::log(rng.uniform_pos()) <= double_well_log(a) - log_bound_) return a;
    }
  }

 private:
  double log_bound_ = 0.0;
};

}  // namespace

TargetDensity make_many_well() {
  static constexpr int kDim = 32;
  auto well = std::make_shared<DoubleWellSampler>();
  return TargetDensity(
      "many_well", kDim,
      [](const Vector& x) {
        double s = 0.0;
        for (int j = 0; j < kDim; j += 2)
          s += double_well_log(x[j]) - 0.5 * x[j + 1] * x[j + 1];
        return s;
      },
      [](const Vector& x) -> Vector {
        Vector g(kDim);
        for (int j = 0; j < kDim; j += 2) {
          const double a = x[j];
          g[j] = -4.0 * a * a * a + 12.0 * a + 0.5;
          g[j + 1] = -x[j + 1];
        }
        return g;
      },
      [](const Vector& x, const Vector& v) -> Vector {
        Vector out(kDim);
        for (int j = 0; j < kDim; j += 2) {
          out[j] = (-12.0 * x[j] * x[j] + 12.0) * v[j];
          out[j + 1] = -v[j + 1];
        }
        return out;
      },
      [well](Rng& rng) -> Vector {
        Vector x(kDim);
        for (int j = 0; j < kDim; j += 2) {
          x[j] = (*well)(rng);
          x[j + 1] = rng.normal();
        }
        return x;
      });
}

// ---------------------------------------------------------------------------

double field_energy(const FieldSystemSpec& spec, const Vector& x) {
  const int d = spec.d;
  const double ds = spec.delta_s();
  double kinetic = 0.0;
  double potential = 0.0;
  double prev = 0.0;
  for (int i = 0; i < d; ++i) {
    const double diff = x[i] - prev;
    kinetic += diff * diff;
    const double w = 1.0 - x[i] * x[i];
    potential += w * w;
    prev = x[i];
  }
  kinetic += prev * prev;  // jump to x_{d+1} = 0
  return spec.a / (2.0 * ds) * kinetic + spec.b * ds / 4.0 * potential;
}

TargetDensity make_field_system(const FieldSystemSpec& spec) {
  require(spec.d >= 2, "field system needs d >= 2");
  const FieldSystemSpec s = spec;
  const double coupling = s.a / s.delta_s();
  const double well = s.b * s.delta_s();
  return TargetDensity(
      "field", s.d,
      [s](const Vector& x) { return -s.beta * field_energy(s, x); },
      [s, coupling, well](const Vector& x) -> Vector {
        const int d = s.d;
        Vector g(d);
        for (int i = 0; i < d; ++i) {
          const double left = i > 0 ? x[i - 1] : 0.0;
          const double right = i + 1 < d ? x[i + 1] : 0.0;
          const double dU = coupling * (2.0 * x[i] - left - right) -
                            well * x[i] * (1.0 - x[i] * x[i]);
          g[i] = -s.beta * dU;
        }
        return g;
      },
      [s, coupling, well](const Vector& x, const Vector& v) -> Vector {
        const int d = s.d;
        Vector out(d);
        for (int i = 0; i < d; ++i) {
          const double left = i > 0 ? v[i - 1] : 0.0;
          const double right = i + 1 < d ? v[i + 1] : 0.0;
          const double hv = coupling * (2.0 * v[i] - left - right) +
                            well * (3.0 * x[i] * x[i] - 1.0) * v[i];
          out[i] = -s.beta * hv;
        }
        return out;
      });
}

// ---------------------------------------------------------------------------

double LgcpSpec::mu0() const { return std::log(126.0) - 0.5 * sigma2; }

Matrix lgcp_covariance(const LgcpSpec& spec) {
  const int m = spec.grid_side;
  const int d = spec.dim();
  const double length = m * spec.beta_len;
  Matrix cov(d, d);
  for (int p = 0; p < d; ++p) {
    for (int q = 0; q <= p; ++q) {
      const double dr = p / m - q / m;
      const double dc = p % m - q % m;
      const double v = spec.sigma2 * std::exp(-std::sqrt(dr * dr + dc * dc) / length);
      cov(p, q) = v;
      cov(q, p) = v;
    }
  }
  return cov;
}

Eigen::LLT<Matrix> lgcp_factorize(const LgcpSpec& spec) {
  require(spec.grid_side >= 1, "LGCP grid side must be positive");
  Eigen::LLT<Matrix> llt(lgcp_covariance(spec));
  if (llt.info() != Eigen::Success)
    throw FactorizationFailure("LGCP prior covariance is not positive definite");
  const Vector diag = Matrix(llt.matrixL()).diagonal();
  if (!diag.allFinite() || diag.minCoeff() <= 0.0)
    throw FactorizationFailure("LGCP Cholesky factor has a non-positive pivot");
  return llt;
}

std::vector<int> sample_lgcp_counts(const LgcpSpec& spec, std::uint64_t seed) {
  const auto llt = lgcp_factorize(spec);
  Rng rng(seed, 0x1c9);
  const Vector z = rng.normal_vector(spec.dim());
  const Vector x = Vector::Constant(spec.dim(), spec.mu0()) + llt.matrixL() * z;
  std::vector<int> counts(spec.dim());
  for (int i = 0; i < spec.dim(); ++i) {
    std::poisson_distribution<int> pois(spec.cell_area() * std::exp(x[i]));
    counts[i] = pois(rng);
  }
  return counts;
}

TargetDensity make_lgcp(const LgcpSpec& spec, const std::vector<int>& counts) {
  const int d = spec.dim();
  if (static_cast<int>(counts.size()) != d)
    throw DimensionMismatch("LGCP counts grid has " + std::to_string(counts.size()) +
                            " cells, expected " + std::to_string(d));
  auto llt = std::make_shared<const Eigen::LLT<Matrix>>(lgcp_factorize(spec));
  Vector y(d);
  for (int i = 0; i < d; ++i) y[i] = counts[i];
  const double mu0 = spec.mu0();
  const double area = spec.cell_area();
  return TargetDensity(
      "lgcp", d,
      [=](const Vector& x) {
        const Vector centered = x.array() - mu0;
        const double quad = centered.dot(llt->solve(centered));
        return -0.5 * quad + (x.array() * y.array() - area * x.array().exp()).sum();
      },
      [=](const Vector& x) -> Vector {
        const Vector centered = x.array() - mu0;
        return -llt->solve(centered) + y - area * x.array().exp().matrix();
      },
      [=](const Vector& x, const Vector& v) -> Vector {
        return -llt->solve(v) - (area * x.array().exp() * v.array()).matrix();
      });
}

// ---------------------------------------------------------------------------

TargetDensity tempered(const TargetDensity& base, const TargetDensity& target,
                       double beta) {
  if (base.dim() != target.dim())
    throw DimensionMismatch("tempered: base dim " + std::to_string(base.dim()) +
                            " != target dim " + std::to_string(target.dim()));
  require(beta >= 0.0 && beta <= 1.0, "tempered: beta must lie in [0, 1]");
  if (beta == 1.0) return target;
  if (beta == 0.0) return base;
  const double w = 1.0 - beta;
  return TargetDensity(
      "tempered", base.dim(),
      [=](const Vector& x) {
        return beta * target.log_density(x) + w * base.log_density(x);
      },
      [=](const Vector& x) -> Vector {
        return beta * target.grad_log_density(x) + w * base.grad_log_density(x);
      },
      [=](const Vector& x, const Vector& v) -> Vector {
        return beta * target.hvp_log_density(x, v) + w * base.hvp_log_density(x, v);
      });
}

}  // namespace mfm
