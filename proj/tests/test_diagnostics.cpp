#include <cmath>

#include "doctest.h"
#include "mfm/diagnostics.hpp"
#include "oracles.hpp"

using namespace mfm;

namespace {

double k_imq(const Vector& x, const Vector& y) {
  return 1.0 / std::sqrt(1.0 + (x - y).squaredNorm());
}

// Stein kernel by finite differences of the base kernel.
double stein_fd(const TargetDensity& t, const Vector& x, const Vector& y) {
  const int d = int(x.size());
  const double h = 1e-4;
  double trace = 0.0;
  for (int i = 0; i < d; ++i) {
    const Vector e = Vector::Unit(d, i) * h;
    trace += (k_imq(x + e, y + e) - k_imq(x + e, y - e) - k_imq(x - e, y + e) +
              k_imq(x - e, y - e)) /
             (4 * h * h);
  }
  const Vector gx = oracle::fd_gradient([&](const Vector& a) { return k_imq(a, y); }, x, 1e-6);
  const Vector gy = oracle::fd_gradient([&](const Vector& b) { return k_imq(x, b); }, y, 1e-6);
  const Vector sx = t.grad_log_density(x), sy = t.grad_log_density(y);
  return trace + gx.dot(sy) + gy.dot(sx) + k_imq(x, y) * sx.dot(sy);
}

double mmd_naive(const Matrix& X, const Matrix& Y) {
  const Eigen::Index m = X.cols();
  double xx = 0, yy = 0, xy = 0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      if (i != j) {
        xx += k_imq(X.col(i), X.col(j));
        yy += k_imq(Y.col(i), Y.col(j));
      }
      xy += k_imq(X.col(i), Y.col(j));
    }
  return xx / double(m * (m - 1)) + yy / double(m * (m - 1)) - 2 * xy / double(m * m);
}

double ksd_naive(const TargetDensity& t, const Matrix& Y, bool u_stat) {
  const Eigen::Index n = Y.cols();
  double s = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (!u_stat || i != j) s += stein_kernel(t, {}, Y.col(i), Y.col(j));
  return u_stat ? s / double(n * (n - 1)) : s / double(n * n);
}

}  // namespace

TEST_CASE("imq kernel") {
  const ImqKernel k;
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    const Vector x = rng.normal_vector(3), y = rng.normal_vector(3);
    CHECK(k(x, y) == doctest::Approx(k_imq(x, y)).epsilon(1e-15));
    CHECK(k(x, y) > 0.0);
    CHECK(k(x, y) < 1.0);
    CHECK(k(x, x) == 1.0);
  }
}

TEST_CASE("stein kernel") {
  for (int d : {1, 3}) {
    const TargetDensity normal = make_standard_normal(d);
    CHECK(stein_kernel(normal, {}, Vector::Zero(d), Vector::Zero(d)) ==
          doctest::Approx(double(d)).epsilon(1e-15));
  }
  Rng rng(2);
  const TargetDensity t = make_gmm4();
  for (int i = 0; i < 20; ++i) {
    const Vector x = 5 * rng.normal_vector(2), y = 5 * rng.normal_vector(2);
    CHECK(std::abs(stein_kernel(t, {}, x, y) - stein_kernel(t, {}, y, x)) <= 1e-12);
    CHECK(stein_kernel(t, {}, x, y) == doctest::Approx(stein_fd(t, x, y)).epsilon(1e-5));
  }
}

TEST_CASE("mmd") {
  Rng rng(3);
  const Matrix X = Matrix::Random(2, 40), Y = 1.5 * Matrix::Random(2, 40);
  CHECK(mmd2_unbiased(X, Y) == doctest::Approx(mmd_naive(X, Y)).epsilon(1e-12));
  // permutation of the same set: the two within-set sums coincide
  Matrix Xp = X;
  for (int i = 0; i < 40; ++i) Xp.col(i) = X.col(39 - i);
  double u = 0, full = 0;
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 40; ++j) {
      full += k_imq(X.col(i), X.col(j));
      if (i != j) u += k_imq(X.col(i), X.col(j));
    }
  CHECK(mmd2_unbiased(X, Xp) == doctest::Approx(2 * (u / (40 * 39) - full / (40 * 40))).epsilon(1e-12));
  CHECK_THROWS_AS(mmd2_unbiased(X.leftCols(1), Y.leftCols(1)), TooFewSamples);
  CHECK_THROWS_AS(mmd2_unbiased(X, Y.leftCols(10)), PreconditionError);
}

TEST_CASE("mmd is unbiased") {
  Rng rng(4);
  const TargetDensity normal = make_standard_normal(2);
  const int reps = 30;
  std::vector<double> vals;
  for (int r = 0; r < reps; ++r)
    vals.push_back(mmd2_unbiased(normal.sample_columns(1000, rng), normal.sample_columns(1000, rng)));
  double mean = 0, sq = 0;
  for (double v : vals) {
    mean += v;
    sq += v * v;
  }
  mean /= reps;
  const double se = std::sqrt((sq / reps - mean * mean) / (reps - 1));
  CHECK(std::abs(mean) <= 3 * se);
}

TEST_CASE("ksd statistics") {
  Rng rng(5);
  const TargetDensity t = make_gmm4();
  const Matrix Y = 8 * Matrix::Random(2, 64);
  CHECK(ksd_u(t, {}, Y) == doctest::Approx(ksd_naive(t, Y, true)).epsilon(1e-12));
  CHECK(ksd_v(t, {}, Y) == doctest::Approx(ksd_naive(t, Y, false)).epsilon(1e-12));
  CHECK(ksd_v(t, {}, Y, 4) == ksd_v(t, {}, Y, 1));
  CHECK(ksd_u(t, {}, Y, 3) == ksd_u(t, {}, Y, 1));
  CHECK(mmd2_unbiased(Y, 0.5 * Y, {}, 4) == mmd2_unbiased(Y, 0.5 * Y, {}, 1));
  for (int r = 0; r < 20; ++r) CHECK(ksd_v(t, {}, 10 * Matrix::Random(2, 30)) >= 0.0);

  Matrix dup(2, 128);
  dup << Y, Y;
  CHECK(ksd_v(t, {}, dup) == doctest::Approx(ksd_naive(t, dup, false)).epsilon(1e-12));
  CHECK(ksd_v(t, {}, dup) == doctest::Approx(ksd_v(t, {}, Y)).epsilon(1e-12));

  Matrix perm = Y;
  for (int i = 0; i < 64; ++i) perm.col(i) = Y.col((i * 37) % 64);
  CHECK(ksd_u(t, {}, perm) == doctest::Approx(ksd_u(t, {}, Y)).epsilon(1e-12));

  const TargetDensity n1 = make_standard_normal(1);
  CHECK(ksd_v(n1, {}, Matrix::Zero(1, 1)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ksd_u(n1, {}, Matrix::Zero(1, 1)), TooFewSamples);
}

TEST_CASE("mean log target") {
  const TargetDensity t = make_gmm4();
  const Matrix one = Matrix::Constant(2, 1, 8.0);
  CHECK(mean_log_target(t, one) == t.log_density(one.col(0)));
  Rng rng(6);
  const Matrix Y = 8 * Matrix::Random(2, 10);
  Matrix P = Y;
  for (int i = 0; i < 10; ++i) P.col(i) = Y.col(9 - i);
  CHECK(mean_log_target(t, P) == doctest::Approx(mean_log_target(t, Y)).epsilon(1e-14));
}
