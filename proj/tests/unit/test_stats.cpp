#include "gmilab/stats.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cmath>

using namespace gmilab;

namespace {

// Two-sided Student-t p-value by Simpson integration of the density.
double t_two_sided_p(double t, double dof) {
  const double c = std::exp(std::lgamma((dof + 1) / 2) - std::lgamma(dof / 2)) / std::sqrt(dof * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / dof, -(dof + 1) / 2); };
  const double a = 0.0, b = std::abs(t);
  const int n = 20000;
  const double h = (b - a) / n;
  double s = pdf(a) + pdf(b);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4 : 2);
  return 1.0 - 2.0 * (s * h / 3.0);
}

void check_basis(const Mat& cov, const EigenBasis& e) {
  for (Eigen::Index i = 0; i < e.size(); ++i) {
    const double lam = e.eigenvalues(i);
    CHECK((cov * e.eigenvectors.col(i) - lam * e.eigenvectors.col(i)).norm() <= 1e-6 * (1 + lam));
    if (i > 0) CHECK(e.eigenvalues(i - 1) >= lam);
  }
  const Mat gram = e.eigenvectors.transpose() * e.eigenvectors;
  CHECK((gram - Mat::Identity(e.size(), e.size())).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(e.eigenvalues.sum() <= e.source_trace * (1 + 1e-6) + 1e-12);
}

}  // namespace

TEST_CASE("covariance uses the N-1 denominator") {
  Mat a(2, 2);
  a << 0, 0, 2, 0;
  Mat expect(2, 2);
  expect << 2, 0, 0, 0;
  CHECK((covariance(a) - expect).norm() < 1e-12);

  Mat same(3, 2);
  same << 1, 2, 1, 2, 1, 2;
  CHECK(covariance(same).norm() == 0.0);

  Mat b(2, 2);
  b << 1, 1, -1, -1;
  CHECK((covariance(b) - Mat::Constant(2, 2, 2.0)).norm() < 1e-12);
  CHECK_THROWS_AS(covariance(Mat::Zero(1, 2)), PreconditionError);
}

TEST_CASE("top_k_eigen on the worked examples") {
  Mat d(2, 2);
  d << 3, 0, 0, 1;
  auto e = top_k_eigen(d, 2);
  CHECK(e.eigenvalues(0) == doctest::Approx(3));
  CHECK(e.eigenvalues(1) == doctest::Approx(1));
  CHECK(std::abs(e.eigenvectors(0, 0)) == doctest::Approx(1));
  check_basis(d, e);

  const Mat id = Mat::Identity(3, 3);
  e = top_k_eigen(id, 2);
  CHECK(e.eigenvalues(0) == doctest::Approx(1));
  CHECK(e.eigenvalues(1) == doctest::Approx(1));
  check_basis(id, e);

  const Mat two = Mat::Constant(2, 2, 2.0);
  e = top_k_eigen(two, 1);
  CHECK(e.eigenvalues(0) == doctest::Approx(4));
  CHECK(std::abs(e.eigenvectors(0, 0)) == doctest::Approx(1 / std::sqrt(2.0)));
  CHECK(e.eigenvectors(0, 0) == doctest::Approx(e.eigenvectors(1, 0)));

  Mat asym(2, 2);
  asym << 1, 2, 0, 1;
  CHECK_THROWS_AS(top_k_eigen(asym, 1), NotSymmetricError);
}

TEST_CASE("eigen residual holds for random symmetric PSD matrices up to d = 64") {
  std::mt19937_64 rng(5);
  for (int d : {2, 7, 16, 33, 64}) {
    const Mat x = oracle::gaussian(d + 5, d, rng);
    const Mat cov = covariance(x);
    check_basis(cov, top_k_eigen(cov, d));
    check_basis(cov, top_k_eigen(cov, d / 2));
  }
}

TEST_CASE("participation ratio examples and scale invariance") {
  CHECK(participation_ratio(Vec::Ones(4)) == doctest::Approx(4.0));
  CHECK(participation_ratio(Vec::Unit(3, 0)) == doctest::Approx(1.0));
  Vec l(2);
  l << 3, 1;
  CHECK(participation_ratio(l) == doctest::Approx(1.6));
  CHECK(participation_ratio(Vec(7.5 * l)) == doctest::Approx(1.6));
  CHECK_THROWS_AS(participation_ratio(Vec::Zero(3)), DegenerateInputError);
}

TEST_CASE("spearman examples") {
  const std::vector<double> x = {1, 2, 3};
  CHECK(spearman(x, std::vector<double>{10, 20, 30}).statistic == doctest::Approx(1.0));
  CHECK(spearman(x, std::vector<double>{3, 2, 1}).statistic == doctest::Approx(-1.0));
  const auto r = spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4});
  CHECK(r.statistic == doctest::Approx(0.8));
  const double t = 0.8 * std::sqrt(2.0 / (1 - 0.64));
  CHECK(r.p == doctest::Approx(t_two_sided_p(t, 2)).epsilon(1e-6));
  CHECK_THROWS_AS(spearman(x, std::vector<double>{1, 1, 1}), DegenerateInputError);
}

TEST_CASE("spearman matches the rank oracle with ties and is invariant under monotone maps") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> x(25), y(25);
    for (int i = 0; i < 25; ++i) {
      x[i] = std::floor(oracle::gaussian(1, 1, rng)(0) * 3);
      y[i] = x[i] + oracle::gaussian(1, 1, rng)(0);
    }
    const double rho = spearman(x, y).statistic;
    CHECK(rho == doctest::Approx(oracle::spearman_rho(x, y)).epsilon(1e-12));
    std::vector<double> ex(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ex[i] = std::exp(x[i]);
    CHECK(spearman(ex, y).statistic == doctest::Approx(rho).epsilon(1e-12));
  }
}

TEST_CASE("paired_t examples") {
  CHECK_THROWS_AS(paired_t(std::vector<double>{1, 1, 1}), DegenerateInputError);
  const auto sym = paired_t(std::vector<double>{1, -1});
  CHECK(sym.statistic == 0.0);
  CHECK(sym.p == doctest::Approx(1.0));

  const auto r = paired_t(std::vector<double>{2, 0, 1, 1});
  const double t = 1.0 / (std::sqrt(2.0 / 3.0) / 2.0);
  CHECK(r.statistic == doctest::Approx(t).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(t_two_sided_p(t, 3)).epsilon(1e-6));
}

TEST_CASE("student t cdf agrees with numerical integration") {
  for (double dof : {1.0, 2.5, 7.0, 40.0})
    for (double t : {0.3, 1.0, 2.2, 6.0}) {
      const double p = 2 * (1 - student_t_cdf(t, dof));
      CHECK(p == doctest::Approx(t_two_sided_p(t, dof)).epsilon(1e-6));
    }
}

TEST_CASE("percentile interpolates linearly") {
  CHECK(percentile({1, 2, 3, 4, 5}, 50) == doctest::Approx(3));
  CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
}
