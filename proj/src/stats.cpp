#include "gmilab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gmilab {

Mat covariance(const Mat& data) {
  if (data.rows() < 2) throw PreconditionError("covariance needs at least 2 rows");
  const Mat centered = data.rowwise() - data.colwise().mean();
  Mat cov = (centered.transpose() * centered) / static_cast<double>(data.rows() - 1);
  // Force exact symmetry; the product is symmetric only up to rounding.
  return 0.5 * (cov + cov.transpose());
}

EigenBasis top_k_eigen(const Mat& cov, Eigen::Index k) {
  if (cov.rows() != cov.cols()) throw NotSymmetricError("matrix is not square");
  const Eigen::Index d = cov.rows();
  if (k < 0 || k > d) throw PreconditionError("k must lie in [0, d]");
  const double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-8 * scale)
    throw NotSymmetricError("matrix is not symmetric within tolerance");

  Eigen::SelfAdjointEigenSolver<Mat> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("symmetric eigensolver failed");
  EigenBasis basis;
  basis.source_trace = cov.trace();
  basis.eigenvalues.resize(k);
  basis.eigenvectors.resize(d, k);
  // Eigen returns ascending order.
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = d - 1 - i;
    basis.eigenvalues(i) = std::max(0.0, solver.eigenvalues()(src));
    basis.eigenvectors.col(i) = solver.eigenvectors().col(src);
  }
  return basis;
}

double participation_ratio(std::span<const double> eigenvalues) {
  double s = 0.0, s2 = 0.0;
  for (double l : eigenvalues) {
    if (l < 0.0) throw PreconditionError("participation ratio needs non-negative eigenvalues");
    s += l;
    s2 += l * l;
  }
  if (!(s > 0.0)) throw DegenerateInputError("participation ratio of an all-zero spectrum");
  return s * s / s2;
}

double participation_ratio(const Vec& eigenvalues) {
  return participation_ratio(std::span<const double>(eigenvalues.data(),
                                                     static_cast<std::size_t>(eigenvalues.size())));
}

std::vector<double> average_ranks(std::span<const double> x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return x[a] < x[b]; });
  std::vector<double> ranks(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw PreconditionError("Student-t needs positive degrees of freedom");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * regularized_incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

namespace {

double two_sided_p(double t, double dof) {
  const double x = dof / (dof + t * t);
  return std::clamp(regularized_incomplete_beta(0.5 * dof, 0.5, x), 0.0, 1.0);
}

}  // namespace

TestStatistic spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionMismatchError("spearman inputs differ in length");
  const std::size_t n = x.size();
  if (n < 3) throw PreconditionError("spearman needs at least 3 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / static_cast<double>(n);
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0)
    throw DegenerateInputError("spearman correlation undefined for a constant input");
  TestStatistic r;
  r.statistic = std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  const double dof = static_cast<double>(n) - 2.0;
  if (std::fabs(r.statistic) >= 1.0) {
    r.p = 0.0;
  } else {
    const double t = r.statistic * std::sqrt(dof / (1.0 - r.statistic * r.statistic));
    r.p = two_sided_p(t, dof);
  }
  return r;
}

TestStatistic paired_t(std::span<const double> deltas) {
  const std::size_t n = deltas.size();
  if (n < 2) throw PreconditionError("paired t needs at least 2 differences");
  const double mean = std::accumulate(deltas.begin(), deltas.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : deltas) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) throw DegenerateInputError("paired t undefined: zero sample standard deviation");
  TestStatistic r;
  r.statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p = two_sided_p(r.statistic, static_cast<double>(n - 1));
  return r;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw PreconditionError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace gmilab
