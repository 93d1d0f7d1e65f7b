#pragma once

#include "gmilab/core.hpp"

#include <span>

namespace gmilab {

struct EigenBasis {
  Vec eigenvalues;   // descending, >= 0
  Mat eigenvectors;  // d x K, orthonormal columns
  double source_trace = 0.0;

  Eigen::Index size() const { return eigenvalues.size(); }
};

// Unbiased (N-1) covariance of the rows.
Mat covariance(const Mat& data);

// Top-k eigenpairs of a symmetric PSD matrix. Ordering of tied eigenvalues and
// the sign of each eigenvector are unspecified.
EigenBasis top_k_eigen(const Mat& cov, Eigen::Index k);

// (sum l)^2 / sum l^2.
double participation_ratio(std::span<const double> eigenvalues);
double participation_ratio(const Vec& eigenvalues);

struct TestStatistic {
  double statistic = 0.0;
  double p = 1.0;
};

// Spearman rank correlation with average ranks for ties; two-sided p from the
// t approximation with n-2 degrees of freedom.
TestStatistic spearman(std::span<const double> x, std::span<const double> y);

// One-sample t test of paired differences against zero, two-sided.
TestStatistic paired_t(std::span<const double> deltas);

// Student-t CDF via the regularized incomplete beta function.
double student_t_cdf(double t, double dof);
double regularized_incomplete_beta(double a, double b, double x);

// Average ranks (1-based), ties share the mean rank.
std::vector<double> average_ranks(std::span<const double> x);

// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> values, double q);

}  // namespace gmilab
