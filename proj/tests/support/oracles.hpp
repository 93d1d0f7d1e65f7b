#pragma once

// Reference implementations used only as test oracles. They favour obvious
// correctness over speed and share no code with the library.

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace oracle {

using gmilab::Mat;
using gmilab::Vec;

// W1 between uniform empirical measures by enumerating every assignment of
// the lcm-replicated point sets. Only for a handful of points.
inline double brute_force_w1(const Mat& a, const Mat& b) {
  const long n = a.rows(), m = b.rows();
  const long l = std::lcm(n, m);
  std::vector<long> ia, ib;
  for (long i = 0; i < l; ++i) {
    ia.push_back(i / (l / n));
    ib.push_back(i / (l / m));
  }
  // Exact minimum-cost assignment of the replicated points by dynamic
  // programming over subsets: best[mask] matches the first popcount(mask)
  // rows of `a` to the columns in `mask`.
  const std::size_t full = std::size_t{1} << l;
  std::vector<double> best(full, std::numeric_limits<double>::infinity());
  best[0] = 0.0;
  for (std::size_t mask = 0; mask < full; ++mask) {
    if (!std::isfinite(best[mask])) continue;
    const long row = static_cast<long>(std::popcount(mask));
    if (row == l) continue;
    for (long j = 0; j < l; ++j) {
      if (mask & (std::size_t{1} << j)) continue;
      const double c = best[mask] + (a.row(ia[row]) - b.row(ib[j])).norm();
      double& slot = best[mask | (std::size_t{1} << j)];
      slot = std::min(slot, c);
    }
  }
  return best[full - 1] / static_cast<double>(l);
}

// Central differences of a scalar function.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-5) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Relative error with an absolute floor so exactly-zero gradients compare
// against the finite-difference truncation error rather than dividing by 0.
inline double relative_error(const Vec& analytic, const Vec& numeric, double floor = 1e-6) {
  return (analytic - numeric).norm() / std::max({analytic.norm(), numeric.norm(), floor});
}

// Plain Pearson correlation of ranks (average ranks for ties).
inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (double w : v) {
        less += w < v[i];
        equal += w == v[i];
      }
      r[i] = less + (equal + 1.0) / 2.0;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

inline gmilab::EmbeddingSet make_set(const Mat& data, std::map<std::string, gmilab::LabelVector> labels = {},
                                     gmilab::LabelVector strata = {},
                                     gmilab::LawTag law = gmilab::LawTag::text) {
  gmilab::EmbeddingSet s;
  s.data = data.cast<float>();
  s.labels = std::move(labels);
  s.stratum_ids = std::move(strata);
  s.law_tag = law;
  gmilab::validate(s);
  return s;
}

inline Mat gaussian(long n, long d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Mat m(n, d);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = g(rng);
  return m;
}

}  // namespace oracle
