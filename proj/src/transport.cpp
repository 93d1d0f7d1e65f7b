#include "gmilab/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

namespace gmilab {

std::string_view to_string(W1Method m) {
  switch (m) {
    case W1Method::exact: return "exact";
    case W1Method::sliced: return "sliced";
    case W1Method::sinkhorn: return "sinkhorn";
    case W1Method::automatic: return "auto";
  }
  return "auto";
}

W1Method parse_w1_method(std::string_view s) {
  for (auto m : {W1Method::exact, W1Method::sliced, W1Method::sinkhorn, W1Method::automatic})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown W1 method '" + std::string(s) + "'");
}

Mat euclidean_cost(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw DimensionMismatchError("point sets differ in dimensionality");
  const Vec an = a.rowwise().squaredNorm();
  const Vec bn = b.rowwise().squaredNorm();
  Mat c = (-2.0 * a * b.transpose()).colwise() + an;
  c.rowwise() += bn.transpose();
  // The expansion can round slightly negative; recompute tiny entries directly.
  for (Eigen::Index i = 0; i < c.rows(); ++i)
    for (Eigen::Index j = 0; j < c.cols(); ++j)
      c(i, j) = c(i, j) < 1e-8 * (an(i) + bn(j) + 1.0) ? (a.row(i) - b.row(j)).norm()
                                                       : std::sqrt(c(i, j));
  return c;
}

std::vector<int> solve_assignment(const Mat& cost) {
  // Shortest augmenting path with row/column potentials, O(n^3).
  const int n = static_cast<int>(cost.rows());
  if (cost.cols() != n) throw PreconditionError("assignment needs a square cost matrix");
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> col_of_row(n);
  for (int j = 1; j <= n; ++j) col_of_row[p[j] - 1] = j - 1;
  return col_of_row;
}

double transport_uniform(const Mat& cost) {
  // Integer masses: every source ships m units, every sink receives n units.
  // Successive shortest paths with Johnson potentials over the dense residual
  // graph S -> sources -> sinks -> T.
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  const int src = n + m, dst = n + m + 1, nodes = n + m + 2;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<long long> supply(n, m), demand(m, n);
  std::vector<long long> flow(static_cast<std::size_t>(n) * m, 0);
  std::vector<double> pot(nodes, 0.0), dist(nodes);
  std::vector<int> prev(nodes);
  std::vector<char> done(nodes);
  long long remaining = static_cast<long long>(n) * m;
  auto f = [&](int i, int j) -> long long& { return flow[static_cast<std::size_t>(i) * m + j]; };
  auto relax = [&](int x, int y, double c) {
    const double d = dist[x] + std::max(0.0, c + pot[x] - pot[y]);
    if (d < dist[y]) {
      dist[y] = d;
      prev[y] = x;
    }
  };

  while (remaining > 0) {
    std::fill(dist.begin(), dist.end(), kInf);
    std::fill(prev.begin(), prev.end(), -1);
    std::fill(done.begin(), done.end(), 0);
    dist[src] = 0.0;
    for (int it = 0; it < nodes; ++it) {
      int x = -1;
      for (int y = 0; y < nodes; ++y)
        if (!done[y] && dist[y] < kInf && (x < 0 || dist[y] < dist[x])) x = y;
      if (x < 0 || x == dst) break;
      done[x] = 1;
      if (x == src) {
        for (int i = 0; i < n; ++i)
          if (supply[i] > 0 && !done[i]) relax(src, i, 0.0);
      } else if (x < n) {
        for (int j = 0; j < m; ++j)
          if (!done[n + j]) relax(x, n + j, cost(x, j));
      } else {
        const int j = x - n;
        if (demand[j] > 0) relax(x, dst, 0.0);
        for (int i = 0; i < n; ++i)
          if (!done[i] && f(i, j) > 0) relax(x, i, -cost(i, j));
      }
    }
    if (!(dist[dst] < kInf)) throw Error("transport solver failed to find an augmenting path");
    const double reach = dist[dst];
    for (int y = 0; y < nodes; ++y) pot[y] += std::min(dist[y], reach);

    const int sink = prev[dst];
    long long push = demand[sink - n];
    int y = sink;
    while (prev[y] != src) {
      const int x = prev[y];
      if (x >= n) push = std::min(push, f(y, x - n));  // reverse edge sink -> source
      y = x;
    }
    const int source = y;
    push = std::min(push, supply[source]);
    y = sink;
    while (prev[y] != src) {
      const int x = prev[y];
      if (x < n)
        f(x, y - n) += push;
      else
        f(y, x - n) -= push;
      y = x;
    }
    supply[source] -= push;
    demand[sink - n] -= push;
    remaining -= push;
  }
  double total = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      if (f(i, j) > 0) total += static_cast<double>(f(i, j)) * cost(i, j);
  return total / (static_cast<double>(n) * m);
}

W1Estimate w1_exact(const Mat& a, const Mat& b) {
  if (a.rows() < 1 || b.rows() < 1) throw PreconditionError("W1 needs non-empty point sets");
  if (static_cast<std::size_t>(a.rows()) > kExactSizeGuard ||
      static_cast<std::size_t>(b.rows()) > kExactSizeGuard)
    throw SizeGuardError("exact W1 limited to 512 points per side; use sliced or sinkhorn");
  W1Estimate e;
  e.method = W1Method::exact;
  e.n_modal = static_cast<std::size_t>(a.rows());
  e.n_text = static_cast<std::size_t>(b.rows());
  const Mat cost = euclidean_cost(a, b);
  if (a.rows() == b.rows()) {
    const auto match = solve_assignment(cost);
    double total = 0.0;
    for (std::size_t i = 0; i < match.size(); ++i) total += cost(static_cast<Eigen::Index>(i), match[i]);
    e.value = total / static_cast<double>(a.rows());
  } else {
    e.value = transport_uniform(cost);
  }
  return e;
}

double w1_1d(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw PreconditionError("W1 needs non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a.size() == b.size()) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += std::fabs(a[i] - b[i]);
    return s / static_cast<double>(a.size());
  }
  // Integrate |F^-1 - G^-1| over merged quantile breakpoints, in units of 1/(n m).
  const auto n = static_cast<long long>(a.size());
  const auto m = static_cast<long long>(b.size());
  long long pos = 0, total = n * m;
  std::size_t i = 0, j = 0;
  double s = 0.0;
  while (pos < total) {
    const long long next_a = static_cast<long long>(i + 1) * m;
    const long long next_b = static_cast<long long>(j + 1) * n;
    const long long next = std::min(next_a, next_b);
    s += static_cast<double>(next - pos) * std::fabs(a[i] - b[j]);
    pos = next;
    if (next == next_a) ++i;
    if (next == next_b) ++j;
  }
  return s / static_cast<double>(total);
}

W1Estimate w1_sliced(const Mat& a, const Mat& b, int projections, std::uint64_t seed) {
  if (projections < 8) throw PreconditionError("sliced W1 needs at least 8 projections");
  if (a.cols() != b.cols()) throw DimensionMismatchError("point sets differ in dimensionality");
  W1Estimate e;
  e.method = W1Method::sliced;
  e.n_modal = static_cast<std::size_t>(a.rows());
  e.n_text = static_cast<std::size_t>(b.rows());
  e.projections = projections;
  e.seed = seed;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> values(static_cast<std::size_t>(projections));
  Vec dir(a.cols());
  for (int p = 0; p < projections; ++p) {
    do {
      for (Eigen::Index k = 0; k < dir.size(); ++k) dir(k) = normal(rng);
    } while (dir.norm() == 0.0);
    dir.normalize();
    const Vec pa = a * dir;
    const Vec pb = b * dir;
    values[static_cast<std::size_t>(p)] =
        w1_1d(std::vector<double>(pa.data(), pa.data() + pa.size()),
              std::vector<double>(pb.data(), pb.data() + pb.size()));
  }
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / projections;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  e.value = mean;
  e.mc_std = std::sqrt(ss / (projections - 1)) / std::sqrt(static_cast<double>(projections));
  return e;
}

W1Estimate w1_sinkhorn(const Mat& a, const Mat& b, double epsilon, int max_iter) {
  if (!(epsilon > 0.0)) throw PreconditionError("sinkhorn epsilon must be positive");
  if (max_iter < 1) throw PreconditionError("sinkhorn needs at least one iteration");
  const Mat cost = euclidean_cost(a, b);
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const double log_a = -std::log(static_cast<double>(n));
  const double log_b = -std::log(static_cast<double>(m));
  Vec f = Vec::Zero(n), g = Vec::Zero(m);

  W1Estimate e;
  e.method = W1Method::sinkhorn;
  e.n_modal = static_cast<std::size_t>(n);
  e.n_text = static_cast<std::size_t>(m);
  e.epsilon = epsilon;

  // Annealing schedule: start at the cost scale and halve down to the target.
  std::vector<double> schedule;
  for (double eps = std::max(cost.maxCoeff(), epsilon); eps > epsilon; eps *= 0.5)
    schedule.push_back(eps);
  schedule.push_back(epsilon);

  Mat logk(n, m);
  double residual = std::numeric_limits<double>::infinity();
  for (double eps : schedule) {
    for (int it = 0; it < max_iter; ++it) {
      // f-update (row marginals).
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto row = (g.transpose().array() - cost.row(i).array()) / eps + log_b;
        const double mx = row.maxCoeff();
        f(i) = -eps * (mx + std::log((row - mx).exp().sum()));
      }
      // g-update (column marginals, exact afterwards).
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto col = (f.array() - cost.col(j).array()) / eps + log_a;
        const double mx = col.maxCoeff();
        g(j) = -eps * (mx + std::log((col - mx).exp().sum()));
      }
      ++e.iterations;
      if (it % 10 == 9 || it + 1 == max_iter) {
        residual = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double row_mass =
              ((f(i) + g.transpose().array() - cost.row(i).array()) / eps + log_a + log_b).exp().sum();
          residual += std::fabs(row_mass - std::exp(log_a));
        }
        if (residual <= 1e-6) break;
      }
    }
  }
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    total += (((f(i) + g.transpose().array() - cost.row(i).array()) / epsilon + log_a + log_b).exp() *
              cost.row(i).array())
                 .sum();
  e.value = total;
  e.marginal_residual = residual;
  e.converged = residual <= 1e-6;
  return e;
}

W1Estimate w1_estimate(const Mat& a, const Mat& b, const W1Options& opts) {
  switch (opts.method) {
    case W1Method::exact: return w1_exact(a, b);
    case W1Method::sliced: return w1_sliced(a, b, opts.projections, opts.seed);
    case W1Method::sinkhorn: return w1_sinkhorn(a, b, opts.epsilon, opts.max_iter);
    case W1Method::automatic:
      if (static_cast<std::size_t>(a.rows()) <= kAutoExactLimit &&
          static_cast<std::size_t>(b.rows()) <= kAutoExactLimit)
        return w1_exact(a, b);
      return w1_sliced(a, b, opts.projections, opts.seed);
  }
  return w1_exact(a, b);
}

namespace {

Mat gather(const Mat& all, const std::vector<std::size_t>& rows) {
  Mat out(static_cast<Eigen::Index>(rows.size()), all.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = all.row(static_cast<Eigen::Index>(rows[i]));
  return out;
}

}  // namespace

StratifiedW1 stratified_w1(const Mat& modal, const LabelVector& modal_strata, const Mat& text,
                           const LabelVector& text_strata, const W1Options& opts) {
  if (static_cast<Eigen::Index>(modal_strata.size()) != modal.rows() ||
      static_cast<Eigen::Index>(text_strata.size()) != text.rows())
    throw ShapeMismatchError("stratum ids must have one entry per row");
  std::map<std::int64_t, std::pair<std::vector<std::size_t>, std::vector<std::size_t>>> rows;
  for (std::size_t i = 0; i < modal_strata.size(); ++i) rows[modal_strata[i]].first.push_back(i);
  for (std::size_t i = 0; i < text_strata.size(); ++i) rows[text_strata[i]].second.push_back(i);
  const double total = static_cast<double>(text.rows());
  StratifiedW1 out;
  for (const auto& [s, mt] : rows) {
    const auto& [mr, tr] = mt;
    if (mr.empty() || tr.empty())
      throw EmptyStratumError("stratum " + std::to_string(s) + " is empty under one law");
    StratumW1 sw;
    sw.stratum = s;
    sw.weight = static_cast<double>(tr.size()) / total;
    sw.estimate = w1_estimate(gather(modal, mr), gather(text, tr), opts);
    out.value += sw.weight * sw.estimate.value;
    out.per_stratum.push_back(sw);
  }
  return out;
}

StratifiedW1 stratified_w1(const PairedLaws& laws, const W1Options& opts) {
  return stratified_w1(laws.modal().to_double(), laws.modal().stratum_ids, laws.text().to_double(),
                       laws.text().stratum_ids, opts);
}

StratifiedW1 stratified_w1(const PairedLaws& laws, std::string_view attribute, const W1Options& opts) {
  auto refine = [&](const EmbeddingSet& set) {
    const auto& a = set.label(attribute);
    const auto k = static_cast<std::int64_t>(std::max(laws.modal().num_classes(attribute),
                                                      laws.text().num_classes(attribute)));
    LabelVector out(set.rows());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = set.stratum_ids[i] * k + a[i];
    return out;
  };
  return stratified_w1(laws.modal().to_double(), refine(laws.modal()), laws.text().to_double(),
                       refine(laws.text()), opts);
}

}  // namespace gmilab
