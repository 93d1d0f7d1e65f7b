#include "gmilab/gmi.hpp"

#include "gmilab/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <string>

namespace gmilab {

std::string_view to_string(NegativePool p) {
  switch (p) {
    case NegativePool::context: return "context";
    case NegativePool::stratum: return "stratum";
    case NegativePool::marginal: return "marginal";
  }
  return "context";
}

NegativePool parse_negative_pool(std::string_view s) {
  for (auto p : {NegativePool::context, NegativePool::stratum, NegativePool::marginal})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown negative pool '" + std::string(s) + "'");
}

namespace {

Mat gather_rows(const Mat& m, const std::vector<std::size_t>& idx) {
  Mat out(static_cast<Eigen::Index>(idx.size()), m.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(idx[i]));
  return out;
}

// Clipped log-scores of every row of z under context c, one column per token,
// reduced to log-mean-exp over the rows.
Vec pooled_log_mean_exp(const ToyDecoder& dec, std::int64_t c, const Mat& z) {
  const LabelVector ctx(static_cast<std::size_t>(z.rows()), c);
  const Mat lp = decoder_log_softmax(dec, ctx, z).array().max(dec.log_floor());
  Vec out(lp.cols());
  const double log_n = std::log(static_cast<double>(lp.rows()));
  for (Eigen::Index t = 0; t < lp.cols(); ++t) {
    const double m = lp.col(t).maxCoeff();
    out(t) = m + std::log((lp.col(t).array() - m).exp().sum()) - log_n;
  }
  return out;
}

}  // namespace

GmiEstimate estimate_gmi(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                         const LabelVector& tokens, const LabelVector& groups,
                         NegativePool pool_kind) {
  const auto n = static_cast<std::size_t>(z.rows());
  if (n == 0) throw PreconditionError("GMI needs at least one sample");
  if (contexts.size() != n || tokens.size() != n || groups.size() != n)
    throw ShapeMismatchError("contexts, tokens and pool ids must have one entry per row");
  for (auto y : tokens)
    if (y < 0 || y >= dec.vocab()) throw TokenRangeError("token " + std::to_string(y) + " out of range");

  std::map<std::int64_t, std::vector<std::size_t>> pools;
  for (std::size_t i = 0; i < n; ++i) pools[groups[i]].push_back(i);
  std::vector<std::size_t> everyone(n);
  std::iota(everyone.begin(), everyone.end(), std::size_t{0});

  GmiEstimate g;
  g.n = n;
  g.pool = pool_kind;
  g.per_sample.resize(n);
  g.min_pool = std::numeric_limits<std::size_t>::max();
  const Mat own = decoder_log_softmax(dec, contexts, z).array().max(dec.log_floor());

  // Cache of log-mean-exp vectors keyed by (pool, context).
  std::map<std::pair<std::int64_t, std::int64_t>, Vec> cache;
  constexpr std::int64_t kMarginalKey = std::numeric_limits<std::int64_t>::min();
  double sum_a = 0.0, sum_b = 0.0, sum_log_pool = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t key = groups[i];
    const std::vector<std::size_t>* members = &pools[key];
    if (members->size() < 2) {
      g.fallback_marginal = true;
      key = kMarginalKey;
      members = &everyone;
    }
    auto it = cache.find({key, contexts[i]});
    if (it == cache.end())
      it = cache.emplace(std::pair{key, contexts[i]},
                         pooled_log_mean_exp(dec, contexts[i], gather_rows(z, *members)))
               .first;
    const double a = own(static_cast<Eigen::Index>(i), tokens[i]);
    const double b = it->second(tokens[i]);
    g.per_sample[i] = a - b;
    sum_a += a;
    sum_b += b;
    sum_log_pool += std::log(static_cast<double>(members->size()));
    g.negatives_per_stratum = std::max(g.negatives_per_stratum, members->size());
    g.min_pool = std::min(g.min_pool, members->size());
  }
  const double nd = static_cast<double>(n);
  g.direct_term = sum_a / nd;
  g.competition_term = sum_b / nd;
  g.value = g.direct_term - g.competition_term;
  g.ceiling = sum_log_pool / nd;
  if (n >= 2) {
    double ss = 0.0;
    const double mean = std::accumulate(g.per_sample.begin(), g.per_sample.end(), 0.0) / nd;
    for (double v : g.per_sample) ss += (v - mean) * (v - mean);
    g.std_error = std::sqrt(ss / (nd - 1.0) / nd);
  }
  return g;
}

GmiEstimate estimate_gmi(const ToyDecoder& dec, const EmbeddingSet& law, const GmiOptions& opts) {
  const LabelVector ctx = law.contexts();
  LabelVector groups;
  switch (opts.pool) {
    case NegativePool::context:
      groups = ctx;
      break;
    case NegativePool::stratum:
      if (law.stratum_ids.empty()) throw PreconditionError("stratum pools need stratum ids");
      groups = law.stratum_ids;
      break;
    case NegativePool::marginal:
      groups.assign(law.rows(), 0);
      break;
  }
  return estimate_gmi(dec, ctx, law.to_double(), law.targets(), groups, opts.pool);
}

Diameter effective_diameter(const Mat& pooled, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(pooled.rows());
  if (n < 2) throw PreconditionError("effective diameter needs at least 2 samples");
  Diameter out;
  double best = 0.0;
  if (n <= kExactDiameterLimit) {
    const Vec sq = pooled.rowwise().squaredNorm();
    const Mat gram = pooled * pooled.transpose();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto a = static_cast<Eigen::Index>(i), b = static_cast<Eigen::Index>(j);
        best = std::max(best, sq(a) + sq(b) - 2.0 * gram(a, b));
      }
    out.pairs = n * (n - 1) / 2;
  } else {
    out.approximate = true;
    out.pairs = kDiameterPairs;
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (std::size_t t = 0; t < kDiameterPairs; ++t) {
      const auto a = static_cast<Eigen::Index>(pick(rng)), b = static_cast<Eigen::Index>(pick(rng));
      best = std::max(best, (pooled.row(a) - pooled.row(b)).squaredNorm());
    }
  }
  out.d = std::sqrt(std::max(0.0, best));

  const EigenBasis basis = top_k_eigen(covariance(pooled), pooled.cols());
  if (basis.eigenvalues.sum() <= 0.0) return out;
  out.participation_ratio = participation_ratio(basis.eigenvalues);
  out.effective_modes = static_cast<int>(
      std::min<double>(static_cast<double>(basis.size()), std::ceil(out.participation_ratio - 1e-9)));
  out.d_eff_unclamped = 2.0 * std::sqrt(basis.eigenvalues.head(out.effective_modes).sum());
  out.d_eff = std::min(out.d_eff_unclamped, out.d);
  return out;
}

Diameter effective_diameter(const EmbeddingSet& pooled, std::uint64_t seed) {
  return effective_diameter(pooled.to_double(), seed);
}

double wasserstein_bound(double lipschitz, double diameter, double w1) {
  if (lipschitz <= 0.0 || w1 <= 0.0) return 0.0;
  return (1.0 + std::exp(lipschitz * diameter)) * lipschitz * w1;
}

namespace {

bool within(double lhs, double rhs) { return lhs <= rhs * (1.0 + kBoundSlack); }

EmbeddingSet pool_laws(const PairedLaws& laws) {
  EmbeddingSet both;
  const auto& m = laws.modal();
  const auto& t = laws.text();
  both.data.resize(static_cast<Eigen::Index>(m.rows() + t.rows()), static_cast<Eigen::Index>(m.dims()));
  both.data << m.data, t.data;
  auto join = [](const LabelVector& a, const LabelVector& b) {
    LabelVector out(a);
    out.insert(out.end(), b.begin(), b.end());
    return out;
  };
  both.labels[std::string(kTargetLabel)] = join(m.targets(), t.targets());
  both.labels[std::string(kContextLabel)] = join(m.contexts(), t.contexts());
  return both;
}

}  // namespace

BoundReport evaluate_bound(const ToyDecoder& dec, const PairedLaws& laws, const BoundOptions& opts) {
  BoundReport r;
  r.gmi_text = estimate_gmi(dec, laws.text(), opts.gmi);
  r.gmi_modal = estimate_gmi(dec, laws.modal(), opts.gmi);
  r.lhs = std::fabs(r.gmi_text.value - r.gmi_modal.value);
  r.delta_direct = std::fabs(r.gmi_text.direct_term - r.gmi_modal.direct_term);
  r.delta_competition = std::fabs(r.gmi_text.competition_term - r.gmi_modal.competition_term);

  const EmbeddingSet pooled = pool_laws(laws);
  if (opts.lipschitz_override) {
    r.l_log = *opts.lipschitz_override;
    r.l_log.analytic_bound = analytic_lipschitz_bound(dec);
  } else {
    r.l_log = estimate_lipschitz(dec, pooled, opts.lipschitz_samples, opts.seed);
  }
  r.diameter = effective_diameter(pooled.to_double(), opts.seed);
  r.w1 = stratified_w1(laws, opts.w1);

  const double l = r.l_log.p95;
  r.bound_ambient = wasserstein_bound(l, r.diameter.d, r.w1.value);
  r.bound_support = wasserstein_bound(l, r.diameter.d_eff, r.w1.value);
  r.holds_ambient = within(r.lhs, r.bound_ambient);
  r.holds_support = within(r.lhs, r.bound_support);
  const double la = r.l_log.analytic_bound;
  r.bound_ambient_analytic = wasserstein_bound(la, r.diameter.d, r.w1.value);
  r.bound_support_analytic = wasserstein_bound(la, r.diameter.d_eff, r.w1.value);
  r.holds_ambient_analytic = within(r.lhs, r.bound_ambient_analytic);
  r.holds_support_analytic = within(r.lhs, r.bound_support_analytic);
  return r;
}

AccessGap accessibility_gap(const ToyDecoder& dec, const EmbeddingSet& modal,
                            std::string_view attribute, double mi, double mi_std,
                            std::int64_t token_offset) {
  const LabelVector& a = modal.label(attribute);
  const int k = modal.num_classes(attribute);
  if (token_offset < 0 || token_offset + k > dec.vocab())
    throw TokenRangeError("attribute token block exceeds the decoder vocabulary");
  LabelVector tokens(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) tokens[i] = token_offset + a[i];
  const LabelVector ctx = modal.contexts();
  AccessGap g;
  g.mi = mi;
  g.mi_std = mi_std;
  g.gmi = estimate_gmi(dec, ctx, modal.to_double(), tokens, ctx, NegativePool::context);
  g.gap = mi - g.gmi.value;
  g.negative = g.gap < -kGapTolerance;
  return g;
}

AsymmetryReport asymmetry_experiment(const ToyDecoder& dec, const ProbeModel& probe,
                                     const PairedLaws& laws, std::string_view attribute,
                                     const BoundOptions& opts) {
  AsymmetryReport r;
  r.attribute = std::string(attribute);
  r.w1_attribute = stratified_w1(laws, attribute, opts.w1).value;
  r.penalty = probe_penalty_check(probe, laws, attribute, r.w1_attribute);
  const double chance = -std::log(static_cast<double>(probe.classes));
  r.probe_info_text = r.penalty.mean_log_h_text - chance;
  r.probe_info_modal = r.penalty.mean_log_h_modal - chance;
  r.probe_drop = r.probe_info_text - r.probe_info_modal;
  r.probe_relative_drop = r.probe_info_text > 0.0 ? r.probe_drop / r.probe_info_text : 0.0;
  r.l_h = r.penalty.l_h;

  const BoundReport b = evaluate_bound(dec, laws, opts);
  r.gmi_text = b.gmi_text.value;
  r.gmi_modal = b.gmi_modal.value;
  r.gmi_drop = r.gmi_text - r.gmi_modal;
  r.gmi_relative_drop = r.gmi_text > 0.0 ? r.gmi_drop / r.gmi_text : 0.0;
  r.l_log = b.l_log.p95;
  r.w1 = b.w1.value;
  r.decoder_bound = b.bound_support;
  r.decoder_holds = b.holds_support;
  r.sensitivity_ratio = r.l_h > 0.0 ? r.l_log / r.l_h : std::numeric_limits<double>::infinity();
  return r;
}

}  // namespace gmilab
