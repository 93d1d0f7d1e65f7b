#include "gmilab/modes.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

namespace gmilab {

std::vector<std::size_t> ModeSpectrum::ms_modes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < classification.size(); ++k)
    if (classification[k] == ModeClass::ms) out.push_back(k);
  return out;
}

std::vector<std::size_t> ModeSpectrum::ta_modes() const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < classification.size(); ++k)
    if (classification[k] == ModeClass::ta) out.push_back(k);
  return out;
}

ModeSpectrum mode_alignment(const Mat& modal, const Mat& text, Eigen::Index k, double threshold) {
  if (modal.cols() != text.cols())
    throw DimensionMismatchError("modal d=" + std::to_string(modal.cols()) + " but text d=" +
                                 std::to_string(text.cols()));
  const Eigen::Index d = modal.cols();
  if (k <= 0) k = std::min(kDefaultModeCount, d);
  if (k > d) throw PreconditionError("k exceeds the dimensionality");
  const Mat cov_m = covariance(modal);
  const Mat cov_t = covariance(text);
  const EigenBasis full = top_k_eigen(cov_m, k);

  ModeSpectrum s;
  s.threshold = threshold;
  s.requested_modes = static_cast<std::size_t>(k);
  const double lambda1 = full.size() > 0 ? full.eigenvalues(0) : 0.0;
  Eigen::Index kept = 0;
  while (kept < full.size() && lambda1 > 0.0 && full.eigenvalues(kept) > kModeDropRatio * lambda1)
    ++kept;
  s.dropped_modes = static_cast<std::size_t>(full.size() - kept);
  s.basis.eigenvalues = full.eigenvalues.head(kept);
  s.basis.eigenvectors = full.eigenvectors.leftCols(kept);
  s.basis.source_trace = full.source_trace;

  double total = 0.0, ms = 0.0;
  for (Eigen::Index j = 0; j < kept; ++j) {
    const auto u = s.basis.eigenvectors.col(j);
    const double lambda = s.basis.eigenvalues(j);
    const double alpha = std::max(0.0, u.dot(cov_t * u)) / lambda;
    s.alignment.push_back(alpha);
    const bool is_ms = alpha < threshold;
    s.classification.push_back(is_ms ? ModeClass::ms : ModeClass::ta);
    total += lambda;
    if (is_ms) ms += lambda;
  }
  s.ms_variance_share = total > 0.0 ? ms / total : 0.0;
  return s;
}

ModeSpectrum mode_alignment(const EmbeddingSet& modal, const EmbeddingSet& text, Eigen::Index k,
                            double threshold) {
  return mode_alignment(modal.to_double(), text.to_double(), k, threshold);
}

Mat project_out(const Mat& z, const EigenBasis& basis, const std::vector<std::size_t>& modes) {
  if (modes.empty()) return z;
  if (basis.eigenvectors.rows() != z.cols())
    throw DimensionMismatchError("basis dimensionality does not match the inputs");
  Mat u(z.cols(), static_cast<Eigen::Index>(modes.size()));
  for (std::size_t j = 0; j < modes.size(); ++j) {
    if (modes[j] >= static_cast<std::size_t>(basis.size()))
      throw PreconditionError("mode index " + std::to_string(modes[j]) + " out of range");
    u.col(static_cast<Eigen::Index>(j)) = basis.eigenvectors.col(static_cast<Eigen::Index>(modes[j]));
  }
  return z - (z * u) * u.transpose();
}

std::string_view to_string(AblationCondition c) {
  switch (c) {
    case AblationCondition::none: return "none";
    case AblationCondition::ms_all: return "ms_all";
    case AblationCondition::ta_matched: return "ta_matched";
    case AblationCondition::random: return "random";
  }
  return "none";
}

AblationCondition parse_ablation_condition(std::string_view s) {
  for (auto c : {AblationCondition::none, AblationCondition::ms_all, AblationCondition::ta_matched,
                 AblationCondition::random})
    if (to_string(c) == s) return c;
  throw ConfigError("unknown ablation condition '" + std::string(s) + "'");
}

namespace {

double removed_share(const ModeSpectrum& s, const std::vector<std::size_t>& modes, double denom) {
  if (denom <= 0.0) return 0.0;
  double v = 0.0;
  for (auto k : modes) v += s.basis.eigenvalues(static_cast<Eigen::Index>(k));
  return 100.0 * v / denom;
}

}  // namespace

AblationReport run_ablation(const ToyDecoder& dec, const EmbeddingSet& modal,
                            const ModeSpectrum& spectrum, AblationCondition condition,
                            const AblationOptions& opts) {
  if (spectrum.basis.eigenvectors.rows() != static_cast<Eigen::Index>(modal.dims()))
    throw DimensionMismatchError("spectrum and modal set differ in dimensionality");

  std::vector<std::size_t> rows(modal.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  if (rows.size() > opts.samples) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(opts.samples);
    std::sort(rows.begin(), rows.end());
  }
  const EmbeddingSet sub = modal.subset(rows);
  const Mat z = sub.to_double();
  const LabelVector ctx = sub.contexts();
  const LabelVector& y = sub.targets();
  const CrossEntropy base = cross_entropy(dec, ctx, z, y);

  AblationReport r;
  r.condition = condition;
  r.n_samples = rows.size();
  r.base_loss = base.mean;
  r.ablated_loss = base.mean;

  const auto ms = spectrum.ms_modes();
  const auto ta = spectrum.ta_modes();
  if (condition == AblationCondition::none) return r;
  if (ms.empty()) {
    r.degenerate = true;
    return r;
  }

  std::vector<std::vector<std::size_t>> sets;
  switch (condition) {
    case AblationCondition::ms_all:
      sets.push_back(ms);
      break;
    case AblationCondition::ta_matched: {
      // Modes are stored by descending lambda, so the leading TA indices are
      // the largest-variance text-aligned modes.
      std::vector<std::size_t> pick(ta.begin(), ta.begin() + static_cast<std::ptrdiff_t>(
                                                               std::min(ms.size(), ta.size())));
      sets.push_back(std::move(pick));
      break;
    }
    case AblationCondition::random: {
      const std::size_t total = spectrum.classification.size();
      for (int s = 1; s <= opts.random_seeds; ++s) {
        const std::uint64_t seed = opts.seed + static_cast<std::uint64_t>(s);
        std::vector<std::size_t> all(total);
        std::iota(all.begin(), all.end(), std::size_t{0});
        std::mt19937_64 rng(seed);
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(ms.size());
        std::sort(all.begin(), all.end());
        sets.push_back(std::move(all));
        r.seeds.push_back(seed);
      }
      break;
    }
    case AblationCondition::none:
      break;
  }

  std::vector<double> deltas(rows.size(), 0.0);
  double var_pct = 0.0, trace_pct = 0.0, ablated = 0.0;
  double classified_total = spectrum.basis.eigenvalues.sum();
  for (const auto& set : sets) {
    const CrossEntropy ce = cross_entropy(dec, ctx, project_out(z, spectrum.basis, set), y);
    for (std::size_t i = 0; i < deltas.size(); ++i) deltas[i] += ce.per_sample[i] - base.per_sample[i];
    ablated += ce.mean;
    var_pct += removed_share(spectrum, set, classified_total);
    trace_pct += removed_share(spectrum, set, spectrum.basis.source_trace);
    if (condition == AblationCondition::random)
      r.per_seed_delta_pct.push_back(base.mean > 0.0 ? 100.0 * (ce.mean - base.mean) / base.mean : 0.0);
  }
  const double m = static_cast<double>(sets.size());
  for (auto& v : deltas) v /= m;
  r.removed = sets.front();
  r.modes_removed = sets.front().size();
  r.ablated_loss = ablated / m;
  r.variance_removed_pct = var_pct / m;
  r.trace_variance_removed_pct = trace_pct / m;
  r.delta_loss_pct = base.mean > 0.0 ? 100.0 * (r.ablated_loss - base.mean) / base.mean : 0.0;
  if (deltas.size() >= 2) {
    try {
      const auto t = paired_t(deltas);
      r.t = t.statistic;
      r.p = t.p;
    } catch (const DegenerateInputError&) {
      r.t = 0.0;
      r.p = 1.0;
    }
  }
  return r;
}

}  // namespace gmilab
