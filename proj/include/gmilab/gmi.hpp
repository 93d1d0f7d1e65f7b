#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"
#include "gmilab/decoder.hpp"
#include "gmilab/probe.hpp"
#include "gmilab/transport.hpp"

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

namespace gmilab {

// Which samples act as negatives z' for sample i. Every pool is
// self-inclusive. `context` pools all samples sharing i's context id;
// `stratum` pools samples sharing i's (C,Y) stratum; `marginal` pools all.
enum class NegativePool { context, stratum, marginal };

std::string_view to_string(NegativePool p);
NegativePool parse_negative_pool(std::string_view s);

struct GmiOptions {
  NegativePool pool = NegativePool::context;
};

struct GmiEstimate {
  double value = 0.0;
  double direct_term = 0.0;       // mean clipped log-score of the true triple
  double competition_term = 0.0;  // mean log-mean-exp over the negatives
  std::size_t negatives_per_stratum = 0;  // largest pool size
  std::size_t min_pool = 0;
  double ceiling = 0.0;  // mean over samples of log(pool size)
  std::size_t n = 0;
  double std_error = 0.0;
  bool fallback_marginal = false;  // some pool had a single member
  NegativePool pool = NegativePool::context;
  std::vector<double> per_sample;
};

// Per-sample l(c_i, z_i, y_i) - log mean_{j in pool(i)} exp l(c_i, z_j, y_i),
// averaged. `groups` gives the pool id of every sample.
GmiEstimate estimate_gmi(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                         const LabelVector& tokens, const LabelVector& groups,
                         NegativePool pool_kind = NegativePool::context);
GmiEstimate estimate_gmi(const ToyDecoder& dec, const EmbeddingSet& law,
                         const GmiOptions& opts = {});

struct Diameter {
  double d = 0.0;
  double d_eff = 0.0;
  double d_eff_unclamped = 0.0;
  double participation_ratio = 0.0;
  int effective_modes = 0;
  bool approximate = false;  // D from random pairs
  std::size_t pairs = 0;
};

inline constexpr std::size_t kExactDiameterLimit = 2048;
inline constexpr std::size_t kDiameterPairs = 1000000;

// D = max pairwise distance; D_eff = 2 sqrt(sum_{k <= ceil(PR)} lambda_k) of
// the pooled covariance, capped at D.
Diameter effective_diameter(const Mat& pooled, std::uint64_t seed = 0);
Diameter effective_diameter(const EmbeddingSet& pooled, std::uint64_t seed = 0);

// (1 + e^{L D}) L w1, with the 0 * inf cases resolved to 0.
double wasserstein_bound(double lipschitz, double diameter, double w1);

struct BoundOptions {
  W1Options w1;
  GmiOptions gmi;
  std::size_t lipschitz_samples = 1000;
  std::uint64_t seed = 0;
  // Externally measured gradient norms (for example from a real model).
  std::optional<LipschitzEstimate> lipschitz_override;
};

struct BoundReport {
  GmiEstimate gmi_text;
  GmiEstimate gmi_modal;
  double lhs = 0.0;
  double delta_direct = 0.0;
  double delta_competition = 0.0;
  LipschitzEstimate l_log;
  Diameter diameter;
  StratifiedW1 w1;
  double bound_ambient = 0.0;
  double bound_support = 0.0;
  bool holds_ambient = false;
  bool holds_support = false;
  // Same bounds with the analytic global Lipschitz constant.
  double bound_ambient_analytic = 0.0;
  double bound_support_analytic = 0.0;
  bool holds_ambient_analytic = false;
  bool holds_support_analytic = false;
};

inline constexpr double kBoundSlack = 1e-6;

BoundReport evaluate_bound(const ToyDecoder& dec, const PairedLaws& laws,
                           const BoundOptions& opts = {});

struct AccessGap {
  double mi = 0.0;
  double mi_std = 0.0;
  GmiEstimate gmi;
  double gap = 0.0;
  bool negative = false;  // gap < -kGapTolerance
};

inline constexpr double kGapTolerance = 0.05;

// mi - GMI of the attribute read out through tokens offset + a, with
// context-pool negatives. `mi` is supplied by the caller (for synthetic
// laws, the ground-truth oracle).
AccessGap accessibility_gap(const ToyDecoder& dec, const EmbeddingSet& modal,
                            std::string_view attribute, double mi, double mi_std,
                            std::int64_t token_offset);

struct AsymmetryReport {
  std::string attribute;
  // Probe side: information = mean clipped log h - log(1/K).
  double probe_info_text = 0.0;
  double probe_info_modal = 0.0;
  double probe_drop = 0.0;
  double probe_relative_drop = 0.0;
  double l_h = 0.0;
  double w1_attribute = 0.0;  // W1 stratified by (C,Y) and the attribute
  PenaltyCheck penalty;
  // Decoder side.
  double gmi_text = 0.0;
  double gmi_modal = 0.0;
  double gmi_drop = 0.0;
  double gmi_relative_drop = 0.0;
  double l_log = 0.0;
  double w1 = 0.0;
  double decoder_bound = 0.0;  // support-restricted
  bool decoder_holds = false;
  double sensitivity_ratio = 0.0;  // L_log / L_h
};

AsymmetryReport asymmetry_experiment(const ToyDecoder& dec, const ProbeModel& probe,
                                     const PairedLaws& laws, std::string_view attribute,
                                     const BoundOptions& opts = {});

}  // namespace gmilab
