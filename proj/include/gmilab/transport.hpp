#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace gmilab {

enum class W1Method { exact, sliced, sinkhorn, automatic };

std::string_view to_string(W1Method m);
W1Method parse_w1_method(std::string_view s);

struct W1Estimate {
  double value = 0.0;
  W1Method method = W1Method::exact;
  std::size_t n_modal = 0;
  std::size_t n_text = 0;
  // sliced
  int projections = 0;
  std::uint64_t seed = 0;
  double mc_std = 0.0;
  // sinkhorn
  double epsilon = 0.0;
  int iterations = 0;
  double marginal_residual = 0.0;
  bool converged = true;
};

inline constexpr std::size_t kExactSizeGuard = 512;
inline constexpr std::size_t kAutoExactLimit = 256;
inline constexpr int kAutoProjections = 256;

// Pairwise Euclidean cost matrix.
Mat euclidean_cost(const Mat& a, const Mat& b);

// Optimal assignment of a square cost matrix; returns col index per row.
std::vector<int> solve_assignment(const Mat& cost);

// Optimal transport between uniform measures on the rows of `cost`'s two
// sides (general n x m LP), solved as a min-cost flow. Returns total cost.
double transport_uniform(const Mat& cost);

// Exact W1 between the uniform empirical measures on the rows of a and b.
W1Estimate w1_exact(const Mat& a, const Mat& b);

// 1-D W1 between uniform empirical measures (quantile-function formula).
double w1_1d(std::vector<double> a, std::vector<double> b);

W1Estimate w1_sliced(const Mat& a, const Mat& b, int projections, std::uint64_t seed);

// Entropic transport cost with epsilon annealing; `max_iter` caps each stage.
W1Estimate w1_sinkhorn(const Mat& a, const Mat& b, double epsilon, int max_iter);

struct W1Options {
  W1Method method = W1Method::automatic;
  int projections = kAutoProjections;
  std::uint64_t seed = 0;
  double epsilon = 1e-2;
  int max_iter = 2000;
};

// Dispatch on options.method; `automatic` picks exact when both sides have at
// most 256 rows and sliced otherwise.
W1Estimate w1_estimate(const Mat& a, const Mat& b, const W1Options& opts = {});

struct StratumW1 {
  std::int64_t stratum = 0;
  double weight = 0.0;
  W1Estimate estimate;
};

struct StratifiedW1 {
  double value = 0.0;
  std::vector<StratumW1> per_stratum;
};

// Stratum-probability-weighted mean of per-(C,Y)-stratum W1 estimates.
StratifiedW1 stratified_w1(const PairedLaws& laws, const W1Options& opts = {});
// Strata refined by an attribute: (stratum, attribute value) cells.
StratifiedW1 stratified_w1(const PairedLaws& laws, std::string_view attribute,
                           const W1Options& opts = {});
// Explicit per-row stratum ids; weights follow the text-side counts.
StratifiedW1 stratified_w1(const Mat& modal, const LabelVector& modal_strata, const Mat& text,
                           const LabelVector& text_strata, const W1Options& opts = {});

}  // namespace gmilab
