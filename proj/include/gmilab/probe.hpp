#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace gmilab {

// Multinomial logistic probe. Weights live in z-scored feature space; the
// training mean/std are kept so the probe can be applied to raw inputs.
struct ProbeModel {
  Mat weights;  // K x d
  Vec bias;     // K
  int classes = 0;
  double reg_c = 1.0;
  Vec train_mean;
  Vec train_std;
  bool converged = false;
  int epochs = 0;
  double grad_norm = 0.0;
  double test_accuracy = 0.0;
};

struct ProbeResult {
  std::string attribute;
  LayerTag layer_tag = LayerTag::synthetic;
  std::vector<std::uint64_t> seeds;
  std::vector<double> per_seed;
  std::vector<bool> converged;
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  double chance = 0.0;
};

inline const std::vector<std::uint64_t> kProbeSeeds = {42, 43, 44, 45, 46};

struct ProbeTrainOptions {
  double reg_c = 1.0;
  double train_fraction = 0.8;
  int max_epochs = 500;
  double grad_tol = 1e-5;
};

// Mean cross-entropy plus ||W||_F^2 / (2 C N); the bias is not penalized.
// Gradients are written when the out-pointers are non-null.
double logistic_objective(const Mat& x, const LabelVector& y, int classes, double reg_c,
                          const Mat& w, const Vec& b, Mat* grad_w, Vec* grad_b);

// Fits on rows already in normalized space.
ProbeModel fit_logistic(const Mat& x_normalized, const LabelVector& y, int classes,
                        const ProbeTrainOptions& opts);

// Stratified split for `seed`, z-score on the train part, fit, score the test part.
ProbeModel train_probe(const EmbeddingSet& set, std::string_view attribute, std::uint64_t seed,
                       const ProbeTrainOptions& opts = {});

// Fits on every row of `raw` (used when the whole text law is the training set).
ProbeModel train_probe_all(const Mat& raw, const LabelVector& y, int classes,
                           const ProbeTrainOptions& opts = {});

Mat probe_log_proba(const ProbeModel& model, const Mat& raw);
// Argmax with ties resolved toward the lowest class id.
std::vector<int> probe_predict(const ProbeModel& model, const Mat& raw);
double probe_accuracy(const ProbeModel& model, const Mat& raw, const LabelVector& y);
// d/dz log h(a | z) in raw input space.
Vec probe_input_gradient(const ProbeModel& model, const Vec& z, int a);

ProbeResult run_probe_protocol(const EmbeddingSet& set, std::string_view attribute,
                               const std::vector<std::uint64_t>& seeds = kProbeSeeds,
                               const ProbeTrainOptions& opts = {});

// max_k || W_k / std ||.
double probe_lipschitz(const ProbeModel& model);
// max_{j,k} || (W_j - W_k) / std ||, a guaranteed bound on the input gradient of log h.
double probe_lipschitz_strict(const ProbeModel& model);

struct PenaltyCheck {
  double mean_log_h_text = 0.0;
  double mean_log_h_modal = 0.0;
  double lhs = 0.0;
  double l_h = 0.0;
  double w1 = 0.0;
  double rhs = 0.0;
  bool holds = false;
  double rhs_strict = 0.0;
  bool holds_strict = false;
};

// Mean log-likelihood with log h clipped at log(1/K).
double mean_clipped_log_likelihood(const ProbeModel& model, const Mat& raw, const LabelVector& y);

PenaltyCheck probe_penalty_check(const ProbeModel& model, const PairedLaws& laws,
                                 std::string_view attribute, double w1);

}  // namespace gmilab
