#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

namespace gmilab {

struct ModeSpectrum;

// Fixed softmax scoring rule q(y | z, c) = softmax(W phi(z + e_c) + b), with
// phi the identity (linear decoder) or tanh(A x + a) (two-layer variant).
// Log-scores are clipped at log(1/V).
struct ToyDecoder {
  Mat W;         // V x h
  Vec b;         // V
  Mat context;   // C x d, one learned offset per context id
  Mat hidden_w;  // H x d; empty for the linear decoder
  Vec hidden_b;  // H

  int vocab() const { return static_cast<int>(W.rows()); }
  int dims() const { return static_cast<int>(context.cols()); }
  int contexts() const { return static_cast<int>(context.rows()); }
  bool two_layer() const { return hidden_w.size() > 0; }
  double log_floor() const { return -std::log(static_cast<double>(vocab())); }
};

// V x d output weights, zero biases and zero context offsets.
ToyDecoder make_linear_decoder(Mat w, int contexts);

// Unclipped logits for one input.
Vec decoder_logits(const ToyDecoder& dec, std::int64_t context, const Vec& z);
// Row-wise unclipped log-softmax for a batch.
Mat decoder_log_softmax(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z);

double log_score(const ToyDecoder& dec, std::int64_t context, const Vec& z, std::int64_t token);

struct ScoreGradient {
  Vec grad;
  bool floor_active = false;
};

// d/dz of the clipped log-score. Floor-active points return a zero gradient.
ScoreGradient grad_log_score(const ToyDecoder& dec, std::int64_t context, const Vec& z,
                             std::int64_t token);

struct DecoderTrainOptions {
  int vocab = 0;            // 0: max target + 1
  int hidden = 0;           // 0: linear decoder
  double init_scale = 0.1;  // std of the initial output weights
  double hidden_gain = 1.0; // hidden weights ~ N(0, gain^2 / d)
  bool train_hidden = true; // false: the hidden layer keeps its random init
  int max_epochs = 2000;
  double grad_tol = 1e-5;
};

struct DecoderFit {
  ToyDecoder decoder;
  bool converged = false;
  int epochs = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

// Maximum-likelihood fit on the text law's (context, z, target) triples.
DecoderFit train_decoder(const EmbeddingSet& text_law, std::uint64_t seed,
                         const DecoderTrainOptions& opts = {});

// Mean training objective (unclipped cross-entropy) and its parameter
// gradient, flattened in the order W, b, context, hidden_w, hidden_b.
double decoder_objective(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                         const LabelVector& targets, Vec* grad);
Vec flatten_parameters(const ToyDecoder& dec);
ToyDecoder unflatten_parameters(const ToyDecoder& shape, const Vec& params);

struct CrossEntropy {
  double mean = 0.0;
  std::vector<double> per_sample;
};

// Mean of the clipped negative log-score over (context, z, target).
CrossEntropy cross_entropy(const ToyDecoder& dec, const EmbeddingSet& set);
CrossEntropy cross_entropy(const ToyDecoder& dec, const LabelVector& contexts, const Mat& z,
                           const LabelVector& tokens);

struct LipschitzEstimate {
  double mean = 0.0;
  double p95 = 0.0;
  std::size_t n_samples = 0;
  std::vector<double> per_sample_norms;
  double analytic_bound = 0.0;
  std::size_t excluded_floor = 0;
};

// Global bound on ||grad_z log q||: max pairwise row distance of W, times the
// spectral norm of the hidden weights for the two-layer variant.
double analytic_lipschitz_bound(const ToyDecoder& dec);

// Per-sample gradient norms at up to `max_samples` rows (seeded subset).
LipschitzEstimate estimate_lipschitz(const ToyDecoder& dec, const EmbeddingSet& samples,
                                     std::size_t max_samples = 1000, std::uint64_t seed = 0);

struct IsotropyReport {
  double g_ms = 0.0;
  double g_ta = 0.0;
  double ratio = 0.0;  // g_ta / g_ms; +inf when capped
  bool ratio_capped = false;
  std::vector<double> per_mode;  // mean |u_k . grad| for each classified mode
  std::optional<double> spearman_rho;
  std::optional<double> spearman_p;
};

IsotropyReport gradient_isotropy(const ToyDecoder& dec, const EmbeddingSet& samples,
                                 const ModeSpectrum& spectrum);

struct RetuneOptions {
  std::int64_t token_offset = 0;
  int max_epochs = 2000;
  double grad_tol = 1e-6;
  double init_scale = 0.01;
};

struct RetuneFit {
  ToyDecoder decoder;
  bool converged = true;
  int epochs = 0;
  double loss = 0.0;
};

// Fits W' = W + A B (A: V x rank zero-initialized, B: rank x h) on the
// forced-choice objective for `attribute`, whose value a maps to token
// offset + a. Everything else in the decoder stays frozen.
RetuneFit low_rank_retune(const ToyDecoder& dec, const EmbeddingSet& objective_law,
                          std::string_view attribute, int rank, std::uint64_t seed,
                          const RetuneOptions& opts = {});

// Same objective with an unconstrained V x h update.
RetuneFit refit_attribute_head(const ToyDecoder& dec, const EmbeddingSet& objective_law,
                               std::string_view attribute, const RetuneOptions& opts = {});

struct ForcedChoice {
  double accuracy = 0.0;
  double cross_entropy = 0.0;
};

// Argmax / softmax restricted to the attribute's token block.
ForcedChoice attribute_forced_choice(const ToyDecoder& dec, const EmbeddingSet& set,
                                     std::string_view attribute, std::int64_t token_offset);

void save_decoder(const ToyDecoder& dec, const std::filesystem::path& dir);
ToyDecoder load_decoder(const std::filesystem::path& dir);

}  // namespace gmilab
