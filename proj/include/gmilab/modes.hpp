#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"
#include "gmilab/decoder.hpp"
#include "gmilab/stats.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace gmilab {

enum class ModeClass { ms, ta };

inline constexpr double kDefaultAlignmentThreshold = 0.5;
inline constexpr Eigen::Index kDefaultModeCount = 100;
// Modes with lambda_k <= kModeDropRatio * lambda_1 are not classified.
inline constexpr double kModeDropRatio = 1e-10;

// Eigenmodes of the modal covariance scored against the text covariance.
// `basis` holds only the classified modes; `dropped_modes` counts the
// near-zero modes removed from the requested top-k.
struct ModeSpectrum {
  EigenBasis basis;
  std::vector<double> alignment;
  std::vector<ModeClass> classification;
  double ms_variance_share = 0.0;
  double threshold = kDefaultAlignmentThreshold;
  std::size_t requested_modes = 0;
  std::size_t dropped_modes = 0;

  std::vector<std::size_t> ms_modes() const;
  std::vector<std::size_t> ta_modes() const;
};

// k <= 0 selects min(100, d).
ModeSpectrum mode_alignment(const Mat& modal, const Mat& text, Eigen::Index k = 0,
                            double threshold = kDefaultAlignmentThreshold);
ModeSpectrum mode_alignment(const EmbeddingSet& modal, const EmbeddingSet& text,
                            Eigen::Index k = 0, double threshold = kDefaultAlignmentThreshold);

// z' = z - sum_{k in modes} (z . u_k) u_k, row-wise and uncentered.
Mat project_out(const Mat& z, const EigenBasis& basis, const std::vector<std::size_t>& modes);

enum class AblationCondition { none, ms_all, ta_matched, random };

std::string_view to_string(AblationCondition c);
AblationCondition parse_ablation_condition(std::string_view s);

struct AblationOptions {
  std::size_t samples = 200;   // rows drawn from the modal set
  std::uint64_t seed = 0;      // row subset and the first random-mode seed
  int random_seeds = 5;        // random condition: seeds seed+1 .. seed+random_seeds
};

struct AblationReport {
  AblationCondition condition = AblationCondition::none;
  std::size_t modes_removed = 0;
  std::vector<std::size_t> removed;  // mode indices (first seed for random)
  double variance_removed_pct = 0.0;       // of the classified spectrum
  double trace_variance_removed_pct = 0.0; // of the full modal trace
  double base_loss = 0.0;
  double ablated_loss = 0.0;
  double delta_loss_pct = 0.0;
  double t = 0.0;
  double p = 1.0;
  std::size_t n_samples = 0;
  std::vector<std::uint64_t> seeds;  // random condition
  std::vector<double> per_seed_delta_pct;
  bool degenerate = false;  // no MS modes: nothing to ablate
};

// Cross-entropy change after projecting the condition's modes out of the
// modal inputs. Deltas are per-sample (ablated - base); the random condition
// averages the per-sample deltas over its seeds before the paired t test.
AblationReport run_ablation(const ToyDecoder& dec, const EmbeddingSet& modal,
                            const ModeSpectrum& spectrum, AblationCondition condition,
                            const AblationOptions& opts = {});

}  // namespace gmilab
