#pragma once

#include "gmilab/decoder.hpp"
#include "gmilab/gmi.hpp"
#include "gmilab/modes.hpp"
#include "gmilab/probe.hpp"
#include "gmilab/synth.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace gmilab {

// Runs fn(0..n-1) on up to `jobs` threads. Exceptions are collected per index
// and the first one (by index) is rethrown after every task has finished.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Decoder vocabulary for a synthetic config: the target tokens followed by
// one token block per attribute, in plan order.
int decoder_vocab(const SynthConfig& cfg);
std::int64_t attribute_token_offset(const SynthConfig& cfg, std::string_view attribute);

// Desk-scale fixtures.
SynthConfig sweep_base_config();
SynthConfig ablation_fixture_config();
SynthConfig mode_fixture_config();
SynthConfig retune_fixture_config();
SynthConfig gap_fixture_config();

DecoderTrainOptions sweep_decoder_options();
DecoderTrainOptions ablation_decoder_options();
DecoderTrainOptions two_layer_decoder_options();

struct SweepOptions {
  std::size_t configs = 200;
  std::uint64_t master_seed = 0;
  SynthConfig base = sweep_base_config();
  double max_shift = 3.0;
  double max_rotation = 1.0;  // radians
  DecoderTrainOptions decoder = sweep_decoder_options();
  DecoderTrainOptions two_layer = two_layer_decoder_options();
  BoundOptions bound;
  std::string probe_attribute = "topic";
  bool asymmetry = true;
  bool gap = true;
  std::size_t mi_samples = 100000;
  int jobs = 1;
};

struct SweepRow {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double shift = 0.0;
  double rotation = 0.0;
  bool decoder_converged = false;
  BoundReport bound;
  PenaltyCheck probe;
  bool has_asymmetry = false;
  AsymmetryReport asymmetry;
  bool has_gap = false;
  AccessGap gap;
};

struct SweepSummary {
  std::size_t configs = 0;
  double hold_rate_support = 0.0;
  double hold_rate_ambient = 0.0;
  double hold_rate_support_analytic = 0.0;
  double spearman_rho = 0.0;  // L_log * W1 vs |dGMI|
  double spearman_p = 1.0;
  double probe_hold_rate = 0.0;
  double gmi_order_rate = 0.0;  // GMI_T >= GMI_M - 3 se
  bool gmi_ceiling_ok = true;
  std::size_t competition_configs = 0;  // L * D_eff >= 1
  double competition_dominance_rate = 0.0;
  std::size_t asymmetry_configs = 0;  // W1 >= 1 and L_log / L_h >= 10
  double asymmetry_pass_rate = 0.0;
  double min_gap = 0.0;
  double gap_nonnegative_rate = 0.0;
  double decoder_convergence_rate = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepSummary summary;
};

SweepRow run_sweep_config(const SweepOptions& opts, std::size_t index);
SweepSummary summarize_sweep(const std::vector<SweepRow>& rows);
SweepResult run_sweep(const SweepOptions& opts);

struct LadderRow {
  double delta = 0.0;
  double lhs = 0.0;
  double se = 0.0;  // std error of the modal GMI estimate
  double w1 = 0.0;
  double bound_support = 0.0;
};

struct LadderResult {
  std::vector<LadderRow> rows;
  bool nondecreasing = true;  // within 3 combined std errors
};

LadderResult run_shift_ladder(const SynthConfig& base, const std::vector<double>& deltas,
                              std::uint64_t decoder_seed,
                              const DecoderTrainOptions& decoder = sweep_decoder_options(),
                              const BoundOptions& bound = {});

struct AblationExperiment {
  ModeSpectrum spectrum;
  AblationReport none, ms_all, ta_matched, random;
  DecoderFit fit;
};

AblationExperiment run_ablation_experiment(const SynthConfig& cfg, std::uint64_t decoder_seed,
                                           const DecoderTrainOptions& decoder,
                                           const AblationOptions& ablation = {},
                                           Eigen::Index k = 0,
                                           double threshold = kDefaultAlignmentThreshold);

struct ModeExperiment {
  ModeSpectrum non_aligned;
  ModeSpectrum aligned;
};

ModeExperiment run_mode_experiment(const SynthConfig& cfg, Eigen::Index k = 0,
                                   double threshold = kDefaultAlignmentThreshold);

struct RetuneExperiment {
  std::string attribute;
  std::string control;
  ForcedChoice target_before, target_after;
  ForcedChoice control_before, control_after;
  RetuneFit fit;
  bool rank0_identical = false;
};

RetuneExperiment run_retune_experiment(const SynthConfig& cfg, std::string_view attribute,
                                       std::string_view control, int rank, std::uint64_t seed,
                                       const DecoderTrainOptions& decoder = sweep_decoder_options(),
                                       RetuneOptions retune = {});

struct GapExperiment {
  std::string attribute;
  AccessGap gap;
};

GapExperiment run_gap_experiment(const SynthConfig& cfg, std::string_view attribute,
                                 std::uint64_t decoder_seed,
                                 const DecoderTrainOptions& decoder = sweep_decoder_options(),
                                 std::size_t mi_samples = 100000);

}  // namespace gmilab
