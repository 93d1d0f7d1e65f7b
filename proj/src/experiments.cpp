#include "gmilab/experiments.hpp"

#include "gmilab/stats.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <random>
#include <thread>

namespace gmilab {

void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(n);
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < std::min(workers, n); ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

int decoder_vocab(const SynthConfig& cfg) {
  int v = cfg.targets();
  for (const auto& a : cfg.attributes) v += a.classes;
  return v;
}

std::int64_t attribute_token_offset(const SynthConfig& cfg, std::string_view attribute) {
  std::int64_t offset = cfg.targets();
  for (const auto& a : cfg.attributes) {
    if (a.name == attribute) return offset;
    offset += a.classes;
  }
  throw MissingAttributeError("synth config has no attribute '" + std::string(attribute) + "'");
}

SynthConfig sweep_base_config() {
  SynthConfig c;
  c.d = 16;
  c.text_dims = 8;
  c.signal_dims = 4;
  c.strata = 8;
  c.contexts = 2;
  c.n_per_stratum = 64;
  c.mean_scale = 1.0;
  c.within_scale = 0.5;
  c.nuisance_scale = 0.5;
  c.attributes = {{"topic", CarrierSpan::text_span, 0.5, 2}};
  return c;
}

SynthConfig ablation_fixture_config() {
  SynthConfig c;
  c.d = 16;
  c.text_dims = 11;
  c.signal_dims = 6;
  c.strata = 8;
  c.contexts = 2;
  c.n_per_stratum = 64;
  c.mean_scale = 0.4;
  c.within_scale = 0.5;
  c.nuisance_scale = 2.0;
  c.ms_noise_scale = 8.0;
  c.seed = 7;
  return c;
}

SynthConfig mode_fixture_config() {
  SynthConfig c;
  c.d = 16;
  c.text_dims = 10;
  c.signal_dims = 4;
  c.strata = 8;
  c.contexts = 2;
  c.n_per_stratum = 64;
  c.mean_scale = 1.0;
  c.within_scale = 0.5;
  c.nuisance_scale = 0.5;
  c.ms_noise_scale = 1.5;
  c.attributes = {{"timbre", CarrierSpan::ms_span, 4.0, 2}};
  c.seed = 11;
  return c;
}

SynthConfig retune_fixture_config() {
  SynthConfig c;
  c.d = 16;
  c.text_dims = 8;
  c.signal_dims = 4;
  c.strata = 8;
  c.contexts = 2;
  c.n_per_stratum = 64;
  c.mean_scale = 1.0;
  c.within_scale = 0.5;
  c.nuisance_scale = 0.5;
  c.ms_noise_scale = 0.5;
  c.attributes = {{"emotion", CarrierSpan::ms_span, 3.0, 2}, {"speaker", CarrierSpan::ms_span, 3.0, 2}};
  c.seed = 13;
  return c;
}

SynthConfig gap_fixture_config() {
  SynthConfig c = retune_fixture_config();
  c.attributes = {{"emotion", CarrierSpan::ms_span, 3.0, 2}};
  c.seed = 17;
  return c;
}

DecoderTrainOptions sweep_decoder_options() {
  DecoderTrainOptions o;
  o.init_scale = 0.01;
  return o;
}

DecoderTrainOptions ablation_decoder_options() {
  DecoderTrainOptions o;
  // Spare vocabulary rows keep the score floor well below the target tokens.
  o.vocab = 32;
  o.init_scale = 0.5;
  return o;
}

DecoderTrainOptions two_layer_decoder_options() {
  // A fixed high-gain tanh layer under a briefly trained readout: sharp
  // input sensitivity without the vanishing gradients of a saturated fit.
  DecoderTrainOptions o;
  o.hidden = 32;
  o.hidden_gain = 32.0;
  o.train_hidden = false;
  o.init_scale = 1.0;
  o.max_epochs = 50;
  return o;
}

SweepRow run_sweep_config(const SweepOptions& opts, std::size_t index) {
  SweepRow row;
  row.index = index;
  row.seed = derive_seed(opts.master_seed, 1000 + index);
  std::mt19937_64 rng(derive_seed(row.seed, 11));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  row.shift = opts.max_shift * unit(rng);
  row.rotation = opts.max_rotation * unit(rng);

  SynthConfig cfg = opts.base;
  cfg.seed = row.seed;
  cfg.shift = row.shift;
  cfg.rotation_angle = row.rotation;
  const GeneratedPair pair = generate_pair(cfg);
  const auto& laws = pair.laws;

  DecoderTrainOptions dopts = opts.decoder;
  dopts.vocab = decoder_vocab(cfg);
  const DecoderFit fit = train_decoder(laws.text(), derive_seed(row.seed, 12), dopts);
  row.decoder_converged = fit.converged;
  BoundOptions bopts = opts.bound;
  bopts.seed = derive_seed(row.seed, 13);
  row.bound = evaluate_bound(fit.decoder, laws, bopts);

  if (!opts.probe_attribute.empty()) {
    const auto& text = laws.text();
    const ProbeModel probe = train_probe_all(text.to_double(), text.label(opts.probe_attribute),
                                             text.num_classes(opts.probe_attribute));
    const double w1 = stratified_w1(laws, opts.probe_attribute, bopts.w1).value;
    row.probe = probe_penalty_check(probe, laws, opts.probe_attribute, w1);

    if (opts.asymmetry) {
      DecoderTrainOptions two = opts.two_layer;
      two.vocab = dopts.vocab;
      const DecoderFit deep = train_decoder(text, derive_seed(row.seed, 14), two);
      row.asymmetry = asymmetry_experiment(deep.decoder, probe, laws, opts.probe_attribute, bopts);
      row.has_asymmetry = true;
    }
    if (opts.gap) {
      const auto mi = pair.truth.mutual_information(LawTag::modal, opts.probe_attribute,
                                                    opts.mi_samples, derive_seed(row.seed, 15));
      row.gap = accessibility_gap(fit.decoder, laws.modal(), opts.probe_attribute, mi.value,
                                  mi.mc_std, attribute_token_offset(cfg, opts.probe_attribute));
      row.has_gap = true;
    }
  }
  return row;
}

SweepSummary summarize_sweep(const std::vector<SweepRow>& rows) {
  SweepSummary s;
  s.configs = rows.size();
  if (rows.empty()) return s;
  const double n = static_cast<double>(rows.size());
  std::vector<double> lw, lhs;
  std::size_t hs = 0, ha = 0, hsa = 0, probe = 0, order = 0, conv = 0, comp = 0, comp_ok = 0;
  std::size_t asym = 0, asym_ok = 0, gaps = 0, gap_ok = 0;
  s.min_gap = std::numeric_limits<double>::infinity();
  for (const auto& r : rows) {
    const auto& b = r.bound;
    hs += b.holds_support;
    ha += b.holds_ambient;
    hsa += b.holds_support_analytic;
    probe += r.probe.holds;
    conv += r.decoder_converged;
    lw.push_back(b.l_log.p95 * b.w1.value);
    lhs.push_back(b.lhs);
    const double se = std::hypot(b.gmi_text.std_error, b.gmi_modal.std_error);
    order += b.gmi_text.value >= b.gmi_modal.value - 3.0 * se;
    for (const auto* g : {&b.gmi_text, &b.gmi_modal})
      if (g->value > std::log(static_cast<double>(g->negatives_per_stratum)) + 1e-9) s.gmi_ceiling_ok = false;
    if (b.l_log.p95 * b.diameter.d_eff >= 1.0) {
      ++comp;
      comp_ok += b.delta_competition >= b.delta_direct;
    }
    if (r.has_asymmetry && r.asymmetry.w1 >= 1.0 && r.asymmetry.sensitivity_ratio >= 10.0) {
      ++asym;
      asym_ok += r.asymmetry.gmi_relative_drop > r.asymmetry.probe_relative_drop;
    }
    if (r.has_gap) {
      ++gaps;
      gap_ok += r.gap.gap >= -kGapTolerance;
      s.min_gap = std::min(s.min_gap, r.gap.gap);
    }
  }
  s.hold_rate_support = static_cast<double>(hs) / n;
  s.hold_rate_ambient = static_cast<double>(ha) / n;
  s.hold_rate_support_analytic = static_cast<double>(hsa) / n;
  s.probe_hold_rate = static_cast<double>(probe) / n;
  s.gmi_order_rate = static_cast<double>(order) / n;
  s.decoder_convergence_rate = static_cast<double>(conv) / n;
  s.competition_configs = comp;
  s.competition_dominance_rate = comp ? static_cast<double>(comp_ok) / static_cast<double>(comp) : 0.0;
  s.asymmetry_configs = asym;
  s.asymmetry_pass_rate = asym ? static_cast<double>(asym_ok) / static_cast<double>(asym) : 0.0;
  s.gap_nonnegative_rate = gaps ? static_cast<double>(gap_ok) / static_cast<double>(gaps) : 0.0;
  if (!gaps) s.min_gap = 0.0;
  if (rows.size() >= 3) {
    try {
      const auto t = spearman(lw, lhs);
      s.spearman_rho = t.statistic;
      s.spearman_p = t.p;
    } catch (const DegenerateInputError&) {
      s.spearman_rho = 0.0;
      s.spearman_p = 1.0;
    }
  }
  return s;
}

SweepResult run_sweep(const SweepOptions& opts) {
  SweepResult out;
  out.rows.resize(opts.configs);
  parallel_for(opts.configs, opts.jobs, [&](std::size_t i) { out.rows[i] = run_sweep_config(opts, i); });
  out.summary = summarize_sweep(out.rows);
  return out;
}

LadderResult run_shift_ladder(const SynthConfig& base, const std::vector<double>& deltas,
                              std::uint64_t decoder_seed, const DecoderTrainOptions& decoder,
                              const BoundOptions& bound) {
  SynthConfig cfg = base;
  cfg.shift = 0.0;
  DecoderTrainOptions dopts = decoder;
  dopts.vocab = decoder_vocab(cfg);
  // The text law does not depend on the shift, so one decoder serves the ladder.
  const DecoderFit fit = train_decoder(generate_pair(cfg).laws.text(), decoder_seed, dopts);
  LadderResult out;
  for (double delta : deltas) {
    cfg.shift = delta;
    const auto pair = generate_pair(cfg);
    const BoundReport b = evaluate_bound(fit.decoder, pair.laws, bound);
    out.rows.push_back({delta, b.lhs, b.gmi_modal.std_error, b.w1.value, b.bound_support});
  }
  for (std::size_t i = 1; i < out.rows.size(); ++i) {
    const auto& a = out.rows[i - 1];
    const auto& b = out.rows[i];
    if (b.lhs < a.lhs - 3.0 * std::hypot(a.se, b.se)) out.nondecreasing = false;
  }
  return out;
}

AblationExperiment run_ablation_experiment(const SynthConfig& cfg, std::uint64_t decoder_seed,
                                           const DecoderTrainOptions& decoder,
                                           const AblationOptions& ablation, Eigen::Index k,
                                           double threshold) {
  const auto pair = generate_pair(cfg);
  AblationExperiment e;
  DecoderTrainOptions dopts = decoder;
  dopts.vocab = std::max(dopts.vocab, decoder_vocab(cfg));
  e.fit = train_decoder(pair.laws.text(), decoder_seed, dopts);
  e.spectrum = mode_alignment(pair.laws.modal(), pair.laws.text(), k, threshold);
  const auto& modal = pair.laws.modal();
  e.none = run_ablation(e.fit.decoder, modal, e.spectrum, AblationCondition::none, ablation);
  e.ms_all = run_ablation(e.fit.decoder, modal, e.spectrum, AblationCondition::ms_all, ablation);
  e.ta_matched = run_ablation(e.fit.decoder, modal, e.spectrum, AblationCondition::ta_matched, ablation);
  e.random = run_ablation(e.fit.decoder, modal, e.spectrum, AblationCondition::random, ablation);
  return e;
}

ModeExperiment run_mode_experiment(const SynthConfig& cfg, Eigen::Index k, double threshold) {
  ModeExperiment e;
  const auto pair = generate_pair(cfg);
  e.non_aligned = mode_alignment(pair.laws.modal(), pair.laws.text(), k, threshold);
  const auto aligned = generate_pair(aligned_encoder_variant(cfg));
  e.aligned = mode_alignment(aligned.laws.modal(), aligned.laws.text(), k, threshold);
  return e;
}

namespace {

bool same_parameters(const ToyDecoder& a, const ToyDecoder& b) {
  auto eq = [](const auto& x, const auto& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::equal(x.data(), x.data() + x.size(), y.data());
  };
  return eq(a.W, b.W) && eq(a.b, b.b) && eq(a.context, b.context) && eq(a.hidden_w, b.hidden_w) &&
         eq(a.hidden_b, b.hidden_b);
}

}  // namespace

RetuneExperiment run_retune_experiment(const SynthConfig& cfg, std::string_view attribute,
                                       std::string_view control, int rank, std::uint64_t seed,
                                       const DecoderTrainOptions& decoder, RetuneOptions retune) {
  const auto pair = generate_pair(cfg);
  const auto& modal = pair.laws.modal();
  DecoderTrainOptions dopts = decoder;
  dopts.vocab = decoder_vocab(cfg);
  const DecoderFit fit = train_decoder(pair.laws.text(), derive_seed(seed, 1), dopts);
  const auto a_off = attribute_token_offset(cfg, attribute);
  const auto b_off = attribute_token_offset(cfg, control);

  RetuneExperiment e;
  e.attribute = std::string(attribute);
  e.control = std::string(control);
  e.target_before = attribute_forced_choice(fit.decoder, modal, attribute, a_off);
  e.control_before = attribute_forced_choice(fit.decoder, modal, control, b_off);
  retune.token_offset = a_off;
  e.fit = low_rank_retune(fit.decoder, modal, attribute, rank, derive_seed(seed, 2), retune);
  e.target_after = attribute_forced_choice(e.fit.decoder, modal, attribute, a_off);
  e.control_after = attribute_forced_choice(e.fit.decoder, modal, control, b_off);
  const RetuneFit noop = low_rank_retune(fit.decoder, modal, attribute, 0, derive_seed(seed, 2), retune);
  e.rank0_identical = same_parameters(noop.decoder, fit.decoder);
  return e;
}

GapExperiment run_gap_experiment(const SynthConfig& cfg, std::string_view attribute,
                                 std::uint64_t decoder_seed, const DecoderTrainOptions& decoder,
                                 std::size_t mi_samples) {
  const auto pair = generate_pair(cfg);
  DecoderTrainOptions dopts = decoder;
  dopts.vocab = decoder_vocab(cfg);
  const DecoderFit fit = train_decoder(pair.laws.text(), decoder_seed, dopts);
  const auto mi = pair.truth.mutual_information(LawTag::modal, attribute, mi_samples,
                                                derive_seed(decoder_seed, 3));
  GapExperiment e;
  e.attribute = std::string(attribute);
  e.gap = accessibility_gap(fit.decoder, pair.laws.modal(), attribute, mi.value, mi.mc_std,
                            attribute_token_offset(cfg, attribute));
  return e;
}

}  // namespace gmilab
