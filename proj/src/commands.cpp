#include "gmilab/commands.hpp"

#include "gmilab/experiments.hpp"
#include "gmilab/npy.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

namespace gmilab {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- defaults

// Sweeps train one decoder per configuration with seeds derived per row, so
// their decoder blocks carry no seed, checkpoint or save flag.
Json decoder_defaults(const DecoderTrainOptions& o, bool single = true) {
  Json j = {{"vocab", o.vocab},
            {"hidden", o.hidden},
            {"init_scale", o.init_scale},
            {"hidden_gain", o.hidden_gain},
            {"train_hidden", o.train_hidden},
            {"max_epochs", o.max_epochs},
            {"grad_tol", o.grad_tol}};
  if (single) {
    j["seed"] = nullptr;
    j["checkpoint"] = nullptr;
    j["save"] = true;
  }
  return j;
}

Json w1_defaults() {
  const W1Options o;
  return {{"method", std::string(to_string(o.method))},
          {"projections", o.projections},
          {"epsilon", o.epsilon},
          {"max_iter", o.max_iter},
          {"seed", nullptr}};
}

Json source_defaults(const SynthConfig& synth) {
  return {{"synth", to_json(synth)}, {"modal", nullptr}, {"text", nullptr}};
}

Json merge_objects(Json base, const Json& extra) {
  for (auto& [k, v] : extra.items()) base[k] = v;
  return base;
}

Json defaults_for(std::string_view cmd) {
  Json d = {{"seed", 0}};
  if (cmd == "probe") {
    return merge_objects(d, {{"layers", Json::array()},
                             {"synth", nullptr},
                             {"attributes", Json::array()},
                             {"seeds", kProbeSeeds},
                             {"reg_c", 1.0},
                             {"train_fraction", 0.8},
                             {"max_epochs", 500},
                             {"grad_tol", 1e-5}});
  }
  if (cmd == "modes") {
    return merge_objects(merge_objects(d, source_defaults(mode_fixture_config())),
                         {{"k", kDefaultModeCount},
                          {"threshold", kDefaultAlignmentThreshold},
                          {"aligned_variant", false},
                          {"dump_npy", false}});
  }
  if (cmd == "ablate") {
    const AblationOptions a;
    return merge_objects(merge_objects(d, source_defaults(ablation_fixture_config())),
                         {{"decoder", decoder_defaults(ablation_decoder_options())},
                          {"k", kDefaultModeCount},
                          {"threshold", kDefaultAlignmentThreshold},
                          {"samples", a.samples},
                          {"random_seeds", a.random_seeds},
                          {"ablation_seed", nullptr}});
  }
  if (cmd == "bound") {
    SynthConfig s = sweep_base_config();
    s.shift = 1.5;
    s.rotation_angle = 0.5;
    return merge_objects(merge_objects(d, source_defaults(s)),
                         {{"decoder", decoder_defaults(sweep_decoder_options())},
                          {"w1", w1_defaults()},
                          {"pool", "context"},
                          {"lipschitz_samples", 1000},
                          {"lipschitz", nullptr},
                          {"isotropy", true},
                          {"k", kDefaultModeCount},
                          {"threshold", kDefaultAlignmentThreshold}});
  }
  if (cmd == "sweep") {
    const SweepOptions o;
    return merge_objects(d, {{"configs", o.configs},
                             {"base", to_json(o.base)},
                             {"max_shift", o.max_shift},
                             {"max_rotation", o.max_rotation},
                             {"decoder", decoder_defaults(o.decoder, false)},
                             {"two_layer", decoder_defaults(o.two_layer, false)},
                             {"w1", w1_defaults()},
                             {"pool", "context"},
                             {"lipschitz_samples", 1000},
                             {"probe_attribute", o.probe_attribute},
                             {"asymmetry", o.asymmetry},
                             {"gap", o.gap},
                             {"mi_samples", o.mi_samples},
                             {"ladder", {0.0, 0.5, 1.0, 2.0, 4.0}}});
  }
  if (cmd == "retune") {
    const RetuneOptions r;
    return merge_objects(merge_objects(d, source_defaults(retune_fixture_config())),
                         {{"decoder", decoder_defaults(sweep_decoder_options())},
                          {"attribute", "emotion"},
                          {"control", "speaker"},
                          {"rank", 1},
                          {"token_offsets", nullptr},
                          {"retune",
                           {{"max_epochs", r.max_epochs},
                            {"grad_tol", r.grad_tol},
                            {"init_scale", r.init_scale},
                            {"seed", nullptr}}}});
  }
  if (cmd == "gap") {
    return merge_objects(merge_objects(d, source_defaults(gap_fixture_config())),
                         {{"decoder", decoder_defaults(sweep_decoder_options())},
                          {"attributes", Json::array()},
                          {"mi_samples", 100000},
                          {"mi", nullptr},
                          {"token_offsets", nullptr}});
  }
  if (cmd == "synth") {
    return merge_objects(d, {{"synth", to_json(sweep_base_config())}, {"mi_samples", 100000}});
  }
  throw ConfigError("unknown subcommand '" + std::string(cmd) + "'");
}

// Keys whose value is taken verbatim (free-form or validated elsewhere).
const std::set<std::string> kOpaqueKeys = {"layers", "attributes", "seeds",
                                           "ladder", "token_offsets", "mi", "lipschitz",
                                           "checkpoint", "modal", "text", "seed"};

void overlay(Json& target, const Json& user, const std::string& where) {
  if (!user.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto& [k, v] : user.items()) {
    if (!target.contains(k)) throw ConfigError("unknown config key '" + where + k + "'");
    // Synthetic configs are merged key-wise onto the default fixture and
    // validated when the config is resolved.
    if ((k == "synth" || k == "base") && v.is_object()) {
      target[k] = merge_objects(target[k].is_object() ? target[k] : to_json(sweep_base_config()), v);
      continue;
    }
    if (target[k].is_object() && !kOpaqueKeys.count(k) && !v.is_null())
      overlay(target[k], v, where + k + ".");
    else
      target[k] = v;
  }
}

std::uint64_t as_seed(const Json& j, const std::string& name) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  throw ConfigError("'" + name + "' must be a non-negative integer");
}

// Replaces null seeds with values derived from the master seed so the
// resolved config records every seed actually used.
void fill_seed(Json& obj, const char* key, std::uint64_t master, std::uint64_t stream) {
  if (obj.contains(key) && obj[key].is_null()) obj[key] = derive_seed(master, stream);
}

// ---------------------------------------------------------------- parsing

DecoderTrainOptions decoder_options(const Json& j) {
  DecoderTrainOptions o;
  o.vocab = j.at("vocab").get<int>();
  o.hidden = j.at("hidden").get<int>();
  o.init_scale = j.at("init_scale").get<double>();
  o.hidden_gain = j.at("hidden_gain").get<double>();
  o.train_hidden = j.at("train_hidden").get<bool>();
  o.max_epochs = j.at("max_epochs").get<int>();
  o.grad_tol = j.at("grad_tol").get<double>();
  return o;
}

W1Options w1_options(const Json& j) {
  W1Options o;
  o.method = parse_w1_method(j.at("method").get<std::string>());
  o.projections = j.at("projections").get<int>();
  o.epsilon = j.at("epsilon").get<double>();
  o.max_iter = j.at("max_iter").get<int>();
  o.seed = as_seed(j.at("seed"), "w1.seed");
  return o;
}

// ---------------------------------------------------------------- run state

class RunLog {
 public:
  explicit RunLog(const fs::path& path) : out_(path) {
    if (!out_) throw MissingFileError("cannot open log file " + path.string());
  }

  void line(const std::string& msg) {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    out_ << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ") << ' ' << msg << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

struct Run {
  fs::path out;
  int jobs = 1;
  Json cfg;
  RunLog log;
  std::vector<std::string> failures;

  fs::path results(const std::string& name) const { return out / "results" / name; }
  fs::path plots(const std::string& name) const { return out / "plots" / name; }

  void fail(const std::string& unit, const std::string& msg) {
    failures.push_back(unit + ": " + msg);
    log.line("FAILED " + unit + ": " + msg);
  }
};

struct Source {
  std::optional<GeneratedPair> synthetic;
  std::optional<PairedLaws> loaded;
  std::optional<SynthConfig> synth_cfg;

  const PairedLaws& laws() const { return synthetic ? synthetic->laws : *loaded; }
};

Source load_source(const Json& cfg) {
  Source s;
  const bool manifests = !cfg.at("modal").is_null() || !cfg.at("text").is_null();
  if (manifests) {
    if (cfg.at("modal").is_null() || cfg.at("text").is_null())
      throw ConfigError("'modal' and 'text' manifests must be given together");
    s.loaded.emplace(load_embedding_set(cfg.at("modal").get<std::string>()),
                     load_embedding_set(cfg.at("text").get<std::string>()));
    return s;
  }
  s.synth_cfg = synth_config_from_json(cfg.at("synth"));
  s.synthetic.emplace(generate_pair(*s.synth_cfg));
  return s;
}

ToyDecoder obtain_decoder(Run& run, const Json& dj, const Source& src, const std::string& name) {
  if (!dj.at("checkpoint").is_null()) {
    const fs::path dir = dj.at("checkpoint").get<std::string>();
    run.log.line("loading decoder from " + dir.string());
    return load_decoder(dir);
  }
  DecoderTrainOptions o = decoder_options(dj);
  if (o.vocab <= 0 && src.synth_cfg) o.vocab = decoder_vocab(*src.synth_cfg);
  run.log.line("training " + name);
  const DecoderFit fit = train_decoder(src.laws().text(), as_seed(dj.at("seed"), name + ".seed"), o);
  run.log.line(name + (fit.converged ? " converged" : " stopped") + " after " +
               std::to_string(fit.epochs) + " epochs, loss " + format_number(fit.loss));
  if (dj.at("save").get<bool>()) save_decoder(fit.decoder, run.out / name);
  write_json(run.results(name + "_fit.json"), {{"converged", fit.converged},
                                               {"epochs", fit.epochs},
                                               {"loss", json_number(fit.loss)},
                                               {"grad_norm", json_number(fit.grad_norm)}});
  return fit.decoder;
}

std::int64_t token_offset_for(const Json& cfg, const Source& src, const std::string& attribute) {
  const Json& offsets = cfg.at("token_offsets");
  if (offsets.is_object() && offsets.contains(attribute)) return offsets.at(attribute).get<std::int64_t>();
  if (src.synth_cfg) return attribute_token_offset(*src.synth_cfg, attribute);
  throw ConfigError("no token offset for attribute '" + attribute +
                    "'; set token_offsets when loading manifests");
}

Eigen::Index clamp_k(const Json& cfg, std::size_t d) {
  const auto k = cfg.at("k").get<Eigen::Index>();
  return k <= 0 ? 0 : std::min<Eigen::Index>(k, static_cast<Eigen::Index>(d));
}

CsvTable spectrum_table(const ModeSpectrum& s) {
  CsvTable t{{"mode", "lambda", "alignment", "class"}, {}};
  for (std::size_t k = 0; k < s.alignment.size(); ++k)
    t.add_row({std::to_string(k), format_number(s.basis.eigenvalues(static_cast<Eigen::Index>(k))),
               format_number(s.alignment[k]),
               s.classification[k] == ModeClass::ms ? "MS" : "TA"});
  return t;
}

// ---------------------------------------------------------------- commands

void cmd_synth(Run& run) {
  const SynthConfig cfg = synth_config_from_json(run.cfg.at("synth"));
  const GeneratedPair pair = generate_pair(cfg);
  write_embedding_set(pair.laws.modal(), run.out / "data" / "modal");
  write_embedding_set(pair.laws.text(), run.out / "data" / "text");
  run.log.line("wrote " + std::to_string(pair.laws.modal().rows()) + " rows per law");
  const auto samples = run.cfg.at("mi_samples").get<std::size_t>();
  Json mi = Json::object();
  CsvTable t{{"attribute", "law", "mi", "mc_std"}, {}};
  for (const auto& a : cfg.attributes) {
    for (LawTag law : {LawTag::modal, LawTag::text}) {
      const auto m = pair.truth.mutual_information(law, a.name, samples,
                                                   derive_seed(cfg.seed, 20 + (law == LawTag::text)));
      mi[a.name][std::string(to_string(law))] = {{"value", json_number(m.value)},
                                                 {"mc_std", json_number(m.mc_std)}};
      t.add_row({a.name, std::string(to_string(law)), format_number(m.value), format_number(m.mc_std)});
    }
  }
  write_json(run.results("synth.json"),
             {{"rows_per_law", pair.laws.modal().rows()}, {"dims", cfg.d}, {"mutual_information", mi}});
  write_csv(run.results("mutual_information.csv"), t);
}

void cmd_probe(Run& run) {
  struct Layer {
    std::string name;
    LayerTag tag;
    EmbeddingSet set;
  };
  std::vector<Layer> layers;
  const Json& cfg = run.cfg;
  for (const auto& l : cfg.at("layers")) {
    const std::string manifest = l.at("manifest").get<std::string>();
    EmbeddingSet set;
    try {
      set = load_embedding_set(manifest);
    } catch (const Error& e) {
      throw std::runtime_error("manifest " + manifest + ": " + e.what());
    }
    const LayerTag tag = l.contains("tag") ? parse_layer_tag(l.at("tag").get<std::string>()) : set.layer_tag;
    set.layer_tag = tag;
    layers.push_back({l.value("name", std::string(to_string(tag))), tag, std::move(set)});
  }
  if (!cfg.at("synth").is_null()) {
    const auto pair = generate_pair(synth_config_from_json(cfg.at("synth")));
    layers.push_back({"synthetic_text", LayerTag::synthetic, pair.laws.text()});
    layers.push_back({"synthetic_modal", LayerTag::synthetic, pair.laws.modal()});
  }
  if (layers.empty()) throw ConfigError("probe needs at least one entry in 'layers' or a 'synth' config");

  ProbeTrainOptions po;
  po.reg_c = cfg.at("reg_c").get<double>();
  po.train_fraction = cfg.at("train_fraction").get<double>();
  po.max_epochs = cfg.at("max_epochs").get<int>();
  po.grad_tol = cfg.at("grad_tol").get<double>();
  const auto seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
  const auto requested = cfg.at("attributes").get<std::vector<std::string>>();

  struct Unit {
    std::size_t layer;
    std::string attribute;
  };
  std::vector<Unit> units;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    std::vector<std::string> attrs = requested;
    if (attrs.empty())
      for (const auto& [name, _] : layers[i].set.labels)
        if (name != kTargetLabel && name != kContextLabel) attrs.push_back(name);
    for (auto& a : attrs) units.push_back({i, a});
  }

  std::vector<std::optional<ProbeResult>> results(units.size());
  std::vector<std::string> errors(units.size());
  parallel_for(units.size(), run.jobs, [&](std::size_t u) {
    const auto& layer = layers[units[u].layer];
    try {
      if (!layer.set.has_label(units[u].attribute))
        throw MissingAttributeError("attribute '" + units[u].attribute + "' not found in layer '" +
                                    layer.name + "'");
      results[u] = run_probe_protocol(layer.set, units[u].attribute, seeds, po);
    } catch (const std::exception& e) {
      errors[u] = e.what();
    }
  });

  CsvTable table{{"layer", "layer_tag", "attribute", "mean", "std", "chance", "all_converged"}, {}};
  CsvTable per_seed{{"layer", "attribute", "seed", "accuracy"}, {}};
  Json rows = Json::array();
  std::map<std::pair<LayerTag, std::string>, double> by_tag;
  for (std::size_t u = 0; u < units.size(); ++u) {
    const auto& layer = layers[units[u].layer];
    const std::string unit = layer.name + "/" + units[u].attribute;
    if (!results[u]) {
      run.fail(unit, errors[u]);
      continue;
    }
    const ProbeResult& r = *results[u];
    const bool conv = std::all_of(r.converged.begin(), r.converged.end(), [](bool c) { return c; });
    table.add_row({layer.name, std::string(to_string(layer.tag)), r.attribute, format_number(r.mean),
                   format_number(r.std), format_number(r.chance), conv ? "true" : "false"});
    for (std::size_t s = 0; s < r.seeds.size(); ++s)
      per_seed.add_row({layer.name, r.attribute, std::to_string(r.seeds[s]), format_number(r.per_seed[s])});
    Json j = to_json(r);
    j["layer"] = layer.name;
    rows.push_back(j);
    by_tag[{layer.tag, r.attribute}] = r.mean;
  }

  CsvTable retention{{"attribute", "adapter", "llm_final", "retention_pct"}, {}};
  for (const auto& [key, adapter] : by_tag) {
    if (key.first != LayerTag::adapter) continue;
    const auto fin = by_tag.find({LayerTag::llm_final, key.second});
    if (fin == by_tag.end() || adapter <= 0.0) continue;
    retention.add_row({key.second, format_number(adapter), format_number(fin->second),
                       format_number(100.0 * fin->second / adapter)});
  }
  write_json(run.results("probe.json"), rows);
  write_csv(run.results("probe.csv"), table);
  write_csv(run.results("retention.csv"), retention);
  write_csv(run.plots("probe_accuracy.csv"), per_seed);
}

void cmd_modes(Run& run) {
  const Source src = load_source(run.cfg);
  const auto& laws = src.laws();
  const double threshold = run.cfg.at("threshold").get<double>();
  const Eigen::Index k = clamp_k(run.cfg, laws.modal().dims());
  const ModeSpectrum s = mode_alignment(laws.modal(), laws.text(), k, threshold);
  run.log.line(std::to_string(s.ms_modes().size()) + " MS modes of " + std::to_string(s.alignment.size()));
  Json out = {{"spectrum", to_json(s)}};
  write_csv(run.plots("spectrum.csv"), spectrum_table(s));
  if (run.cfg.at("dump_npy").get<bool>()) {
    const Vec& ev = s.basis.eigenvalues;
    npy::write_f8(run.results("eigenvalues.npy"), {static_cast<std::size_t>(ev.size())}, ev.data());
    const std::vector<double> al(s.alignment.begin(), s.alignment.end());
    npy::write_f8(run.results("alignment.npy"), {al.size()}, al.data());
  }
  if (run.cfg.at("aligned_variant").get<bool>()) {
    if (!src.synth_cfg) throw ConfigError("aligned_variant needs a synth source");
    const auto aligned = generate_pair(aligned_encoder_variant(*src.synth_cfg));
    const ModeSpectrum a = mode_alignment(aligned.laws.modal(), aligned.laws.text(), k, threshold);
    out["aligned_spectrum"] = to_json(a);
    write_csv(run.plots("spectrum_aligned.csv"), spectrum_table(a));
  }
  write_json(run.results("modes.json"), out);
}

void cmd_ablate(Run& run) {
  const Source src = load_source(run.cfg);
  const auto& laws = src.laws();
  const ToyDecoder dec = obtain_decoder(run, run.cfg.at("decoder"), src, "decoder");
  const ModeSpectrum s = mode_alignment(laws.modal(), laws.text(), clamp_k(run.cfg, laws.modal().dims()),
                                        run.cfg.at("threshold").get<double>());
  AblationOptions ao;
  ao.samples = run.cfg.at("samples").get<std::size_t>();
  ao.random_seeds = run.cfg.at("random_seeds").get<int>();
  ao.seed = as_seed(run.cfg.at("ablation_seed"), "ablation_seed");

  const std::vector<AblationCondition> conds = {AblationCondition::none, AblationCondition::ms_all,
                                                AblationCondition::ta_matched, AblationCondition::random};
  std::vector<AblationReport> reports(conds.size());
  parallel_for(conds.size(), run.jobs,
               [&](std::size_t i) { reports[i] = run_ablation(dec, laws.modal(), s, conds[i], ao); });

  CsvTable t{{"condition", "modes_removed", "variance_removed_pct", "trace_variance_removed_pct",
              "delta_loss_pct", "t", "p", "degenerate"},
             {}};
  CsvTable seeds{{"seed", "delta_loss_pct"}, {}};
  Json arr = Json::array();
  for (const auto& r : reports) {
    t.add_row({std::string(to_string(r.condition)), std::to_string(r.modes_removed),
               format_number(r.variance_removed_pct), format_number(r.trace_variance_removed_pct),
               format_number(r.delta_loss_pct), format_number(r.t), format_number(r.p),
               r.degenerate ? "true" : "false"});
    for (std::size_t i = 0; i < r.per_seed_delta_pct.size(); ++i)
      seeds.add_row({std::to_string(r.seeds[i]), format_number(r.per_seed_delta_pct[i])});
    arr.push_back(to_json(r));
  }
  write_json(run.results("ablation.json"), {{"spectrum", to_json(s)}, {"conditions", arr}});
  write_csv(run.results("ablation.csv"), t);
  write_csv(run.plots("ablation_random_seeds.csv"), seeds);
  write_csv(run.plots("spectrum.csv"), spectrum_table(s));
}

BoundOptions bound_options(const Json& cfg, std::uint64_t seed) {
  BoundOptions b;
  b.w1 = w1_options(cfg.at("w1"));
  b.gmi.pool = parse_negative_pool(cfg.at("pool").get<std::string>());
  b.lipschitz_samples = cfg.at("lipschitz_samples").get<std::size_t>();
  b.seed = seed;
  return b;
}

void cmd_bound(Run& run) {
  const Source src = load_source(run.cfg);
  const auto& laws = src.laws();
  const ToyDecoder dec = obtain_decoder(run, run.cfg.at("decoder"), src, "decoder");
  BoundOptions b = bound_options(run.cfg, derive_seed(as_seed(run.cfg.at("seed"), "seed"), 4));
  if (!run.cfg.at("lipschitz").is_null()) {
    const fs::path p = run.cfg.at("lipschitz").get<std::string>();
    run.log.line("using gradient norms from " + p.string());
    b.lipschitz_override = load_lipschitz(p);
  }
  const BoundReport r = evaluate_bound(dec, laws, b);
  run.log.line(std::string("support bound ") + (r.holds_support ? "holds" : "violated"));
  write_json(run.results("bound.json"), to_json(r));

  CsvTable t{{"gmi_text", "gmi_modal", "lhs", "l_log", "w1", "d", "d_eff", "bound_ambient",
              "bound_support", "holds_ambient", "holds_support"},
             {}};
  t.add_row({format_number(r.gmi_text.value), format_number(r.gmi_modal.value), format_number(r.lhs),
             format_number(r.l_log.p95), format_number(r.w1.value), format_number(r.diameter.d),
             format_number(r.diameter.d_eff), format_number(r.bound_ambient), format_number(r.bound_support),
             r.holds_ambient ? "true" : "false", r.holds_support ? "true" : "false"});
  write_csv(run.results("bound.csv"), t);

  CsvTable norms{{"sample", "gradient_norm"}, {}};
  for (std::size_t i = 0; i < r.l_log.per_sample_norms.size(); ++i)
    norms.add_row({std::to_string(i), format_number(r.l_log.per_sample_norms[i])});
  write_csv(run.plots("gradient_norms.csv"), norms);

  if (run.cfg.at("isotropy").get<bool>()) {
    const ModeSpectrum s = mode_alignment(laws.modal(), laws.text(), clamp_k(run.cfg, laws.modal().dims()),
                                          run.cfg.at("threshold").get<double>());
    try {
      write_json(run.results("isotropy.json"), to_json(gradient_isotropy(dec, laws.modal(), s)));
    } catch (const PreconditionError& e) {
      run.log.line(std::string("isotropy skipped: ") + e.what());
      write_json(run.results("isotropy.json"), {{"skipped", e.what()}});
    }
  }
}

void cmd_sweep(Run& run) {
  const Json& cfg = run.cfg;
  SweepOptions o;
  o.configs = cfg.at("configs").get<std::size_t>();
  o.master_seed = as_seed(cfg.at("seed"), "seed");
  o.base = synth_config_from_json(cfg.at("base"));
  o.max_shift = cfg.at("max_shift").get<double>();
  o.max_rotation = cfg.at("max_rotation").get<double>();
  o.decoder = decoder_options(cfg.at("decoder"));
  o.two_layer = decoder_options(cfg.at("two_layer"));
  o.bound = bound_options(cfg, 0);
  o.probe_attribute = cfg.at("probe_attribute").get<std::string>();
  o.asymmetry = cfg.at("asymmetry").get<bool>();
  o.gap = cfg.at("gap").get<bool>();
  o.mi_samples = cfg.at("mi_samples").get<std::size_t>();
  o.jobs = run.jobs;

  run.log.line("sweeping " + std::to_string(o.configs) + " configurations on " + std::to_string(run.jobs) +
               " jobs");
  std::vector<std::optional<SweepRow>> rows(o.configs);
  std::vector<std::string> errors(o.configs);
  parallel_for(o.configs, run.jobs, [&](std::size_t i) {
    try {
      rows[i] = run_sweep_config(o, i);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });
  std::vector<SweepRow> ok;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i])
      ok.push_back(*rows[i]);
    else
      run.fail("config " + std::to_string(i), errors[i]);
  }

  CsvTable t{{"index", "seed", "shift", "rotation", "gmi_text", "gmi_modal", "lhs", "l_log", "w1", "d_eff",
              "bound_support", "holds_support", "delta_direct", "delta_competition", "probe_lhs", "probe_rhs",
              "probe_holds", "asym_ratio", "asym_w1", "probe_rel_drop", "gmi_rel_drop", "mi", "gap"},
             {}};
  CsvTable scaling{{"l_log_w1", "abs_delta_gmi"}, {}};
  for (const auto& r : ok) {
    const auto& b = r.bound;
    t.add_row({std::to_string(r.index), std::to_string(r.seed), format_number(r.shift),
               format_number(r.rotation), format_number(b.gmi_text.value), format_number(b.gmi_modal.value),
               format_number(b.lhs), format_number(b.l_log.p95), format_number(b.w1.value),
               format_number(b.diameter.d_eff), format_number(b.bound_support),
               b.holds_support ? "true" : "false", format_number(b.delta_direct),
               format_number(b.delta_competition), format_number(r.probe.lhs), format_number(r.probe.rhs),
               r.probe.holds ? "true" : "false",
               r.has_asymmetry ? format_number(r.asymmetry.sensitivity_ratio) : "",
               r.has_asymmetry ? format_number(r.asymmetry.w1) : "",
               r.has_asymmetry ? format_number(r.asymmetry.probe_relative_drop) : "",
               r.has_asymmetry ? format_number(r.asymmetry.gmi_relative_drop) : "",
               r.has_gap ? format_number(r.gap.mi) : "", r.has_gap ? format_number(r.gap.gap) : ""});
    scaling.add_row({format_number(b.l_log.p95 * b.w1.value), format_number(b.lhs)});
  }
  write_csv(run.results("sweep.csv"), t);
  write_csv(run.plots("scaling.csv"), scaling);

  const SweepSummary s = summarize_sweep(ok);
  Json summary = {{"configs", s.configs},
                  {"failed_configs", o.configs - ok.size()},
                  {"hold_rate_support", s.hold_rate_support},
                  {"hold_rate_ambient", s.hold_rate_ambient},
                  {"hold_rate_support_analytic", s.hold_rate_support_analytic},
                  {"spearman_rho", json_number(s.spearman_rho)},
                  {"spearman_p", json_number(s.spearman_p)},
                  {"probe_hold_rate", s.probe_hold_rate},
                  {"gmi_order_rate", s.gmi_order_rate},
                  {"gmi_ceiling_ok", s.gmi_ceiling_ok},
                  {"competition_configs", s.competition_configs},
                  {"competition_dominance_rate", s.competition_dominance_rate},
                  {"asymmetry_configs", s.asymmetry_configs},
                  {"asymmetry_pass_rate", s.asymmetry_pass_rate},
                  {"min_gap", json_number(s.min_gap)},
                  {"gap_nonnegative_rate", s.gap_nonnegative_rate},
                  {"decoder_convergence_rate", s.decoder_convergence_rate}};

  const auto deltas = cfg.at("ladder").get<std::vector<double>>();
  if (!deltas.empty()) {
    DecoderTrainOptions d = o.decoder;
    const LadderResult ladder =
        run_shift_ladder(o.base, deltas, derive_seed(o.master_seed, 5), d, o.bound);
    CsvTable lt{{"delta", "abs_delta_gmi", "std_error", "w1", "bound_support"}, {}};
    for (const auto& r : ladder.rows)
      lt.add_row({format_number(r.delta), format_number(r.lhs), format_number(r.se), format_number(r.w1),
                  format_number(r.bound_support)});
    write_csv(run.results("ladder.csv"), lt);
    write_csv(run.plots("ladder.csv"), lt);
    summary["ladder_nondecreasing"] = ladder.nondecreasing;
  }
  write_json(run.results("summary.json"), summary);
  run.log.line("hold rate " + format_number(s.hold_rate_support) + ", spearman " +
               format_number(s.spearman_rho));
}

void cmd_retune(Run& run) {
  const Source src = load_source(run.cfg);
  const auto& modal = src.laws().modal();
  const ToyDecoder dec = obtain_decoder(run, run.cfg.at("decoder"), src, "decoder");
  const std::string attr = run.cfg.at("attribute").get<std::string>();
  const std::string control = run.cfg.at("control").get<std::string>();
  const int rank = run.cfg.at("rank").get<int>();
  const Json& rj = run.cfg.at("retune");
  RetuneOptions ro;
  ro.max_epochs = rj.at("max_epochs").get<int>();
  ro.grad_tol = rj.at("grad_tol").get<double>();
  ro.init_scale = rj.at("init_scale").get<double>();
  ro.token_offset = token_offset_for(run.cfg, src, attr);
  const std::int64_t control_offset = token_offset_for(run.cfg, src, control);

  const ForcedChoice a0 = attribute_forced_choice(dec, modal, attr, ro.token_offset);
  const ForcedChoice b0 = attribute_forced_choice(dec, modal, control, control_offset);
  const RetuneFit fit = low_rank_retune(dec, modal, attr, rank, as_seed(rj.at("seed"), "retune.seed"), ro);
  const ForcedChoice a1 = attribute_forced_choice(fit.decoder, modal, attr, ro.token_offset);
  const ForcedChoice b1 = attribute_forced_choice(fit.decoder, modal, control, control_offset);
  run.log.line("retune " + std::string(fit.converged ? "converged" : "stopped") + " after " +
               std::to_string(fit.epochs) + " epochs");

  CsvTable t{{"attribute", "role", "accuracy_before", "accuracy_after", "delta_points", "ce_before",
              "ce_after"},
             {}};
  auto row = [&](const std::string& name, const char* role, const ForcedChoice& b, const ForcedChoice& a) {
    t.add_row({name, role, format_number(b.accuracy), format_number(a.accuracy),
               format_number(100.0 * (a.accuracy - b.accuracy)), format_number(b.cross_entropy),
               format_number(a.cross_entropy)});
  };
  row(attr, "target", a0, a1);
  row(control, "control", b0, b1);
  write_csv(run.results("retune.csv"), t);
  write_json(run.results("retune.json"),
             {{"attribute", attr},
              {"control", control},
              {"rank", rank},
              {"converged", fit.converged},
              {"epochs", fit.epochs},
              {"loss", json_number(fit.loss)},
              {"target", {{"before", to_json(a0)}, {"after", to_json(a1)}}},
              {"control_attribute", {{"before", to_json(b0)}, {"after", to_json(b1)}}}});
}

void cmd_gap(Run& run) {
  const Source src = load_source(run.cfg);
  const auto& modal = src.laws().modal();
  const ToyDecoder dec = obtain_decoder(run, run.cfg.at("decoder"), src, "decoder");
  auto attrs = run.cfg.at("attributes").get<std::vector<std::string>>();
  if (attrs.empty()) {
    if (src.synth_cfg)
      for (const auto& a : src.synth_cfg->attributes) attrs.push_back(a.name);
    else
      throw ConfigError("gap on loaded manifests needs an explicit 'attributes' list");
  }
  const auto samples = run.cfg.at("mi_samples").get<std::size_t>();
  const std::uint64_t master = as_seed(run.cfg.at("seed"), "seed");
  CsvTable t{{"attribute", "mi", "mi_std", "gmi", "gap", "negative"}, {}};
  Json arr = Json::array();
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const std::string& a = attrs[i];
    try {
      double mi = 0.0, mi_std = 0.0;
      const Json& given = run.cfg.at("mi");
      if (given.is_object() && given.contains(a)) {
        mi = given.at(a).get<double>();
      } else if (src.synthetic) {
        const auto m = src.synthetic->truth.mutual_information(LawTag::modal, a, samples,
                                                               derive_seed(master, 30 + i));
        mi = m.value;
        mi_std = m.mc_std;
      } else {
        throw ConfigError("no ground-truth mutual information for '" + a + "'; set mi." + a);
      }
      const AccessGap g = accessibility_gap(dec, modal, a, mi, mi_std, token_offset_for(run.cfg, src, a));
      t.add_row({a, format_number(g.mi), format_number(g.mi_std), format_number(g.gmi.value),
                 format_number(g.gap), g.negative ? "true" : "false"});
      Json j = to_json(g);
      j["attribute"] = a;
      arr.push_back(j);
    } catch (const std::exception& e) {
      run.fail("attribute " + a, e.what());
    }
  }
  write_json(run.results("gap.json"), arr);
  write_csv(run.results("gap.csv"), t);
}

}  // namespace

std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("GMI_LAB_SEED");
  if (!v || !*v) return std::nullopt;
  try {
    std::size_t pos = 0;
    const std::string s(v);
    if (s.front() == '-') throw std::invalid_argument("negative");
    const unsigned long long seed = std::stoull(s, &pos, 10);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return static_cast<std::uint64_t>(seed);
  } catch (const std::exception&) {
    throw ConfigError(std::string("GMI_LAB_SEED must be a non-negative integer, got '") + v + "'");
  }
}

Json resolve_config(std::string_view subcommand, const Json& config,
                    std::optional<std::uint64_t> seed_override) {
  Json r = defaults_for(subcommand);
  if (!config.is_null()) overlay(r, config, "");
  if (seed_override) r["seed"] = *seed_override;
  const std::uint64_t master = as_seed(r.at("seed"), "seed");

  auto synth_seed = [&](const char* key, const Json& user_obj) {
    if (!r.contains(key) || r[key].is_null()) return;
    const bool user_seed = user_obj.is_object() && user_obj.contains(key) && user_obj[key].is_object() &&
                           user_obj[key].contains("seed");
    if (!user_seed) r[key]["seed"] = derive_seed(master, 1);
    // Validates the synthetic config early and fills its defaults.
    r[key] = to_json(synth_config_from_json(r[key]));
  };
  synth_seed("synth", config);
  synth_seed("base", config);
  if (r.contains("decoder")) fill_seed(r["decoder"], "seed", master, 2);
  if (r.contains("w1")) fill_seed(r["w1"], "seed", master, 3);
  if (r.contains("retune")) fill_seed(r["retune"], "seed", master, 7);
  fill_seed(r, "ablation_seed", master, 8);
  return r;
}

RunOutcome run_subcommand(std::string_view subcommand, const Json& config, const RunOptions& opts) {
  RunOutcome outcome;
  outcome.resolved_config = resolve_config(subcommand, config, opts.seed_override);
  fs::create_directories(opts.out / "results");
  fs::create_directories(opts.out / "plots");
  Json with_cmd = {{"subcommand", std::string(subcommand)}, {"config", outcome.resolved_config}};
  write_json(opts.out / "config.json", with_cmd);

  Run run{opts.out, std::max(1, opts.jobs), outcome.resolved_config, RunLog(opts.out / "run.log"), {}};
  run.log.line("start " + std::string(subcommand));
  static const std::map<std::string, std::function<void(Run&)>, std::less<>> table = {
      {"probe", cmd_probe}, {"modes", cmd_modes},   {"ablate", cmd_ablate}, {"bound", cmd_bound},
      {"sweep", cmd_sweep}, {"retune", cmd_retune}, {"gap", cmd_gap},       {"synth", cmd_synth}};
  table.find(subcommand)->second(run);
  outcome.failures = run.failures;
  outcome.exit_code = run.failures.empty() ? 0 : 1;
  run.log.line(outcome.exit_code == 0 ? "done"
                                      : "done with " + std::to_string(run.failures.size()) + " failed units");
  if (!run.failures.empty()) write_json(run.results("failures.json"), run.failures);
  return outcome;
}

}  // namespace gmilab
