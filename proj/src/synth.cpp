#include "gmilab/synth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

namespace gmilab {

namespace {

using json = nlohmann::json;

double centered(int value, int classes) { return value - 0.5 * (classes - 1); }

int combos(const SynthConfig& cfg) {
  int n = 1;
  for (const auto& a : cfg.attributes) n *= a.classes;
  return n;
}

// Mixed-radix decode of a combination index into one value per attribute.
std::vector<int> decode_combo(const SynthConfig& cfg, int index) {
  std::vector<int> out(cfg.attributes.size());
  for (std::size_t j = 0; j < cfg.attributes.size(); ++j) {
    out[j] = index % cfg.attributes[j].classes;
    index /= cfg.attributes[j].classes;
  }
  return out;
}

Vec random_unit_in_span(std::mt19937_64& rng, int begin, int end, int d,
                        const std::vector<Vec>& avoid) {
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int attempt = 0; attempt < 64; ++attempt) {
    Vec v = Vec::Zero(d);
    for (int i = begin; i < end; ++i) v(i) = normal(rng);
    for (const auto& u : avoid) v -= u.dot(v) * u;
    const double n = v.norm();
    if (n > 1e-8) return v / n;
  }
  throw ConfigError("could not draw a direction orthogonal to the existing carriers");
}

// Shared whitening of one law's components.
struct Whitened {
  Eigen::LLT<Mat> llt;
  double log_norm = 0.0;  // -0.5 d log(2 pi) - sum log L_ii
};

Whitened whiten(const Mat& cov) {
  Whitened w;
  w.llt.compute(cov);
  if (w.llt.info() != Eigen::Success) throw DegenerateInputError("law covariance is not positive definite");
  const Mat l = w.llt.matrixL();
  w.log_norm = -0.5 * static_cast<double>(cov.rows()) * std::log(2.0 * std::numbers::pi) -
               l.diagonal().array().log().sum();
  return w;
}

double log_sum_exp(const std::vector<double>& v) {
  const double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace

std::string_view to_string(CarrierSpan c) {
  return c == CarrierSpan::text_span ? "text_span" : "ms_span";
}

CarrierSpan parse_carrier_span(std::string_view s) {
  if (s == "text_span") return CarrierSpan::text_span;
  if (s == "ms_span") return CarrierSpan::ms_span;
  throw ConfigError("unknown carrier span '" + std::string(s) + "' (expected text_span or ms_span)");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void validate(const SynthConfig& c) {
  auto fail = [](const std::string& m) { throw ConfigError("invalid synth config: " + m); };
  if (c.d < 1) fail("d must be >= 1");
  if (c.text_dims < 0 || c.text_dims > c.d) fail("text_dims must lie in [0, d]");
  if (c.signal_dims < 0 || c.signal_dims > c.text_dims) fail("signal_dims must lie in [0, text_dims]");
  if (c.strata < 1) fail("strata must be >= 1");
  if (c.contexts < 1 || c.strata % c.contexts != 0) fail("contexts must divide strata");
  if (c.n_per_stratum < 2) fail("n_per_stratum must be >= 2");
  for (auto [name, v] : {std::pair{"mean_scale", c.mean_scale}, {"within_scale", c.within_scale},
                         {"nuisance_scale", c.nuisance_scale}, {"shift", c.shift},
                         {"rotation_angle", c.rotation_angle}, {"ms_noise_scale", c.ms_noise_scale}})
    if (!(v >= 0.0) || !std::isfinite(v)) fail(std::string(name) + " must be finite and >= 0");
  if (c.shift > 0.0 && c.text_dims < 1) fail("shift needs a non-empty text span");
  if (c.rotation_angle > 0.0 && c.text_dims < 2) fail("rotation needs text_dims >= 2");
  if (c.ms_noise_scale > 0.0 && c.ms_dims() < 1) fail("ms_noise_scale needs a non-empty ms span");
  std::set<std::string> names;
  int text_carriers = 0, ms_carriers = 0;
  for (const auto& a : c.attributes) {
    if (a.name.empty()) fail("attribute names must be non-empty");
    if (a.name == kTargetLabel || a.name == kContextLabel) fail("attribute name '" + a.name + "' is reserved");
    if (!names.insert(a.name).second) fail("duplicate attribute '" + a.name + "'");
    if (a.classes < 2) fail("attribute '" + a.name + "' needs classes >= 2");
    if (!(a.separation >= 0.0) || !std::isfinite(a.separation))
      fail("attribute '" + a.name + "' separation must be finite and >= 0");
    (a.carrier == CarrierSpan::text_span ? text_carriers : ms_carriers)++;
  }
  if (text_carriers > c.text_dims) fail("more text-span attributes than text dimensions");
  if (ms_carriers > c.ms_dims()) fail("more ms-span attributes than ms dimensions");
}

json to_json(const SynthConfig& c) {
  json j;
  j["d"] = c.d;
  j["text_dims"] = c.text_dims;
  j["signal_dims"] = c.signal_dims;
  j["strata"] = c.strata;
  j["contexts"] = c.contexts;
  j["n_per_stratum"] = c.n_per_stratum;
  j["mean_scale"] = c.mean_scale;
  j["within_scale"] = c.within_scale;
  j["nuisance_scale"] = c.nuisance_scale;
  j["shift"] = c.shift;
  j["rotation_angle"] = c.rotation_angle;
  j["ms_noise_scale"] = c.ms_noise_scale;
  j["seed"] = c.seed;
  j["attributes"] = json::array();
  for (const auto& a : c.attributes)
    j["attributes"].push_back({{"name", a.name},
                               {"carrier", std::string(to_string(a.carrier))},
                               {"separation", a.separation},
                               {"classes", a.classes}});
  return j;
}

SynthConfig synth_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  static const std::set<std::string> known = {
      "d", "text_dims", "signal_dims", "strata", "contexts", "n_per_stratum", "mean_scale",
      "within_scale", "nuisance_scale", "shift", "rotation_angle", "ms_noise_scale", "seed",
      "attributes"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown synth config key '" + it.key() + "'");
  SynthConfig c;
  try {
    c.d = j.value("d", c.d);
    c.text_dims = j.value("text_dims", c.text_dims);
    c.signal_dims = j.value("signal_dims", c.signal_dims);
    c.strata = j.value("strata", c.strata);
    c.contexts = j.value("contexts", c.contexts);
    c.n_per_stratum = j.value("n_per_stratum", c.n_per_stratum);
    c.mean_scale = j.value("mean_scale", c.mean_scale);
    c.within_scale = j.value("within_scale", c.within_scale);
    c.nuisance_scale = j.value("nuisance_scale", c.nuisance_scale);
    c.shift = j.value("shift", c.shift);
    c.rotation_angle = j.value("rotation_angle", c.rotation_angle);
    c.ms_noise_scale = j.value("ms_noise_scale", c.ms_noise_scale);
    c.seed = j.value("seed", c.seed);
    if (j.contains("attributes")) {
      for (const auto& a : j.at("attributes")) {
        AttributePlan p;
        p.name = a.at("name").get<std::string>();
        p.carrier = parse_carrier_span(a.value("carrier", std::string("text_span")));
        p.separation = a.value("separation", p.separation);
        p.classes = a.value("classes", p.classes);
        c.attributes.push_back(std::move(p));
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed synth config: ") + e.what());
  }
  validate(c);
  return c;
}

GroundTruth::GroundTruth(const SynthConfig& cfg) : cfg_(cfg) {
  validate(cfg_);
  const int d = cfg_.d;
  std::mt19937_64 rng(derive_seed(cfg_.seed, 0));
  std::normal_distribution<double> normal(0.0, 1.0);

  stratum_means_ = Mat::Zero(cfg_.strata, d);
  for (int s = 0; s < cfg_.strata; ++s)
    for (int i = 0; i < cfg_.signal_dims; ++i) stratum_means_(s, i) = cfg_.mean_scale * normal(rng);

  shift_dir_ = Vec::Zero(d);
  if (cfg_.text_dims >= 1) shift_dir_ = random_unit_in_span(rng, 0, cfg_.text_dims, d, {});

  rotation_ = Mat::Identity(d, d);
  if (cfg_.text_dims >= 2) {
    const Vec p1 = random_unit_in_span(rng, 0, cfg_.text_dims, d, {});
    const Vec p2 = random_unit_in_span(rng, 0, cfg_.text_dims, d, {p1});
    const double c = std::cos(cfg_.rotation_angle), s = std::sin(cfg_.rotation_angle);
    rotation_ += (c - 1.0) * (p1 * p1.transpose() + p2 * p2.transpose()) +
                 s * (p2 * p1.transpose() - p1 * p2.transpose());
  }

  std::vector<Vec> text_carriers, ms_carriers;
  for (const auto& a : cfg_.attributes) {
    if (a.carrier == CarrierSpan::text_span) {
      carriers_.push_back(random_unit_in_span(rng, 0, cfg_.text_dims, d, text_carriers));
      text_carriers.push_back(carriers_.back());
    } else {
      carriers_.push_back(random_unit_in_span(rng, cfg_.text_dims, d, d, ms_carriers));
      ms_carriers.push_back(carriers_.back());
    }
  }
}

Mat GroundTruth::covariance(LawTag law) const {
  const int d = cfg_.d;
  Vec diag = Vec::Zero(d);
  for (int i = 0; i < cfg_.text_dims; ++i)
    diag(i) = i < cfg_.signal_dims ? cfg_.within_scale * cfg_.within_scale
                                   : cfg_.nuisance_scale * cfg_.nuisance_scale;
  Mat cov = diag.asDiagonal();
  if (law == LawTag::modal) {
    cov = rotation_ * cov * rotation_.transpose();
    for (int i = cfg_.text_dims; i < d; ++i) cov(i, i) += cfg_.ms_noise_scale * cfg_.ms_noise_scale;
  }
  cov.diagonal().array() += kJitter;
  return cov;
}

Vec GroundTruth::component_mean(LawTag law, int stratum, const std::vector<int>& attrs) const {
  if (stratum < 0 || stratum >= cfg_.strata) throw PreconditionError("stratum out of range");
  if (attrs.size() != cfg_.attributes.size())
    throw PreconditionError("component needs one value per attribute");
  Vec m = stratum_means_.row(stratum).transpose();
  for (std::size_t j = 0; j < attrs.size(); ++j) {
    const auto& a = cfg_.attributes[j];
    if (attrs[j] < 0 || attrs[j] >= a.classes) throw PreconditionError("attribute value out of range");
    if (a.carrier == CarrierSpan::text_span) m += a.separation * centered(attrs[j], a.classes) * carriers_[j];
  }
  if (law == LawTag::text) return m;
  Vec out = rotation_ * m + cfg_.shift * shift_dir_;
  for (std::size_t j = 0; j < attrs.size(); ++j) {
    const auto& a = cfg_.attributes[j];
    if (a.carrier == CarrierSpan::ms_span) out += a.separation * centered(attrs[j], a.classes) * carriers_[j];
  }
  return out;
}

double GroundTruth::log_density(LawTag law, int stratum, const std::vector<int>& attrs,
                                const Vec& z) const {
  const Whitened w = whiten(covariance(law));
  const Vec r = w.llt.matrixL().solve(z - component_mean(law, stratum, attrs));
  return w.log_norm - 0.5 * r.squaredNorm();
}

double GroundTruth::log_density(LawTag law, int stratum, const Vec& z) const {
  const Whitened w = whiten(covariance(law));
  const int n = combos(cfg_);
  std::vector<double> terms(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const Vec r = w.llt.matrixL().solve(z - component_mean(law, stratum, decode_combo(cfg_, k)));
    terms[static_cast<std::size_t>(k)] = w.log_norm - 0.5 * r.squaredNorm();
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(n));
}

GroundTruth::MonteCarlo GroundTruth::mutual_information(LawTag law, std::string_view attribute,
                                                        std::size_t samples,
                                                        std::uint64_t seed) const {
  std::size_t target = cfg_.attributes.size();
  for (std::size_t j = 0; j < cfg_.attributes.size(); ++j)
    if (cfg_.attributes[j].name == attribute) target = j;
  if (target == cfg_.attributes.size())
    throw MissingAttributeError("synth config has no attribute '" + std::string(attribute) + "'");
  if (samples < 2) throw PreconditionError("mutual information needs at least 2 samples");
  const int classes = cfg_.attributes[target].classes;

  const Whitened w = whiten(covariance(law));
  const int n_combo = combos(cfg_);
  // Whitened component means, indexed [stratum][combo].
  std::vector<std::vector<Vec>> wm(static_cast<std::size_t>(cfg_.strata));
  std::vector<std::vector<int>> combo_values(static_cast<std::size_t>(n_combo));
  for (int k = 0; k < n_combo; ++k) combo_values[static_cast<std::size_t>(k)] = decode_combo(cfg_, k);
  for (int s = 0; s < cfg_.strata; ++s)
    for (int k = 0; k < n_combo; ++k)
      wm[static_cast<std::size_t>(s)].push_back(
          w.llt.matrixL().solve(component_mean(law, s, combo_values[static_cast<std::size_t>(k)])));

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<int> pick_stratum(0, cfg_.strata - 1);
  std::uniform_int_distribution<int> pick_combo(0, n_combo - 1);
  const double h_a = std::log(static_cast<double>(classes));
  double sum = 0.0, sum_sq = 0.0;
  Vec eps(cfg_.d);
  std::vector<double> logits;
  std::vector<double> per_class(static_cast<std::size_t>(classes));
  for (std::size_t i = 0; i < samples; ++i) {
    const int s = pick_stratum(rng);
    const int k = pick_combo(rng);
    for (int t = 0; t < cfg_.d; ++t) eps(t) = normal(rng);
    // Whitened sample: L^{-1} (m + L eps) = L^{-1} m + eps.
    const Vec wz = wm[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)] + eps;
    const int c = s % cfg_.contexts;
    std::vector<std::vector<double>> by_class(static_cast<std::size_t>(classes));
    for (int s2 = c; s2 < cfg_.strata; s2 += cfg_.contexts)
      for (int k2 = 0; k2 < n_combo; ++k2) {
        const double lp = -0.5 * (wz - wm[static_cast<std::size_t>(s2)][static_cast<std::size_t>(k2)]).squaredNorm();
        by_class[static_cast<std::size_t>(combo_values[static_cast<std::size_t>(k2)][target])].push_back(lp);
      }
    for (int a = 0; a < classes; ++a) per_class[static_cast<std::size_t>(a)] = log_sum_exp(by_class[static_cast<std::size_t>(a)]);
    const double norm = log_sum_exp(per_class);
    double h = 0.0;
    for (double v : per_class) {
      const double lp = v - norm;
      if (lp > -745.0) h -= std::exp(lp) * lp;
    }
    const double contrib = h_a - h;
    sum += contrib;
    sum_sq += contrib * contrib;
  }
  MonteCarlo mc;
  mc.samples = samples;
  const double n = static_cast<double>(samples);
  mc.value = sum / n;
  const double var = std::max(0.0, sum_sq / n - mc.value * mc.value) * n / (n - 1.0);
  mc.mc_std = std::sqrt(var / n);
  return mc;
}

GroundTruth::MonteCarlo GroundTruth::normalization(LawTag law, int stratum, std::size_t samples,
                                                   std::uint64_t seed) const {
  if (samples < 2) throw PreconditionError("normalization check needs at least 2 samples");
  const int n_combo = combos(cfg_);
  Vec center = Vec::Zero(cfg_.d);
  std::vector<Vec> means;
  for (int k = 0; k < n_combo; ++k) {
    means.push_back(component_mean(law, stratum, decode_combo(cfg_, k)));
    center += means.back();
  }
  center /= n_combo;
  Mat spread = Mat::Zero(cfg_.d, cfg_.d);
  for (const auto& m : means) spread += (m - center) * (m - center).transpose();
  spread /= n_combo;
  const Mat proposal_cov = 1.6 * (covariance(law) + spread);
  const Whitened q = whiten(proposal_cov);
  const Mat lq = q.llt.matrixL();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec eps(cfg_.d);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < samples; ++i) {
    for (int t = 0; t < cfg_.d; ++t) eps(t) = normal(rng);
    const Vec z = center + lq * eps;
    const double log_q = q.log_norm - 0.5 * eps.squaredNorm();
    const double ratio = std::exp(log_density(law, stratum, z) - log_q);
    sum += ratio;
    sum_sq += ratio * ratio;
  }
  MonteCarlo mc;
  mc.samples = samples;
  const double n = static_cast<double>(samples);
  mc.value = sum / n;
  mc.mc_std = std::sqrt(std::max(0.0, sum_sq / n - mc.value * mc.value) / (n - 1.0));
  return mc;
}

GeneratedPair generate_pair(const SynthConfig& cfg) {
  GroundTruth truth(cfg);
  const int d = cfg.d;
  const std::size_t n = static_cast<std::size_t>(cfg.strata) * static_cast<std::size_t>(cfg.n_per_stratum);
  std::mt19937_64 latent(derive_seed(cfg.seed, 1));
  std::mt19937_64 ms_rng(derive_seed(cfg.seed, 2));
  std::mt19937_64 attr_rng(derive_seed(cfg.seed, 3));
  std::normal_distribution<double> normal(0.0, 1.0);

  FloatMat text(static_cast<Eigen::Index>(n), d), modal(static_cast<Eigen::Index>(n), d);
  LabelVector strata(n), ctx(n), target(n);
  std::vector<LabelVector> attr_labels(cfg.attributes.size(), LabelVector(n));
  std::size_t row = 0;
  std::vector<int> values(cfg.attributes.size());
  for (int s = 0; s < cfg.strata; ++s) {
    for (int r = 0; r < cfg.n_per_stratum; ++r, ++row) {
      for (std::size_t j = 0; j < values.size(); ++j) {
        std::uniform_int_distribution<int> pick(0, cfg.attributes[j].classes - 1);
        values[j] = pick(attr_rng);
        attr_labels[j][row] = values[j];
      }
      Vec x = truth.component_mean(LawTag::text, s, values);
      for (int i = 0; i < cfg.text_dims; ++i) {
        const double scale = i < cfg.signal_dims ? cfg.within_scale : cfg.nuisance_scale;
        x(i) += scale * normal(latent);
      }
      Vec m = truth.rotation() * x + cfg.shift * truth.shift_direction();
      for (int i = cfg.text_dims; i < d; ++i) m(i) += cfg.ms_noise_scale * normal(ms_rng);
      for (std::size_t j = 0; j < values.size(); ++j) {
        const auto& a = cfg.attributes[j];
        if (a.carrier == CarrierSpan::ms_span)
          m += a.separation * centered(values[j], a.classes) * truth.carrier(j);
      }
      text.row(static_cast<Eigen::Index>(row)) = x.transpose().cast<float>();
      modal.row(static_cast<Eigen::Index>(row)) = m.transpose().cast<float>();
      strata[row] = s;
      ctx[row] = s % cfg.contexts;
      target[row] = s / cfg.contexts;
    }
  }

  auto make = [&](FloatMat data, LawTag law) {
    EmbeddingSet set;
    set.data = std::move(data);
    set.labels[std::string(kTargetLabel)] = target;
    set.labels[std::string(kContextLabel)] = ctx;
    for (std::size_t j = 0; j < cfg.attributes.size(); ++j)
      set.labels[cfg.attributes[j].name] = attr_labels[j];
    set.stratum_ids = strata;
    set.layer_tag = LayerTag::synthetic;
    set.law_tag = law;
    validate(set);
    return set;
  };
  EmbeddingSet m = make(std::move(modal), LawTag::modal);
  EmbeddingSet t = make(std::move(text), LawTag::text);
  return GeneratedPair{PairedLaws(std::move(m), std::move(t)), std::move(truth)};
}

SynthConfig aligned_encoder_variant(const SynthConfig& cfg) {
  SynthConfig out = cfg;
  out.ms_noise_scale = 0.0;
  for (auto& a : out.attributes) a.carrier = CarrierSpan::text_span;
  validate(out);
  return out;
}

}  // namespace gmilab
