#include "gmilab/serialize.hpp"

#include "gmilab/stats.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

namespace gmilab {

Json json_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const Json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  }
  throw FormatError("expected a number, got " + j.dump());
}

Json to_json(const W1Estimate& e) {
  Json j{{"method", std::string(to_string(e.method))},
         {"value", json_number(e.value)},
         {"n_modal", e.n_modal},
         {"n_text", e.n_text}};
  Json params = Json::object();
  if (e.method == W1Method::sliced) {
    params["projections"] = e.projections;
    params["seed"] = e.seed;
    params["mc_std"] = json_number(e.mc_std);
  } else if (e.method == W1Method::sinkhorn) {
    params["epsilon"] = json_number(e.epsilon);
    params["iterations"] = e.iterations;
    params["marginal_residual"] = json_number(e.marginal_residual);
    params["converged"] = e.converged;
  }
  j["params"] = params;
  return j;
}

Json to_json(const StratifiedW1& w) {
  Json per = Json::array();
  for (const auto& s : w.per_stratum) {
    Json row = to_json(s.estimate);
    row["stratum"] = s.stratum;
    row["weight"] = json_number(s.weight);
    per.push_back(row);
  }
  std::string method = w.per_stratum.empty() ? "exact" : std::string(to_string(w.per_stratum.front().estimate.method));
  for (const auto& s : w.per_stratum)
    if (to_string(s.estimate.method) != method) method = "mixed";
  return Json{{"method", method}, {"value", json_number(w.value)}, {"stratified", true}, {"per_stratum", per}};
}

Json to_json(const GmiEstimate& g, bool with_samples) {
  Json j{{"value", json_number(g.value)},
         {"direct_term", json_number(g.direct_term)},
         {"competition_term", json_number(g.competition_term)},
         {"negatives_per_stratum", g.negatives_per_stratum},
         {"min_pool", g.min_pool},
         {"ceiling", json_number(g.ceiling)},
         {"n", g.n},
         {"std_error", json_number(g.std_error)},
         {"fallback_marginal", g.fallback_marginal},
         {"pool", std::string(to_string(g.pool))}};
  if (with_samples) j["per_sample"] = g.per_sample;
  return j;
}

Json to_json(const LipschitzEstimate& l, bool with_samples) {
  Json j{{"mean", json_number(l.mean)},
         {"p95", json_number(l.p95)},
         {"n_samples", l.n_samples},
         {"analytic_bound", json_number(l.analytic_bound)},
         {"excluded_floor", l.excluded_floor}};
  if (with_samples) j["per_sample_norms"] = l.per_sample_norms;
  return j;
}

Json to_json(const Diameter& d) {
  return Json{{"D", json_number(d.d)},
              {"D_eff", json_number(d.d_eff)},
              {"D_eff_unclamped", json_number(d.d_eff_unclamped)},
              {"participation_ratio", json_number(d.participation_ratio)},
              {"effective_modes", d.effective_modes},
              {"approximate", d.approximate},
              {"pairs", d.pairs}};
}

Json to_json(const BoundReport& r) {
  return Json{{"gmi_text", to_json(r.gmi_text)},
              {"gmi_modal", to_json(r.gmi_modal)},
              {"lhs", json_number(r.lhs)},
              {"delta_direct", json_number(r.delta_direct)},
              {"delta_competition", json_number(r.delta_competition)},
              {"L_log", to_json(r.l_log)},
              {"diameter", to_json(r.diameter)},
              {"w1", to_json(r.w1)},
              {"bound_ambient", json_number(r.bound_ambient)},
              {"bound_support", json_number(r.bound_support)},
              {"holds_ambient", r.holds_ambient},
              {"holds_support", r.holds_support},
              {"bound_ambient_analytic", json_number(r.bound_ambient_analytic)},
              {"bound_support_analytic", json_number(r.bound_support_analytic)},
              {"holds_ambient_analytic", r.holds_ambient_analytic},
              {"holds_support_analytic", r.holds_support_analytic}};
}

Json to_json(const ModeSpectrum& s) {
  Json modes = Json::array();
  for (std::size_t k = 0; k < s.classification.size(); ++k)
    modes.push_back({{"k", k},
                     {"lambda", json_number(s.basis.eigenvalues(static_cast<Eigen::Index>(k)))},
                     {"alpha", json_number(s.alignment[k])},
                     {"class", s.classification[k] == ModeClass::ms ? "MS" : "TA"}});
  return Json{{"threshold", json_number(s.threshold)},
              {"requested_modes", s.requested_modes},
              {"classified_modes", s.classification.size()},
              {"dropped_modes", s.dropped_modes},
              {"ms_modes", s.ms_modes().size()},
              {"ms_variance_share", json_number(s.ms_variance_share)},
              {"source_trace", json_number(s.basis.source_trace)},
              {"modes", modes}};
}

Json to_json(const AblationReport& r) {
  return Json{{"condition", std::string(to_string(r.condition))},
              {"modes_removed", r.modes_removed},
              {"removed", r.removed},
              {"variance_removed_pct", json_number(r.variance_removed_pct)},
              {"trace_variance_removed_pct", json_number(r.trace_variance_removed_pct)},
              {"base_loss", json_number(r.base_loss)},
              {"ablated_loss", json_number(r.ablated_loss)},
              {"delta_loss_pct", json_number(r.delta_loss_pct)},
              {"t", json_number(r.t)},
              {"p", json_number(r.p)},
              {"n_samples", r.n_samples},
              {"seeds", r.seeds},
              {"per_seed_delta_pct", r.per_seed_delta_pct},
              {"degenerate", r.degenerate}};
}

Json to_json(const ProbeResult& r) {
  Json conv = Json::array();
  for (bool b : r.converged) conv.push_back(b);
  return Json{{"attribute", r.attribute},
              {"layer_tag", std::string(to_string(r.layer_tag))},
              {"mean", json_number(r.mean)},
              {"std", json_number(r.std)},
              {"chance", json_number(r.chance)},
              {"seeds", r.seeds},
              {"per_seed", r.per_seed},
              {"converged", conv}};
}

Json to_json(const PenaltyCheck& c) {
  return Json{{"mean_log_h_text", json_number(c.mean_log_h_text)},
              {"mean_log_h_modal", json_number(c.mean_log_h_modal)},
              {"lhs", json_number(c.lhs)},
              {"L_h", json_number(c.l_h)},
              {"w1", json_number(c.w1)},
              {"rhs", json_number(c.rhs)},
              {"holds", c.holds},
              {"rhs_strict", json_number(c.rhs_strict)},
              {"holds_strict", c.holds_strict}};
}

Json to_json(const AccessGap& g) {
  return Json{{"mi", json_number(g.mi)},
              {"mi_std", json_number(g.mi_std)},
              {"gmi", to_json(g.gmi)},
              {"gap", json_number(g.gap)},
              {"negative", g.negative}};
}

Json to_json(const AsymmetryReport& r) {
  return Json{{"attribute", r.attribute},
              {"probe_info_text", json_number(r.probe_info_text)},
              {"probe_info_modal", json_number(r.probe_info_modal)},
              {"probe_drop", json_number(r.probe_drop)},
              {"probe_relative_drop", json_number(r.probe_relative_drop)},
              {"L_h", json_number(r.l_h)},
              {"w1_attribute", json_number(r.w1_attribute)},
              {"penalty", to_json(r.penalty)},
              {"gmi_text", json_number(r.gmi_text)},
              {"gmi_modal", json_number(r.gmi_modal)},
              {"gmi_drop", json_number(r.gmi_drop)},
              {"gmi_relative_drop", json_number(r.gmi_relative_drop)},
              {"L_log", json_number(r.l_log)},
              {"w1", json_number(r.w1)},
              {"decoder_bound", json_number(r.decoder_bound)},
              {"decoder_holds", r.decoder_holds},
              {"sensitivity_ratio", json_number(r.sensitivity_ratio)}};
}

Json to_json(const IsotropyReport& r) {
  Json j{{"g_ms", json_number(r.g_ms)},
         {"g_ta", json_number(r.g_ta)},
         {"ratio", json_number(r.ratio)},
         {"ratio_capped", r.ratio_capped},
         {"per_mode", r.per_mode}};
  j["spearman_rho"] = r.spearman_rho ? json_number(*r.spearman_rho) : Json(nullptr);
  j["spearman_p"] = r.spearman_p ? json_number(*r.spearman_p) : Json(nullptr);
  return j;
}

Json to_json(const ForcedChoice& f) {
  return Json{{"accuracy", json_number(f.accuracy)}, {"cross_entropy", json_number(f.cross_entropy)}};
}

LipschitzEstimate lipschitz_from_json(const Json& j) {
  if (!j.is_object()) throw FormatError("Lipschitz estimate must be a JSON object");
  if (!j.contains("per_sample_norms")) throw FormatError("Lipschitz estimate lacks per_sample_norms");
  LipschitzEstimate l;
  for (const auto& v : j.at("per_sample_norms")) {
    const double x = number_from_json(v);
    if (!std::isfinite(x) || x < 0.0) throw FormatError("gradient norms must be finite and >= 0");
    l.per_sample_norms.push_back(x);
  }
  l.n_samples = l.per_sample_norms.size();
  if (l.n_samples == 0) throw FormatError("Lipschitz estimate has no gradient norms");
  l.mean = std::accumulate(l.per_sample_norms.begin(), l.per_sample_norms.end(), 0.0) /
           static_cast<double>(l.n_samples);
  l.p95 = percentile(l.per_sample_norms, 95.0);
  auto agree = [](double stated, double computed) {
    return std::fabs(stated - computed) <= 1e-6 * std::max(1.0, std::fabs(computed));
  };
  if (j.contains("p95") && !agree(number_from_json(j.at("p95")), l.p95))
    throw FormatError("stated p95 does not match the 95th percentile of per_sample_norms");
  if (j.contains("mean") && !agree(number_from_json(j.at("mean")), l.mean))
    throw FormatError("stated mean does not match per_sample_norms");
  if (j.contains("n_samples") && j.at("n_samples").get<std::size_t>() != l.n_samples)
    throw FormatError("n_samples does not match the number of gradient norms");
  if (j.contains("excluded_floor")) l.excluded_floor = j.at("excluded_floor").get<std::size_t>();
  return l;
}

LipschitzEstimate load_lipschitz(const std::filesystem::path& path) {
  return lipschitz_from_json(read_json(path));
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingFileError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw FormatError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

void CsvTable::add_row(std::vector<std::string> row) {
  if (row.size() != header.size()) throw ShapeMismatchError("CSV row width does not match the header");
  rows.push_back(std::move(row));
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw MissingFileError("cannot write " + path.string());
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) line(r);
}

}  // namespace gmilab
