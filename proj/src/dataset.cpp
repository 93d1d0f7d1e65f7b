#include "gmilab/dataset.hpp"

#include "gmilab/npy.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

namespace gmilab {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string_view to_string(LayerTag t) {
  switch (t) {
    case LayerTag::encoder: return "encoder";
    case LayerTag::adapter: return "adapter";
    case LayerTag::llm_mid: return "llm_mid";
    case LayerTag::llm_final: return "llm_final";
    case LayerTag::synthetic: return "synthetic";
  }
  return "synthetic";
}

std::string_view to_string(LawTag t) { return t == LawTag::modal ? "modal" : "text"; }

LayerTag parse_layer_tag(std::string_view s) {
  for (auto t : {LayerTag::encoder, LayerTag::adapter, LayerTag::llm_mid, LayerTag::llm_final,
                 LayerTag::synthetic})
    if (to_string(t) == s) return t;
  throw FormatError("unknown layer_tag '" + std::string(s) + "'");
}

LawTag parse_law_tag(std::string_view s) {
  if (s == "modal") return LawTag::modal;
  if (s == "text") return LawTag::text;
  throw FormatError("unknown law_tag '" + std::string(s) + "'");
}

const LabelVector& EmbeddingSet::label(std::string_view name) const {
  auto it = labels.find(std::string(name));
  if (it == labels.end()) throw MissingAttributeError("attribute '" + std::string(name) + "' not present");
  return it->second;
}

bool EmbeddingSet::has_label(std::string_view name) const {
  return labels.count(std::string(name)) != 0;
}

int EmbeddingSet::num_classes(std::string_view name) const {
  const auto& l = label(name);
  if (l.empty()) return 0;
  return static_cast<int>(*std::max_element(l.begin(), l.end()) + 1);
}

LabelVector EmbeddingSet::contexts() const {
  if (has_label(kContextLabel)) return label(kContextLabel);
  return LabelVector(rows(), 0);
}

EmbeddingSet EmbeddingSet::subset(const std::vector<std::size_t>& idx) const {
  EmbeddingSet out;
  out.layer_tag = layer_tag;
  out.law_tag = law_tag;
  out.label_vocab = label_vocab;
  out.data.resize(static_cast<Eigen::Index>(idx.size()), data.cols());
  for (std::size_t i = 0; i < idx.size(); ++i)
    out.data.row(static_cast<Eigen::Index>(i)) = data.row(static_cast<Eigen::Index>(idx[i]));
  for (const auto& [name, l] : labels) {
    LabelVector v(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) v[i] = l[idx[i]];
    out.labels.emplace(name, std::move(v));
  }
  if (!stratum_ids.empty()) {
    out.stratum_ids.resize(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) out.stratum_ids[i] = stratum_ids[idx[i]];
  }
  return out;
}

void validate(const EmbeddingSet& set) {
  const auto n = set.rows();
  if (n < 1 || set.dims() < 1)
    throw ShapeMismatchError("embedding set must have N >= 1 and d >= 1");
  if (!set.data.allFinite()) throw InvalidDataError("embedding data contains NaN or Inf");
  for (const auto& [name, l] : set.labels) {
    if (l.size() != n)
      throw LabelLengthError("label '" + name + "' has length " + std::to_string(l.size()) +
                             " but data has " + std::to_string(n) + " rows");
    std::int64_t k = 0;
    for (auto v : l) {
      if (v < 0) throw NonDenseLabelError("label '" + name + "' has a negative id");
      k = std::max(k, v + 1);
    }
    std::vector<char> seen(static_cast<std::size_t>(k), 0);
    for (auto v : l) seen[static_cast<std::size_t>(v)] = 1;
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
      throw NonDenseLabelError("label '" + name + "' ids are not dense in [0, " +
                               std::to_string(k) + ")");
  }
  if (!set.stratum_ids.empty()) {
    if (set.stratum_ids.size() != n)
      throw LabelLengthError("stratum_ids has length " + std::to_string(set.stratum_ids.size()) +
                             " but data has " + std::to_string(n) + " rows");
    for (auto s : set.stratum_ids)
      if (s < 0) throw NonDenseLabelError("stratum ids must be non-negative");
  }
}

EmbeddingSet load_embedding_set(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path))
    throw MissingFileError("missing manifest: " + manifest_path.string());
  std::ifstream in(manifest_path);
  json m;
  try {
    in >> m;
  } catch (const json::exception& e) {
    throw FormatError(manifest_path.string() + ": invalid JSON: " + e.what());
  }
  const fs::path base = manifest_path.parent_path();
  auto require = [&](const char* key) -> const json& {
    if (!m.contains(key)) throw FormatError(manifest_path.string() + ": missing key '" + key + "'");
    return m.at(key);
  };

  EmbeddingSet set;
  const auto data = npy::read(base / require("data").get<std::string>());
  if (data.shape.size() != 2) throw ShapeMismatchError("data array must be 2-D");
  if (m.contains("shape")) {
    auto declared = m.at("shape").get<std::vector<std::size_t>>();
    if (declared != data.shape)
      throw ShapeMismatchError(manifest_path.string() + ": declared shape does not match data file");
  }
  if (m.contains("dtype")) {
    const auto dtype = m.at("dtype").get<std::string>();
    if (dtype != "float32" && dtype != "<f4" && dtype != "f4")
      throw FormatError(manifest_path.string() + ": only float32 data is supported, got '" + dtype + "'");
  }
  if (data.dtype != npy::DType::f4) throw FormatError("data array must be float32 (<f4)");
  const auto rows = static_cast<Eigen::Index>(data.shape[0]);
  const auto cols = static_cast<Eigen::Index>(data.shape[1]);
  const auto values = data.as_float();
  set.data = Eigen::Map<const FloatMat>(values.data(), rows, cols);

  set.layer_tag = parse_layer_tag(require("layer_tag").get<std::string>());
  set.law_tag = parse_law_tag(require("law_tag").get<std::string>());

  if (m.contains("labels")) {
    for (const auto& [name, file] : m.at("labels").items()) {
      const auto arr = npy::read(base / file.get<std::string>());
      if (arr.shape.size() != 1)
        throw ShapeMismatchError("label '" + name + "' must be a 1-D array");
      set.labels.emplace(name, arr.as_int64());
    }
  }
  if (m.contains("label_vocab"))
    set.label_vocab =
        m.at("label_vocab").get<std::map<std::string, std::vector<std::string>>>();
  if (m.contains("stratum_ids")) {
    const auto arr = npy::read(base / m.at("stratum_ids").get<std::string>());
    set.stratum_ids = arr.as_int64();
  }
  validate(set);
  return set;
}

void write_embedding_set(const EmbeddingSet& set, const fs::path& dir) {
  validate(set);
  fs::create_directories(dir);
  json m;
  m["data"] = "data.npy";
  m["dtype"] = "float32";
  m["shape"] = {set.rows(), set.dims()};
  m["layer_tag"] = std::string(to_string(set.layer_tag));
  m["law_tag"] = std::string(to_string(set.law_tag));
  npy::write_f4(dir / "data.npy", {set.rows(), set.dims()}, set.data.data());
  m["labels"] = json::object();
  for (const auto& [name, l] : set.labels) {
    const std::string file = "label_" + name + ".npy";
    npy::write_i8(dir / file, {l.size()}, l.data());
    m["labels"][name] = file;
  }
  if (!set.label_vocab.empty()) m["label_vocab"] = set.label_vocab;
  if (!set.stratum_ids.empty()) {
    npy::write_i8(dir / "stratum_ids.npy", {set.stratum_ids.size()}, set.stratum_ids.data());
    m["stratum_ids"] = "stratum_ids.npy";
  }
  std::ofstream(dir / "manifest.json") << m.dump(2) << "\n";
}

PairedLaws::PairedLaws(EmbeddingSet modal, EmbeddingSet text)
    : modal_(std::move(modal)), text_(std::move(text)) {
  modal_.law_tag = LawTag::modal;
  text_.law_tag = LawTag::text;
  check();
}

void PairedLaws::check() const {
  validate(modal_);
  validate(text_);
  if (modal_.dims() != text_.dims())
    throw DimensionMismatchError("modal and text laws have different dimensionality");
  if (modal_.stratum_ids.empty() || text_.stratum_ids.empty())
    throw SharedMarginalError("both laws need stratum ids");
  auto a = modal_.stratum_ids;
  auto b = text_.stratum_ids;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  if (a != b) throw SharedMarginalError("stratum multisets differ between modal and text laws");
  for (std::size_t i = 0; i < a.size();) {
    std::size_t j = i;
    while (j < a.size() && a[j] == a[i]) ++j;
    if (j - i < 2)
      throw SharedMarginalError("stratum " + std::to_string(a[i]) +
                                " has fewer than 2 samples per law");
    i = j;
  }
}

std::vector<std::int64_t> PairedLaws::strata() const {
  std::set<std::int64_t> s(text_.stratum_ids.begin(), text_.stratum_ids.end());
  return {s.begin(), s.end()};
}

std::vector<std::size_t> PairedLaws::rows_in_stratum(LawTag law, std::int64_t stratum) const {
  const auto& ids = law == LawTag::modal ? modal_.stratum_ids : text_.stratum_ids;
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == stratum) out.push_back(i);
  return out;
}

SplitPlan stratified_split(const LabelVector& labels, std::uint64_t seed, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0))
    throw PreconditionError("split fraction must lie in (0, 1)");
  std::map<std::int64_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  SplitPlan plan;
  plan.seed = seed;
  plan.fraction = fraction;
  std::mt19937_64 rng(seed);
  for (auto& [cls, rows] : by_class) {
    if (rows.size() < 2)
      throw UnsplittableClassError("class " + std::to_string(cls) + " has a single sample");
    std::shuffle(rows.begin(), rows.end(), rng);
    auto n_train = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(rows.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, rows.size() - 1);
    plan.train_idx.insert(plan.train_idx.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    plan.test_idx.insert(plan.test_idx.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  }
  std::sort(plan.train_idx.begin(), plan.train_idx.end());
  std::sort(plan.test_idx.begin(), plan.test_idx.end());
  return plan;
}

SplitPlan stratified_split(const EmbeddingSet& set, std::string_view attribute,
                           std::uint64_t seed, double fraction) {
  return stratified_split(set.label(attribute), seed, fraction);
}

ZScore zscore_normalize(const Mat& train, const Mat& apply_to) {
  if (train.rows() < 2) throw PreconditionError("z-scoring needs at least 2 training rows");
  if (apply_to.cols() != train.cols())
    throw DimensionMismatchError("z-score target has a different column count");
  ZScore z;
  z.mean = train.colwise().mean().transpose();
  const Mat centered = train.rowwise() - z.mean.transpose();
  z.std = (centered.array().square().colwise().sum() / static_cast<double>(train.rows()))
              .sqrt()
              .transpose();
  // Constant columns pass through untouched: identity transform (mean 0, std 1).
  for (Eigen::Index j = 0; j < z.std.size(); ++j) {
    if (!(z.std(j) > 1e-12)) {
      z.std(j) = 1.0;
      z.mean(j) = 0.0;
    }
  }
  z.transformed = (apply_to.rowwise() - z.mean.transpose()).array().rowwise() /
                  z.std.transpose().array();
  return z;
}

}  // namespace gmilab
