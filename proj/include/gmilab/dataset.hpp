#pragma once

#include "gmilab/core.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gmilab {

enum class LayerTag { encoder, adapter, llm_mid, llm_final, synthetic };
enum class LawTag { modal, text };

std::string_view to_string(LayerTag t);
std::string_view to_string(LawTag t);
LayerTag parse_layer_tag(std::string_view s);
LawTag parse_law_tag(std::string_view s);

// Label names with a reserved meaning for the decoder-side operations.
inline constexpr std::string_view kTargetLabel = "target";
inline constexpr std::string_view kContextLabel = "context";

using LabelVector = std::vector<std::int64_t>;

// N x d representations plus categorical attributes. Immutable once validated;
// copies are cheap enough at desk scale that the operations take it by const&.
struct EmbeddingSet {
  FloatMat data;
  std::map<std::string, LabelVector> labels;
  std::map<std::string, std::vector<std::string>> label_vocab;
  LabelVector stratum_ids;  // empty when the set is not part of a law pair
  LayerTag layer_tag = LayerTag::synthetic;
  LawTag law_tag = LawTag::text;

  std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
  std::size_t dims() const { return static_cast<std::size_t>(data.cols()); }

  const LabelVector& label(std::string_view name) const;
  bool has_label(std::string_view name) const;
  // K for a dense label (max id + 1).
  int num_classes(std::string_view name) const;

  Mat to_double() const { return data.cast<double>(); }
  // Context id per row, all zero when no context label is present.
  LabelVector contexts() const;
  const LabelVector& targets() const { return label(kTargetLabel); }

  // Row subset; labels and strata follow the rows.
  EmbeddingSet subset(const std::vector<std::size_t>& rows) const;
};

// Throws the named error for the first violated invariant.
void validate(const EmbeddingSet& set);

EmbeddingSet load_embedding_set(const std::filesystem::path& manifest_path);
// Writes `manifest.json` plus one NPY file per array into `dir`.
void write_embedding_set(const EmbeddingSet& set, const std::filesystem::path& dir);

// Modal and text samples sharing the same (C,Y) stratum multiset.
class PairedLaws {
 public:
  PairedLaws(EmbeddingSet modal, EmbeddingSet text);

  const EmbeddingSet& modal() const { return modal_; }
  const EmbeddingSet& text() const { return text_; }

  // Re-runs the shared-marginal and minimum-occupancy checks.
  void check() const;
  std::vector<std::int64_t> strata() const;
  std::vector<std::size_t> rows_in_stratum(LawTag law, std::int64_t stratum) const;

 private:
  EmbeddingSet modal_;
  EmbeddingSet text_;
};

struct SplitPlan {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  std::uint64_t seed = 0;
  double fraction = 0.8;
};

SplitPlan stratified_split(const LabelVector& labels, std::uint64_t seed, double fraction);
SplitPlan stratified_split(const EmbeddingSet& set, std::string_view attribute,
                           std::uint64_t seed, double fraction);

struct ZScore {
  Mat transformed;
  Vec mean;
  Vec std;
};

// Statistics come from `train` only; zero-variance columns keep std = 1.
ZScore zscore_normalize(const Mat& train, const Mat& apply_to);

}  // namespace gmilab
