#pragma once

#include "gmilab/decoder.hpp"
#include "gmilab/gmi.hpp"
#include "gmilab/modes.hpp"
#include "gmilab/probe.hpp"
#include "gmilab/transport.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace gmilab {

using Json = nlohmann::json;

// Finite values become JSON numbers; inf and nan become the strings "inf",
// "-inf" and "nan" so every report stays valid JSON.
Json json_number(double v);
double number_from_json(const Json& j);

Json to_json(const W1Estimate& e);
Json to_json(const StratifiedW1& w);
Json to_json(const GmiEstimate& g, bool with_samples = false);
Json to_json(const LipschitzEstimate& l, bool with_samples = false);
Json to_json(const Diameter& d);
Json to_json(const BoundReport& r);
Json to_json(const ModeSpectrum& s);
Json to_json(const AblationReport& r);
Json to_json(const ProbeResult& r);
Json to_json(const PenaltyCheck& c);
Json to_json(const AccessGap& g);
Json to_json(const AsymmetryReport& r);
Json to_json(const IsotropyReport& r);
Json to_json(const ForcedChoice& f);

// Accepts {per_sample_norms[], p95?, mean?, n_samples?}; mean and p95 are
// recomputed from the norms and must agree with any stated values.
LipschitzEstimate lipschitz_from_json(const Json& j);
LipschitzEstimate load_lipschitz(const std::filesystem::path& path);

Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

// Fixed-precision rendering used by every CSV writer.
std::string format_number(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> row);
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);

}  // namespace gmilab
