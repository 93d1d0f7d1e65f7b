#pragma once

#include "gmilab/serialize.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gmilab {

inline const std::vector<std::string> kSubcommands = {"probe", "modes",  "ablate", "bound",
                                                      "sweep", "retune", "gap",    "synth"};

struct RunOptions {
  std::filesystem::path out = "gmi-lab-out";
  int jobs = 1;
  // Takes precedence over the config's "seed" (set from GMI_LAB_SEED).
  std::optional<std::uint64_t> seed_override;
};

struct RunOutcome {
  int exit_code = 0;
  // Units that failed, as "<unit>: <message>".
  std::vector<std::string> failures;
  Json resolved_config;
};

// Fills every default into a copy of `config` so the run is self-describing.
// Unknown keys raise ConfigError.
Json resolve_config(std::string_view subcommand, const Json& config,
                    std::optional<std::uint64_t> seed_override = std::nullopt);

// Runs one subcommand and writes config.json, results/, plots/ and the
// run.log sidecar (the only file carrying timestamps) under opts.out.
RunOutcome run_subcommand(std::string_view subcommand, const Json& config, const RunOptions& opts);

// Parses GMI_LAB_SEED; an unset variable yields nullopt, a malformed one
// raises ConfigError.
std::optional<std::uint64_t> seed_from_env();

}  // namespace gmilab
