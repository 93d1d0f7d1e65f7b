#pragma once

#include "gmilab/core.hpp"
#include "gmilab/dataset.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace gmilab {

enum class CarrierSpan { text_span, ms_span };

std::string_view to_string(CarrierSpan c);
CarrierSpan parse_carrier_span(std::string_view s);

struct AttributePlan {
  std::string name;
  CarrierSpan carrier = CarrierSpan::text_span;
  double separation = 1.0;
  int classes = 2;
};

// Coordinates [0, text_dims) form the text span, the rest the ms span.
// Within the text span the first signal_dims coordinates carry the stratum
// means; the remaining text coordinates are target-independent nuisance.
// Stratum s has context s % contexts and target s / contexts.
struct SynthConfig {
  int d = 16;
  int text_dims = 8;
  int signal_dims = 4;
  int strata = 8;
  int contexts = 2;
  int n_per_stratum = 64;
  double mean_scale = 1.0;
  double within_scale = 0.5;
  double nuisance_scale = 0.5;
  double shift = 0.0;           // modal translation along a unit text-span direction
  double rotation_angle = 0.0;  // radians, in a random text-span plane
  double ms_noise_scale = 0.0;  // modal-only isotropic noise on the ms span
  std::vector<AttributePlan> attributes;
  std::uint64_t seed = 0;

  int ms_dims() const { return d - text_dims; }
  int targets() const { return strata / contexts; }
};

// Throws ConfigError naming the first invalid field.
void validate(const SynthConfig& cfg);

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

// Deterministic child seed derived from (seed, stream) with a SplitMix64 mix.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

// Exact generative densities of both laws. Every law is a mixture of
// Gaussians with one shared covariance; a component is a stratum plus one
// value per attribute, all equally likely within the stratum.
class GroundTruth {
 public:
  GroundTruth() = default;
  explicit GroundTruth(const SynthConfig& cfg);

  const SynthConfig& config() const { return cfg_; }
  // Shared component covariance of a law, with kJitter added on the
  // diagonal so degenerate directions still have a density.
  Mat covariance(LawTag law) const;
  // Mean for stratum s and one value per attribute (in plan order).
  Vec component_mean(LawTag law, int stratum, const std::vector<int>& attrs) const;

  double log_density(LawTag law, int stratum, const std::vector<int>& attrs, const Vec& z) const;
  // Density of z given the stratum, attributes marginalized.
  double log_density(LawTag law, int stratum, const Vec& z) const;

  struct MonteCarlo {
    double value = 0.0;
    double mc_std = 0.0;
    std::size_t samples = 0;
  };

  // I(Z; A | C) for the named attribute, estimated as H(A|C) - E[H(A|Z,C)]
  // with the exact posterior inside the expectation.
  MonteCarlo mutual_information(LawTag law, std::string_view attribute,
                                std::size_t samples = 100000, std::uint64_t seed = 0) const;

  // Importance-sampling estimate of the integral of one stratum's density.
  MonteCarlo normalization(LawTag law, int stratum, std::size_t samples = 100000,
                           std::uint64_t seed = 0) const;

  // Unit directions chosen for this config.
  const Vec& shift_direction() const { return shift_dir_; }
  const Mat& rotation() const { return rotation_; }
  const Vec& carrier(std::size_t attribute) const { return carriers_[attribute]; }

  static constexpr double kJitter = 1e-6;

 private:
  SynthConfig cfg_;
  Mat stratum_means_;   // strata x d (text-law means without attributes)
  Vec shift_dir_;
  Mat rotation_;        // d x d
  std::vector<Vec> carriers_;
};

struct GeneratedPair {
  PairedLaws laws;
  GroundTruth truth;
};

// Both laws reuse the same latent draws: the modal sample with index i is the
// text sample i pushed through the configured rotation, shift, ms noise and
// ms-span attributes. Text-span attributes are planted in both laws.
GeneratedPair generate_pair(const SynthConfig& cfg);

// Moves every ms-span attribute into the text span (same separation) and
// zeroes the ms-span noise.
SynthConfig aligned_encoder_variant(const SynthConfig& cfg);

}  // namespace gmilab
