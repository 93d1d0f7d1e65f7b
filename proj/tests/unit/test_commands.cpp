#include "gmilab/commands.hpp"
#include "gmilab/experiments.hpp"

#include "oracles.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace gmilab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gmilab_test_commands_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Rows of a CSV file split on commas, header included.
std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
  std::vector<std::vector<std::string>> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    out.push_back(cells);
  }
  return out;
}

// Two attributes on separate axes with per-attribute separations; the
// "voice" attribute stands in for a modality-specific one, "topic" for a
// text-aligned one.
fs::path layer(const fs::path& root, const std::string& tag, double voice_sep, double topic_sep) {
  std::mt19937_64 rng(17);
  const int n = 200;
  Mat x = oracle::gaussian(n, 4, rng);
  LabelVector voice(n), topic(n);
  for (int i = 0; i < n; ++i) {
    voice[i] = i % 2;
    topic[i] = (i / 2) % 2;
    x(i, 0) += voice_sep * (voice[i] ? 0.5 : -0.5);
    x(i, 1) += topic_sep * (topic[i] ? 0.5 : -0.5);
  }
  EmbeddingSet s = oracle::make_set(x, {{"voice", voice}, {"topic", topic}});
  s.layer_tag = parse_layer_tag(tag);
  write_embedding_set(s, root / tag);
  return root / tag / "manifest.json";
}

double retention(const fs::path& out, const std::string& attr) {
  for (const auto& row : read_csv(out / "results" / "retention.csv"))
    if (row[0] == attr) return std::stod(row[3]);
  FAIL("no retention row for " << attr);
  return 0.0;
}

}  // namespace

TEST_CASE("resolve_config fills protocol defaults and derives seeds") {
  const Json probe = resolve_config("probe", Json::object());
  CHECK(probe["seeds"] == Json({42, 43, 44, 45, 46}));
  CHECK(probe["train_fraction"] == 0.8);
  CHECK(probe["reg_c"] == 1.0);

  const Json modes = resolve_config("modes", Json::object());
  CHECK(modes["k"] == 100);
  CHECK(modes["threshold"] == 0.5);
  CHECK(resolve_config("ablate", Json::object())["samples"] == 200);
  CHECK(resolve_config("ablate", Json::object())["random_seeds"] == 5);
  CHECK(resolve_config("gap", Json::object())["mi_samples"] == 100000);
  CHECK(resolve_config("sweep", Json::object())["configs"] == 200);

  const Json bound = resolve_config("bound", Json::object());
  CHECK(bound["synth"]["seed"] == derive_seed(0, 1));
  CHECK(bound["decoder"]["seed"] == derive_seed(0, 2));
  const Json seeded = resolve_config("bound", Json::object(), 9);
  CHECK(seeded["seed"] == 9);
  CHECK(seeded["synth"]["seed"] == derive_seed(9, 1));
  const Json pinned = resolve_config("bound", Json{{"synth", {{"seed", 4}}}}, 9);
  CHECK(pinned["synth"]["seed"] == 4);
}

TEST_CASE("resolve_config merges partial synthetic configs onto the default fixture") {
  const Json r = resolve_config("bound", Json{{"synth", {{"shift", 2.0}}}});
  CHECK(r["synth"]["shift"] == 2.0);
  CHECK(r["synth"]["rotation_angle"] == 0.5);
  CHECK(r["synth"]["d"] == 16);
  REQUIRE(r["synth"]["attributes"].size() == 1);
  CHECK(r["synth"]["attributes"][0]["name"] == "topic");

  // Probe has no synthetic layers by default; an empty block selects the base fixture.
  CHECK(resolve_config("probe", Json::object())["synth"].is_null());
  const Json p = resolve_config("probe", Json{{"synth", Json::object()}});
  CHECK(p["synth"]["attributes"][0]["name"] == "topic");
  CHECK_THROWS_AS(resolve_config("synth", Json{{"synth", {{"bogus", 1}}}}), ConfigError);
}

TEST_CASE("resolve_config rejects unknown keys and subcommands") {
  CHECK_THROWS_AS(resolve_config("modes", Json{{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("bound", Json{{"w1", {{"bogus", 1}}}}), ConfigError);
  CHECK_THROWS_AS(resolve_config("nope", Json::object()), ConfigError);
  CHECK_THROWS_AS(resolve_config("sweep", Json{{"base", {{"d", -3}}}}), ConfigError);
}

TEST_CASE("GMI_LAB_SEED parsing") {
  ::setenv("GMI_LAB_SEED", "123", 1);
  CHECK(seed_from_env() == std::optional<std::uint64_t>(123));
  ::setenv("GMI_LAB_SEED", "12x", 1);
  CHECK_THROWS_AS(seed_from_env(), ConfigError);
  ::setenv("GMI_LAB_SEED", "-4", 1);
  CHECK_THROWS_AS(seed_from_env(), ConfigError);
  ::unsetenv("GMI_LAB_SEED");
  CHECK_FALSE(seed_from_env().has_value());
}

TEST_CASE("probe on perfectly separable layers retains 100%") {
  const auto root = scratch("probe_perfect");
  Json cfg = {{"layers",
               {{{"manifest", layer(root, "adapter", 40.0, 40.0).string()}},
                {{"manifest", layer(root, "llm_final", 40.0, 40.0).string()}}}}};
  RunOptions o;
  o.out = root / "out";
  const auto r = run_subcommand("probe", cfg, o);
  CHECK(r.exit_code == 0);
  CHECK(retention(o.out, "voice") == doctest::Approx(100.0));
  CHECK(retention(o.out, "topic") == doctest::Approx(100.0));
}

TEST_CASE("probe retention drops for a decaying attribute and rises for an amplified one") {
  const auto root = scratch("probe_decay");
  Json cfg = {{"layers",
               {{{"manifest", layer(root, "adapter", 4.0, 1.5).string()}},
                {{"manifest", layer(root, "llm_final", 1.0, 4.0).string()}}}}};
  RunOptions o;
  o.out = root / "out";
  REQUIRE(run_subcommand("probe", cfg, o).exit_code == 0);
  CHECK(retention(o.out, "voice") < 100.0);
  CHECK(retention(o.out, "topic") > 100.0);
}

TEST_CASE("probe on a missing attribute names it and exits nonzero") {
  const auto root = scratch("probe_missing");
  Json cfg = {{"layers", {{{"manifest", layer(root, "adapter", 4.0, 4.0).string()}}}},
              {"attributes", {"voice", "emotion"}}};
  RunOptions o;
  o.out = root / "out";
  const auto r = run_subcommand("probe", cfg, o);
  CHECK(r.exit_code != 0);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].find("emotion") != std::string::npos);
  CHECK(fs::exists(o.out / "results" / "failures.json"));
}

TEST_CASE("probe on a missing manifest names the file") {
  Json cfg = {{"layers", {{{"manifest", "/nonexistent/manifest.json"}}}}};
  RunOptions o;
  o.out = scratch("probe_nofile");
  try {
    run_subcommand("probe", cfg, o);
    FAIL("expected an error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("/nonexistent/manifest.json") != std::string::npos);
  }
}

TEST_CASE("modes on the identity fixture reports no MS modes") {
  SynthConfig c = sweep_base_config();
  c.shift = c.rotation_angle = c.ms_noise_scale = 0.0;
  RunOptions o;
  o.out = scratch("modes_identity");
  REQUIRE(run_subcommand("modes", Json{{"synth", to_json(c)}}, o).exit_code == 0);
  const Json r = read_json(o.out / "results" / "modes.json");
  REQUIRE(r["spectrum"]["modes"].size() > 0);
  for (const auto& m : r["spectrum"]["modes"]) CHECK(m["class"] == "TA");
}

TEST_CASE("ablate on the fixture: MS improvement at least five times the TA effect") {
  RunOptions o;
  o.out = scratch("ablate");
  REQUIRE(run_subcommand("ablate", Json::object(), o).exit_code == 0);
  double ms = 0, ta = 0;
  for (const auto& row : read_csv(o.out / "results" / "ablation.csv")) {
    if (row[0] == "ms_all") ms = std::stod(row[4]);
    if (row[0] == "ta_matched") ta = std::stod(row[4]);
  }
  CHECK(ms < 0.0);
  CHECK(std::abs(ms) >= 5 * std::abs(ta));
}

TEST_CASE("retune on the fixture: target up at least 5 points, control within 1 point") {
  RunOptions o;
  o.out = scratch("retune");
  REQUIRE(run_subcommand("retune", Json::object(), o).exit_code == 0);
  const auto rows = read_csv(o.out / "results" / "retune.csv");
  REQUIRE(rows.size() == 3);
  CHECK(std::stod(rows[1][4]) >= 5.0);
  CHECK(std::abs(std::stod(rows[2][4])) <= 1.0);
}

TEST_CASE("reruns are byte-identical apart from the log, for any job count") {
  const Json cfg = {{"configs", 3}, {"ladder", {0.0, 1.0}}};
  RunOptions a, b;
  a.out = scratch("det_a");
  b.out = scratch("det_b");
  b.jobs = 3;
  REQUIRE(run_subcommand("sweep", cfg, a).exit_code == 0);
  REQUIRE(run_subcommand("sweep", cfg, b).exit_code == 0);
  std::size_t compared = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.out)) {
    if (!e.is_regular_file() || e.path().filename() == "run.log") continue;
    const auto rel = fs::relative(e.path(), a.out);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b.out / rel), rel.string());
    ++compared;
  }
  CHECK(compared >= 5);
  CHECK(fs::exists(a.out / "run.log"));
}

TEST_CASE("every report embeds the resolved configuration") {
  RunOptions o;
  o.out = scratch("embed");
  const auto r = run_subcommand("synth", Json{{"mi_samples", 1000}}, o);
  REQUIRE(r.exit_code == 0);
  const Json saved = read_json(o.out / "config.json");
  CHECK(saved["subcommand"] == "synth");
  CHECK(saved["config"] == r.resolved_config);
  CHECK(fs::exists(o.out / "data" / "modal" / "manifest.json"));
  CHECK_NOTHROW(load_embedding_set(o.out / "data" / "text" / "manifest.json"));
}

TEST_CASE("bound accepts externally measured gradient norms") {
  const auto dir = scratch("lipschitz");
  std::vector<double> norms(30);
  for (int i = 0; i < 30; ++i) norms[i] = 0.1 * (i + 1);
  write_json(dir / "norms.json", Json{{"per_sample_norms", norms}});
  RunOptions o;
  o.out = dir / "out";
  REQUIRE(run_subcommand("bound", Json{{"lipschitz", (dir / "norms.json").string()}}, o).exit_code == 0);
  const Json r = read_json(o.out / "results" / "bound.json");
  CHECK(r["L_log"]["n_samples"] == 30);
  CHECK(number_from_json(r["L_log"]["p95"]) == doctest::Approx(percentile(norms, 95)));
}
