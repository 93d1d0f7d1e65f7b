#include "gmilab/commands.hpp"
#include "gmilab/core.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"gmi-lab: decoder-side information analysis of multimodal representations"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir = "gmi-lab-out";
  int jobs = 1;
  for (const auto& name : gmilab::kSubcommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
    sub->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);
    sub->add_option("--out", out_dir, "Output directory");
  }
  CLI11_PARSE(app, argc, argv);

  const std::string subcommand = app.get_subcommands().front()->get_name();
  try {
    gmilab::RunOptions opts;
    opts.out = out_dir;
    opts.jobs = jobs;
    opts.seed_override = gmilab::seed_from_env();
    const gmilab::RunOutcome outcome =
        gmilab::run_subcommand(subcommand, gmilab::read_json(config_path), opts);
    for (const auto& f : outcome.failures) std::cerr << "failed: " << f << '\n';
    if (outcome.exit_code != 0)
      std::cerr << outcome.failures.size() << " unit(s) failed; see " << out_dir << "/results/failures.json\n";
    return outcome.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "gmi-lab " << subcommand << ": " << e.what() << '\n';
    return 2;
  }
}
