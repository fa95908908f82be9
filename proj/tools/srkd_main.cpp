#include "srkd/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Structure- and relation-aware distillation for point-cloud segmentation"};
  app.require_subcommand(1);

  srkd::CliOptions opts;
  std::uint64_t seed = 0;
  for (const auto& name : srkd::cli_commands()) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", opts.config_path, "key = value config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed (overrides the config)");
    sub->add_option("--out", opts.out_dir, "output directory");
    sub->add_option("--jobs", opts.jobs, "parallel runs for sweeps")->check(CLI::PositiveNumber);
    if (name == "gradcheck") sub->add_flag("--corrupt-gradient", opts.corrupt_gradient)->group("");
    sub->final_callback([&, name, sub] {
      opts.command = name;
      if (sub->count("--seed") > 0) opts.seed = seed;
    });
  }

  CLI11_PARSE(app, argc, argv);
  return srkd::run_command(opts, std::cout, std::cerr);
}
