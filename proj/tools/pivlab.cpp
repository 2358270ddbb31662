// pivlab command line: run <config.json>, schema, bessel-demo.

#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "pivlab/cli.hpp"

namespace {

int report(const pivlab::cli::RunResult& res) {
  for (const auto& x : res.experiments) {
    const char* status = x.error ? "ERROR" : x.passed() ? "PASS" : "FAIL";
    std::printf("[%s] %s%s\n", status, x.name.c_str(), x.expect_fail ? " (expected to fail)" : "");
    if (x.error) std::fprintf(stderr, "%s: %s\n", x.name.c_str(), x.error->c_str());
  }
  return res.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = pivlab::cli;
  CLI::App app{"pivlab: partial-information viability audits by Monte Carlo"};
  app.require_subcommand(1);

  std::string config_path, out_dir;
  auto* run = app.add_subcommand("run", "run the experiments of a JSON configuration");
  run->add_option("config", config_path, "configuration file")->required();
  run->add_option("--out", out_dir, "output directory (overrides the configuration)");

  app.add_subcommand("schema", "print the configuration JSON Schema");

  int paths = 50000, steps = 512;
  std::uint64_t seed = 1;
  std::string demo_out;
  auto* demo = app.add_subcommand("bessel-demo", "Bessel buy-and-hold walkthrough");
  demo->add_option("--paths", paths, "number of paths")->check(CLI::PositiveNumber);
  demo->add_option("--seed", seed, "random seed");
  demo->add_option("--steps", steps, "time steps on [0, 1]")->check(CLI::PositiveNumber);
  demo->add_option("--out", demo_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? cli::kOk : cli::kConfigError;
  }

  try {
    if (app.got_subcommand("schema")) {
      std::cout << cli::kSchema;
      return cli::kOk;
    }
    cli::RunConfig cfg;
    if (app.got_subcommand(run)) {
      cfg = cli::load_config(config_path);
      if (!out_dir.empty()) cfg.output = out_dir;
    } else {
      cfg = cli::bessel_demo_config(paths, seed, steps);
      if (!demo_out.empty()) cfg.output = demo_out;
    }
    return report(cli::run(cfg));
  } catch (const cli::ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return cli::kConfigError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return cli::kRuntimeError;
  }
}
