// qtrans: evolve classical wave functions, inspect spectra, and
// cross-check the wave rule against trajectory enumeration.
//
// Exit codes: 0 success, 1 verification failure, 2 bad usage or config,
// 3 numerical abort (partial artifacts are written).

#include <cstdlib>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "qtrans/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"classical transport wave-function toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_override;
  std::int64_t seed_override = 0;
  bool quiet = false;

  const struct {
    const char* name;
    const char* desc;
    int (*run)(const qtrans::RunConfig&, std::ostream&, bool);
  } commands[] = {
      {"evolve", "integrate a configured run and write record/conservation artifacts",
       qtrans::cmd_evolve},
      {"spectrum", "eigenvalues, residuals and pairing of the configured generator",
       qtrans::cmd_spectrum},
      {"verify", "cross-check the wave rule against trajectory enumeration",
       qtrans::cmd_verify},
      {"automaton", "enumerate trajectory weights of a discrete automaton",
       qtrans::cmd_automaton},
      {"extended", "dense joint-path tables and marginals on the cyclic space",
       qtrans::cmd_extended},
  };
  for (const auto& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.desc);
    sub->add_option("--config", config_path, "path to the JSON run config")->required();
    sub->add_option("--output", output_override, "output directory (overrides the config)");
    sub->add_option("--seed", seed_override, "seed override, recorded in artifact headers");
    sub->add_flag("--quiet", quiet, "suppress progress output");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    qtrans::RunConfig cfg = qtrans::load_config(config_path);
    if (!output_override.empty()) {
      cfg.output_dir = output_override;
    } else if (const char* env = std::getenv("QTRANS_OUTPUT")) {
      cfg.output_dir = env;
    }
    if (sub->count("--seed")) {
      if (seed_override < 0) throw qtrans::ConfigError("config: seed must be non-negative");
      cfg.seed = static_cast<std::uint64_t>(seed_override);
    }
    for (const auto& c : commands)
      if (sub->get_name() == c.name) return c.run(cfg, std::cout, quiet);
    return 2;
  } catch (const qtrans::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
