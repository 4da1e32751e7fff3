// trojanforge <subcommand> --config <path> [--out <dir>] [--seed <n>]

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "trojanforge/config.hpp"
#include "trojanforge/error.hpp"
#include "trojanforge/pipelines.hpp"

namespace {

std::string describe(const std::string& name) {
  if (name == "train-clean") return "train the clean model and report its accuracy";
  if (name == "submodular-search") return "alternate the poisoning-ratio search with Trojan retraining";
  if (name == "mm-trojan") return "train a Trojan with the min-max game against a probe detector";
  if (name == "verify") return "randomized invariant checks on the bound and the detector";
  return "";
}

int run(const std::string& subcommand, const std::string& config_path, const std::string& out_dir,
        const std::uint64_t* seed) {
  trojanforge::ExperimentConfig cfg = trojanforge::parse_config(config_path);
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  if (seed != nullptr) cfg.seed = *seed;
  return trojanforge::run_subcommand(subcommand, cfg, std::clog);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trojan poisoning-ratio search and min-max Trojan training experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  for (const std::string& name : trojanforge::subcommand_names()) {
    CLI::App* sub = app.add_subcommand(name, describe(name));
    sub->add_option("--config", config_path, "experiment config file (key = value lines)")->required();
    sub->add_option("--out", out_dir, "output directory (overrides out_dir)");
    sub->add_option("--seed", seed, "base seed (overrides seed)");
  }

  CLI11_PARSE(app, argc, argv);
  CLI::App* chosen = app.get_subcommands().front();
  const bool seed_given = chosen->count("--seed") > 0;

  try {
    return run(chosen->get_name(), config_path, out_dir, seed_given ? &seed : nullptr);
  } catch (const trojanforge::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const trojanforge::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
