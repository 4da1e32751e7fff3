#pragma once

// End-to-end experiment pipelines behind the command-line subcommands.
// Each writes CSV files into an output directory; every CSV starts with a
// `# config_hash=` comment followed by a header row.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "trojanforge/config.hpp"
#include "trojanforge/data.hpp"
#include "trojanforge/nn.hpp"

namespace trojanforge {

/// Names the files of one run: <subcommand>_<stamp>.csv plus
/// <subcommand>_<stamp>_<part>.<ext> companions.
class RunOutputs {
 public:
  RunOutputs(std::filesystem::path dir, std::string subcommand, std::string stamp, std::string hash);

  /// Opens <base>.csv (empty part) or <base>_<part>.csv and writes the hash line.
  std::ofstream csv(const std::string& part = "") const;
  std::filesystem::path file(const std::string& part, const std::string& ext) const;

  const std::filesystem::path& dir() const { return dir_; }
  const std::vector<std::filesystem::path>& written() const { return written_; }

 private:
  std::filesystem::path dir_;
  std::string base_;
  std::string hash_;
  mutable std::vector<std::filesystem::path> written_;
};

struct ExperimentData {
  Dataset train;
  Dataset test;
  TriggerSpec trigger;
  std::vector<std::size_t> layer_dims;
  // Probe statistics: the configured values, or the training set's pixel stats.
  double probe_mu = 0.0;
  double probe_sigma = 1.0;
};

/// Loads or generates the configured data and builds the trigger and model shape.
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// The clean reference model every subcommand compares against.
Model train_clean_model(const ExperimentConfig& cfg, const ExperimentData& data);

void cmd_train_clean(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log);
void cmd_submodular_search(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log);
void cmd_mm_trojan(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log);
/// Returns true iff every property check passed.
bool cmd_verify(const ExperimentConfig& cfg, const RunOutputs& out, std::ostream& log);

std::vector<std::string> subcommand_names();

/// Runs `subcommand` with outputs in cfg.out_dir, writing resolved_config.txt
/// alongside. Returns the process exit status.
int run_subcommand(const std::string& subcommand, const ExperimentConfig& cfg, std::ostream& log);

}  // namespace trojanforge
