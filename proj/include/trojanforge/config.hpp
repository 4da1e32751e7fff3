#pragma once

// Experiment configuration: a flat `key = value` file with `#` comments.
// Every key has a default, so an empty file is a valid configuration.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trojanforge {

enum class DataSource { idx, synthetic };

struct ExperimentConfig {
  // dataset
  DataSource data_source = DataSource::idx;
  std::filesystem::path train_images;
  std::filesystem::path train_labels;
  std::filesystem::path test_images;
  std::filesystem::path test_labels;
  std::size_t synthetic_classes = 3;
  std::size_t synthetic_train_per_class = 100;
  std::size_t synthetic_test_per_class = 50;
  std::size_t synthetic_dim = 16;
  double synthetic_sep = 1.0;

  // classifier
  std::vector<std::size_t> hidden = {64};
  double lr = 0.1;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;

  // trigger
  std::size_t trigger_size = 4;
  std::size_t trigger_row = 0;
  std::size_t trigger_col = 0;
  double trigger_value = 1.0;
  std::size_t target_class = 0;

  // poisoning ratio
  double alpha = 0.05;  // fixed ratio for the min-max game and its baseline
  double gamma = 0.002;
  std::size_t rounds = 5;
  double grid_step = 0.05;
  std::size_t sweep_epochs = 5;

  // min-max game
  std::size_t itr = 500;
  double gamma1 = 0.05;
  double gamma2 = 0.2;
  double gamma3 = 0.05;
  std::size_t probe_count = 128;
  std::size_t game_batch_size = 128;
  // Probe statistics; unset means the training set's global pixel mean / stddev.
  std::optional<double> mu;
  std::optional<double> sigma;
  std::size_t bins = 20;
  bool trojan_only_l3 = false;
  std::size_t trace_every = 50;

  // evaluation
  std::size_t eval_batches = 20;
  std::size_t eval_probes = 128;
  std::size_t detector_itr = 500;
  double detector_lr = 0.5;
  std::size_t verify_draws = 100;

  std::uint64_t seed = 1;
  std::filesystem::path out_dir = "out";
};

/// Defaults, with the IDX paths pointing at the bundled desk-scale MNIST subset.
ExperimentConfig default_config();

/// Parses `text`; relative paths are resolved against `base_dir`.
/// Throws ConfigError naming the offending key and line.
ExperimentConfig parse_config_text(const std::string& text, const std::filesystem::path& base_dir);

ExperimentConfig parse_config(const std::filesystem::path& path);

/// Every key except out_dir in a fixed order, one `key = value` per line.
/// Parsing the result yields the same configuration (out_dir aside).
std::string serialize_config(const ExperimentConfig& cfg);

/// 64-bit FNV-1a of serialize_config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Keys accepted by parse_config, in serialization order.
std::vector<std::string> config_keys();

}  // namespace trojanforge
