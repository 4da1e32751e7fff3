#pragma once

// Datasets, IDX ingestion, the synthetic blob generator, trigger embedding,
// dataset poisoning and random probe sets for the detector.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "trojanforge/nn.hpp"

namespace trojanforge {

/// Labelled samples with features in [0,1].
struct Dataset {
  std::vector<Vector> samples;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::optional<std::size_t> image_side;  // d for d x d images

  std::size_t size() const { return samples.size(); }
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().size(); }

  /// Throws InvalidArgument if a dataset invariant is broken.
  void validate() const;

  /// First `n` samples (or all of them if there are fewer).
  Dataset head(std::size_t n) const;

  /// (x, one-hot label) pairs.
  std::vector<Example> examples() const;
};

/// Trigger x' = x * (1 - mask) + patch * mask, and the label it maps to.
struct TriggerSpec {
  Vector mask;   // entries in {0,1}
  Vector patch;  // entries in [0,1]
  std::size_t target_class = 0;

  void validate() const;
};

/// A `size` x `size` square of constant `value` at (row, col) on a rows x cols grid.
/// Non-image feature vectors are treated as a single row; the square is then
/// clipped to a 1 x size strip.
TriggerSpec square_trigger(std::size_t rows, std::size_t cols, std::size_t size, std::size_t row,
                           std::size_t col, double value, std::size_t target_class);

/// square_trigger laid out for `data`'s shape.
TriggerSpec square_trigger_for(const Dataset& data, std::size_t size, std::size_t row,
                               std::size_t col, double value, std::size_t target_class);

Vector embed_trigger(std::span<const double> x, const TriggerSpec& trigger);

/// Clean data plus the subset chosen to carry the trigger.
///
/// Two views are kept: training_pairs() is the combined D_p (every clean pair
/// plus a triggered copy of each selected sample), while trojan_indices and
/// clean_indices() split the N clean samples into floor(alpha N) poisoned
/// and ceil((1-alpha) N) untouched ones for loss bookkeeping.
struct PoisonedDataset {
  Dataset clean;
  std::vector<std::size_t> trojan_indices;  // sorted, distinct
  TriggerSpec trigger;
  double alpha = 0.0;

  std::size_t trojan_count() const { return trojan_indices.size(); }

  /// Complement of trojan_indices in [0, N), sorted.
  std::vector<std::size_t> clean_indices() const;

  /// Triggered copies labelled with the target class.
  std::vector<Example> trojan_pairs() const;

  /// D_p: all clean pairs followed by the triggered copies.
  std::vector<Example> training_pairs() const;

  /// D_p with the triggered copies cycled until they match the clean pairs in
  /// number, so the mean loss is proportional to
  ///   1/(alpha N) * sum_triggered CE + 1/((1-alpha) N) * sum_clean CE
  /// (up to the rounding of N / floor(alpha N)). Repetition rather than
  /// per-example weights keeps SGD stable when alpha N is tiny.
  std::vector<Example> balanced_training_pairs() const;
};

/// floor(alpha * n) without floating-point surprises at exact products.
std::size_t trojan_count_for(double alpha, std::size_t n);

PoisonedDataset poison_dataset(const Dataset& clean, double alpha, const TriggerSpec& trigger,
                               std::uint64_t seed);

/// Random detector inputs drawn i.i.d. per feature from N(mu, sigma), clipped to [0,1].
struct ProbeSet {
  std::vector<Vector> inputs;
  double mu = 0.0;
  double sigma = 1.0;
};

ProbeSet sample_probes(std::size_t count, std::size_t dim, double mu, double sigma,
                       std::uint64_t seed);

struct PixelStats {
  double mean = 0.0;
  double stddev = 0.0;
};

/// Global mean / standard deviation over every feature of every sample.
PixelStats pixel_stats(const Dataset& data);

/// Reads an IDX image file (magic 0x803) and label file (magic 0x801).
/// Pixels are scaled by 1/255.
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Parses in-memory IDX buffers; load_idx forwards here.
Dataset parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);

/// Writes `data` as an IDX pair. Features are rounded to bytes (x * 255).
/// Requires square image data.
void write_idx(const Dataset& data, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// k Gaussian blobs (per-feature noise 0.1) whose means are pairwise
/// `separation` apart in Euclidean distance, clipped to [0,1].
Dataset gen_synthetic(std::size_t k, std::size_t n_per_class, std::size_t dim, double separation,
                      std::uint64_t seed);

inline constexpr double kSyntheticNoise = 0.1;

}  // namespace trojanforge
