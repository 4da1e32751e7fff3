#pragma once

// Evaluation metrics: clean accuracy, attack success on triggered inputs,
// evasion of the detector, and the detector's verdict table.

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "trojanforge/data.hpp"
#include "trojanforge/minmax.hpp"
#include "trojanforge/nn.hpp"

namespace trojanforge {

/// Fraction of `test` classified correctly (argmax, ties to the lowest index).
double acc_clean(const Model& model, const Dataset& test);

/// Fraction of `test` sent to the target class once every sample carries the trigger.
double acc_trojan(const Model& model, const Dataset& test, const TriggerSpec& trigger);

/// Mean P(Trojan) = 1 - h_D over the model's outputs on `probes`.
double mean_trojan_probability(const Detector& det, const Model& model, const ProbeSet& probes);

/// Fraction of probe batches in which the model is NOT flagged. A batch flags
/// the model when its mean P(Trojan) is strictly greater than 0.5.
double evasion_rate(const Detector& det, const Model& model, std::size_t probe_batches,
                    std::size_t probes_per_batch, double mu, double sigma, std::uint64_t seed);

/// Mean mean-P(Trojan) over the same batches evasion_rate draws.
double mean_trojan_probability(const Detector& det, const Model& model, std::size_t probe_batches,
                               std::size_t probes_per_batch, double mu, double sigma, std::uint64_t seed);

/// rows: true source {clean, trojan}; columns: mean detector verdict {clean, trojan}.
using Confusion = std::array<std::array<double, 2>, 2>;

Confusion detector_confusion(const Detector& det, const Model& clean_model, const Model& trojan_model,
                             const ProbeSet& probes);

enum class ModelTag { clean, baseline_trojan, mm_trojan };

std::string to_string(ModelTag tag);

struct EvalReport {
  ModelTag model_tag = ModelTag::clean;
  double acc_c = 0.0;
  double acc_t = 0.0;
  // Absent when no detector was involved; written as NA.
  std::optional<double> evasion;
  std::optional<double> detector_mean_trojan_prob;
};

/// Header matching write_report_row.
inline constexpr const char* kReportHeader = "model_tag,acc_c,acc_t,evasion,mean_trojan_prob";

void write_report_row(std::ostream& out, const EvalReport& r);

}  // namespace trojanforge
