#pragma once

// Instance-based Trojan detector and the min-max training game between the
// detector and the Trojan model, plus histogram diagnostics of the game's
// equilibrium (optimal-detector estimate, divergence between output laws).

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "trojanforge/data.hpp"
#include "trojanforge/nn.hpp"

namespace trojanforge {

inline constexpr std::size_t kDetectorHidden = 20;
inline constexpr std::size_t kCleanVerdict = 0;
inline constexpr std::size_t kTrojanVerdict = 1;

/// Binary classifier over k-dim model outputs, shaped [k, 20, 2].
/// Output component 0 is P(clean), component 1 is P(Trojan).
struct Detector {
  Model network;
};

Detector make_detector(std::size_t num_classes, std::uint64_t seed);

/// h_D(z): probability that z came from the clean model.
double detector_forward(const Detector& det, std::span<const double> z);

/// Outputs of `model` on every probe.
std::vector<LabelDist> model_outputs(const Model& model, const ProbeSet& probes);

struct DetectorStepStats {
  double loss = 0.0;            // mean CE over S before the step
  double mean_hd_trojan = 0.0;  // mean h_D on Trojan outputs before the step
  double mean_hd_clean = 0.0;
};

/// One gradient step of size gamma1 on the mean cross-entropy of the detector
/// over S = {(trojan output, 1), (clean output, 0)}.
Detector detector_update(Detector det, std::span<const LabelDist> trojan_outputs,
                         std::span<const LabelDist> clean_outputs, double gamma1,
                         DetectorStepStats* stats = nullptr);
Detector detector_update(Detector det, const Model& clean_model, const Model& trojan_model,
                         const ProbeSet& probes, double gamma1, DetectorStepStats* stats = nullptr);

/// Mean over probes of CE(h_D(f_T(x)), Trojan) = -log(1 - h_D(f_T(x))).
double fooling_loss(const Model& trojan, const Detector& det, std::span<const Vector> probes);

/// Gradient of fooling_loss with respect to the Trojan model's parameters,
/// with the detector frozen.
Model fooling_gradient(const Model& trojan, const Detector& det, std::span<const Vector> probes);

struct GeneratorStepStats {
  double fool_loss = 0.0;
  double cls_loss = 0.0;
};

/// theta_T <- theta_T + gamma2 * L2 - gamma3 * L3, where L2 is the fooling
/// gradient over the probes and L3 the mean cross-entropy gradient over `batch`.
/// With gamma2 == 0 this is exactly grad_step(trojan, batch, gamma3).
Model generator_update(Model trojan, const Detector& det, std::span<const Vector> probes,
                       std::span<const Example> batch, double gamma2, double gamma3,
                       GeneratorStepStats* stats = nullptr);

struct GameConfig {
  std::size_t itr = 2000;
  double gamma1 = 0.05;
  double gamma2 = 0.05;
  double gamma3 = 0.05;
  std::size_t probe_count = 128;
  std::size_t batch_size = 128;  // classification minibatch drawn from D_p
  double mu = 0.5;
  double sigma = 0.25;
  std::size_t bins = 20;
  std::uint64_t seed = 1;
  bool trojan_only_l3 = false;     // iterate over D_T alone instead of D_p
  std::size_t trace_every = 50;    // trace row stride (first and last iteration always recorded)
  std::size_t trace_probes = 1000; // fresh probes behind each trace row's statistics
  std::size_t monitor_samples = 500;

  void validate() const;
};

struct GameRecord {
  std::size_t iter = 0;
  double det_loss = 0.0;
  double gen_fool_loss = 0.0;
  double cls_loss = 0.0;
  double mean_hd_trojan = 0.0;
  double mean_hd_clean = 0.0;
  double jsd = 0.0;
  double acc_c = 0.0;
  double acc_t = 0.0;
};

struct GameTrace {
  std::vector<GameRecord> records;
};

struct GameResult {
  Model trojan;
  Detector detector;
  GameTrace trace;
};

/// Alternates detector_update and generator_update for cfg.itr iterations,
/// drawing fresh probes each iteration. `clean_model` stays frozen.
/// Trace accuracies are measured on the first monitor_samples clean samples.
GameResult mm_trojan_train(const Model& clean_model, const Model& init_trojan, const PoisonedDataset& poisoned,
                           const GameConfig& cfg);

/// A fresh detector trained for `iterations` steps against a fixed model pair.
Detector train_detector(const Model& clean_model, const Model& trojan_model, std::size_t iterations,
                        const GameConfig& cfg, std::uint64_t seed);

/// Scalar statistic used for 1-D histograms of output vectors: the largest
/// class probability, which lies in [1/k, 1].
double max_probability(std::span<const double> z);

/// Histogram estimate of h_D*(z) = p_C(z) / (p_T(z) + p_C(z)) over the
/// max-probability statistic.
struct BinnedEstimate {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> value;  // b / (a + b); 0.5 in empty cells
  std::vector<std::size_t> trojan_counts;
  std::vector<std::size_t> clean_counts;

  std::size_t bins() const { return value.size(); }
  std::size_t cell_of(double statistic) const;
  bool populated(std::size_t cell) const { return trojan_counts[cell] + clean_counts[cell] > 0; }
};

BinnedEstimate optimal_detector_estimate(std::span<const LabelDist> trojan_outputs,
                                         std::span<const LabelDist> clean_outputs, std::size_t bins);

/// KL(p_T || m) + KL(p_C || m) with m = (p_T + p_C) / 2 over the binned
/// max-probability statistic. Lies in [0, 2 log 2].
double js_divergence(std::span<const LabelDist> trojan_outputs, std::span<const LabelDist> clean_outputs,
                     std::size_t bins);

/// Mean absolute difference, over populated cells of `estimate`, between the
/// estimate and the detector's mean h_D on the outputs falling in that cell.
double detector_estimate_gap(const Detector& det, const BinnedEstimate& estimate,
                             std::span<const LabelDist> trojan_outputs, std::span<const LabelDist> clean_outputs);

}  // namespace trojanforge
