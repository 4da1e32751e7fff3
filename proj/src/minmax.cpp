#include "trojanforge/minmax.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "trojanforge/error.hpp"
#include "trojanforge/metrics.hpp"
#include "trojanforge/seed.hpp"

namespace trojanforge {

namespace {

const LabelDist kCleanLabel = {1.0, 0.0};
const LabelDist kTrojanLabel = {0.0, 1.0};

enum : std::uint64_t { kDetectorInitStream = 0, kProbeStream = 1, kBatchStream = 2, kTraceStream = 3 };

void check_output_dim(const Detector& det, std::span<const double> z) {
  if (z.size() != det.network.input_dim()) {
    throw InvalidArgument("detector expects " + std::to_string(det.network.input_dim()) +
                          "-dim inputs, got " + std::to_string(z.size()));
  }
}

double mean_hd(const Detector& det, std::span<const LabelDist> outputs) {
  double s = 0.0;
  for (const auto& z : outputs) s += detector_forward(det, z);
  return outputs.empty() ? 0.0 : s / static_cast<double>(outputs.size());
}

// Cycles through a seeded permutation of [0, n), reshuffling at each wrap.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  void next(std::span<const Example> pool, std::size_t count, std::vector<Example>& out) {
    out.clear();
    for (std::size_t i = 0; i < count; ++i) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng_);
        pos_ = 0;
      }
      out.push_back(pool[order_[pos_++]]);
    }
  }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace

Detector make_detector(std::size_t num_classes, std::uint64_t seed) {
  const std::array<std::size_t, 3> dims{num_classes, kDetectorHidden, 2};
  return Detector{init_model(dims, seed)};
}

double detector_forward(const Detector& det, std::span<const double> z) {
  check_output_dim(det, z);
  return forward(det.network, z)[kCleanVerdict];
}

std::vector<LabelDist> model_outputs(const Model& model, const ProbeSet& probes) {
  std::vector<LabelDist> out;
  out.reserve(probes.inputs.size());
  for (const auto& x : probes.inputs) out.push_back(forward(model, x));
  return out;
}

Detector detector_update(Detector det, std::span<const LabelDist> trojan_outputs,
                         std::span<const LabelDist> clean_outputs, double gamma1, DetectorStepStats* stats) {
  if (trojan_outputs.empty() || clean_outputs.empty()) throw InvalidArgument("detector_update: empty probe set");
  std::vector<Example> s;
  s.reserve(trojan_outputs.size() + clean_outputs.size());
  for (const auto& z : trojan_outputs) {
    check_output_dim(det, z);
    s.push_back({z, kTrojanLabel});
  }
  for (const auto& z : clean_outputs) {
    check_output_dim(det, z);
    s.push_back({z, kCleanLabel});
  }
  if (stats != nullptr) {
    stats->mean_hd_trojan = mean_hd(det, trojan_outputs);
    stats->mean_hd_clean = mean_hd(det, clean_outputs);
  }
  Model grad = zeros_like(det.network);
  const double loss = accumulate_ce_gradient(det.network, s, grad);
  if (stats != nullptr) stats->loss = loss;
  add_scaled(det.network, grad, -gamma1);
  return det;
}

Detector detector_update(Detector det, const Model& clean_model, const Model& trojan_model, const ProbeSet& probes,
                         double gamma1, DetectorStepStats* stats) {
  if (probes.inputs.empty()) throw InvalidArgument("detector_update: empty probe set");
  return detector_update(std::move(det), model_outputs(trojan_model, probes), model_outputs(clean_model, probes),
                         gamma1, stats);
}

double fooling_loss(const Model& trojan, const Detector& det, std::span<const Vector> probes) {
  if (probes.empty()) throw InvalidArgument("fooling_loss: empty probe set");
  double loss = 0.0;
  for (const auto& x : probes) {
    loss += cross_entropy(kTrojanLabel, forward(det.network, forward(trojan, x)));
  }
  return loss / static_cast<double>(probes.size());
}

Model fooling_gradient(const Model& trojan, const Detector& det, std::span<const Vector> probes) {
  if (probes.empty()) throw InvalidArgument("fooling_gradient: empty probe set");
  if (trojan.output_dim() != det.network.input_dim()) {
    throw InvalidArgument("fooling_gradient: model output and detector input differ");
  }
  Model grad = zeros_like(trojan);
  const double inv = 1.0 / static_cast<double>(probes.size());
  for (const auto& x : probes) {
    const ForwardCache gen = forward_cached(trojan, x);
    const ForwardCache dis = forward_cached(det.network, gen.probs);
    const Vector d_dis_logits = cross_entropy_logit_grad(kTrojanLabel, dis.probs);
    const Vector dz = backward(det.network, dis, d_dis_logits, nullptr);
    const Vector d_gen_logits = softmax_backward(gen.probs, dz);
    backward(trojan, gen, d_gen_logits, &grad, inv);
  }
  return grad;
}

Model generator_update(Model trojan, const Detector& det, std::span<const Vector> probes,
                       std::span<const Example> batch, double gamma2, double gamma3, GeneratorStepStats* stats) {
  if (batch.empty()) throw InvalidArgument("generator_update: empty training batch");
  if (gamma2 != 0.0) {
    const Model fool = fooling_gradient(trojan, det, probes);
    if (stats != nullptr) stats->fool_loss = fooling_loss(trojan, det, probes);
    Model cls = zeros_like(trojan);
    const double loss = accumulate_ce_gradient(trojan, batch, cls);
    if (stats != nullptr) stats->cls_loss = loss;
    add_scaled(trojan, fool, gamma2);
    add_scaled(trojan, cls, -gamma3);
    return trojan;
  }
  if (stats != nullptr) {
    stats->fool_loss = probes.empty() ? 0.0 : fooling_loss(trojan, det, probes);
    stats->cls_loss = mean_loss(trojan, batch);
  }
  return grad_step(std::move(trojan), batch, gamma3);
}

void GameConfig::validate() const {
  if (itr == 0) throw InvalidArgument("game: itr must be at least 1");
  if (!(gamma1 >= 0.0 && gamma2 >= 0.0 && gamma3 >= 0.0)) throw InvalidArgument("game: negative learning rate");
  if (probe_count == 0 || batch_size == 0) throw InvalidArgument("game: probe_count and batch_size must be positive");
  if (!(sigma > 0.0)) throw InvalidArgument("game: sigma must be positive");
  if (bins < 2) throw InvalidArgument("game: bins must be at least 2");
  if (trace_every == 0 || trace_probes == 0) throw InvalidArgument("game: trace settings must be positive");
}

GameResult mm_trojan_train(const Model& clean_model, const Model& init_trojan, const PoisonedDataset& poisoned,
                           const GameConfig& cfg) {
  cfg.validate();
  if (clean_model.layer_dims != init_trojan.layer_dims) {
    throw InvalidArgument("mm_trojan_train: clean and Trojan models differ in shape");
  }
  const std::vector<Example> pool = cfg.trojan_only_l3 ? poisoned.trojan_pairs() : poisoned.training_pairs();
  if (pool.empty()) throw InvalidArgument("mm_trojan_train: empty training pool");
  const Dataset monitor = poisoned.clean.head(cfg.monitor_samples);
  const std::size_t dim = clean_model.input_dim();

  GameResult result{init_trojan, make_detector(clean_model.output_dim(), derive_seed(cfg.seed, kDetectorInitStream)),
                    {}};
  BatchSampler sampler(pool.size(), derive_seed(cfg.seed, kBatchStream));
  std::vector<Example> batch;

  for (std::size_t i = 1; i <= cfg.itr; ++i) {
    const ProbeSet probes = sample_probes(cfg.probe_count, dim, cfg.mu, cfg.sigma,
                                          derive_seed(derive_seed(cfg.seed, kProbeStream), i));
    DetectorStepStats dstats;
    result.detector = detector_update(std::move(result.detector), model_outputs(result.trojan, probes),
                                      model_outputs(clean_model, probes), cfg.gamma1, &dstats);

    sampler.next(pool, cfg.batch_size, batch);
    GeneratorStepStats gstats;
    result.trojan =
        generator_update(std::move(result.trojan), result.detector, probes.inputs, batch, cfg.gamma2, cfg.gamma3, &gstats);

    if (!std::isfinite(dstats.loss) || !std::isfinite(gstats.cls_loss) || !all_finite(result.trojan) ||
        !all_finite(result.detector.network)) {
      throw NumericError("min-max training diverged", i);
    }

    if (i == 1 || i == cfg.itr || i % cfg.trace_every == 0) {
      const ProbeSet fresh = sample_probes(cfg.trace_probes, dim, cfg.mu, cfg.sigma,
                                           derive_seed(derive_seed(cfg.seed, kTraceStream), i));
      const auto zt = model_outputs(result.trojan, fresh);
      const auto zc = model_outputs(clean_model, fresh);
      GameRecord rec;
      rec.iter = i;
      rec.det_loss = dstats.loss;
      rec.gen_fool_loss = gstats.fool_loss;
      rec.cls_loss = gstats.cls_loss;
      rec.mean_hd_trojan = mean_hd(result.detector, zt);
      rec.mean_hd_clean = mean_hd(result.detector, zc);
      rec.jsd = js_divergence(zt, zc, cfg.bins);
      rec.acc_c = acc_clean(result.trojan, monitor);
      rec.acc_t = acc_trojan(result.trojan, monitor, poisoned.trigger);
      result.trace.records.push_back(rec);
    }
  }
  return result;
}

Detector train_detector(const Model& clean_model, const Model& trojan_model, std::size_t iterations,
                        const GameConfig& cfg, std::uint64_t seed) {
  Detector det = make_detector(clean_model.output_dim(), derive_seed(seed, kDetectorInitStream));
  for (std::size_t i = 1; i <= iterations; ++i) {
    const ProbeSet probes = sample_probes(cfg.probe_count, clean_model.input_dim(), cfg.mu, cfg.sigma,
                                          derive_seed(derive_seed(seed, kProbeStream), i));
    det = detector_update(std::move(det), clean_model, trojan_model, probes, cfg.gamma1);
  }
  return det;
}

double max_probability(std::span<const double> z) {
  if (z.empty()) throw InvalidArgument("max_probability of empty vector");
  return *std::max_element(z.begin(), z.end());
}

std::size_t BinnedEstimate::cell_of(double statistic) const {
  const double pos = (statistic - lo) / (hi - lo) * static_cast<double>(bins());
  if (!(pos > 0.0)) return 0;
  return std::min(bins() - 1, static_cast<std::size_t>(pos));
}

namespace {

BinnedEstimate histogram(std::span<const LabelDist> trojan_outputs, std::span<const LabelDist> clean_outputs,
                         std::size_t bins) {
  if (bins < 2) throw InvalidArgument("histogram needs at least 2 bins");
  if (trojan_outputs.empty() || clean_outputs.empty()) throw InvalidArgument("histogram of empty output list");
  const std::size_t k = trojan_outputs.front().size();
  BinnedEstimate e;
  e.lo = 1.0 / static_cast<double>(k);
  e.hi = 1.0;
  e.value.assign(bins, 0.5);
  e.trojan_counts.assign(bins, 0);
  e.clean_counts.assign(bins, 0);
  for (const auto& z : trojan_outputs) {
    if (z.size() != k) throw InvalidArgument("output vectors differ in length");
    ++e.trojan_counts[e.cell_of(max_probability(z))];
  }
  for (const auto& z : clean_outputs) {
    if (z.size() != k) throw InvalidArgument("output vectors differ in length");
    ++e.clean_counts[e.cell_of(max_probability(z))];
  }
  return e;
}

}  // namespace

BinnedEstimate optimal_detector_estimate(std::span<const LabelDist> trojan_outputs,
                                         std::span<const LabelDist> clean_outputs, std::size_t bins) {
  BinnedEstimate e = histogram(trojan_outputs, clean_outputs, bins);
  const double nt = static_cast<double>(trojan_outputs.size());
  const double nc = static_cast<double>(clean_outputs.size());
  for (std::size_t c = 0; c < bins; ++c) {
    const double a = static_cast<double>(e.trojan_counts[c]) / nt;
    const double b = static_cast<double>(e.clean_counts[c]) / nc;
    if (a + b > 0.0) e.value[c] = b / (a + b);
  }
  return e;
}

double js_divergence(std::span<const LabelDist> trojan_outputs, std::span<const LabelDist> clean_outputs,
                     std::size_t bins) {
  const BinnedEstimate e = histogram(trojan_outputs, clean_outputs, bins);
  const double nt = static_cast<double>(trojan_outputs.size());
  const double nc = static_cast<double>(clean_outputs.size());
  double d = 0.0;
  for (std::size_t c = 0; c < bins; ++c) {
    const double p = static_cast<double>(e.trojan_counts[c]) / nt;
    const double q = static_cast<double>(e.clean_counts[c]) / nc;
    const double m = 0.5 * (p + q);
    if (p > 0.0) d += p * std::log(p / m);
    if (q > 0.0) d += q * std::log(q / m);
  }
  return std::max(0.0, d);
}

double detector_estimate_gap(const Detector& det, const BinnedEstimate& estimate,
                             std::span<const LabelDist> trojan_outputs, std::span<const LabelDist> clean_outputs) {
  std::vector<double> sum(estimate.bins(), 0.0);
  std::vector<std::size_t> count(estimate.bins(), 0);
  auto add = [&](std::span<const LabelDist> outputs) {
    for (const auto& z : outputs) {
      const std::size_t c = estimate.cell_of(max_probability(z));
      sum[c] += detector_forward(det, z);
      ++count[c];
    }
  };
  add(trojan_outputs);
  add(clean_outputs);
  double gap = 0.0;
  std::size_t populated = 0;
  for (std::size_t c = 0; c < estimate.bins(); ++c) {
    if (!estimate.populated(c) || count[c] == 0) continue;
    gap += std::abs(sum[c] / static_cast<double>(count[c]) - estimate.value[c]);
    ++populated;
  }
  return populated == 0 ? 0.0 : gap / static_cast<double>(populated);
}

}  // namespace trojanforge
