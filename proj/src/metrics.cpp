#include "trojanforge/metrics.hpp"

#include <cstdio>
#include <ostream>
#include <string>

#include "trojanforge/error.hpp"
#include "trojanforge/seed.hpp"

namespace trojanforge {

double acc_clean(const Model& model, const Dataset& test) {
  if (test.size() == 0) throw InvalidArgument("acc_clean: empty test set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (predict_class(forward(model, test.samples[i])) == test.labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

double acc_trojan(const Model& model, const Dataset& test, const TriggerSpec& trigger) {
  if (test.size() == 0) throw InvalidArgument("acc_trojan: empty test set");
  std::size_t hits = 0;
  for (const auto& x : test.samples) {
    if (predict_class(forward(model, embed_trigger(x, trigger))) == trigger.target_class) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

double mean_trojan_probability(const Detector& det, const Model& model, const ProbeSet& probes) {
  if (probes.inputs.empty()) throw InvalidArgument("mean_trojan_probability: empty probe set");
  double s = 0.0;
  for (const auto& x : probes.inputs) s += 1.0 - detector_forward(det, forward(model, x));
  return s / static_cast<double>(probes.inputs.size());
}

namespace {

template <typename F>
void for_each_batch(std::size_t probe_batches, std::size_t probes_per_batch, std::size_t dim, double mu,
                    double sigma, std::uint64_t seed, F&& f) {
  if (probe_batches == 0 || probes_per_batch == 0) throw InvalidArgument("probe batch counts must be positive");
  for (std::size_t b = 0; b < probe_batches; ++b) {
    f(sample_probes(probes_per_batch, dim, mu, sigma, derive_seed(seed, b)));
  }
}

}  // namespace

double evasion_rate(const Detector& det, const Model& model, std::size_t probe_batches,
                    std::size_t probes_per_batch, double mu, double sigma, std::uint64_t seed) {
  std::size_t evaded = 0;
  for_each_batch(probe_batches, probes_per_batch, model.input_dim(), mu, sigma, seed, [&](const ProbeSet& p) {
    if (!(mean_trojan_probability(det, model, p) > 0.5)) ++evaded;
  });
  return static_cast<double>(evaded) / static_cast<double>(probe_batches);
}

double mean_trojan_probability(const Detector& det, const Model& model, std::size_t probe_batches,
                               std::size_t probes_per_batch, double mu, double sigma, std::uint64_t seed) {
  double s = 0.0;
  for_each_batch(probe_batches, probes_per_batch, model.input_dim(), mu, sigma, seed,
                 [&](const ProbeSet& p) { s += mean_trojan_probability(det, model, p); });
  return s / static_cast<double>(probe_batches);
}

Confusion detector_confusion(const Detector& det, const Model& clean_model, const Model& trojan_model,
                             const ProbeSet& probes) {
  if (probes.inputs.empty()) throw InvalidArgument("detector_confusion: empty probe set");
  Confusion c{};
  const Model* sources[2] = {&clean_model, &trojan_model};
  for (std::size_t row = 0; row < 2; ++row) {
    double clean_verdict = 0.0;
    for (const auto& x : probes.inputs) clean_verdict += detector_forward(det, forward(*sources[row], x));
    clean_verdict /= static_cast<double>(probes.inputs.size());
    c[row] = {clean_verdict, 1.0 - clean_verdict};
  }
  return c;
}

std::string to_string(ModelTag tag) {
  switch (tag) {
    case ModelTag::clean: return "clean";
    case ModelTag::baseline_trojan: return "baseline_trojan";
    case ModelTag::mm_trojan: return "mm_trojan";
  }
  return "unknown";
}

void write_report_row(std::ostream& out, const EvalReport& r) {
  auto field = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", *v);
    return std::string(buf);
  };
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,", to_string(r.model_tag).c_str(), r.acc_c, r.acc_t);
  out << buf << field(r.evasion) << ',' << field(r.detector_mean_trojan_prob) << '\n';
}

}  // namespace trojanforge
