#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "support.hpp"
#include "trojanforge/data.hpp"
#include "trojanforge/error.hpp"
#include "trojanforge/metrics.hpp"
#include "trojanforge/minmax.hpp"
#include "trojanforge/nn.hpp"

using namespace trojanforge;
using tf_test::Gen;

namespace {

// Ten classes, ten samples each; sample i of class c has feature c set to 1.
Dataset indicator_dataset() {
  Dataset d;
  d.num_classes = 10;
  for (std::size_t i = 0; i < 100; ++i) {
    Vector x(10, 0.0);
    x[i % 10] = 1.0;
    d.samples.push_back(x);
    d.labels.push_back(i % 10);
  }
  return d;
}

Model identity_model() {
  Model m = zero_model(std::vector<std::size_t>{10, 10});
  for (std::size_t i = 0; i < 10; ++i) m.weights[0](i, i) = 10.0;
  return m;
}

Model constant_model(std::size_t in, std::size_t k, std::size_t cls) {
  Model m = zero_model(std::vector<std::size_t>{in, k});
  m.biases[0][cls] = 30.0;
  return m;
}

}  // namespace

TEST_CASE("acc_clean examples") {
  const Dataset d = indicator_dataset();
  CHECK(acc_clean(identity_model(), d) == 1.0);
  CHECK(acc_clean(zero_model(std::vector<std::size_t>{10, 10}), d) == doctest::Approx(0.1));
  Dataset empty;
  empty.num_classes = 10;
  CHECK_THROWS_AS(acc_clean(identity_model(), empty), InvalidArgument);
}

TEST_CASE("acc_trojan examples") {
  const Dataset d = indicator_dataset();
  const TriggerSpec t = square_trigger(1, 10, 2, 0, 8, 1.0, 3);
  CHECK(acc_trojan(constant_model(10, 10, 3), d, t) == 1.0);
  CHECK(acc_trojan(constant_model(10, 10, 4), d, t) == 0.0);
  Dataset empty;
  empty.num_classes = 10;
  CHECK_THROWS_AS(acc_trojan(identity_model(), empty, t), InvalidArgument);
}

TEST_CASE("property: an input-blind target model has Acc-T 1 and Acc-C equal to the target frequency") {
  Gen g(1);
  for (int draw = 0; draw < 50; ++draw) {
    const std::size_t k = g.index(2, 6);
    const Dataset d = g.dataset(g.index(k, 80), g.index(2, 9), k);
    const std::size_t target = g.index(0, k - 1);
    const TriggerSpec t = square_trigger_for(d, 1, 0, 0, 1.0, target);
    const Model m = constant_model(d.dim(), k, target);
    CHECK(acc_trojan(m, d, t) == 1.0);
    const double freq = static_cast<double>(std::count(d.labels.begin(), d.labels.end(), target)) /
                        static_cast<double>(d.size());
    CHECK(acc_clean(m, d) == freq);
  }
}

TEST_CASE("evasion_rate examples") {
  const Detector blind{zero_model(std::vector<std::size_t>{3, 20, 2})};
  const Model m = init_model(std::vector<std::size_t>{5, 4, 3}, 2);
  CHECK(evasion_rate(blind, m, 20, 16, 0.5, 0.25, 3) == 1.0);
  CHECK(mean_trojan_probability(blind, m, 20, 16, 0.5, 0.25, 3) == 0.5);
  CHECK_THROWS_AS(evasion_rate(blind, m, 0, 16, 0.5, 0.25, 3), InvalidArgument);

  // A detector whose bias pins P(Trojan) near 1 flags every batch.
  Detector sure{zero_model(std::vector<std::size_t>{3, 20, 2})};
  sure.network.biases[1][kTrojanVerdict] = 10.0;
  CHECK(evasion_rate(sure, m, 20, 16, 0.5, 0.25, 3) == 0.0);
}

TEST_CASE("evasion_rate uses the strict threshold per batch") {
  // P(Trojan) = 1 - h_D is pinned just either side of 0.5 by the output bias.
  const Model m = init_model(std::vector<std::size_t>{4, 3}, 2);
  Detector d{zero_model(std::vector<std::size_t>{3, 20, 2})};
  d.network.biases[1][kTrojanVerdict] = 1e-6;
  CHECK(evasion_rate(d, m, 5, 8, 0.5, 0.25, 1) == 0.0);
  d.network.biases[1][kTrojanVerdict] = -1e-6;
  CHECK(evasion_rate(d, m, 5, 8, 0.5, 0.25, 1) == 1.0);
}

TEST_CASE("evasion_rate and mean probability are deterministic given the seed") {
  Gen g(2);
  const Detector d{g.model({3, 20, 2})};
  const Model m = g.model({4, 5, 3});
  CHECK(evasion_rate(d, m, 7, 9, 0.4, 0.3, 11) == evasion_rate(d, m, 7, 9, 0.4, 0.3, 11));
  CHECK(mean_trojan_probability(d, m, 7, 9, 0.4, 0.3, 11) == mean_trojan_probability(d, m, 7, 9, 0.4, 0.3, 11));

  // Batch-mean average equals the mean over one set holding every batch's probes.
  const double direct = [&] {
    double sum = 0.0;
    const ProbeSet ps = sample_probes(10, 4, 0.4, 0.3, 5);
    for (const auto& x : ps.inputs) sum += 1.0 - detector_forward(d, forward(m, x));
    return sum / 10.0;
  }();
  CHECK(mean_trojan_probability(d, m, sample_probes(10, 4, 0.4, 0.3, 5)) == doctest::Approx(direct).epsilon(1e-12));
}

TEST_CASE("detector_confusion rows") {
  Gen g(3);
  for (int draw = 0; draw < 30; ++draw) {
    const Detector d{g.model({3, 20, 2})};
    const Model clean = g.model({4, 5, 3});
    const Model trojan = g.model({4, 5, 3});
    const ProbeSet probes = sample_probes(40, 4, 0.5, 0.25, g.rng());
    const Confusion c = detector_confusion(d, clean, trojan, probes);
    for (const auto& row : c) {
      CHECK(std::abs(row[0] + row[1] - 1.0) < 1e-9);
      for (double v : row) CHECK((v >= 0.0 && v <= 1.0));
    }
    const Confusion same = detector_confusion(d, clean, clean, probes);
    CHECK(same[0] == same[1]);
  }
  const ProbeSet none;
  CHECK_THROWS_AS(detector_confusion(Detector{zero_model(std::vector<std::size_t>{3, 20, 2})},
                                     init_model(std::vector<std::size_t>{4, 3}, 1),
                                     init_model(std::vector<std::size_t>{4, 3}, 1), none),
                  InvalidArgument);
}

TEST_CASE("report rows") {
  std::ostringstream out;
  EvalReport r;
  r.model_tag = ModelTag::baseline_trojan;
  r.acc_c = 0.9;
  r.acc_t = 0.25;
  write_report_row(out, r);
  r.model_tag = ModelTag::mm_trojan;
  r.evasion = 1.0;
  r.detector_mean_trojan_prob = 0.4999;
  write_report_row(out, r);
  CHECK(out.str() == "baseline_trojan,0.900000,0.250000,NA,NA\nmm_trojan,0.900000,0.250000,1.000000,0.499900\n");
  CHECK(std::string(kReportHeader) == "model_tag,acc_c,acc_t,evasion,mean_trojan_prob");
  CHECK(to_string(ModelTag::clean) == "clean");
}
