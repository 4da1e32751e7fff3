#include "trojanforge/poison_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>
#include <numbers>
#include <string>

#include "trojanforge/error.hpp"
#include "trojanforge/seed.hpp"

namespace trojanforge {

namespace {

void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw InvalidArgument("alpha out of range (0,1): " + std::to_string(alpha));
  }
}

// Seed streams used by alternate_optimize.
enum : std::uint64_t { kInitStream = 0, kShuffleStream = 1, kPoisonStream = 2 };

}  // namespace

LossSplit loss_split(const Model& model, const PoisonedDataset& poisoned) {
  const std::size_t n = poisoned.clean.size();
  const double alpha = poisoned.alpha;
  check_alpha(alpha);
  if (poisoned.trojan_count() == 0) throw DegenerateAlpha("loss_split: no triggered samples");

  const LabelDist target = one_hot(poisoned.trigger.target_class, poisoned.clean.num_classes);
  double trojan_sum = 0.0;
  for (std::size_t i : poisoned.trojan_indices) {
    const Vector x = embed_trigger(poisoned.clean.samples[i], poisoned.trigger);
    trojan_sum += cross_entropy(target, forward(model, x));
  }
  double clean_sum = 0.0;
  for (std::size_t i : poisoned.clean_indices()) {
    const LabelDist y = one_hot(poisoned.clean.labels[i], poisoned.clean.num_classes);
    clean_sum += cross_entropy(y, forward(model, poisoned.clean.samples[i]));
  }
  LossSplit s;
  s.trojan_term = trojan_sum / (alpha * static_cast<double>(n));
  s.clean_term = clean_sum / ((1.0 - alpha) * static_cast<double>(n));
  s.total = s.trojan_term + s.clean_term;
  return s;
}

double BoundSurface::value(double alpha) const {
  check_alpha(alpha);
  const double nn = static_cast<double>(n);
  return trojan_sum / (alpha * nn) + clean_sum / ((1.0 - alpha) * nn);
}

double BoundSurface::derivative(double alpha) const {
  check_alpha(alpha);
  const double nn = static_cast<double>(n);
  const double beta = 1.0 - alpha;
  return -trojan_sum / (alpha * alpha * nn) + clean_sum / (beta * beta * nn);
}

double BoundSurface::second_derivative(double alpha) const {
  check_alpha(alpha);
  const double nn = static_cast<double>(n);
  const double beta = 1.0 - alpha;
  return 2.0 * trojan_sum / (alpha * alpha * alpha * nn) + 2.0 * clean_sum / (beta * beta * beta * nn);
}

double BoundSurface::stationary_point() const {
  const double a = std::sqrt(trojan_sum);
  const double b = std::sqrt(clean_sum);
  if (a + b == 0.0) return 0.5;
  return a / (a + b);
}

BoundSurface bound_surface(const Model& model, const Dataset& clean, const TriggerSpec& trigger) {
  if (clean.size() == 0) throw InvalidArgument("bound_surface: empty dataset");
  BoundSurface s;
  s.n = clean.size();
  const LabelDist target = one_hot(trigger.target_class, clean.num_classes);
  for (std::size_t i = 0; i < clean.size(); ++i) {
    s.trojan_sum += cross_entropy(target, forward(model, embed_trigger(clean.samples[i], trigger)));
    s.clean_sum += cross_entropy(one_hot(clean.labels[i], clean.num_classes), forward(model, clean.samples[i]));
  }
  return s;
}

double upper_bound(const Model& model, const Dataset& clean, const TriggerSpec& trigger, double alpha) {
  check_alpha(alpha);
  return bound_surface(model, clean, trigger).value(alpha);
}

double grad_alpha(const Model& model, const Dataset& clean, const TriggerSpec& trigger, double alpha) {
  check_alpha(alpha);
  return bound_surface(model, clean, trigger).derivative(alpha);
}

AlphaObjective objective_of(const BoundSurface& surface) {
  return {[surface](double a) { return surface.value(a); },
          [surface](double a) { return surface.derivative(a); }};
}

std::size_t greedy_iteration_count(double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidArgument("gamma out of range (0,1)");
  // The 1e-9 slack keeps e.g. 1/0.002 = 500.00000000000006 from rounding up to 501.
  return static_cast<std::size_t>(std::ceil(1.0 / gamma - 1e-9));
}

SearchResult submodular_search(const AlphaObjective& objective, double gamma) {
  const std::size_t iterations = greedy_iteration_count(gamma);
  SearchResult result;
  result.trace.steps.reserve(iterations);

  double alpha = gamma;
  double previous = alpha;
  for (std::size_t t = 0; t < iterations; ++t) {
    // Cumulative step kept as t * gamma so that exactly `iterations` steps reach 1.
    const double c = std::min(1.0, static_cast<double>(t) * gamma);
    const double descent = -objective.derivative(alpha);
    const double v = descent > 0.0 ? 1.0 - alpha : 0.0;
    const double gamma_t = std::min(gamma, 1.0 - c);
    previous = alpha;
    alpha += gamma_t * v;
    const double c_next = t + 1 == iterations ? 1.0 : static_cast<double>(t + 1) * gamma;
    result.trace.steps.push_back({t, alpha, gamma_t, v, c_next, objective.value(alpha)});
  }
  result.alpha = previous;
  return result;
}

SearchResult submodular_search(const BoundSurface& surface, double gamma) {
  return submodular_search(objective_of(surface), gamma);
}

SupermodularityReport check_supermodularity(const BoundSurface& surface, std::span<const double> alphas) {
  if (alphas.size() < 3) throw InvalidArgument("supermodularity grid needs at least 3 points");
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw InvalidArgument("supermodularity grid must lie inside (0,1)");
  }
  const double h = alphas[1] - alphas[0];
  if (!(h > 0.0)) throw InvalidArgument("supermodularity grid must be increasing");
  for (std::size_t i = 1; i + 1 < alphas.size(); ++i) {
    if (std::abs((alphas[i + 1] - alphas[i]) - h) > 1e-9) {
      throw InvalidArgument("supermodularity grid must be evenly spaced");
    }
  }

  SupermodularityReport r;
  r.min_grid_second_diff = std::numeric_limits<double>::infinity();
  constexpr double hf = SupermodularityReport::kFineStep;
  for (std::size_t i = 1; i + 1 < alphas.size(); ++i) {
    const double a = alphas[i];
    const double grid = (surface.value(alphas[i + 1]) - 2.0 * surface.value(a) + surface.value(alphas[i - 1])) / (h * h);
    const double fine = (surface.value(a + hf) - 2.0 * surface.value(a) + surface.value(a - hf)) / (hf * hf);
    const double analytic = surface.second_derivative(a);
    r.alphas.push_back(a);
    r.grid_second_diff.push_back(grid);
    r.fine_second_diff.push_back(fine);
    r.analytic_second.push_back(analytic);
    r.min_grid_second_diff = std::min(r.min_grid_second_diff, grid);
    if (grid < -SupermodularityReport::kTolerance) r.convex = false;
    if (analytic < 0.0) r.convex = false;
    // Exact zeros on both sides (all-zero losses) count as agreement.
    const double scale = std::max(std::abs(analytic), std::abs(fine));
    const double rel = scale == 0.0 ? 0.0 : std::abs(fine - analytic) / scale;
    r.max_relative_mismatch = std::max(r.max_relative_mismatch, rel);
    if (rel > SupermodularityReport::kRelativeTolerance) r.analytic_agrees = false;
  }
  return r;
}

SupermodularityReport check_supermodularity(const Model& model, const Dataset& clean,
                                            const TriggerSpec& trigger, std::span<const double> alphas) {
  return check_supermodularity(bound_surface(model, clean, trigger), alphas);
}

bool BoundCertificate::holds() const {
  // Relative slack for the rounding in lambda/e + (1-1/e) beta when lambda == beta.
  return achieved <= bound + 1e-12 * std::max(1.0, std::abs(bound));
}

BoundCertificate bound_certificate(const BoundSurface& surface, double alpha_star, std::span<const double> grid) {
  check_alpha(alpha_star);
  BoundCertificate c;
  c.achieved = surface.value(alpha_star);
  c.lambda = c.achieved;
  c.beta = c.achieved;
  for (double a : grid) {
    const double f = surface.value(a);
    c.lambda = std::min(c.lambda, f);
    c.beta = std::max(c.beta, f);
  }
  const double inv_e = 1.0 / std::numbers::e;
  c.bound = inv_e * c.lambda + (1.0 - inv_e) * c.beta;
  return c;
}

BoundCertificate bound_certificate(const Model& model, const Dataset& clean, const TriggerSpec& trigger,
                                   double alpha_star, std::span<const double> grid) {
  return bound_certificate(bound_surface(model, clean, trigger), alpha_star, grid);
}

std::vector<double> default_alpha_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
  return g;
}

double usable_alpha(double alpha, std::size_t n) {
  if (n == 0) throw InvalidArgument("usable_alpha: empty dataset");
  return std::max(alpha, 1.0 / static_cast<double>(n));
}

Model train_poisoned(const PoisonedDataset& poisoned, std::span<const std::size_t> layer_dims,
                     const TrainConfig& train_cfg, std::uint64_t init_seed, PoisonObjective objective) {
  const std::vector<Example> pairs =
      objective == PoisonObjective::split ? poisoned.balanced_training_pairs() : poisoned.training_pairs();
  return train(init_model(layer_dims, init_seed), pairs, train_cfg);
}

AlternateResult alternate_optimize(const Dataset& clean, const TriggerSpec& trigger, std::size_t rounds,
                                   const AlternateConfig& cfg) {
  if (rounds == 0) throw InvalidArgument("alternate_optimize: rounds must be at least 1");
  greedy_iteration_count(cfg.gamma);  // validates gamma

  auto retrain = [&](double alpha, std::size_t round) {
    const std::uint64_t round_seed = derive_seed(cfg.seed, round);
    PoisonedDataset poisoned =
        poison_dataset(clean, usable_alpha(alpha, clean.size()), trigger, derive_seed(round_seed, kPoisonStream));
    TrainConfig tc = cfg.train;
    tc.seed = derive_seed(round_seed, kShuffleStream);
    try {
      Model model = train_poisoned(poisoned, cfg.layer_dims, tc, derive_seed(round_seed, kInitStream), cfg.objective);
      return std::pair{std::move(poisoned), std::move(model)};
    } catch (const NumericError&) {
      throw NumericError("alternate_optimize: training diverged", round);
    }
  };

  AlternateResult result;
  auto [poisoned, model] = retrain(cfg.gamma, 0);
  double alpha = cfg.gamma;
  for (std::size_t r = 1; r <= rounds; ++r) {
    AlternateRound round;
    round.surface = bound_surface(model, clean, trigger);
    round.search = submodular_search(round.surface, cfg.gamma);
    round.alpha = round.search.alpha;
    const double previous = alpha;
    alpha = round.alpha;
    std::tie(poisoned, model) = retrain(alpha, r);
    result.rounds.push_back(std::move(round));
    if (r > 1 && std::abs(alpha - previous) < cfg.gamma) break;
  }
  result.alpha = alpha;
  result.model = std::move(model);
  result.poisoned = std::move(poisoned);
  return result;
}

}  // namespace trojanforge
