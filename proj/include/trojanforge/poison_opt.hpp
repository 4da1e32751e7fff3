#pragma once

// Adversary loss, its alpha-separable upper bound, and the greedy
// (Frank-Wolfe style) search for the poisoning ratio alpha.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "trojanforge/data.hpp"
#include "trojanforge/nn.hpp"

namespace trojanforge {

/// F_T split into its triggered-sample and clean-sample terms.
struct LossSplit {
  double total = 0.0;
  double trojan_term = 0.0;
  double clean_term = 0.0;
};

/// trojan_term = 1/(alpha N) * sum over the floor(alpha N) triggered samples of CE(Y_T, f(x'));
/// clean_term  = 1/((1-alpha) N) * sum over the remaining samples of CE(Y_i, f(x_i)).
LossSplit loss_split(const Model& model, const PoisonedDataset& poisoned);

/// The upper bound Fbar(alpha) = A / (alpha N) + B / ((1 - alpha) N).
///
/// A sums the target-class loss of every triggered sample and B the true-label
/// loss of every clean sample, both over all N samples. Neither depends on
/// alpha, so one pass over the data makes every later evaluation O(1).
struct BoundSurface {
  double trojan_sum = 0.0;  // A
  double clean_sum = 0.0;   // B
  std::size_t n = 0;

  double value(double alpha) const;
  double derivative(double alpha) const;
  double second_derivative(double alpha) const;

  /// Minimiser sqrt(A) / (sqrt(A) + sqrt(B)); 0.5 when both sums vanish.
  double stationary_point() const;
};

BoundSurface bound_surface(const Model& model, const Dataset& clean, const TriggerSpec& trigger);

double upper_bound(const Model& model, const Dataset& clean, const TriggerSpec& trigger, double alpha);
double grad_alpha(const Model& model, const Dataset& clean, const TriggerSpec& trigger, double alpha);

/// One row of the greedy trace. `c` is the cumulative step after this
/// iteration and `fbar` the objective at the updated alpha.
struct GreedyStep {
  std::size_t t = 0;
  double alpha = 0.0;
  double gamma_t = 0.0;
  double v = 0.0;
  double c = 0.0;
  double fbar = 0.0;
};

struct GreedyTrace {
  std::vector<GreedyStep> steps;
};

struct SearchResult {
  double alpha = 0.0;
  GreedyTrace trace;
};

/// Scalar objective driven by the search: value for the trace, derivative for
/// the linear oracle.
struct AlphaObjective {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
};

AlphaObjective objective_of(const BoundSurface& surface);

/// Number of greedy iterations for step size gamma: ceil(1 / gamma).
std::size_t greedy_iteration_count(double gamma);

inline constexpr double kDefaultGamma = 0.002;

/// Greedy search over alpha:
///   alpha^0 = gamma, c^0 = 0; while c < 1:
///     v = (1 - alpha) if -dF/dalpha > 0 else 0   (argmax of v * -dF over [0, 1 - alpha])
///     gamma_t = min(gamma, 1 - c); alpha += gamma_t * v; c += gamma_t
/// Returns the alpha held before the final update.
SearchResult submodular_search(const AlphaObjective& objective, double gamma = kDefaultGamma);
SearchResult submodular_search(const BoundSurface& surface, double gamma = kDefaultGamma);

struct SupermodularityReport {
  std::vector<double> alphas;           // interior grid points
  std::vector<double> grid_second_diff; // (F(a+h) - 2F(a) + F(a-h)) / h^2 on the grid spacing
  std::vector<double> fine_second_diff; // same with step kFineStep, for the analytic cross-check
  std::vector<double> analytic_second;
  double min_grid_second_diff = 0.0;
  double max_relative_mismatch = 0.0;
  bool convex = true;
  bool analytic_agrees = true;

  bool passed() const { return convex && analytic_agrees; }

  static constexpr double kTolerance = 1e-8;
  static constexpr double kRelativeTolerance = 1e-3;
  static constexpr double kFineStep = 1e-4;
};

/// `alphas` must be an evenly spaced grid of at least three points inside (0,1).
SupermodularityReport check_supermodularity(const BoundSurface& surface, std::span<const double> alphas);
SupermodularityReport check_supermodularity(const Model& model, const Dataset& clean,
                                            const TriggerSpec& trigger, std::span<const double> alphas);

/// Worst-case guarantee of the greedy search: achieved <= bound, with
/// bound = lambda / e + (1 - 1/e) beta.
struct BoundCertificate {
  double lambda = 0.0;
  double beta = 0.0;
  double achieved = 0.0;
  double bound = 0.0;

  bool holds() const;
};

/// lambda / beta are the min / max of Fbar over `grid` together with alpha_star,
/// so lambda <= achieved <= beta always.
BoundCertificate bound_certificate(const BoundSurface& surface, double alpha_star, std::span<const double> grid);
BoundCertificate bound_certificate(const Model& model, const Dataset& clean, const TriggerSpec& trigger,
                                   double alpha_star, std::span<const double> grid);

/// 0.05, 0.10, ..., 0.95.
std::vector<double> default_alpha_grid();

/// Training objective for a poisoned model.
enum class PoisonObjective {
  combined,  // plain mean cross-entropy over D_p
  split,     // triggered and clean groups weighted 1/(alpha N) and 1/((1-alpha) N)
};

struct AlternateConfig {
  std::vector<std::size_t> layer_dims;
  TrainConfig train;
  PoisonObjective objective = PoisonObjective::split;
  double gamma = kDefaultGamma;
  std::uint64_t seed = 1;
};

struct AlternateRound {
  double alpha = 0.0;
  BoundSurface surface;  // of the model the search ran against
  SearchResult search;
};

struct AlternateResult {
  double alpha = 0.0;
  Model model;
  PoisonedDataset poisoned;
  std::vector<AlternateRound> rounds;
};

/// Smallest usable poisoning ratio for a dataset of size n: max(alpha, 1/n).
double usable_alpha(double alpha, std::size_t n);

/// Fresh model trained on `clean` poisoned at `alpha`.
Model train_poisoned(const PoisonedDataset& poisoned, std::span<const std::size_t> layer_dims,
                     const TrainConfig& train, std::uint64_t init_seed,
                     PoisonObjective objective = PoisonObjective::combined);

/// Alternates alpha <- search(theta_T) and theta_T <- retrain(alpha) for up to
/// `rounds` rounds, stopping early once alpha moves by less than gamma.
/// theta_T starts as a model trained at alpha = gamma.
AlternateResult alternate_optimize(const Dataset& clean, const TriggerSpec& trigger, std::size_t rounds,
                                   const AlternateConfig& cfg);

}  // namespace trojanforge
