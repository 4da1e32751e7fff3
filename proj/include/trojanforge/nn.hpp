#pragma once

// Small feed-forward classifier engine: ReLU hidden layers, softmax output,
// cross-entropy loss, hand-written backpropagation and plain SGD.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace trojanforge {

using Vector = std::vector<double>;
/// Probability vector over k classes (entries in [0,1], summing to 1).
using LabelDist = std::vector<double>;

inline constexpr double kLogClamp = 1e-12;

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool operator==(const Matrix&) const = default;
};

/// Layered classifier. weights[i] is layer_dims[i+1] x layer_dims[i].
///
/// The same type doubles as a gradient accumulator (see zeros_like), since a
/// gradient has exactly the shape of the parameters it differentiates.
struct Model {
  std::vector<std::size_t> layer_dims;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;

  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }
  std::size_t num_layers() const { return weights.size(); }
  std::size_t num_parameters() const;

  bool operator==(const Model&) const = default;
};

/// One supervised pair: an input, its target distribution and the weight of
/// its loss term (losses are averaged as sum(weight * CE) / batch size).
struct Example {
  Vector input;
  LabelDist target;
  double weight = 1.0;
};

struct TrainConfig {
  double lr = 0.1;
  std::size_t epochs = 5;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

/// Intermediate values of one forward pass, kept for backpropagation.
/// activations[0] is the input; activations[i] the post-ReLU output of layer i.
struct ForwardCache {
  std::vector<Vector> activations;
  Vector logits;
  LabelDist probs;
};

Model init_model(std::span<const std::size_t> layer_dims, std::uint64_t seed);
Model zero_model(std::span<const std::size_t> layer_dims);
Model zeros_like(const Model& model);

LabelDist softmax(std::span<const double> logits);
LabelDist forward(const Model& model, std::span<const double> x);
ForwardCache forward_cached(const Model& model, std::span<const double> x);

/// -sum_j target_j * log(max(predicted_j, 1e-12)).
double cross_entropy(std::span<const double> target, std::span<const double> predicted);

/// Gradient of cross_entropy(target, softmax(logits)) with respect to the logits.
Vector cross_entropy_logit_grad(std::span<const double> target, std::span<const double> probs);

/// Pulls dL/dprobs back through the softmax: p * (g - <p, g>).
Vector softmax_backward(std::span<const double> probs, std::span<const double> dprobs);

/// Backpropagates dL/dlogits through the network. Adds scale * dL/dtheta into
/// `grad` when non-null and returns dL/dinput.
Vector backward(const Model& model, const ForwardCache& cache, std::span<const double> dlogits,
                Model* grad, double scale = 1.0);

/// Adds `scale` * mean weighted cross-entropy gradient over `batch` into `grad`.
/// Returns the mean weighted loss.
double accumulate_ce_gradient(const Model& model, std::span<const Example> batch, Model& grad,
                              double scale = 1.0);

/// model += scale * delta, parameter by parameter.
void add_scaled(Model& model, const Model& delta, double scale);

/// One SGD step on the mean cross-entropy over `batch`.
Model grad_step(Model model, std::span<const Example> batch, double lr);

/// Mean weighted cross-entropy of the model over `data`.
double mean_loss(const Model& model, std::span<const Example> data);

/// Minibatch SGD with a seeded per-epoch shuffle. Throws NumericError on NaN loss.
Model train(Model model, std::span<const Example> data, const TrainConfig& cfg);

/// Argmax with ties broken towards the lowest index.
std::size_t predict_class(std::span<const double> p);

LabelDist one_hot(std::size_t cls, std::size_t k);

bool all_finite(const Model& model);

void save_model(const Model& model, std::ostream& out);
Model load_model(std::istream& in);

}  // namespace trojanforge
