#include "trojanforge/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "trojanforge/error.hpp"

namespace trojanforge {

namespace {

void check_dims(std::span<const std::size_t> layer_dims) {
  if (layer_dims.size() < 2) {
    throw InvalidArgument("layer_dims needs at least an input and an output size");
  }
  for (std::size_t d : layer_dims) {
    if (d == 0) throw InvalidArgument("layer_dims entries must be positive");
  }
}

void check_input(const Model& model, std::span<const double> x) {
  if (model.layer_dims.empty()) throw InvalidArgument("model has no layers");
  if (x.size() != model.input_dim()) {
    throw InvalidArgument("input length " + std::to_string(x.size()) + " does not match model input " +
                          std::to_string(model.input_dim()));
  }
}

// out = W * in + b
void affine(const Matrix& w, const Vector& b, std::span<const double> in, Vector& out) {
  out.assign(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    const double* row = &w.data[r * w.cols];
    double acc = b[r];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * in[c];
    out[r] = acc;
  }
}

}  // namespace

std::size_t Model::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].data.size() + biases[i].size();
  return n;
}

Model zero_model(std::span<const std::size_t> layer_dims) {
  check_dims(layer_dims);
  Model m;
  m.layer_dims.assign(layer_dims.begin(), layer_dims.end());
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    m.weights.emplace_back(layer_dims[i + 1], layer_dims[i]);
    m.biases.emplace_back(layer_dims[i + 1], 0.0);
  }
  return m;
}

Model init_model(std::span<const std::size_t> layer_dims, std::uint64_t seed) {
  Model m = zero_model(layer_dims);
  std::mt19937_64 rng(seed);
  for (auto& w : m.weights) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : w.data) v = dist(rng);
  }
  return m;
}

Model zeros_like(const Model& model) { return zero_model(model.layer_dims); }

LabelDist softmax(std::span<const double> logits) {
  LabelDist p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

ForwardCache forward_cached(const Model& model, std::span<const double> x) {
  check_input(model, x);
  ForwardCache cache;
  cache.activations.reserve(model.num_layers());
  cache.activations.emplace_back(x.begin(), x.end());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Vector z;
    affine(model.weights[l], model.biases[l], cache.activations.back(), z);
    if (l + 1 == model.num_layers()) {
      cache.logits = std::move(z);
    } else {
      for (double& v : z) v = std::max(v, 0.0);
      cache.activations.push_back(std::move(z));
    }
  }
  cache.probs = softmax(cache.logits);
  return cache;
}

LabelDist forward(const Model& model, std::span<const double> x) {
  check_input(model, x);
  Vector a(x.begin(), x.end());
  Vector z;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    affine(model.weights[l], model.biases[l], a, z);
    if (l + 1 < model.num_layers()) {
      for (double& v : z) v = std::max(v, 0.0);
    }
    a.swap(z);
  }
  return softmax(a);
}

double cross_entropy(std::span<const double> target, std::span<const double> predicted) {
  if (target.size() != predicted.size()) {
    throw InvalidArgument("cross_entropy: target has " + std::to_string(target.size()) +
                          " entries, prediction has " + std::to_string(predicted.size()));
  }
  double loss = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (target[j] != 0.0) loss -= target[j] * std::log(std::max(predicted[j], kLogClamp));
  }
  return loss;
}

Vector cross_entropy_logit_grad(std::span<const double> target, std::span<const double> probs) {
  // dL/dp_j = -t_j / p_j where the clamp is inactive, 0 where it is.
  // Folding that through the softmax Jacobian gives p_i * sum_active(t) - t_i [i active].
  double active_mass = 0.0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    if (probs[j] > kLogClamp) active_mass += target[j];
  }
  Vector g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) {
    g[i] = probs[i] * active_mass - (probs[i] > kLogClamp ? target[i] : 0.0);
  }
  return g;
}

Vector softmax_backward(std::span<const double> probs, std::span<const double> dprobs) {
  double dot = 0.0;
  for (std::size_t j = 0; j < probs.size(); ++j) dot += probs[j] * dprobs[j];
  Vector g(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) g[i] = probs[i] * (dprobs[i] - dot);
  return g;
}

Vector backward(const Model& model, const ForwardCache& cache, std::span<const double> dlogits,
                Model* grad, double scale) {
  Vector delta(dlogits.begin(), dlogits.end());
  Vector below;
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    const Matrix& w = model.weights[l];
    const Vector& a = cache.activations[l];
    if (grad != nullptr) {
      Matrix& gw = grad->weights[l];
      Vector& gb = grad->biases[l];
      for (std::size_t r = 0; r < w.rows; ++r) {
        const double d = scale * delta[r];
        if (d == 0.0) continue;
        double* row = &gw.data[r * gw.cols];
        for (std::size_t c = 0; c < w.cols; ++c) row[c] += d * a[c];
        gb[r] += d;
      }
    }
    below.assign(w.cols, 0.0);
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double d = delta[r];
      if (d == 0.0) continue;
      const double* row = &w.data[r * w.cols];
      for (std::size_t c = 0; c < w.cols; ++c) below[c] += row[c] * d;
    }
    if (l > 0) {
      for (std::size_t c = 0; c < below.size(); ++c) {
        if (!(a[c] > 0.0)) below[c] = 0.0;
      }
    }
    delta.swap(below);
  }
  return delta;
}

double accumulate_ce_gradient(const Model& model, std::span<const Example> batch, Model& grad,
                              double scale) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const Example& ex : batch) {
    if (ex.target.size() != model.output_dim()) {
      throw InvalidArgument("target length does not match model output");
    }
    ForwardCache cache = forward_cached(model, ex.input);
    loss += ex.weight * cross_entropy(ex.target, cache.probs);
    Vector dlogits = cross_entropy_logit_grad(ex.target, cache.probs);
    backward(model, cache, dlogits, &grad, scale * inv * ex.weight);
  }
  return loss * inv;
}

void add_scaled(Model& model, const Model& delta, double scale) {
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto& w = model.weights[l].data;
    const auto& dw = delta.weights[l].data;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] += scale * dw[i];
    auto& b = model.biases[l];
    const auto& db = delta.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += scale * db[i];
  }
}

Model grad_step(Model model, std::span<const Example> batch, double lr) {
  Model grad = zeros_like(model);
  accumulate_ce_gradient(model, batch, grad);
  add_scaled(model, grad, -lr);
  return model;
}

double mean_loss(const Model& model, std::span<const Example> data) {
  if (data.empty()) throw InvalidArgument("mean_loss over empty data");
  double loss = 0.0;
  for (const Example& ex : data) loss += ex.weight * cross_entropy(ex.target, forward(model, ex.input));
  return loss / static_cast<double>(data.size());
}

Model train(Model model, std::span<const Example> data, const TrainConfig& cfg) {
  if (data.empty()) throw InvalidArgument("train: empty dataset");
  if (cfg.batch_size == 0) throw InvalidArgument("train: batch_size must be positive");
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::vector<Example> batch;
  batch.reserve(cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      batch.clear();
      for (std::size_t i = start; i < stop; ++i) batch.push_back(data[order[i]]);
      Model grad = zeros_like(model);
      epoch_loss += accumulate_ce_gradient(model, batch, grad) * static_cast<double>(batch.size());
      add_scaled(model, grad, -cfg.lr);
    }
    if (!std::isfinite(epoch_loss) || !all_finite(model)) {
      throw NumericError("training loss diverged", epoch);
    }
  }
  return model;
}

std::size_t predict_class(std::span<const double> p) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < p.size(); ++i) {
    if (p[i] > p[best]) best = i;
  }
  return best;
}

LabelDist one_hot(std::size_t cls, std::size_t k) {
  if (cls >= k) throw InvalidArgument("class index " + std::to_string(cls) + " out of range");
  LabelDist y(k, 0.0);
  y[cls] = 1.0;
  return y;
}

bool all_finite(const Model& model) {
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    for (double v : model.weights[l].data) {
      if (!std::isfinite(v)) return false;
    }
    for (double v : model.biases[l]) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

void save_model(const Model& model, std::ostream& out) {
  out << "trojanforge-model 1\n" << model.layer_dims.size();
  for (std::size_t d : model.layer_dims) out << ' ' << d;
  out << '\n';
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    for (double v : model.weights[l].data) out << v << '\n';
    for (double v : model.biases[l]) out << v << '\n';
  }
  out.precision(old_precision);
}

Model load_model(std::istream& in) {
  std::string magic;
  int version = 0;
  std::size_t n = 0;
  if (!(in >> magic >> version >> n) || magic != "trojanforge-model" || version != 1) {
    throw InvalidArgument("not a trojanforge model stream");
  }
  std::vector<std::size_t> dims(n);
  for (auto& d : dims) {
    if (!(in >> d)) throw InvalidArgument("truncated model header");
  }
  Model m = zero_model(dims);
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (double& v : m.weights[l].data) {
      if (!(in >> v)) throw InvalidArgument("truncated model weights");
    }
    for (double& v : m.biases[l]) {
      if (!(in >> v)) throw InvalidArgument("truncated model biases");
    }
  }
  return m;
}

}  // namespace trojanforge
