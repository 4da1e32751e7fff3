#pragma once

// Test-side oracles and random generators. Nothing here calls the code under
// test for the quantity it checks: gradients come from finite differences,
// integrals from quadrature, and reference algorithms are written out again.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "trojanforge/data.hpp"
#include "trojanforge/nn.hpp"

namespace tf_test {

using trojanforge::Example;
using trojanforge::Model;
using trojanforge::Vector;

/// Relative error with an absolute floor so near-zero pairs do not blow up.
inline double rel_err(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Visits every parameter of a model as a mutable double.
template <class Fn>
void for_each_param(Model& m, Fn&& fn) {
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (double& v : m.weights[l].data) fn(v);
    for (double& v : m.biases[l]) fn(v);
  }
}

template <class Fn>
void for_each_param(const Model& m, Fn&& fn) {
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    for (double v : m.weights[l].data) fn(v);
    for (double v : m.biases[l]) fn(v);
  }
}

inline std::vector<double> flatten(const Model& m) {
  std::vector<double> out;
  for_each_param(m, [&](double v) { out.push_back(v); });
  return out;
}

/// Central-difference gradient of `f` at `m`, one parameter at a time.
inline std::vector<double> fd_gradient(const Model& m, const std::function<double(const Model&)>& f,
                                       double h = 1e-5) {
  Model probe = m;
  std::vector<double*> params;
  for_each_param(probe, [&](double& v) { params.push_back(&v); });
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = *params[i];
    *params[i] = saved + h;
    const double up = f(probe);
    *params[i] = saved - h;
    const double down = f(probe);
    *params[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Central difference of a scalar function, Richardson-extrapolated from steps
/// h and h/2 so the truncation error is O(h^4) rather than O(h^2).
inline double richardson_derivative(const std::function<double(double)>& f, double x, double h) {
  const double coarse = (f(x + h) - f(x - h)) / (2.0 * h);
  const double fine = (f(x + h / 2) - f(x - h / 2)) / h;
  return (4.0 * fine - coarse) / 3.0;
}

/// Worst relative error between two gradient vectors, ignoring entries where
/// both are below `tiny` (ReLU-dead units give exact zeros on both sides).
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double tiny = 1e-9) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i]) < tiny && std::abs(b[i]) < tiny) continue;
    worst = std::max(worst, rel_err(a[i], b[i], 1e-6));
  }
  return worst;
}

/// Simpson's rule on [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 2000) {
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int i = 1; i < n; ++i) s += f(a + i * h) * (i % 2 == 1 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// E[clip(X, 0, 1)] for X ~ N(mu, sigma^2), by quadrature over the density.
inline double clipped_gaussian_mean(double mu, double sigma) {
  const double pi = 3.14159265358979323846;
  auto pdf = [&](double x) { return std::exp(-0.5 * (x - mu) * (x - mu) / (sigma * sigma)) / (sigma * std::sqrt(2 * pi)); };
  const double lo = mu - 12 * sigma;
  const double hi = mu + 12 * sigma;
  // Mass clipped to 0 contributes nothing; mass clipped to 1 contributes 1 each.
  const double mass_above = hi > 1.0 ? simpson(pdf, 1.0, hi) : 0.0;
  const double inside = simpson([&](double x) { return x * pdf(x); }, std::max(0.0, lo), std::min(1.0, hi));
  return inside + mass_above;
}

// ---- generators ------------------------------------------------------------

struct Gen {
  std::mt19937_64 rng;
  explicit Gen(std::uint64_t seed) : rng(seed) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
  std::size_t index(std::size_t lo, std::size_t hi) {  // inclusive
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  }

  Vector vec(std::size_t n, double lo, double hi) {
    Vector v(n);
    for (double& x : v) x = uniform(lo, hi);
    return v;
  }

  /// Random probability vector (normalised exponentials).
  Vector simplex(std::size_t k) {
    Vector v(k);
    double s = 0.0;
    for (double& x : v) s += (x = std::exp(uniform(-3.0, 3.0)));
    for (double& x : v) x /= s;
    return v;
  }

  std::vector<std::size_t> dims(std::size_t max_layers, std::size_t max_width) {
    std::vector<std::size_t> d(index(2, max_layers));
    for (auto& x : d) x = index(1, max_width);
    return d;
  }

  /// Model with weights spread over a random scale, so both confident and
  /// near-uniform outputs occur.
  Model model(const std::vector<std::size_t>& dims) {
    Model m = trojanforge::init_model(dims, rng());
    const double scale = uniform(0.3, 4.0);
    for_each_param(m, [&](double& v) { v = v * scale + (v == 0.0 ? uniform(-0.2, 0.2) : 0.0); });
    return m;
  }

  std::vector<Example> batch(std::size_t n, std::size_t in, std::size_t k) {
    std::vector<Example> b;
    for (std::size_t i = 0; i < n; ++i) b.push_back({vec(in, 0.0, 1.0), trojanforge::one_hot(index(0, k - 1), k)});
    return b;
  }

  trojanforge::Dataset dataset(std::size_t n, std::size_t dim, std::size_t k) {
    trojanforge::Dataset d;
    d.num_classes = k;
    for (std::size_t i = 0; i < n; ++i) {
      d.samples.push_back(vec(dim, 0.0, 1.0));
      d.labels.push_back(i < k ? i : index(0, k - 1));
    }
    return d;
  }
};

}  // namespace tf_test
