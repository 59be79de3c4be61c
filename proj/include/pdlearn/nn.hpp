#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdlearn/rng.hpp"

namespace pdlearn::nn {

enum class Activation { kIdentity, kRelu, kSigmoid };

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kIdentity;
};

// Gradients of a scalar objective upstream^T * output with respect to the
// network parameters (flat, same layout as Mlp::params()) and the input.
struct Gradients {
  std::vector<double> d_params;
  std::vector<double> d_input;
};

inline double apply_activation(Activation act, double z) {
  switch (act) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z > 0.0 ? z : 0.0;
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative given both the pre-activation z and the post-activation a.
// ReLU uses subgradient 0 at z == 0.
inline double activation_derivative(Activation act, double z, double a) {
  switch (act) {
    case Activation::kIdentity: return 1.0;
    case Activation::kRelu: return z > 0.0 ? 1.0 : 0.0;
    case Activation::kSigmoid: return a * (1.0 - a);
  }
  return 1.0;
}

// Dense feed-forward network over a single flat parameter vector.
// Layer l owns params [offset_l, offset_l + out*in + out): weights
// row-major (out x in) followed by biases.
class Mlp {
 public:
  Mlp() = default;

  explicit Mlp(std::vector<LayerSpec> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) throw std::invalid_argument("Mlp: no layers");
    std::size_t n = 0;
    offsets_.reserve(layers_.size());
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      const auto& s = layers_[l];
      if (s.in <= 0 || s.out <= 0)
        throw std::invalid_argument("Mlp: layer dimensions must be positive");
      if (l > 0 && s.in != layers_[l - 1].out)
        throw std::invalid_argument("Mlp: layer dimensions do not chain");
      offsets_.push_back(n);
      n += static_cast<std::size_t>(s.out) * s.in + s.out;
    }
    params_.assign(n, 0.0);
  }

  Mlp(int input_dim, std::span<const int> hidden, int output_dim,
      Activation hidden_act, Activation output_act)
      : Mlp(build_specs(input_dim, hidden, output_dim, hidden_act, output_act)) {}

  int input_dim() const { return layers_.front().in; }
  int output_dim() const { return layers_.back().out; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<double> params() { return params_; }
  std::span<const double> params() const { return params_; }
  std::size_t layer_offset(std::size_t l) const { return offsets_[l]; }

  std::vector<double> forward(std::span<const double> input) const {
    check_input(input);
    std::vector<double> a(input.begin(), input.end());
    std::vector<double> z;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      affine(l, a, z);
      for (double& v : z) v = apply_activation(layers_[l].act, v);
      a.swap(z);
    }
    return a;
  }

  // Backpropagates upstream = d(objective)/d(output). Returns both the
  // parameter gradient and the input gradient; the forward quantities are
  // recomputed internally.
  Gradients backward(std::span<const double> input,
                     std::span<const double> upstream) const {
    check_input(input);
    if (static_cast<int>(upstream.size()) != output_dim())
      throw std::invalid_argument("Mlp::backward: upstream size " +
                                  std::to_string(upstream.size()) +
                                  " != output dim " +
                                  std::to_string(output_dim()));
    const std::size_t depth = layers_.size();
    std::vector<std::vector<double>> acts(depth + 1);
    std::vector<std::vector<double>> pre(depth);
    acts[0].assign(input.begin(), input.end());
    for (std::size_t l = 0; l < depth; ++l) {
      affine(l, acts[l], pre[l]);
      acts[l + 1] = pre[l];
      for (double& v : acts[l + 1]) v = apply_activation(layers_[l].act, v);
    }

    Gradients g;
    g.d_params.assign(params_.size(), 0.0);
    std::vector<double> delta(upstream.begin(), upstream.end());
    std::vector<double> below_delta;
    for (std::size_t l = depth; l-- > 0;) {
      const auto& s = layers_[l];
      for (int o = 0; o < s.out; ++o)
        delta[o] *= activation_derivative(s.act, pre[l][o], acts[l + 1][o]);

      const double* w = params_.data() + offsets_[l];
      double* dw = g.d_params.data() + offsets_[l];
      double* db = dw + static_cast<std::size_t>(s.out) * s.in;
      const double* below = acts[l].data();
      below_delta.assign(s.in, 0.0);
      for (int o = 0; o < s.out; ++o) {
        const double d = delta[o];
        const double* wo = w + static_cast<std::size_t>(o) * s.in;
        double* dwo = dw + static_cast<std::size_t>(o) * s.in;
        for (int i = 0; i < s.in; ++i) {
          dwo[i] = d * below[i];
          below_delta[i] += d * wo[i];
        }
        db[o] = d;
      }
      delta.swap(below_delta);
    }
    g.d_input = std::move(delta);
    return g;
  }

 private:
  static std::vector<LayerSpec> build_specs(int input_dim,
                                            std::span<const int> hidden,
                                            int output_dim,
                                            Activation hidden_act,
                                            Activation output_act) {
    std::vector<LayerSpec> specs;
    int prev = input_dim;
    for (int width : hidden) {
      specs.push_back({prev, width, hidden_act});
      prev = width;
    }
    specs.push_back({prev, output_dim, output_act});
    return specs;
  }

  void check_input(std::span<const double> input) const {
    if (static_cast<int>(input.size()) != input_dim())
      throw std::invalid_argument("Mlp: input size " +
                                  std::to_string(input.size()) +
                                  " != input dim " +
                                  std::to_string(input_dim()));
  }

  // z = W a + b for layer l.
  void affine(std::size_t l, const std::vector<double>& a,
              std::vector<double>& z) const {
    const auto& s = layers_[l];
    const double* w = params_.data() + offsets_[l];
    const double* b = w + static_cast<std::size_t>(s.out) * s.in;
    z.assign(b, b + s.out);
    for (int o = 0; o < s.out; ++o) {
      const double* wo = w + static_cast<std::size_t>(o) * s.in;
      double acc = 0.0;
      for (int i = 0; i < s.in; ++i) acc += wo[i] * a[i];
      z[o] += acc;
    }
  }

  std::vector<LayerSpec> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// He-style scaled uniform init, weights and biases alike. Scattered
// biases spread the ReLU kinks across the input range; with zero biases
// every kink sits at the origin and the net starts positively
// homogeneous (exactly linear over positive scalar inputs).
inline void init_he_uniform(Mlp& net, Rng& rng) {
  auto params = net.params();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& s = net.layers()[l];
    const double limit = std::sqrt(6.0 / s.in);
    double* w = params.data() + net.layer_offset(l);
    for (int i = 0; i < s.out * s.in; ++i) w[i] = rng.uniform(-limit, limit);
    double* b = w + static_cast<std::size_t>(s.out) * s.in;
    for (int o = 0; o < s.out; ++o) b[o] = rng.uniform(-limit, limit);
  }
}

// Zeroes the final layer's weights and pins its bias so every output
// starts at `output_value` (exact for Identity and, when the value is
// nonnegative, for ReLU outputs).
inline void init_final_layer_constant(Mlp& net, double output_value) {
  const std::size_t l = net.layers().size() - 1;
  const auto& s = net.layers()[l];
  double* w = net.params().data() + net.layer_offset(l);
  for (int i = 0; i < s.out * s.in; ++i) w[i] = 0.0;
  double* b = w + static_cast<std::size_t>(s.out) * s.in;
  for (int o = 0; o < s.out; ++o) b[o] = output_value;
}

enum class Direction { kAscent, kDescent };

// Per-parameter first/second moment accumulators.
struct AdamState {
  std::vector<double> m, v;
  long step_count = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
};

// One Adam update over a flat parameter slice. Non-finite gradient
// entries raise immediately so training loops surface divergence instead
// of propagating NaNs.
inline void adam_step(std::span<double> params, AdamState& state,
                      std::span<const double> grad, double lr, Direction dir) {
  if (params.size() != grad.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: shape mismatch");
  if (!(lr > 0.0)) throw std::invalid_argument("adam_step: lr must be > 0");
  state.step_count += 1;
  const double corr1 = 1.0 - std::pow(state.beta1, state.step_count);
  const double corr2 = 1.0 - std::pow(state.beta2, state.step_count);
  const double sign = dir == Direction::kAscent ? 1.0 : -1.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    if (!std::isfinite(g))
      throw std::runtime_error("adam_step: non-finite gradient at index " +
                               std::to_string(i));
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / corr1;
    const double vhat = state.v[i] / corr2;
    params[i] += sign * lr * mhat / (std::sqrt(vhat) + state.epsilon);
  }
}

// Elementwise [.]+; applied to multiplier-network outputs wherever they
// are consumed, guaranteeing lambda(h) >= 0.
inline void clamp_nonnegative(std::span<double> v) {
  for (double& x : v) x = std::max(x, 0.0);
}

}  // namespace pdlearn::nn
