#pragma once

// Central finite-difference oracles for gradient checks. These stay
// independent of the backward pass they verify: only forward evaluations
// are used.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "pdlearn/nn.hpp"

namespace testsupport {

inline double central_diff(const std::function<double(double)>& f, double x,
                           double step) {
  return (f(x + step) - f(x - step)) / (2.0 * step);
}

// d(upstream^T net(input)) / d input, by central differences.
inline std::vector<double> fd_input_gradient(const pdlearn::nn::Mlp& net,
                                             std::vector<double> input,
                                             std::span<const double> upstream,
                                             double step = 1e-5) {
  const auto scalar = [&](const std::vector<double>& x) {
    const std::vector<double> y = net.forward(x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
    return s;
  };
  std::vector<double> grad(input.size());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const double saved = input[i];
    input[i] = saved + step;
    const double up = scalar(input);
    input[i] = saved - step;
    const double down = scalar(input);
    input[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// d(upstream^T net(input)) / d params, by central differences.
inline std::vector<double> fd_param_gradient(pdlearn::nn::Mlp net,
                                             std::span<const double> input,
                                             std::span<const double> upstream,
                                             double step = 1e-5) {
  const auto scalar = [&] {
    const std::vector<double> y = net.forward(input);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
    return s;
  };
  std::vector<double> grad(net.param_count());
  auto params = net.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + step;
    const double up = scalar();
    params[i] = saved - step;
    const double down = scalar();
    params[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

inline double max_rel_error(std::span<const double> a,
                            std::span<const double> b, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, rel_error(a[i], b[i], floor));
  return worst;
}

// True when some pre-activation sits within `margin` of a ReLU kink,
// where finite differences straddle the nondifferentiability.
inline bool near_relu_kink(const pdlearn::nn::Mlp& net,
                           std::span<const double> input, double margin) {
  std::vector<double> a(input.begin(), input.end());
  const auto params = net.params();
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& s = net.layers()[l];
    const double* w = params.data() + net.layer_offset(l);
    const double* b = w + static_cast<std::size_t>(s.out) * s.in;
    std::vector<double> z(static_cast<std::size_t>(s.out));
    for (int o = 0; o < s.out; ++o) {
      double acc = b[o];
      for (int i = 0; i < s.in; ++i)
        acc += w[static_cast<std::size_t>(o) * s.in + i] * a[static_cast<std::size_t>(i)];
      z[static_cast<std::size_t>(o)] = acc;
      if (s.act == pdlearn::nn::Activation::kRelu && std::abs(acc) < margin)
        return true;
    }
    for (int o = 0; o < s.out; ++o)
      z[static_cast<std::size_t>(o)] =
          pdlearn::nn::apply_activation(s.act, z[static_cast<std::size_t>(o)]);
    a = std::move(z);
  }
  return false;
}

}  // namespace testsupport
