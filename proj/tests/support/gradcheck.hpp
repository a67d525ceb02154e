#pragma once

// Central finite-difference gradient checks against the tape.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gaf/nn.hpp"
#include "gaf/tensor.hpp"

namespace gaf::testing {

inline constexpr double kFdStep = 1e-6;

// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero derivatives from
// turning roundoff into a large ratio.
inline double relative_error(double analytic, double numeric, double floor = 1e-4) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Contracts any output with fixed random weights so non-scalar ops can be
// checked through a scalar loss.
inline Tensor project(const Tensor& out, Rng& rng) {
  if (out.numel() == 1) return sum(out);
  Tensor w = standard_normal(out.numel(), 1, rng);
  return sum(mul(reshape(out, {out.numel(), 1}), w));
}

// `loss` must rebuild the graph from `inputs` on every call. Returns the
// largest relative error over every element of every input.
inline double max_gradient_error(const std::function<Tensor()>& loss, std::vector<Tensor> inputs,
                                 double h = kFdStep) {
  for (auto& x : inputs) x.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& x : inputs) analytic.emplace_back(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto data = inputs[k].mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = loss().item();
      data[i] = saved - h;
      const double down = loss().item();
      data[i] = saved;
      worst = std::max(worst, relative_error(analytic[k][i], (up - down) / (2.0 * h)));
    }
  }
  return worst;
}

inline double max_gradient_error(const std::function<Tensor()>& loss, const ParamList& params,
                                 double h = kFdStep) {
  std::vector<Tensor> inputs;
  for (const auto& p : params) inputs.push_back(p.tensor);
  return max_gradient_error(loss, inputs, h);
}

// Uniform in [lo, hi], leaf with requires_grad.
inline Tensor uniform(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace gaf::testing
