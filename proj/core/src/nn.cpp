#include "gaf/nn.hpp"

#include <cmath>
#include <cstring>

namespace gaf {

Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), 0x9e3779b9u};
  return Rng(seq);
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(rows * cols);
  for (double& x : v) x = normal(rng);
  return Tensor::from({rows, cols}, std::move(v));
}

namespace {

Tensor uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

void set_requires_grad(ParamList& params, bool on) {
  for (auto& p : params) p.tensor.set_requires_grad(on);
}

void zero_grad(ParamList& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

std::uint64_t checksum(const ParamList& params) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& p : params) {
    for (double v : p.tensor.data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

bool all_grads_zero(const ParamList& params) {
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) {
      if (g != 0.0) return false;
    }
  }
  return true;
}

FreezeGuard::FreezeGuard(ParamList params) : params_(std::move(params)) {
  for (auto& p : params_) {
    saved_.push_back(p.tensor.requires_grad());
    p.tensor.set_requires_grad(false);
  }
}

FreezeGuard::~FreezeGuard() {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].tensor.set_requires_grad(saved_[i]);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(uniform_param({in, out}, in, rng)), bias(uniform_param({out}, in, rng)) {}

Tensor Linear::operator()(const Tensor& x) const { return add(matmul(x, weight), bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Conv1d::Conv1d(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride_,
               Rng& rng)
    : kernel(uniform_param({kernel_size, in, out}, kernel_size * in, rng)),
      bias(uniform_param({out}, kernel_size * in, rng)),
      stride(stride_) {}

Tensor Conv1d::operator()(const Tensor& x) const {
  return conv1d(x, kernel, bias, stride, padding);
}

void Conv1d::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".kernel", kernel});
  out.push_back({prefix + ".bias", bias});
}

}  // namespace gaf
