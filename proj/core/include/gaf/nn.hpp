#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "gaf/tensor.hpp"

namespace gaf {

using Rng = std::mt19937_64;

// Independent stream for a named purpose under a master seed.
Rng make_rng(std::uint64_t seed, std::uint64_t stream);

enum class Stream : std::uint64_t {
  kFrameInit = 1,
  kSegmentInit = 2,
  kDetectorInit = 3,
  kShuffle = 4,
  kNoise = 5,
  kData = 6,
};

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  return make_rng(seed, static_cast<std::uint64_t>(stream));
}

// T x cols matrix of standard-normal draws.
Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng);

struct NamedParam {
  std::string path;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

void set_requires_grad(ParamList& params, bool on);
void zero_grad(ParamList& params);
// FNV-1a over the raw bytes of every parameter value, in list order.
std::uint64_t checksum(const ParamList& params);
bool all_grads_zero(const ParamList& params);

/// Restores requires_grad on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParamList params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamList params_;
  std::vector<bool> saved_;
};

/// Per-frame affine map: rows of x (T x in) -> T x out.
struct Linear {
  Tensor weight;  // in x out
  Tensor bias;    // out

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Temporal convolution over a T x D_in sequence.
struct Conv1d {
  Tensor kernel;  // k x in x out
  Tensor bias;    // out
  std::size_t stride = 1;
  Padding padding = Padding::kSame;

  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel_size, std::size_t stride, Rng& rng);

  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace gaf
