#pragma once

#include <span>
#include <vector>

#include "gaf/tensor.hpp"

namespace gaf {

/// Per-frame attention values in [0, 1], held as a T x 1 tensor so it can
/// carry gradients back to whatever produced it.
class AttentionMap {
 public:
  AttentionMap() = default;
  // Throws ContractError unless the tensor is T x 1 with values in [0, 1].
  explicit AttentionMap(Tensor lam);
  static AttentionMap from_values(std::span<const double> values);
  static AttentionMap from_mask(std::span<const int> mask);
  static AttentionMap constant(std::size_t length, double value);

  const Tensor& tensor() const { return lam_; }
  std::size_t size() const { return lam_.dim(0); }
  std::span<const double> values() const { return lam_.data(); }
  // Same values, no gradient path.
  AttentionMap detach() const { return AttentionMap(lam_.detach()); }
  // 1 - lambda, differentiable.
  Tensor complement() const;

 private:
  Tensor lam_;
};

}  // namespace gaf
