#include "gaf/attention.hpp"

#include <fmt/format.h>

#include "gaf/errors.hpp"

namespace gaf {

AttentionMap::AttentionMap(Tensor lam) : lam_(std::move(lam)) {
  if (!lam_.defined() || lam_.rank() != 2 || lam_.dim(1) != 1) {
    throw ContractError("attention map must be a T x 1 tensor");
  }
  for (double v : lam_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw ContractError(fmt::format("attention value {} outside [0, 1]", v));
    }
  }
}

AttentionMap AttentionMap::from_values(std::span<const double> values) {
  return AttentionMap(Tensor::from({values.size(), 1}, {values.begin(), values.end()}));
}

AttentionMap AttentionMap::from_mask(std::span<const int> mask) {
  return AttentionMap(Tensor::from({mask.size(), 1}, {mask.begin(), mask.end()}));
}

AttentionMap AttentionMap::constant(std::size_t length, double value) {
  return AttentionMap(Tensor::full({length, 1}, value));
}

Tensor AttentionMap::complement() const { return add_scalar(neg(lam_), 1.0); }

}  // namespace gaf
