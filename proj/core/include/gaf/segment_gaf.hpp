#pragma once

#include <optional>

#include "gaf/attention.hpp"
#include "gaf/frame_gaf.hpp"
#include "gaf/nn.hpp"
#include "gaf/tensor.hpp"

namespace gaf {

struct SegmentConfig {
  std::size_t input_dim = 16;
  std::size_t attention_hidden = 16;
  std::size_t attention_kernel = 3;
};

struct SegmentModel {
  SegmentConfig config;
  Conv1d att_conv1;     // D -> H_a, kernel attention_kernel
  Conv1d att_conv2;     // H_a -> 1, kernel attention_kernel, sigmoid
  Linear theta_seg;     // D -> D
  Conv1d enhance_conv;  // D + 1 -> D, kernel 3
  Conv1d pyr_conv;      // D -> D, kernel 3, stride 2

  SegmentModel() = default;
  SegmentModel(const SegmentConfig& config, Rng& rng);

  // Paths are prefixed "segment.".
  ParamList parameters() const;
};

AttentionMap attention_forward(const SegmentModel& model, const Tensor& f);

// Average of the stride-1 level and the nearest-upsampled stride-2 level.
// Throws DimensionError for T < 4.
Tensor enhance(const SegmentModel& model, const Tensor& f, const AttentionMap& lam);

struct PooledFeatures {
  Tensor action;      // 1 x D, weights lambda
  Tensor non_action;  // 1 x D, weights 1 - lambda
};

inline constexpr double kPoolingEpsilon = 1e-6;

// Weighted frame mean sum_t w_t f_t / sum_t w_t for a T x 1 weight column.
// Throws PoolingDegenerateError when sum_t w_t <= kPoolingEpsilon.
Tensor weighted_pool(const Tensor& f, const Tensor& weights);

// Strict form: throws PoolingDegenerateError if either denominator vanishes.
PooledFeatures attention_pool(const Tensor& f, const AttentionMap& lam);

// Training form: a vanishing denominator falls back to the unweighted frame
// mean and logs a warning.
Tensor weighted_pool_or_mean(const Tensor& f, const Tensor& weights);

// Weight of the KL term in L_R. With a unit-variance decoder,
// -log p(f | z, lambda) = 0.5 ||f - f_hat||^2 + const, so in squared-error
// units the negative ELBO is MSE + 2 KL.
inline constexpr double kReconstructionKlWeight = 2.0;

// L_R: negative ELBO of the frozen CVAE under the segment attention,
//   sum_t ||f_t - X_R,t||^2 / T + 2 KL(q(z | f, lambda) || p(z | lambda)),
// a bound on -log p(f | lambda) with one latent sample. The CVAE parameters
// must not require grad.
Tensor fuse(const CvaeModel& frame_model, const Tensor& f, const AttentionMap& lam,
            const Tensor& eps);

}  // namespace gaf
