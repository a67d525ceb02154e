#include "gaf/segment_gaf.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "gaf/errors.hpp"

namespace gaf {

SegmentModel::SegmentModel(const SegmentConfig& cfg, Rng& rng)
    : config(cfg),
      att_conv1(cfg.input_dim, cfg.attention_hidden, cfg.attention_kernel, 1, rng),
      att_conv2(cfg.attention_hidden, 1, cfg.attention_kernel, 1, rng),
      theta_seg(cfg.input_dim, cfg.input_dim, rng),
      enhance_conv(cfg.input_dim + 1, cfg.input_dim, 3, 1, rng),
      pyr_conv(cfg.input_dim, cfg.input_dim, 3, 2, rng) {}

ParamList SegmentModel::parameters() const {
  ParamList out;
  att_conv1.collect(out, "segment.att_head.0");
  att_conv2.collect(out, "segment.att_head.1");
  theta_seg.collect(out, "segment.theta_seg");
  enhance_conv.collect(out, "segment.enhance_conv");
  pyr_conv.collect(out, "segment.pyr_conv");
  return out;
}

AttentionMap attention_forward(const SegmentModel& model, const Tensor& f) {
  if (f.rank() != 2 || f.dim(1) != model.config.input_dim) {
    throw DimensionError(fmt::format("segment input {} does not match input dim {}",
                                     to_string(f.shape()), model.config.input_dim));
  }
  return AttentionMap(sigmoid(model.att_conv2(relu(model.att_conv1(f)))));
}

Tensor enhance(const SegmentModel& model, const Tensor& f, const AttentionMap& lam) {
  const std::size_t T = f.dim(0);
  if (T < 4) throw DimensionError(fmt::format("pyramid needs T >= 4, got {}", T));
  if (lam.size() != T) {
    throw DimensionError(fmt::format("attention length {} != frame count {}", lam.size(), T));
  }
  const Tensor level1 = relu(model.enhance_conv(concat_cols(model.theta_seg(f), lam.tensor())));
  const Tensor level2 = relu(model.pyr_conv(level1));
  std::vector<std::size_t> rows(T);
  for (std::size_t t = 0; t < T; ++t) rows[t] = t / model.pyr_conv.stride;
  return scale(add(level1, gather_rows(level2, rows)), 0.5);
}

Tensor weighted_pool(const Tensor& f, const Tensor& weights) {
  if (f.rank() != 2 || weights.shape() != Shape{f.dim(0), 1}) {
    throw DimensionError(fmt::format("pool weights {} do not match features {}",
                                     to_string(weights.shape()), to_string(f.shape())));
  }
  const Tensor denom = sum(weights);
  if (!(denom.item() > kPoolingEpsilon)) {
    throw PoolingDegenerateError(fmt::format("pooling weights sum to {}", denom.item()));
  }
  return div(sum_rows(mul(f, weights)), denom);
}

PooledFeatures attention_pool(const Tensor& f, const AttentionMap& lam) {
  return {weighted_pool(f, lam.tensor()), weighted_pool(f, lam.complement())};
}

Tensor weighted_pool_or_mean(const Tensor& f, const Tensor& weights) {
  try {
    return weighted_pool(f, weights);
  } catch (const PoolingDegenerateError& e) {
    spdlog::warn("{}; falling back to the unweighted frame mean", e.what());
    return scale(sum_rows(f), 1.0 / static_cast<double>(f.dim(0)));
  }
}

Tensor fuse(const CvaeModel& frame_model, const Tensor& f, const AttentionMap& lam,
            const Tensor& eps) {
  for (const auto& p : frame_model.parameters()) {
    if (p.tensor.requires_grad()) {
      throw ContractError("fuse: frame model must be frozen, " + p.path + " requires grad");
    }
  }
  const LatentSample latent = encode(frame_model, f, lam, eps);
  const GaussianParams p = prior(frame_model, lam);
  return add(mean_squared_frame_error(f, decode(frame_model, latent.z, lam)),
             scale(kl_gaussian(latent.mu, latent.logvar, p.mu, p.logvar), kReconstructionKlWeight));
}

}  // namespace gaf
