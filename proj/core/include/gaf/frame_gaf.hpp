#pragma once

// Frame-level generative attention: a conditional VAE over single frames f_t
// conditioned on their attention value lambda_t.
//
//   encoder  q(z_t | f_t, lambda_t)  = N(mu, exp(logvar))
//   prior    p(z_t | lambda_t)       = N(mu_p, exp(logvar_p))
//   decoder  p(f_t | lambda_t, z_t)  = N(f_hat_t, I)
//
// Frames are processed independently; T only plays the role of a batch axis.

#include <string>

#include "gaf/attention.hpp"
#include "gaf/nn.hpp"
#include "gaf/tensor.hpp"

namespace gaf {

struct CvaeConfig {
  std::size_t input_dim = 16;
  std::size_t reduced_dim = 8;
  std::size_t hidden_dim = 32;
  std::size_t latent_dim = 8;
};

struct CvaeModel {
  CvaeConfig config;
  Linear theta_reduce;  // D -> D_r
  Linear enc_fc;        // D_r + 1 -> H_e
  Linear enc_mu;        // H_e -> d_z
  Linear enc_logvar;    // H_e -> d_z
  Linear prior_mu;      // 1 -> d_z
  Linear prior_logvar;  // 1 -> d_z
  Linear dec_fc;        // d_z + 1 -> H_d
  Linear theta_deconv;  // H_d -> D

  CvaeModel() = default;
  CvaeModel(const CvaeConfig& config, Rng& rng);

  // Paths are prefixed "frame.".
  ParamList parameters() const;
};

struct LatentSample {
  Tensor z;
  Tensor mu;
  Tensor logvar;
  Tensor eps;
};

struct GaussianParams {
  Tensor mu;
  Tensor logvar;
};

// eps must be T x d_z; it is treated as a constant.
LatentSample encode(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                    const Tensor& eps);
LatentSample encode(const CvaeModel& model, const Tensor& f, const AttentionMap& lam, Rng& rng);

GaussianParams prior(const CvaeModel& model, const AttentionMap& lam);

Tensor decode(const CvaeModel& model, const Tensor& z, const AttentionMap& lam);

// Closed-form KL(q || p) for diagonal Gaussians given as T x d mean and
// log-variance matrices; summed over d, averaged over T.
Tensor kl_gaussian(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p,
                   const Tensor& logvar_p);

// sum_t ||f_t - f_hat_t||^2 / T
Tensor mean_squared_frame_error(const Tensor& f, const Tensor& f_hat);

struct CvaeLoss {
  Tensor total;
  Tensor reconstruction;
  Tensor kl;
};

CvaeLoss cvae_loss(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                   double beta_kl, const Tensor& eps);

Tensor reconstruction_loss(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                           const Tensor& eps);

}  // namespace gaf
