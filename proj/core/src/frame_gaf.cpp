#include "gaf/frame_gaf.hpp"

#include <fmt/format.h>

#include "gaf/errors.hpp"

namespace gaf {

CvaeModel::CvaeModel(const CvaeConfig& cfg, Rng& rng)
    : config(cfg),
      theta_reduce(cfg.input_dim, cfg.reduced_dim, rng),
      enc_fc(cfg.reduced_dim + 1, cfg.hidden_dim, rng),
      enc_mu(cfg.hidden_dim, cfg.latent_dim, rng),
      enc_logvar(cfg.hidden_dim, cfg.latent_dim, rng),
      prior_mu(1, cfg.latent_dim, rng),
      prior_logvar(1, cfg.latent_dim, rng),
      dec_fc(cfg.latent_dim + 1, cfg.hidden_dim, rng),
      theta_deconv(cfg.hidden_dim, cfg.input_dim, rng) {}

ParamList CvaeModel::parameters() const {
  ParamList out;
  theta_reduce.collect(out, "frame.theta_reduce");
  enc_fc.collect(out, "frame.enc_fc");
  enc_mu.collect(out, "frame.enc_mu");
  enc_logvar.collect(out, "frame.enc_logvar");
  prior_mu.collect(out, "frame.prior_mu");
  prior_logvar.collect(out, "frame.prior_logvar");
  dec_fc.collect(out, "frame.dec_fc");
  theta_deconv.collect(out, "frame.theta_deconv");
  return out;
}

namespace {

void check_frames(const CvaeModel& model, const Tensor& f, const AttentionMap& lam) {
  if (f.rank() != 2 || f.dim(1) != model.config.input_dim) {
    throw DimensionError(fmt::format("frame features {} do not match input dim {}",
                                     to_string(f.shape()), model.config.input_dim));
  }
  if (lam.size() != f.dim(0)) {
    throw DimensionError(fmt::format("attention length {} != frame count {}", lam.size(), f.dim(0)));
  }
}

}  // namespace

LatentSample encode(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                    const Tensor& eps) {
  check_frames(model, f, lam);
  const Shape latent_shape{f.dim(0), model.config.latent_dim};
  if (eps.shape() != latent_shape) {
    throw DimensionError(fmt::format("eps {} != latent shape {}", to_string(eps.shape()),
                                     to_string(latent_shape)));
  }
  const Tensor reduced = model.theta_reduce(f);
  const Tensor hidden = relu(model.enc_fc(concat_cols(reduced, lam.tensor())));
  LatentSample s;
  s.mu = model.enc_mu(hidden);
  s.logvar = model.enc_logvar(hidden);
  s.eps = eps.detach();
  s.z = add(s.mu, mul(exp(scale(s.logvar, 0.5)), s.eps));
  return s;
}

LatentSample encode(const CvaeModel& model, const Tensor& f, const AttentionMap& lam, Rng& rng) {
  return encode(model, f, lam, standard_normal(f.dim(0), model.config.latent_dim, rng));
}

GaussianParams prior(const CvaeModel& model, const AttentionMap& lam) {
  return {model.prior_mu(lam.tensor()), model.prior_logvar(lam.tensor())};
}

Tensor decode(const CvaeModel& model, const Tensor& z, const AttentionMap& lam) {
  if (z.rank() != 2 || z.dim(1) != model.config.latent_dim || z.dim(0) != lam.size()) {
    throw DimensionError(fmt::format("latent {} does not match T={} x d_z={}", to_string(z.shape()),
                                     lam.size(), model.config.latent_dim));
  }
  const Tensor hidden = relu(model.dec_fc(concat_cols(z, lam.tensor())));
  return model.theta_deconv(hidden);
}

Tensor kl_gaussian(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p,
                   const Tensor& logvar_p) {
  const Shape& s = mu_q.shape();
  if (s.size() != 2 || logvar_q.shape() != s || mu_p.shape() != s || logvar_p.shape() != s) {
    throw DimensionError("kl_gaussian: all four parameter matrices must share one T x d shape");
  }
  // 0.5 * [logvar_p - logvar_q + (var_q + (mu_q - mu_p)^2) / var_p - 1]
  const Tensor var_ratio = exp(sub(logvar_q, logvar_p));
  const Tensor mahal = mul(square(sub(mu_q, mu_p)), exp(neg(logvar_p)));
  const Tensor per = add_scalar(add(sub(logvar_p, logvar_q), add(var_ratio, mahal)), -1.0);
  return scale(sum(per), 0.5 / static_cast<double>(s[0]));
}

Tensor mean_squared_frame_error(const Tensor& f, const Tensor& f_hat) {
  if (f.shape() != f_hat.shape() || f.rank() != 2) {
    throw DimensionError(fmt::format("reconstruction {} vs target {}", to_string(f_hat.shape()),
                                     to_string(f.shape())));
  }
  return scale(sum(square(sub(f, f_hat))), 1.0 / static_cast<double>(f.dim(0)));
}

CvaeLoss cvae_loss(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                   double beta_kl, const Tensor& eps) {
  if (!(beta_kl >= 0.0)) throw ContractError("cvae_loss: beta_kl must be non-negative");
  const LatentSample s = encode(model, f, lam, eps);
  const GaussianParams p = prior(model, lam);
  CvaeLoss out;
  out.reconstruction = mean_squared_frame_error(f, decode(model, s.z, lam));
  out.kl = kl_gaussian(s.mu, s.logvar, p.mu, p.logvar);
  out.total = beta_kl == 0.0 ? out.reconstruction : add(out.reconstruction, scale(out.kl, beta_kl));
  return out;
}

Tensor reconstruction_loss(const CvaeModel& model, const Tensor& f, const AttentionMap& lam,
                           const Tensor& eps) {
  const LatentSample s = encode(model, f, lam, eps);
  return mean_squared_frame_error(f, decode(model, s.z, lam));
}

}  // namespace gaf
