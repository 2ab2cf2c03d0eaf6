#include "causaldiffrec/env_inference.hpp"

#include <cmath>

#include <fmt/format.h>

namespace causaldiffrec::envinf {

EnvInferenceParams init_env_inference(Index latent_dim, Index hidden_dim, Index env_dim, Engine& rng) {
  if (latent_dim < 1 || hidden_dim < 1 || env_dim < 1) throw Error("environment inference dimensions must be positive");
  EnvInferenceParams p;
  p.w1 = nn::glorot_uniform(latent_dim, hidden_dim, rng);
  p.b1 = Matrix::Zero(1, hidden_dim);
  p.w2 = nn::glorot_uniform(hidden_dim, 2 * env_dim, rng);
  p.b2 = Matrix::Zero(1, 2 * env_dim);
  return p;
}

EnvVars bind(ad::Tape& tape, const EnvInferenceParams& p, bool trainable) {
  auto make = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  return {make(p.w1), make(p.b1), make(p.w2), make(p.b2)};
}

EnvLatentVars infer_env(const ad::Var& latents, const EnvVars& params, const RowVector& noise,
                        const nn::StdClamp& clamp) {
  if (latents.cols() != params.w1.rows())
    throw Error(fmt::format("infer_env: latent width {} does not match {}", latents.cols(), params.w1.rows()));
  const Index e = params.w2.cols() / 2;
  if (noise.size() != e) throw Error("infer_env: noise width does not match env_dim");
  ad::Var pooled = ad::mean_rows(latents);
  ad::Var hidden = ad::tanh(ad::add_row(ad::matmul(pooled, params.w1), params.b1));
  ad::Var out = ad::add_row(ad::matmul(hidden, params.w2), params.b2);
  ad::Var mean = ad::slice_cols(out, 0, e);
  ad::Var log_std = ad::clamp(ad::slice_cols(out, e, e), std::log(clamp.min_std), std::log(clamp.max_std));
  ad::Var std = ad::exp(log_std);
  ad::Var eps = latents.tape().constant(Matrix(noise));
  return {mean, std, ad::add(mean, ad::mul(std, eps))};
}

EnvLatent infer_env(const Matrix& latents, const EnvInferenceParams& params, const RowVector& noise,
                    const nn::StdClamp& clamp) {
  ad::Tape tape;
  const EnvVars vars = bind(tape, params, false);
  const EnvLatentVars out = infer_env(tape.constant(latents), vars, noise, clamp);
  return {out.mean.value().row(0), out.std.value().row(0), out.sample.value().row(0), noise};
}

EnvLatent infer_env(const Matrix& latents, const EnvInferenceParams& params, Engine& rng,
                    const nn::StdClamp& clamp) {
  const RowVector noise = standard_normal(1, params.env_dim(), rng).row(0);
  return infer_env(latents, params, noise, clamp);
}

double env_kl(const EnvLatent& latent) {
  double kl = 0.0;
  for (Index j = 0; j < latent.mean.size(); ++j) {
    const double m = latent.mean[j], s = latent.std[j];
    kl += 0.5 * (m * m + s * s - 1.0 - std::log(s * s));
  }
  return kl;
}

ad::Var env_kl(const EnvLatentVars& latent) { return ad::standard_normal_kl(latent.mean, latent.std); }

double env_elbo_loss(double reconstruction_term, double kl) { return -reconstruction_term + kl; }

}  // namespace causaldiffrec::envinf
