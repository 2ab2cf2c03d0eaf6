#pragma once

// Variational environment inference: pools node latents into a Gaussian
// environment variable whose sample conditions the denoiser.

#include "causaldiffrec/autodiff.hpp"
#include "causaldiffrec/nn.hpp"
#include "causaldiffrec/rng.hpp"

namespace causaldiffrec::envinf {

// Two-layer perceptron d -> hidden -> 2 * env_dim (mean, log-std).
struct EnvInferenceParams {
  Matrix w1;  // d x hidden
  Matrix b1;  // 1 x hidden
  Matrix w2;  // hidden x 2e
  Matrix b2;  // 1 x 2e

  Index latent_dim() const { return w1.rows(); }
  Index env_dim() const { return w2.cols() / 2; }
};

EnvInferenceParams init_env_inference(Index latent_dim, Index hidden_dim, Index env_dim, Engine& rng);

struct EnvLatent {
  RowVector mean;
  RowVector std;
  RowVector sample;
  RowVector noise;
};

struct EnvVars {
  ad::Var w1, b1, w2, b2;
};
EnvVars bind(ad::Tape& tape, const EnvInferenceParams& params, bool trainable);

struct EnvLatentVars {
  ad::Var mean;    // 1 x e
  ad::Var std;     // 1 x e
  ad::Var sample;  // 1 x e
};

EnvLatentVars infer_env(const ad::Var& latents, const EnvVars& params, const RowVector& noise,
                        const nn::StdClamp& clamp = {});

EnvLatent infer_env(const Matrix& latents, const EnvInferenceParams& params, const RowVector& noise,
                    const nn::StdClamp& clamp = {});
EnvLatent infer_env(const Matrix& latents, const EnvInferenceParams& params, Engine& rng,
                    const nn::StdClamp& clamp = {});

// KL(Q(E) || N(0, I)) = sum 0.5 * (mean^2 + std^2 - 1 - ln std^2).
double env_kl(const EnvLatent& latent);
ad::Var env_kl(const EnvLatentVars& latent);

// Negated ELBO: -reconstruction_term + kl, where reconstruction_term is the
// expected conditional log-likelihood.
double env_elbo_loss(double reconstruction_term, double kl);

}  // namespace causaldiffrec::envinf
