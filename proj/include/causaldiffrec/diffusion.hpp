#pragma once

// Conditional denoising diffusion over node latents.

#include <functional>
#include <vector>

#include "causaldiffrec/autodiff.hpp"
#include "causaldiffrec/rng.hpp"

namespace causaldiffrec::diffusion {

// Steps are 1-based; index 0 holds alpha_bar = 1 and no beta.
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
};

// Linear beta schedule from beta_start to beta_end over T steps.
NoiseSchedule make_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

// sqrt(abar_t) * x0 + sqrt(1 - abar_t) * noise.
Matrix q_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& schedule);
ad::Var q_sample(const ad::Var& x0, int t, const Matrix& noise, const NoiseSchedule& schedule);

// Sinusoidal embedding of the step index (sin half, cos half).
RowVector time_embedding(int t, Index dim);

// Row-wise perceptron on [x_t, z, time embedding] -> noise estimate.
struct DenoiserParams {
  Matrix w1;  // (d + e + time_embed_dim) x hidden
  Matrix b1;  // 1 x hidden
  Matrix w2;  // hidden x d
  Matrix b2;  // 1 x d
  Index time_embed_dim = 0;

  Index latent_dim() const { return w2.cols(); }
  Index env_dim() const { return w1.rows() - w2.cols() - time_embed_dim; }
};

DenoiserParams init_denoiser(Index latent_dim, Index env_dim, Index time_embed_dim, Index hidden_dim, Engine& rng);

struct DenoiserVars {
  ad::Var w1, b1, w2, b2;
  Index time_embed_dim = 0;
};
DenoiserVars bind(ad::Tape& tape, const DenoiserParams& params, bool trainable);

ad::Var predict_noise(const ad::Var& x_t, const ad::Var& z, int t, const DenoiserVars& params);
Matrix predict_noise(const Matrix& x_t, const RowVector& z, int t, const DenoiserParams& params);

// Posterior variance beta_t * (1 - abar_{t-1}) / (1 - abar_t).
double posterior_variance(int t, const NoiseSchedule& schedule);

// x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)
//           + sigma_t * zeta, with no noise term at t = 1.
// A null `zeta` drops the noise term at every step.
Matrix denoise_step(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& schedule,
                    const Matrix* zeta);
Matrix denoise_step(const Matrix& x_t, int t, const RowVector& z, const DenoiserParams& params,
                    const NoiseSchedule& schedule, Engine& rng);
ad::Var denoise_step(const ad::Var& x_t, int t, const ad::Var& z, const DenoiserVars& params,
                     const NoiseSchedule& schedule, const Matrix& zeta);

using NoisePredictor = std::function<Matrix(const Matrix& x_t, int t)>;

// Runs denoise steps start_step..1. A null rng gives the deterministic
// (zero-variance) chain. Throws, naming the step, on non-finite values.
Matrix reverse_sample(const Matrix& x_start, int start_step, const NoisePredictor& predictor,
                      const NoiseSchedule& schedule, Engine* rng);
Matrix reverse_sample(const Matrix& x_start, int start_step, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, Engine& rng);
// zetas[t - 1] is the noise of step t (unused for t = 1).
ad::Var reverse_sample(const ad::Var& x_start, int start_step, const ad::Var& z, const DenoiserVars& params,
                       const NoiseSchedule& schedule, const std::vector<Matrix>& zetas);

// Mean over nodes and dimensions of (noise - eps_theta(q_sample(x0, t, noise), z, t))^2.
double diffusion_loss(const Matrix& x0, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, int t, const Matrix& noise);
// Samples t uniformly in 1..T and standard-normal noise.
double diffusion_loss(const Matrix& x0, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, Engine& rng);
ad::Var diffusion_loss(const ad::Var& x0, const ad::Var& z, const DenoiserVars& params,
                       const NoiseSchedule& schedule, int t, const Matrix& noise);

}  // namespace causaldiffrec::diffusion
