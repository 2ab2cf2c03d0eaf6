#include "causaldiffrec/diffusion.hpp"

#include <cmath>

#include <fmt/format.h>

#include "causaldiffrec/nn.hpp"

namespace causaldiffrec::diffusion {

namespace {

void check_step(int t, const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps)
    throw Error(fmt::format("diffusion step {} outside 1..{}", t, schedule.steps));
}

}  // namespace

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1 || steps > 1000) throw Error(fmt::format("diffusion steps must lie in 1..1000, got {}", steps));
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw Error(fmt::format("invalid beta range [{}, {}]", beta_start, beta_end));
  NoiseSchedule s;
  s.steps = steps;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.beta[t] = beta_start + frac * (beta_end - beta_start);
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
  }
  return s;
}

Matrix q_sample(const Matrix& x0, int t, const Matrix& noise, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  const double ab = schedule.alpha_bar[t];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

ad::Var q_sample(const ad::Var& x0, int t, const Matrix& noise, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  const double ab = schedule.alpha_bar[t];
  return ad::add(ad::scale(x0, std::sqrt(ab)), x0.tape().constant(std::sqrt(1.0 - ab) * noise));
}

RowVector time_embedding(int t, Index dim) {
  RowVector out = RowVector::Zero(dim);
  const Index half = dim / 2;
  for (Index j = 0; j < half; ++j) {
    const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(std::max<Index>(1, half)));
    out[j] = std::sin(t * freq);
    out[half + j] = std::cos(t * freq);
  }
  return out;
}

DenoiserParams init_denoiser(Index latent_dim, Index env_dim, Index time_embed_dim, Index hidden_dim, Engine& rng) {
  if (latent_dim < 1 || env_dim < 0 || time_embed_dim < 0 || hidden_dim < 1)
    throw Error("invalid denoiser dimensions");
  DenoiserParams p;
  p.time_embed_dim = time_embed_dim;
  p.w1 = nn::glorot_uniform(latent_dim + env_dim + time_embed_dim, hidden_dim, rng);
  p.b1 = Matrix::Zero(1, hidden_dim);
  p.w2 = nn::glorot_uniform(hidden_dim, latent_dim, rng);
  p.b2 = Matrix::Zero(1, latent_dim);
  return p;
}

DenoiserVars bind(ad::Tape& tape, const DenoiserParams& p, bool trainable) {
  auto make = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  return {make(p.w1), make(p.b1), make(p.w2), make(p.b2), p.time_embed_dim};
}

ad::Var predict_noise(const ad::Var& x_t, const ad::Var& z, int t, const DenoiserVars& params) {
  ad::Tape& tape = x_t.tape();
  const Index rows = x_t.rows();
  std::vector<ad::Var> parts{x_t};
  if (z.cols() > 0) parts.push_back(ad::broadcast_rows(z, rows));
  if (params.time_embed_dim > 0)
    parts.push_back(tape.constant(Matrix(time_embedding(t, params.time_embed_dim).replicate(rows, 1))));
  ad::Var input = parts.size() == 1 ? x_t : ad::hcat(parts);
  if (input.cols() != params.w1.rows())
    throw Error(fmt::format("predict_noise: input width {} does not match denoiser {}", input.cols(), params.w1.rows()));
  ad::Var hidden = ad::silu(ad::add_row(ad::matmul(input, params.w1), params.b1));
  return ad::add_row(ad::matmul(hidden, params.w2), params.b2);
}

Matrix predict_noise(const Matrix& x_t, const RowVector& z, int t, const DenoiserParams& params) {
  ad::Tape tape;
  const DenoiserVars vars = bind(tape, params, false);
  return predict_noise(tape.constant(x_t), tape.constant(Matrix(z)), t, vars).value();
}

double posterior_variance(int t, const NoiseSchedule& schedule) {
  check_step(t, schedule);
  return schedule.beta[t] * (1.0 - schedule.alpha_bar[t - 1]) / (1.0 - schedule.alpha_bar[t]);
}

Matrix denoise_step(const Matrix& x_t, int t, const Matrix& eps_hat, const NoiseSchedule& schedule,
                    const Matrix* zeta) {
  check_step(t, schedule);
  const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
  Matrix mean = (x_t - coef * eps_hat) / std::sqrt(schedule.alpha[t]);
  if (t > 1 && zeta != nullptr) mean += std::sqrt(posterior_variance(t, schedule)) * (*zeta);
  return mean;
}

Matrix denoise_step(const Matrix& x_t, int t, const RowVector& z, const DenoiserParams& params,
                    const NoiseSchedule& schedule, Engine& rng) {
  const Matrix eps_hat = predict_noise(x_t, z, t, params);
  if (t == 1) return denoise_step(x_t, t, eps_hat, schedule, nullptr);
  const Matrix zeta = standard_normal(x_t.rows(), x_t.cols(), rng);
  return denoise_step(x_t, t, eps_hat, schedule, &zeta);
}

ad::Var denoise_step(const ad::Var& x_t, int t, const ad::Var& z, const DenoiserVars& params,
                     const NoiseSchedule& schedule, const Matrix& zeta) {
  check_step(t, schedule);
  const double coef = schedule.beta[t] / std::sqrt(1.0 - schedule.alpha_bar[t]);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha[t]);
  ad::Var eps_hat = predict_noise(x_t, z, t, params);
  ad::Var mean = ad::scale(ad::sub(x_t, ad::scale(eps_hat, coef)), inv_sqrt_alpha);
  if (t == 1 || zeta.size() == 0) return mean;
  return ad::add(mean, x_t.tape().constant(std::sqrt(posterior_variance(t, schedule)) * zeta));
}

Matrix reverse_sample(const Matrix& x_start, int start_step, const NoisePredictor& predictor,
                      const NoiseSchedule& schedule, Engine* rng) {
  check_step(start_step, schedule);
  Matrix x = x_start;
  for (int t = start_step; t >= 1; --t) {
    const Matrix eps_hat = predictor(x, t);
    if (rng != nullptr && t > 1) {
      const Matrix zeta = standard_normal(x.rows(), x.cols(), *rng);
      x = denoise_step(x, t, eps_hat, schedule, &zeta);
    } else {
      x = denoise_step(x, t, eps_hat, schedule, nullptr);
    }
    if (!x.allFinite()) throw Error(fmt::format("reverse_sample: non-finite latents at step {}", t));
  }
  return x;
}

Matrix reverse_sample(const Matrix& x_start, int start_step, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, Engine& rng) {
  auto predictor = [&](const Matrix& x, int t) { return predict_noise(x, z, t, params); };
  return reverse_sample(x_start, start_step, predictor, schedule, &rng);
}

ad::Var reverse_sample(const ad::Var& x_start, int start_step, const ad::Var& z, const DenoiserVars& params,
                       const NoiseSchedule& schedule, const std::vector<Matrix>& zetas) {
  check_step(start_step, schedule);
  ad::Var x = x_start;
  for (int t = start_step; t >= 1; --t) {
    static const Matrix none;
    const Matrix& zeta = static_cast<std::size_t>(t - 1) < zetas.size() ? zetas[static_cast<std::size_t>(t - 1)] : none;
    x = denoise_step(x, t, z, params, schedule, zeta);
    if (!x.value().allFinite()) throw Error(fmt::format("reverse_sample: non-finite latents at step {}", t));
  }
  return x;
}

double diffusion_loss(const Matrix& x0, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, int t, const Matrix& noise) {
  const Matrix x_t = q_sample(x0, t, noise, schedule);
  return (noise - predict_noise(x_t, z, t, params)).squaredNorm() / static_cast<double>(noise.size());
}

double diffusion_loss(const Matrix& x0, const RowVector& z, const DenoiserParams& params,
                      const NoiseSchedule& schedule, Engine& rng) {
  const int t = static_cast<int>(uniform_int(1, schedule.steps, rng));
  const Matrix noise = standard_normal(x0.rows(), x0.cols(), rng);
  return diffusion_loss(x0, z, params, schedule, t, noise);
}

ad::Var diffusion_loss(const ad::Var& x0, const ad::Var& z, const DenoiserVars& params,
                       const NoiseSchedule& schedule, int t, const Matrix& noise) {
  ad::Var x_t = q_sample(x0, t, noise, schedule);
  ad::Var eps_hat = predict_noise(x_t, z, t, params);
  return ad::mean(ad::square(ad::sub(x_t.tape().constant(noise), eps_hat)));
}

}  // namespace causaldiffrec::diffusion
