#pragma once

// Variational graph autoencoder: a shared graph convolution with mean and
// log-std heads, inner-product decoder, and the negated ELBO.

#include <vector>

#include "causaldiffrec/autodiff.hpp"
#include "causaldiffrec/graph.hpp"
#include "causaldiffrec/nn.hpp"
#include "causaldiffrec/rng.hpp"

namespace causaldiffrec::vgae {

struct EncoderParams {
  Matrix shared;        // f x h
  Matrix mean_head;     // h x d
  Matrix log_std_head;  // h x d
  Matrix log_std_bias;  // 1 x d

  Index feature_dim() const { return shared.rows(); }
  Index latent_dim() const { return mean_head.cols(); }
};

// The log-std bias starts at ln(initial_std), so sampled latents begin on
// the scale of the input features rather than of the unit prior.
EncoderParams init_encoder(Index feature_dim, Index hidden_dim, Index latent_dim, Engine& rng,
                           double initial_std = 1.0);

struct LatentGaussianState {
  Matrix mean;
  Matrix std;
  // Filled by reparameterize(): sample = mean + std (.) noise.
  Matrix sample;
  Matrix noise;
};

struct EncoderVars {
  ad::Var shared, mean_head, log_std_head, log_std_bias;
};
EncoderVars bind(ad::Tape& tape, const EncoderParams& params, bool trainable);

struct LatentVars {
  ad::Var mean;
  ad::Var std;
};

// H = A_norm * I * W, mean = H * W_mu, std = exp(clamp(H * W_sigma + b_sigma)).
// `normalized` must outlive the tape.
LatentVars encode(const SparseMatrix& normalized, const ad::Var& features, const EncoderVars& params,
                  const nn::StdClamp& clamp = {});
ad::Var reparameterize(const LatentVars& latents, const Matrix& noise);

LatentGaussianState encode(const graph::BipartiteGraph& view, const Matrix& features,
                           const EncoderParams& params, const nn::StdClamp& clamp = {});
LatentGaussianState reparameterize(LatentGaussianState state, Engine& rng);
LatentGaussianState reparameterize(LatentGaussianState state, Matrix noise);

// sigmoid(R R^T) on the user-item block, zero on the user-user and
// item-item blocks. Dense (m+n) x (m+n); meant for small graphs.
Matrix decode(const Matrix& latents, Index num_users);

// Node-index pairs scored by the reconstruction loss: every user-item edge
// of the view (target 1) and sampled non-edges (target 0).
struct ReconstructionPairs {
  std::vector<Index> rows;
  std::vector<Index> cols;
  Matrix targets;  // k x 1
};
ReconstructionPairs sample_reconstruction_pairs(const graph::BipartiteGraph& view, double negative_ratio,
                                                Engine& rng);

struct VgaeLoss {
  double reconstruction = 0.0;  // mean binary cross-entropy over the pairs
  double kl = 0.0;              // KL summed over nodes and dimensions
  double total = 0.0;           // reconstruction + kl / nodes
};

// Negated ELBO. `reconstruction` holds adjacency probabilities (e.g. from
// decode()).
VgaeLoss vgae_loss(const LatentGaussianState& state, const Matrix& reconstruction,
                   const ReconstructionPairs& pairs);

// Differentiable form; the decoder consumes `decoder_input` rows.
ad::Var vgae_loss(const ad::Var& decoder_input, const LatentVars& latents, const ReconstructionPairs& pairs);

// Closed-form KL(N(mean, std^2) || N(0, I)) summed over entries.
double gaussian_kl(const Matrix& mean, const Matrix& std);

}  // namespace causaldiffrec::vgae
