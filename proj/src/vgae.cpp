#include "causaldiffrec/vgae.hpp"

#include <cmath>

#include <fmt/format.h>

namespace causaldiffrec::vgae {

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

EncoderParams init_encoder(Index feature_dim, Index hidden_dim, Index latent_dim, Engine& rng,
                           double initial_std) {
  if (feature_dim < 1 || hidden_dim < 1 || latent_dim < 1) throw Error("encoder dimensions must be positive");
  if (!(initial_std > 0.0)) throw Error("encoder initial std must be positive");
  EncoderParams p;
  p.shared = nn::glorot_uniform(feature_dim, hidden_dim, rng);
  p.mean_head = nn::glorot_uniform(hidden_dim, latent_dim, rng);
  p.log_std_head = nn::glorot_uniform(hidden_dim, latent_dim, rng);
  p.log_std_bias = Matrix::Constant(1, latent_dim, std::log(initial_std));
  return p;
}

EncoderVars bind(ad::Tape& tape, const EncoderParams& p, bool trainable) {
  auto make = [&](const Matrix& m) { return trainable ? tape.variable(m) : tape.constant(m); };
  return {make(p.shared), make(p.mean_head), make(p.log_std_head), make(p.log_std_bias)};
}

LatentVars encode(const SparseMatrix& normalized, const ad::Var& features, const EncoderVars& params,
                  const nn::StdClamp& clamp) {
  if (features.cols() != params.shared.rows())
    throw Error(fmt::format("encode: feature width {} does not match encoder input {}", features.cols(),
                            params.shared.rows()));
  if (features.rows() != normalized.rows())
    throw Error(fmt::format("encode: {} feature rows for {} nodes", features.rows(), normalized.rows()));
  ad::Var hidden = ad::matmul(ad::spmm(normalized, features), params.shared);
  ad::Var mean = ad::matmul(hidden, params.mean_head);
  ad::Var log_std = ad::clamp(ad::add_row(ad::matmul(hidden, params.log_std_head), params.log_std_bias), std::log(clamp.min_std),
                              std::log(clamp.max_std));
  return {mean, ad::exp(log_std)};
}

ad::Var reparameterize(const LatentVars& latents, const Matrix& noise) {
  ad::Var eps = latents.mean.tape().constant(noise);
  return ad::add(latents.mean, ad::mul(latents.std, eps));
}

LatentGaussianState encode(const graph::BipartiteGraph& view, const Matrix& features, const EncoderParams& params,
                           const nn::StdClamp& clamp) {
  ad::Tape tape;
  const EncoderVars vars = bind(tape, params, false);
  const LatentVars out = encode(view.normalized(), tape.constant(features), vars, clamp);
  LatentGaussianState s;
  s.mean = out.mean.value();
  s.std = out.std.value();
  return s;
}

LatentGaussianState reparameterize(LatentGaussianState state, Matrix noise) {
  if (noise.rows() != state.mean.rows() || noise.cols() != state.mean.cols())
    throw Error("reparameterize: noise shape mismatch");
  state.sample = state.mean + state.std.cwiseProduct(noise);
  state.noise = std::move(noise);
  return state;
}

LatentGaussianState reparameterize(LatentGaussianState state, Engine& rng) {
  Matrix noise = standard_normal(state.mean.rows(), state.mean.cols(), rng);
  return reparameterize(std::move(state), std::move(noise));
}

Matrix decode(const Matrix& latents, Index num_users) {
  const Index nodes = latents.rows();
  Matrix out = Matrix::Zero(nodes, nodes);
  for (Index u = 0; u < num_users; ++u) {
    for (Index v = num_users; v < nodes; ++v) {
      const double p = sigmoid(latents.row(u).dot(latents.row(v)));
      out(u, v) = p;
      out(v, u) = p;
    }
  }
  return out;
}

ReconstructionPairs sample_reconstruction_pairs(const graph::BipartiteGraph& view, double negative_ratio,
                                                Engine& rng) {
  ReconstructionPairs pairs;
  for (Index u = 0; u < view.num_users(); ++u) {
    for (Index i : view.user_items()[static_cast<std::size_t>(u)]) {
      pairs.rows.push_back(u);
      pairs.cols.push_back(view.item_node(i));
    }
  }
  const std::size_t positives = pairs.rows.size();
  const auto negatives = static_cast<std::size_t>(std::llround(negative_ratio * static_cast<double>(positives)));
  const Index capacity = view.num_users() * view.num_items() - view.num_edges();
  std::size_t drawn = 0;
  while (drawn < negatives && capacity > 0) {
    const Index u = uniform_int(0, view.num_users() - 1, rng);
    const Index i = uniform_int(0, view.num_items() - 1, rng);
    if (view.has_edge(u, i)) continue;
    pairs.rows.push_back(u);
    pairs.cols.push_back(view.item_node(i));
    ++drawn;
  }
  pairs.targets = Matrix::Zero(static_cast<Index>(pairs.rows.size()), 1);
  pairs.targets.topRows(static_cast<Index>(positives)).setOnes();
  return pairs;
}

double gaussian_kl(const Matrix& mean, const Matrix& std) {
  double kl = 0.0;
  for (Index k = 0; k < mean.size(); ++k) {
    const double m = mean.data()[k], s = std.data()[k];
    kl += 0.5 * (m * m + s * s - 1.0 - std::log(s * s));
  }
  return kl;
}

VgaeLoss vgae_loss(const LatentGaussianState& state, const Matrix& reconstruction, const ReconstructionPairs& pairs) {
  VgaeLoss out;
  const std::size_t k = pairs.rows.size();
  double bce = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    const double p = reconstruction(pairs.rows[j], pairs.cols[j]);
    const double y = pairs.targets(static_cast<Index>(j), 0);
    bce -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  out.reconstruction = k > 0 ? bce / static_cast<double>(k) : 0.0;
  out.kl = gaussian_kl(state.mean, state.std);
  out.total = out.reconstruction + out.kl / static_cast<double>(std::max<Index>(1, state.mean.rows()));
  return out;
}

ad::Var vgae_loss(const ad::Var& decoder_input, const LatentVars& latents, const ReconstructionPairs& pairs) {
  ad::Var kl = ad::scale(ad::standard_normal_kl(latents.mean, latents.std),
                         1.0 / static_cast<double>(std::max<Index>(1, latents.mean.rows())));
  if (pairs.rows.empty()) return kl;
  ad::Tape& tape = decoder_input.tape();
  ad::Var logits = ad::rowwise_dot(ad::gather_rows(decoder_input, pairs.rows), ad::gather_rows(decoder_input, pairs.cols));
  // BCE with logits x: y * softplus(-x) + (1 - y) * softplus(x) = softplus(x) - y * x.
  ad::Var targets = tape.constant(pairs.targets);
  ad::Var bce = ad::mean(ad::sub(ad::softplus(logits), ad::mul(targets, logits)));
  return ad::add(bce, kl);
}

}  // namespace causaldiffrec::vgae
