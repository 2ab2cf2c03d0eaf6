#pragma once

// Joint training loop: K generated views -> VGAE latents -> environment
// inference -> conditional diffusion -> LightGCN/BPR, combined into one
// weighted objective and optimized with AdamW; edit policies follow the
// score-function update.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "causaldiffrec/autodiff.hpp"
#include "causaldiffrec/datasets.hpp"
#include "causaldiffrec/diffusion.hpp"
#include "causaldiffrec/env_generator.hpp"
#include "causaldiffrec/env_inference.hpp"
#include "causaldiffrec/graph.hpp"
#include "causaldiffrec/recommender.hpp"
#include "causaldiffrec/vgae.hpp"

namespace causaldiffrec::train {

struct TrainConfig {
  // Joint objective weights.
  double lambda_generator = 1e-1;
  double lambda_diffusion = 1e-3;
  double lambda_env = 1e-3;
  // +1 adds the environment-loss variance to the minimized objective, -1
  // subtracts it (pushes views apart).
  int generator_sign = 1;

  // AdamW.
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  // Environment generator.
  int environments = 3;
  int edits_per_node = 2;
  int candidate_cap = 50;
  double generator_lr = 1e-1;
  bool generator_baseline = true;

  // VGAE.
  int latent_dim = 32;
  int encoder_hidden = 32;
  double sigma_min = 1e-4;
  double sigma_max = 10.0;
  double recon_neg_ratio = 1.0;

  // Environment inference.
  int env_dim = 16;
  int env_hidden_dim = 32;

  // Diffusion.
  int diffusion_steps = 20;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  // Step from which embeddings are reverse-sampled; 0 means steps / 2.
  int t_start_infer = 0;
  int time_embed_dim = 16;
  int denoiser_hidden = 64;

  // Recommender.
  int gcn_layers = 2;
  double init_std = 0.1;
  std::vector<int> topk = {10, 20};

  // Loop.
  int batch_size = 1024;
  int epochs = 50;
  int patience = 10;
  int early_stop_k = 20;
  std::uint64_t seed = 0;

  // Ablations.
  bool no_generator = false;
  bool no_env_inference = false;

  int effective_environments() const { return no_generator ? 1 : environments; }
  int start_step() const { return t_start_infer > 0 ? t_start_infer : std::max(1, diffusion_steps / 2); }
  // The VGAE/diffusion branch produces the backbone's layer-0 embeddings
  // whenever one of its terms is live; otherwise the free embedding table
  // feeds LightGCN directly.
  bool diffusion_branch() const { return lambda_diffusion > 0.0 || !no_env_inference; }
  nn::StdClamp std_clamp() const { return {sigma_min, sigma_max}; }

  // Throws Error naming the offending field.
  void validate() const;
};

struct LossBreakdown {
  double rec = 0.0;
  double generator = 0.0;
  double vgae = 0.0;
  double inv_simple = 0.0;
  double env_inf = 0.0;
  double total = 0.0;
};

// total = rec + sign * lambda1 * generator + lambda2 * (vgae + inv_simple)
//       + lambda3 * env_inf. Throws naming the first non-finite component.
LossBreakdown joint_loss(const LossBreakdown& components, const TrainConfig& config);

struct ModelParams {
  Matrix embeddings;  // (m + n) x d free embedding table
  vgae::EncoderParams encoder;
  envinf::EnvInferenceParams env;
  diffusion::DenoiserParams denoiser;
};

// Stable (name, matrix) enumeration shared by the optimizer, checkpoints
// and the gradient check.
std::vector<std::pair<std::string, Matrix*>> named_params(ModelParams& params);
std::vector<std::pair<std::string, const Matrix*>> named_params(const ModelParams& params);

class AdamW {
 public:
  AdamW() = default;
  AdamW(double lr, double weight_decay, double beta1, double beta2, double epsilon);

  // Decoupled decay then the bias-corrected Adam step.
  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads);

  long steps() const { return steps_; }
  std::vector<Matrix>& first_moments() { return m_; }
  std::vector<Matrix>& second_moments() { return v_; }
  const std::vector<Matrix>& first_moments() const { return m_; }
  const std::vector<Matrix>& second_moments() const { return v_; }
  void set_steps(long steps) { steps_ = steps; }

 private:
  double lr_ = 1e-3, weight_decay_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, epsilon_ = 1e-8;
  long steps_ = 0;
  std::vector<Matrix> m_, v_;
};

// Named random substreams derived from one seed.
struct Streams {
  Engine init, batches, negatives, generator, vgae, env, diffusion;
  static Streams from_seed(std::uint64_t seed);
};

struct TrainState {
  TrainConfig config;
  Index num_users = 0;
  Index num_items = 0;
  ModelParams params;
  std::vector<envgen::EditPolicy> policies;
  AdamW optimizer;
  Streams streams;
  int epoch = 0;
};

TrainState init_state(const TrainConfig& config, const graph::BipartiteGraph& base);

// One triplet per training record in a shuffled order, chunked.
std::vector<std::vector<rec::BprTriplet>> make_epoch_batches(const datasets::InteractionTable& train,
                                                             const datasets::UserItemIndex& index, int batch_size,
                                                             Engine& batch_rng, Engine& negative_rng);

// Every random quantity one optimization step consumes, drawn up front so
// the step is a deterministic function of parameters.
struct EnvironmentDraws {
  envgen::GeneratedEnvironment env;
  Matrix latent_noise;
  RowVector env_noise;
  int diffusion_t = 1;
  Matrix diffusion_noise;
  Matrix start_noise;
  std::vector<Matrix> zetas;
  vgae::ReconstructionPairs pairs;
};

struct BatchDraws {
  std::vector<rec::BprTriplet> triplets;
  std::vector<EnvironmentDraws> environments;
};

BatchDraws draw_batch(TrainState& state, const graph::BipartiteGraph& base, std::vector<rec::BprTriplet> triplets);

struct ModelVars {
  ad::Var embeddings;
  vgae::EncoderVars encoder;
  envinf::EnvVars env;
  diffusion::DenoiserVars denoiser;
};
ModelVars bind(ad::Tape& tape, const ModelParams& params, bool trainable);
std::vector<ad::Var> param_vars(const ModelVars& vars);

struct ForwardResult {
  ad::Var total;
  LossBreakdown breakdown;
  // Per-environment BPR losses (the task losses behind the variance term).
  std::vector<double> env_losses;
};

ForwardResult forward(ad::Tape& tape, const ModelVars& vars, const TrainConfig& config, const graph::BipartiteGraph& base,
                      const BatchDraws& draws, const diffusion::NoiseSchedule& schedule);

struct EpochResult {
  LossBreakdown mean_loss;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
  bool aborted = false;
};

EpochResult train_epoch(TrainState& state, const datasets::InteractionTable& train, const graph::BipartiteGraph& base);

// Embeddings for ranking: encoder means, environment means, corruption to
// the start step and reverse sampling under a fixed inference seed, then
// propagation on the base graph.
rec::Embeddings infer_embeddings(const TrainState& state, const graph::BipartiteGraph& base);

struct EpochLog {
  int epoch = 0;
  LossBreakdown loss;
  std::size_t skipped_steps = 0;
  std::vector<int> ks;
  std::vector<double> valid_recall;
  std::vector<double> valid_ndcg;
};

std::string format_epoch_log(const EpochLog& log);

struct FitResult {
  TrainState best;
  TrainState last;
  std::vector<EpochLog> history;
  int best_epoch = 0;
  double best_valid_ndcg = 0.0;
  bool early_stopped = false;
};

// Runs epochs with early stopping on validation NDCG@early_stop_k.
FitResult fit(const datasets::SplitBundle& data, const TrainConfig& config,
              const std::function<void(const EpochLog&)>& on_epoch = {});

struct GroupError {
  std::string name;
  double max_relative_error = 0.0;
  Index entries = 0;
};

struct GradientReport {
  std::vector<GroupError> groups;
  double max_relative_error = 0.0;
  std::string worst_group;
  bool passed = true;
};

// Per entry |analytic - numeric| / max(|analytic|, |numeric|, floor), with
// central differences of the given step.
GradientReport check_gradients(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& loss,
                               std::vector<std::pair<std::string, Matrix>> params, double step = 1e-5,
                               double tolerance = 1e-3, double floor = 1e-8);

// Joint-loss gradient check on a frozen batch; the score-function path of
// the generator is not part of the differentiated objective.
GradientReport gradient_check(const TrainState& state, const graph::BipartiteGraph& base, const BatchDraws& draws,
                              double step = 1e-5, double tolerance = 1e-3);

struct MicroInstance {
  datasets::InteractionTable train;
  TrainConfig config;
};
// 4 users x 5 items with small layer widths.
MicroInstance make_micro_instance(std::uint64_t seed);

}  // namespace causaldiffrec::train
