#include "causaldiffrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "causaldiffrec/evaluation.hpp"

namespace causaldiffrec::train {

namespace {

void require(bool ok, const char* field, const std::string& what) {
  if (!ok) throw Error(fmt::format("invalid config: {} {}", field, what));
}

bool all_finite(const Matrix& m) { return m.allFinite(); }

bool generator_active(const TrainConfig& c) { return !c.no_generator; }

}  // namespace

void TrainConfig::validate() const {
  auto nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
  require(nonneg(lambda_generator), "lambda1", "must be finite and >= 0");
  require(nonneg(lambda_diffusion), "lambda2", "must be finite and >= 0");
  require(nonneg(lambda_env), "lambda3", "must be finite and >= 0");
  require(generator_sign == 1 || generator_sign == -1, "generator_sign", "must be +1 or -1");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate", "must be > 0");
  require(nonneg(weight_decay), "weight_decay", "must be >= 0");
  require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
  require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
  require(adam_epsilon > 0.0, "adam_epsilon", "must be > 0");
  require(environments >= 1, "K", "must be >= 1");
  require(no_generator || environments >= 2, "K", "must be >= 2 when the generator is enabled");
  require(edits_per_node >= 0, "edits_per_node", "must be >= 0");
  require(candidate_cap >= 1, "candidate_cap", "must be >= 1");
  require(generator_lr >= 0.0 && std::isfinite(generator_lr), "generator_lr", "must be >= 0");
  require(latent_dim >= 1, "latent_dim", "must be >= 1");
  require(encoder_hidden >= 1, "encoder_hidden", "must be >= 1");
  require(sigma_min > 0.0 && sigma_max > sigma_min, "sigma_clamp", "must satisfy 0 < min < max");
  require(nonneg(recon_neg_ratio), "recon_neg_ratio", "must be >= 0");
  require(env_dim >= 1, "env_dim", "must be >= 1");
  require(env_hidden_dim >= 1, "env_hidden_dim", "must be >= 1");
  require(diffusion_steps >= 1 && diffusion_steps <= 1000, "T", "must lie in [1, 1000]");
  require(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "beta", "must satisfy 0 < start <= end < 1");
  require(t_start_infer >= 0 && t_start_infer <= diffusion_steps, "t_start_infer", "must lie in [0, T]");
  require(time_embed_dim >= 2 && time_embed_dim % 2 == 0, "time_embed_dim", "must be even and >= 2");
  require(denoiser_hidden >= 1, "denoiser_hidden", "must be >= 1");
  require(gcn_layers >= 0, "gcn_layers", "must be >= 0");
  require(init_std > 0.0, "init_std", "must be > 0");
  require(!topk.empty(), "topk", "must list at least one cutoff");
  for (int k : topk) require(k >= 1, "topk", "cutoffs must be >= 1");
  require(batch_size >= 1, "batch_size", "must be >= 1");
  require(epochs >= 0, "epochs", "must be >= 0");
  require(patience >= 1, "patience", "must be >= 1");
  require(early_stop_k >= 1, "early_stop_k", "must be >= 1");
}

LossBreakdown joint_loss(const LossBreakdown& c, const TrainConfig& config) {
  const std::pair<const char*, double> parts[] = {
      {"rec", c.rec}, {"generator", c.generator}, {"vgae", c.vgae}, {"inv_simple", c.inv_simple}, {"env_inf", c.env_inf}};
  for (const auto& [name, v] : parts)
    if (!std::isfinite(v)) throw Error(fmt::format("non-finite loss component '{}' ({})", name, v));
  LossBreakdown out = c;
  out.total = c.rec + config.generator_sign * config.lambda_generator * c.generator +
              config.lambda_diffusion * (c.vgae + c.inv_simple) + config.lambda_env * c.env_inf;
  return out;
}

std::vector<std::pair<std::string, Matrix*>> named_params(ModelParams& p) {
  return {{"embeddings", &p.embeddings},     {"encoder.shared", &p.encoder.shared},
          {"encoder.mean_head", &p.encoder.mean_head}, {"encoder.log_std_head", &p.encoder.log_std_head},
          {"encoder.log_std_bias", &p.encoder.log_std_bias},
          {"env.w1", &p.env.w1},             {"env.b1", &p.env.b1},
          {"env.w2", &p.env.w2},             {"env.b2", &p.env.b2},
          {"denoiser.w1", &p.denoiser.w1},   {"denoiser.b1", &p.denoiser.b1},
          {"denoiser.w2", &p.denoiser.w2},   {"denoiser.b2", &p.denoiser.b2}};
}

std::vector<std::pair<std::string, const Matrix*>> named_params(const ModelParams& p) {
  auto& mp = const_cast<ModelParams&>(p);
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (auto& [name, m] : named_params(mp)) out.emplace_back(name, m);
  return out;
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double epsilon)
    : lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), epsilon_(epsilon) {}

void AdamW::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  if (params.size() != grads.size()) throw Error("AdamW: one gradient per parameter expected");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  if (m_.size() != params.size()) throw Error("AdamW: parameter list changed between steps");
  ++steps_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols()) throw Error("AdamW: gradient shape mismatch");
    p *= 1.0 - lr_ * weight_decay_;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + epsilon_);
  }
}

Streams Streams::from_seed(std::uint64_t seed) {
  return {substream(seed, "init"),     substream(seed, "batches"), substream(seed, "negatives"),
          substream(seed, "generator"), substream(seed, "vgae"),    substream(seed, "env"),
          substream(seed, "diffusion")};
}

TrainState init_state(const TrainConfig& config, const graph::BipartiteGraph& base) {
  config.validate();
  TrainState s;
  s.config = config;
  s.num_users = base.num_users();
  s.num_items = base.num_items();
  s.streams = Streams::from_seed(config.seed);
  const Index d = config.latent_dim;
  // The free table comes first so a plain LightGCN run under the same seed
  // draws identical initial embeddings.
  s.params.embeddings = config.init_std * standard_normal(base.num_nodes(), d, s.streams.init);
  s.params.encoder = vgae::init_encoder(d, config.encoder_hidden, d, s.streams.init, config.init_std);
  s.params.env = envinf::init_env_inference(d, config.env_hidden_dim, config.env_dim, s.streams.init);
  s.params.denoiser =
      diffusion::init_denoiser(d, config.env_dim, config.time_embed_dim, config.denoiser_hidden, s.streams.init);
  if (generator_active(config)) {
    for (int k = 0; k < config.effective_environments(); ++k)
      s.policies.push_back(envgen::make_policy(base, config.candidate_cap, config.edits_per_node, s.streams.generator));
  }
  s.optimizer = AdamW(config.learning_rate, config.weight_decay, config.adam_beta1, config.adam_beta2,
                      config.adam_epsilon);
  return s;
}

std::vector<std::vector<rec::BprTriplet>> make_epoch_batches(const datasets::InteractionTable& train,
                                                             const datasets::UserItemIndex& index, int batch_size,
                                                             Engine& batch_rng, Engine& negative_rng) {
  if (batch_size < 1) throw Error("batch_size must be >= 1");
  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), 0);
  // Explicit Fisher-Yates so the order does not depend on the standard
  // library's shuffle.
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<Index>(i - 1), batch_rng));
    std::swap(order[i - 1], order[j]);
  }
  std::vector<std::vector<rec::BprTriplet>> batches;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<rec::BprTriplet> batch;
    batch.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      const auto& r = train.records[order[i]];
      const Index neg = datasets::sample_negatives(index, r.user, 1, negative_rng).front();
      batch.push_back({r.user, r.item, neg});
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

BatchDraws draw_batch(TrainState& state, const graph::BipartiteGraph& base, std::vector<rec::BprTriplet> triplets) {
  const TrainConfig& c = state.config;
  BatchDraws draws;
  draws.triplets = std::move(triplets);
  const Index nodes = base.num_nodes();
  const Index d = c.latent_dim;
  const int start = c.start_step();
  for (int k = 0; k < c.effective_environments(); ++k) {
    EnvironmentDraws e;
    if (!state.policies.empty())
      e.env = envgen::sample_view(state.policies[static_cast<std::size_t>(k)], base, state.streams.generator);
    else
      e.env.view = base;
    if (c.diffusion_branch()) {
      e.latent_noise = standard_normal(nodes, d, state.streams.vgae);
      if (c.lambda_diffusion > 0.0)
        e.pairs = vgae::sample_reconstruction_pairs(e.env.view, c.recon_neg_ratio, state.streams.vgae);
      if (!c.no_env_inference) e.env_noise = standard_normal(1, c.env_dim, state.streams.env);
      e.diffusion_t = static_cast<int>(uniform_int(1, c.diffusion_steps, state.streams.diffusion));
      e.diffusion_noise = standard_normal(nodes, d, state.streams.diffusion);
      e.start_noise = standard_normal(nodes, d, state.streams.diffusion);
      e.zetas.resize(static_cast<std::size_t>(start));
      for (int t = 2; t <= start; ++t)
        e.zetas[static_cast<std::size_t>(t - 1)] = standard_normal(nodes, d, state.streams.diffusion);
    }
    draws.environments.push_back(std::move(e));
  }
  return draws;
}

ModelVars bind(ad::Tape& tape, const ModelParams& params, bool trainable) {
  ModelVars v;
  v.embeddings = trainable ? tape.variable(params.embeddings) : tape.constant(params.embeddings);
  v.encoder = vgae::bind(tape, params.encoder, trainable);
  v.env = envinf::bind(tape, params.env, trainable);
  v.denoiser = diffusion::bind(tape, params.denoiser, trainable);
  return v;
}

std::vector<ad::Var> param_vars(const ModelVars& v) {
  return {v.embeddings, v.encoder.shared, v.encoder.mean_head, v.encoder.log_std_head, v.encoder.log_std_bias,
          v.env.w1,     v.env.b1,       v.env.w2,            v.env.b2,
          v.denoiser.w1, v.denoiser.b1, v.denoiser.w2,       v.denoiser.b2};
}

namespace {

ModelVars vars_from_list(const std::vector<ad::Var>& list, Index time_embed_dim) {
  if (list.size() != 13) throw Error("expected 13 parameter groups");
  ModelVars v;
  v.embeddings = list[0];
  v.encoder = {list[1], list[2], list[3], list[4]};
  v.env = {list[5], list[6], list[7], list[8]};
  v.denoiser.w1 = list[9];
  v.denoiser.b1 = list[10];
  v.denoiser.w2 = list[11];
  v.denoiser.b2 = list[12];
  v.denoiser.time_embed_dim = time_embed_dim;
  return v;
}

}  // namespace

ForwardResult forward(ad::Tape& tape, const ModelVars& vars, const TrainConfig& config,
                      const graph::BipartiteGraph& base, const BatchDraws& draws,
                      const diffusion::NoiseSchedule& schedule) {
  if (draws.environments.empty()) throw Error("forward: no environments drawn");
  const Index m = base.num_users();
  const int start = config.start_step();
  const bool branch = config.diffusion_branch();
  const bool with_vgae = branch && config.lambda_diffusion > 0.0;
  const bool with_env = branch && !config.no_env_inference;

  std::vector<ad::Var> bpr, vg, inv, env_inf;
  ForwardResult out;
  for (const auto& e : draws.environments) {
    const SparseMatrix& adj = e.env.view.normalized();
    ad::Var layer0 = vars.embeddings;
    if (branch) {
      const vgae::LatentVars lat = vgae::encode(adj, vars.embeddings, vars.encoder, config.std_clamp());
      const ad::Var x0 = vgae::reparameterize(lat, e.latent_noise);
      ad::Var z;
      ad::Var kl_env;
      if (with_env) {
        const envinf::EnvLatentVars q = envinf::infer_env(x0, vars.env, e.env_noise, config.std_clamp());
        z = q.sample;
        kl_env = envinf::env_kl(q);
      } else {
        z = tape.constant(Matrix::Zero(1, config.env_dim));
      }
      const ad::Var inv_k = diffusion::diffusion_loss(x0, z, vars.denoiser, schedule, e.diffusion_t, e.diffusion_noise);
      // The backbone path starts from the corrupted posterior mean, as at
      // inference. Feeding it the sample lets per-node noise, propagated
      // along the positive edges, masquerade as user-item affinity.
      const ad::Var x_start = diffusion::q_sample(lat.mean, start, e.start_noise, schedule);
      layer0 = diffusion::reverse_sample(x_start, start, z, vars.denoiser, schedule, e.zetas);
      inv.push_back(inv_k);
      if (with_vgae) vg.push_back(vgae::vgae_loss(x0, lat, e.pairs));
      const ad::Var final_emb = rec::propagate(adj, layer0, config.gcn_layers);
      const ad::Var bpr_k = rec::bpr_loss(draws.triplets, final_emb, m);
      bpr.push_back(bpr_k);
      // Negated environment ELBO: the conditional likelihood term is the
      // negated invariance-plus-task loss of this view.
      if (with_env) env_inf.push_back(ad::add_n({inv_k, bpr_k, kl_env}));
    } else {
      const ad::Var final_emb = rec::propagate(adj, layer0, config.gcn_layers);
      bpr.push_back(rec::bpr_loss(draws.triplets, final_emb, m));
    }
  }

  LossBreakdown parts;
  const ad::Var rec_loss = ad::average(bpr);
  parts.rec = rec_loss.scalar();
  std::vector<ad::Var> terms = {rec_loss};
  auto weighted = [&](const ad::Var& v, double w) {
    if (w != 0.0) terms.push_back(ad::scale(v, w));
  };
  if (bpr.size() >= 2) {
    const ad::Var gen = ad::population_variance(bpr);
    parts.generator = gen.scalar();
    weighted(gen, config.generator_sign * config.lambda_generator);
  }
  if (!vg.empty()) {
    const ad::Var v = ad::average(vg);
    parts.vgae = v.scalar();
    weighted(v, config.lambda_diffusion);
  }
  if (!inv.empty()) {
    const ad::Var v = ad::average(inv);
    parts.inv_simple = v.scalar();
    weighted(v, config.lambda_diffusion);
  }
  if (!env_inf.empty()) {
    const ad::Var v = ad::average(env_inf);
    parts.env_inf = v.scalar();
    weighted(v, config.lambda_env);
  }
  out.breakdown = joint_loss(parts, config);
  out.total = terms.size() == 1 ? terms.front() : ad::add_n(terms);
  for (const auto& b : bpr) out.env_losses.push_back(b.scalar());
  return out;
}

EpochResult train_epoch(TrainState& state, const datasets::InteractionTable& train, const graph::BipartiteGraph& base) {
  const TrainConfig& c = state.config;
  const auto schedule = diffusion::make_schedule(c.diffusion_steps, c.beta_start, c.beta_end);
  const datasets::UserItemIndex index(train);
  const auto batches = make_epoch_batches(train, index, c.batch_size, state.streams.batches, state.streams.negatives);

  EpochResult result;
  LossBreakdown acc;
  int consecutive_skips = 0;
  const auto named = named_params(state.params);
  std::vector<Matrix*> targets;
  for (const auto& [name, p] : named) targets.push_back(p);

  for (std::size_t b = 0; b < batches.size(); ++b) {
    BatchDraws draws = draw_batch(state, base, batches[b]);
    ad::Tape tape;
    const ModelVars vars = bind(tape, state.params, true);
    std::optional<ForwardResult> fr;
    std::vector<Matrix> grads;
    bool finite = true;
    try {
      fr = forward(tape, vars, c, base, draws, schedule);
      tape.backward(fr->total);
      for (const ad::Var& v : param_vars(vars)) {
        const Matrix& g = v.grad();
        grads.push_back(g.size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : g);
        finite = finite && all_finite(grads.back());
      }
    } catch (const Error& e) {
      spdlog::warn("epoch {} step {}: {}", state.epoch + 1, b, e.what());
      finite = false;
    }
    if (!finite) {
      ++result.skipped_steps;
      spdlog::warn("epoch {} step {}: non-finite gradient; step skipped", state.epoch + 1, b);
      if (++consecutive_skips >= 3) {
        spdlog::error("epoch {}: three consecutive non-finite steps; epoch aborted", state.epoch + 1);
        result.aborted = true;
        break;
      }
      continue;
    }
    consecutive_skips = 0;
    state.optimizer.step(targets, grads);

    if (!state.policies.empty() && draws.environments.size() >= 2) {
      std::vector<envgen::GeneratedEnvironment> envs;
      for (std::size_t k = 0; k < draws.environments.size(); ++k) {
        envs.push_back(std::move(draws.environments[k].env));
        envs.back().reward = -fr->env_losses[k];
      }
      auto upd = envgen::reinforce_update(envs, std::move(state.policies), {c.generator_lr, c.generator_baseline});
      state.policies = std::move(upd.policies);
    }

    const auto& l = fr->breakdown;
    acc.rec += l.rec;
    acc.generator += l.generator;
    acc.vgae += l.vgae;
    acc.inv_simple += l.inv_simple;
    acc.env_inf += l.env_inf;
    acc.total += l.total;
    ++result.steps;
  }
  if (result.steps > 0) {
    const double n = static_cast<double>(result.steps);
    acc.rec /= n;
    acc.generator /= n;
    acc.vgae /= n;
    acc.inv_simple /= n;
    acc.env_inf /= n;
    acc.total /= n;
  }
  result.mean_loss = acc;
  ++state.epoch;
  return result;
}

rec::Embeddings infer_embeddings(const TrainState& state, const graph::BipartiteGraph& base) {
  const TrainConfig& c = state.config;
  if (!c.diffusion_branch()) return rec::propagate(base, state.params.embeddings, c.gcn_layers);
  const auto schedule = diffusion::make_schedule(c.diffusion_steps, c.beta_start, c.beta_end);
  const auto lat = vgae::encode(base, state.params.embeddings, state.params.encoder, c.std_clamp());
  RowVector z = RowVector::Zero(c.env_dim);
  if (!c.no_env_inference) z = envinf::infer_env(lat.mean, state.params.env, z, c.std_clamp()).mean;
  Engine rng = substream(c.seed, "inference");
  const int start = c.start_step();
  const Matrix noise = standard_normal(lat.mean.rows(), lat.mean.cols(), rng);
  const Matrix x_start = diffusion::q_sample(lat.mean, start, noise, schedule);
  const Matrix r = diffusion::reverse_sample(x_start, start, z, state.params.denoiser, schedule, rng);
  return rec::propagate(base, r, c.gcn_layers);
}

std::string format_epoch_log(const EpochLog& log) {
  std::string s = fmt::format(
      "epoch={} total={:.10g} rec={:.10g} generator={:.10g} vgae={:.10g} inv_simple={:.10g} env_inf={:.10g} "
      "skipped={}",
      log.epoch, log.loss.total, log.loss.rec, log.loss.generator, log.loss.vgae, log.loss.inv_simple,
      log.loss.env_inf, log.skipped_steps);
  for (std::size_t j = 0; j < log.ks.size() && j < log.valid_recall.size(); ++j)
    s += fmt::format(" valid_recall@{}={:.10g} valid_ndcg@{}={:.10g}", log.ks[j], log.valid_recall[j], log.ks[j],
                     log.valid_ndcg[j]);
  return s;
}

FitResult fit(const datasets::SplitBundle& data, const TrainConfig& config,
              const std::function<void(const EpochLog&)>& on_epoch) {
  const graph::BipartiteGraph base = graph::from_interactions(data.train);
  FitResult out;
  out.last = init_state(config, base);
  out.best = out.last;

  std::vector<int> ks = config.topk;
  if (std::find(ks.begin(), ks.end(), config.early_stop_k) == ks.end()) ks.push_back(config.early_stop_k);
  std::sort(ks.begin(), ks.end());
  const auto stop_pos = static_cast<std::size_t>(std::find(ks.begin(), ks.end(), config.early_stop_k) - ks.begin());

  const bool early_stopping = !data.valid.empty();
  if (!early_stopping) spdlog::warn("validation set is empty; early stopping disabled");
  out.best_valid_ndcg = -1.0;
  int since_best = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const EpochResult er = train_epoch(out.last, data.train, base);
    EpochLog log;
    log.epoch = epoch;
    log.loss = er.mean_loss;
    log.skipped_steps = er.skipped_steps;
    if (early_stopping) {
      const auto emb = infer_embeddings(out.last, base);
      const auto report = eval::evaluate(emb, data.train, data.valid, ks, "valid");
      log.ks = ks;
      log.valid_recall = report.recall;
      log.valid_ndcg = report.ndcg;
    }
    out.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (er.aborted) throw Error(fmt::format("training aborted in epoch {}: repeated non-finite gradients", epoch));

    if (!early_stopping) {
      out.best = out.last;
      out.best_epoch = epoch;
      continue;
    }
    const double ndcg = log.valid_ndcg[stop_pos];
    if (ndcg > out.best_valid_ndcg) {
      out.best_valid_ndcg = ndcg;
      out.best = out.last;
      out.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      out.early_stopped = true;
      spdlog::info("early stopping after epoch {} (best epoch {})", epoch, out.best_epoch);
      break;
    }
  }
  if (out.best_valid_ndcg < 0.0) out.best_valid_ndcg = 0.0;
  return out;
}

GradientReport check_gradients(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& loss,
                               std::vector<std::pair<std::string, Matrix>> params, double step, double tolerance,
                               double floor) {
  auto evaluate = [&](bool trainable, std::vector<Matrix>* grads) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& [name, m] : params) vars.push_back(trainable ? tape.variable(m) : tape.constant(m));
    const ad::Var out = loss(tape, vars);
    if (grads) {
      tape.backward(out);
      for (const auto& v : vars) grads->push_back(v.grad().size() == 0 ? Matrix::Zero(v.rows(), v.cols()) : v.grad());
    }
    return out.scalar();
  };
  std::vector<Matrix> analytic;
  evaluate(true, &analytic);

  GradientReport report;
  report.max_relative_error = 0.0;
  for (std::size_t g = 0; g < params.size(); ++g) {
    GroupError ge;
    ge.name = params[g].first;
    Matrix& m = params[g].second;
    for (Index i = 0; i < m.rows(); ++i) {
      for (Index j = 0; j < m.cols(); ++j) {
        const double saved = m(i, j);
        m(i, j) = saved + step;
        const double up = evaluate(false, nullptr);
        m(i, j) = saved - step;
        const double down = evaluate(false, nullptr);
        m(i, j) = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double a = analytic[g](i, j);
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        ge.max_relative_error = std::max(ge.max_relative_error, std::abs(a - numeric) / denom);
        ++ge.entries;
      }
    }
    if (ge.max_relative_error > report.max_relative_error || report.worst_group.empty()) {
      if (ge.max_relative_error >= report.max_relative_error) {
        report.max_relative_error = ge.max_relative_error;
        report.worst_group = ge.name;
      }
    }
    if (ge.max_relative_error > tolerance) {
      report.passed = false;
      spdlog::warn("gradient check: group {} relative error {:.3g} exceeds {:.3g}", ge.name, ge.max_relative_error,
                   tolerance);
    }
    report.groups.push_back(std::move(ge));
  }
  return report;
}

GradientReport gradient_check(const TrainState& state, const graph::BipartiteGraph& base, const BatchDraws& draws,
                              double step, double tolerance) {
  const TrainConfig& c = state.config;
  const auto schedule = diffusion::make_schedule(c.diffusion_steps, c.beta_start, c.beta_end);
  std::vector<std::pair<std::string, Matrix>> params;
  for (const auto& [name, m] : named_params(state.params)) params.emplace_back(name, *m);
  const Index ted = state.params.denoiser.time_embed_dim;
  auto loss = [&](ad::Tape&, const std::vector<ad::Var>& list) {
    return forward(list.front().tape(), vars_from_list(list, ted), c, base, draws, schedule).total;
  };
  return check_gradients(loss, std::move(params), step, tolerance);
}

MicroInstance make_micro_instance(std::uint64_t seed) {
  Engine rng = substream(seed, "micro");
  MicroInstance mi;
  mi.train.num_users = 4;
  mi.train.num_items = 5;
  for (Index u = 0; u < 4; ++u) {
    // Two or three items per user, leaving room for negatives and edits.
    std::vector<Index> items(5);
    std::iota(items.begin(), items.end(), 0);
    for (Index i = 4; i > 0; --i) std::swap(items[static_cast<std::size_t>(i)], items[static_cast<std::size_t>(uniform_int(0, i, rng))]);
    const Index count = 2 + uniform_int(0, 1, rng);
    for (Index j = 0; j < count; ++j) mi.train.records.push_back({u, items[static_cast<std::size_t>(j)], j, 1.0});
  }
  TrainConfig& c = mi.config;
  c.seed = seed;
  c.latent_dim = 3;
  c.encoder_hidden = 3;
  c.env_dim = 2;
  c.env_hidden_dim = 3;
  c.diffusion_steps = 4;
  c.t_start_infer = 2;
  c.time_embed_dim = 2;
  c.denoiser_hidden = 4;
  c.environments = 2;
  c.edits_per_node = 1;
  c.candidate_cap = 5;
  c.gcn_layers = 2;
  c.batch_size = 64;
  c.init_std = 0.5;
  c.lambda_generator = 1.0;
  c.lambda_diffusion = 1.0;
  c.lambda_env = 1.0;
  return mi;
}

}  // namespace causaldiffrec::train
