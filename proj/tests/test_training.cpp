#include <doctest.h>

#include <cmath>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "causaldiffrec/training.hpp"
#include "support/synthetic.hpp"

using namespace causaldiffrec;
using namespace causaldiffrec::train;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

TrainConfig small_config(std::uint64_t seed) {
  TrainConfig c;
  c.seed = seed;
  c.latent_dim = 8;
  c.encoder_hidden = 8;
  c.env_dim = 4;
  c.env_hidden_dim = 8;
  c.diffusion_steps = 5;
  c.time_embed_dim = 4;
  c.denoiser_hidden = 8;
  c.environments = 2;
  c.edits_per_node = 1;
  c.candidate_cap = 8;
  c.batch_size = 64;
  c.learning_rate = 1e-2;
  c.topk = {5};
  c.early_stop_k = 5;
  return c;
}

datasets::SplitBundle small_split(std::uint64_t seed) {
  testing::LongTailOptions o;
  o.users = 50;
  o.items = 40;
  o.per_user = 8;
  o.clusters = 4;
  o.seed = seed;
  return datasets::random_iid_split(testing::long_tail_corpus(o), seed);
}

bool same_params(const ModelParams& a, const ModelParams& b) {
  const auto x = named_params(a), y = named_params(b);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (*x[i].second != *y[i].second) return false;
  return true;
}

}  // namespace

TEST_CASE("joint loss arithmetic") {
  TrainConfig c;
  c.lambda_generator = 0.1;
  c.lambda_diffusion = 0.01;
  c.lambda_env = 0.001;
  LossBreakdown parts{1, 2, 3, 4, 5, 0};
  CHECK(joint_loss(parts, c).total == doctest::Approx(1.275).epsilon(1e-15));
  c.generator_sign = -1;
  CHECK(joint_loss(parts, c).total == doctest::Approx(1.0 - 0.2 + 0.07 + 0.005).epsilon(1e-15));

  c.lambda_generator = c.lambda_diffusion = c.lambda_env = 0.0;
  CHECK(joint_loss(parts, c).total == 1.0);

  parts.vgae = std::nan("");
  CHECK_THROWS_WITH_AS(joint_loss(parts, c), doctest::Contains("vgae"), Error);
}

TEST_CASE("joint loss matches a 50-digit weighted sum") {
  Engine rng = substream(1, "joint");
  for (int trial = 0; trial < 200; ++trial) {
    TrainConfig c;
    c.lambda_generator = uniform01(rng);
    c.lambda_diffusion = uniform01(rng);
    c.lambda_env = uniform01(rng);
    c.generator_sign = uniform01(rng) < 0.5 ? 1 : -1;
    LossBreakdown p{10 * uniform01(rng), uniform01(rng), 5 * uniform01(rng), uniform01(rng), 3 * uniform01(rng), 0};
    const Big exact = Big(p.rec) + Big(c.generator_sign) * Big(c.lambda_generator) * Big(p.generator) +
                      Big(c.lambda_diffusion) * (Big(p.vgae) + Big(p.inv_simple)) + Big(c.lambda_env) * Big(p.env_inf);
    const double e = static_cast<double>(exact);
    CHECK(std::abs(joint_loss(p, c).total - e) <= 1e-14 * std::max(1.0, std::abs(e)));
  }
}

TEST_CASE("config validation names the field") {
  TrainConfig c;
  c.environments = 1;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("K"), Error);
  c.no_generator = true;
  CHECK_NOTHROW(c.validate());
  c.time_embed_dim = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("time_embed_dim"), Error);
}

TEST_CASE("AdamW applies decoupled decay before the Adam step") {
  Matrix p = Matrix::Constant(1, 1, 2.0);
  AdamW opt(0.1, 0.5, 0.9, 0.999, 1e-8);
  opt.step({&p}, {Matrix::Constant(1, 1, 3.0)});
  // Decay: 2 * (1 - 0.05) = 1.9; first bias-corrected step has magnitude lr.
  CHECK(p(0, 0) == doctest::Approx(1.9 - 0.1 * 3.0 / (3.0 + 1e-8)).epsilon(1e-14));
  CHECK(opt.steps() == 1);
}

TEST_CASE("parameter groups are enumerated in a fixed order") {
  const auto g = graph::BipartiteGraph(2, 2, {{0}, {1}});
  const auto state = init_state(small_config(1), g);
  const auto names = named_params(state.params);
  REQUIRE(names.size() == 13);
  CHECK(names.front().first == "embeddings");
  CHECK(names.back().first == "denoiser.b2");
}

TEST_CASE("two epochs under one seed repeat bitwise") {
  const auto split = small_split(2);
  const auto base = graph::from_interactions(split.train);
  auto run = [&] {
    auto state = init_state(small_config(7), base);
    std::vector<double> losses;
    for (int e = 0; e < 2; ++e) losses.push_back(train_epoch(state, split.train, base).mean_loss.total);
    return std::make_pair(losses, state);
  };
  const auto a = run(), b = run();
  CHECK(a.first == b.first);
  CHECK(same_params(a.second.params, b.second.params));
  CHECK(infer_embeddings(a.second, base).values == infer_embeddings(b.second, base).values);
}

TEST_CASE("thirty epochs lower the total loss on a 50-user set") {
  const auto split = small_split(3);
  const auto base = graph::from_interactions(split.train);
  auto state = init_state(small_config(3), base);
  double first = 0.0, last = 0.0;
  for (int e = 1; e <= 30; ++e) {
    const auto r = train_epoch(state, split.train, base);
    CHECK_FALSE(r.aborted);
    if (e == 1) first = r.mean_loss.total;
    last = r.mean_loss.total;
  }
  CHECK(last < first);
}

TEST_CASE("zero epochs return the initial state") {
  const auto split = small_split(4);
  auto c = small_config(4);
  c.epochs = 0;
  const auto fit_result = fit(split, c);
  const auto init = init_state(c, graph::from_interactions(split.train));
  CHECK(same_params(fit_result.best.params, init.params));
  CHECK(fit_result.history.empty());
  CHECK(fit_result.best.epoch == 0);
}

TEST_CASE("early stopping bookkeeping") {
  const auto split = small_split(5);
  SUBCASE("a frozen model stops after two epochs with patience one") {
    auto c = small_config(5);
    c.learning_rate = 1e-300;
    c.weight_decay = 0.0;
    c.generator_lr = 0.0;
    c.patience = 1;
    c.epochs = 10;
    const auto r = fit(split, c);
    CHECK(r.history.size() == 2);
    CHECK(r.early_stopped);
    CHECK(r.best_epoch == 1);
  }
  SUBCASE("stopping follows the validation trajectory") {
    auto c = small_config(5);
    c.patience = 1;
    c.epochs = 25;
    const auto r = fit(split, c);
    // Stops at the first epoch that fails to improve on the best so far.
    double best = -1.0;
    std::size_t expected = r.history.size();
    for (std::size_t e = 0; e < r.history.size(); ++e) {
      const double v = r.history[e].valid_ndcg.back();
      if (v > best) {
        best = v;
      } else {
        expected = e + 1;
        break;
      }
    }
    CHECK(r.history.size() == expected);
  }
  SUBCASE("the best checkpoint never trails the final epoch") {
    auto c = small_config(6);
    c.epochs = 15;
    c.patience = 15;
    const auto r = fit(split, c);
    REQUIRE_FALSE(r.history.empty());
    CHECK(r.best_valid_ndcg >= r.history.back().valid_ndcg.back());
    CHECK(r.best.epoch == r.best_epoch);
  }
}

TEST_CASE("three non-finite steps in a row abort the epoch") {
  const auto split = small_split(7);
  const auto base = graph::from_interactions(split.train);
  auto c = small_config(7);
  c.learning_rate = 1e300;
  c.batch_size = 16;
  auto state = init_state(c, base);
  const auto r = train_epoch(state, split.train, base);
  CHECK(r.aborted);
  CHECK(r.skipped_steps == 3);
}

TEST_CASE("gradient check on a linear toy is exact") {
  Engine rng = substream(8, "linear");
  const Matrix x = standard_normal(6, 3, rng);
  auto loss = [x](ad::Tape& tape, const std::vector<ad::Var>& p) {
    return ad::sum(ad::matmul(tape.constant(x), p[0]));
  };
  const auto rep = check_gradients(loss, {{"w", standard_normal(3, 2, rng)}}, 1e-3, 1e-8, 1.0);
  CHECK(rep.max_relative_error < 1e-8);
  CHECK(rep.passed);
}

TEST_CASE("joint loss gradients on the micro instance") {
  auto mi = make_micro_instance(11);
  const auto base = graph::from_interactions(mi.train);
  auto state = init_state(mi.config, base);
  const datasets::UserItemIndex index(mi.train);
  auto batches = make_epoch_batches(mi.train, index, mi.config.batch_size, state.streams.batches,
                                    state.streams.negatives);
  const auto draws = draw_batch(state, base, batches.front());
  CHECK(base.num_nodes() <= 10);
  const auto rep = gradient_check(state, base, draws);
  CHECK(rep.groups.size() == 13);
  CHECK(rep.max_relative_error < 1e-4);
  for (const auto& g : rep.groups) INFO(g.name << " " << g.max_relative_error);

  // Frozen draws give an identical report.
  const auto again = gradient_check(state, base, draws);
  CHECK(again.max_relative_error == rep.max_relative_error);
  CHECK(again.worst_group == rep.worst_group);
}

TEST_CASE("the gradient check names a broken parameter group") {
  Engine rng = substream(9, "broken");
  // The second group enters the loss as a constant, so its analytic
  // gradient is zero while the numeric one is not.
  auto loss = [](ad::Tape& tape, const std::vector<ad::Var>& p) {
    return ad::add(ad::sum(ad::square(p[0])), tape.constant(p[1].value().array().square().matrix().sum() * Matrix::Ones(1, 1)));
  };
  const auto rep = check_gradients(loss, {{"good", standard_normal(2, 2, rng)}, {"bad", standard_normal(2, 2, rng)}});
  CHECK_FALSE(rep.passed);
  CHECK(rep.worst_group == "bad");
}
