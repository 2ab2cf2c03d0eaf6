#include <doctest.h>

#include <cmath>
#include <map>

#include <boost/multiprecision/cpp_dec_float.hpp>

#include "causaldiffrec/env_generator.hpp"

using namespace causaldiffrec;
using namespace causaldiffrec::envgen;
using Big = boost::multiprecision::cpp_dec_float_50;

namespace {

EditPolicy policy_with(std::vector<Index> candidates, Vector logits, Index s) {
  EditPolicy p;
  p.candidates = {std::move(candidates)};
  p.logits = {std::move(logits)};
  p.edits_per_node = s;
  return p;
}

}  // namespace

TEST_CASE("softmax closed forms") {
  const Vector third = softmax(Vector::Zero(3));
  for (Index i = 0; i < 3; ++i) CHECK(third[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  Vector l(2);
  l << std::log(2.0), 0.0;
  const Vector p = softmax(l);
  CHECK(p[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK_THROWS_AS(softmax(Vector()), Error);
}

TEST_CASE("softmax matches a 50-digit oracle") {
  Engine rng = substream(1, "softmax");
  for (int trial = 0; trial < 100; ++trial) {
    const Index n = uniform_int(1, 30, rng);
    Vector l(n);
    for (Index i = 0; i < n; ++i) l[i] = 40.0 * (uniform01(rng) - 0.5);
    const Vector p = softmax(l);
    CHECK(std::abs(p.sum() - 1.0) <= 1e-12);
    Big total = 0;
    for (Index i = 0; i < n; ++i) total += boost::multiprecision::exp(Big(l[i]));
    for (Index i = 0; i < n; ++i) {
      const double exact = static_cast<double>(boost::multiprecision::exp(Big(l[i])) / total);
      CHECK(std::abs(p[i] - exact) <= 1e-15 + 1e-13 * exact);
    }
  }
}

TEST_CASE("policies list edges first and keep room for non-edges") {
  const graph::BipartiteGraph g(2, 20, {{1, 3, 5, 7, 9, 11, 13}, {0}});
  Engine rng = substream(2, "policy");
  const auto p = make_policy(g, 8, 1, rng);
  REQUIRE(p.candidates.size() == 2);
  const auto& c0 = p.candidates[0];
  CHECK(c0.size() == 8);
  Index edges = 0;
  bool seen_non_edge = false;
  for (Index i : c0) {
    if (g.has_edge(0, i)) {
      CHECK_FALSE(seen_non_edge);
      ++edges;
    } else {
      seen_non_edge = true;
    }
  }
  CHECK(edges == 6);  // a quarter of the 8 slots goes to non-edges
  CHECK(p.candidates[1].size() == 8);
  CHECK(p.logits[0].isZero());
  CHECK_THROWS_AS(make_policy(g, 0, 1, rng), Error);
}

TEST_CASE("zero edits leave the graph unchanged") {
  const graph::BipartiteGraph g(1, 3, {{0}});
  Engine rng = substream(3, "view");
  const auto env = sample_view(policy_with({0, 1, 2}, Vector::Zero(3), 0), g, rng);
  CHECK(env.view.dense_adjacency() == g.dense_adjacency());
  CHECK(env.log_prob == 0.0);
}

TEST_CASE("drawing every candidate toggles all of them") {
  const graph::BipartiteGraph g(1, 3, {{0}});
  Engine rng = substream(4, "view");
  Vector l(3);
  l << 0.5, -1.0, 2.0;
  const auto env = sample_view(policy_with({0, 1, 2}, l, 3), g, rng);
  CHECK_FALSE(env.view.has_edge(0, 0));
  CHECK(env.view.has_edge(0, 1));
  CHECK(env.view.has_edge(0, 2));
  const Vector p = softmax(l);
  CHECK(env.log_prob == doctest::Approx(std::log(p[0]) + std::log(p[1]) + std::log(p[2])).epsilon(1e-14));
  CHECK(env.chosen[0].size() == 3);

  // Requests beyond the list clamp to it.
  const auto clamped = sample_view(policy_with({0, 1, 2}, l, 7), g, rng);
  CHECK(clamped.chosen[0].size() == 3);
}

TEST_CASE("a dominant logit is drawn more than 99% of the time") {
  const graph::BipartiteGraph g(1, 4, {{0}});
  Engine rng = substream(5, "view");
  Vector l = Vector::Zero(4);
  l[2] = 12.0;
  const auto policy = policy_with({0, 1, 2, 3}, l, 1);
  int hits = 0;
  for (int k = 0; k < 1000; ++k) hits += sample_view(policy, g, rng).chosen[0][0] == 2;
  CHECK(hits > 990);
}

TEST_CASE("equal rewards cancel against the baseline") {
  const graph::BipartiteGraph g(1, 3, {{0}});
  Engine rng = substream(6, "view");
  Vector l(3);
  l << 0.1, 0.2, -0.4;
  std::vector<EditPolicy> policies(3, policy_with({0, 1, 2}, l, 1));
  std::vector<GeneratedEnvironment> envs;
  for (auto& p : policies) {
    envs.push_back(sample_view(p, g, rng));
    envs.back().reward = 0.37;
  }
  const auto r = reinforce_update(envs, policies, {});
  CHECK(r.baseline == 0.37);
  for (const auto& p : r.policies) CHECK(p.logits[0] == l);
}

TEST_CASE("one environment without baseline steps along the score function") {
  const graph::BipartiteGraph g(1, 3, {{0}});
  Engine rng = substream(7, "view");
  Vector l(3);
  l << 0.3, -0.1, 0.2;
  const auto policy = policy_with({0, 1, 2}, l, 2);
  auto env = sample_view(policy, g, rng);
  env.reward = 1.0;
  ReinforceOptions o;
  o.use_baseline = false;
  o.learning_rate = 1.0;
  const auto r = reinforce_update({env}, {policy}, o);
  const Vector step = r.policies[0].logits[0] - l;

  // Central differences of the recorded log-probability with the draw fixed.
  for (Index j = 0; j < 3; ++j) {
    auto logp = [&](double delta) {
      Vector x = l;
      x[j] += delta;
      const Vector p = softmax(x);
      double s = 0.0;
      for (Index c : env.chosen[0]) s += std::log(p[c]);
      return s;
    };
    const double h = 1e-6;
    CHECK(step[j] == doctest::Approx((logp(h) - logp(-h)) / (2 * h)).epsilon(1e-8));
  }
}

TEST_CASE("non-finite rewards skip their environment") {
  const graph::BipartiteGraph g(1, 2, {{0}});
  Engine rng = substream(8, "view");
  const auto policy = policy_with({0, 1}, Vector::Zero(2), 1);
  std::vector<GeneratedEnvironment> envs{sample_view(policy, g, rng), sample_view(policy, g, rng)};
  envs[0].reward = std::nan("");
  envs[1].reward = 2.0;
  const auto r = reinforce_update(envs, {policy, policy}, {});
  CHECK(r.skipped == 1);
  CHECK(r.baseline == 2.0);
  CHECK(r.policies[0].logits[0].isZero());
}

TEST_CASE("expected update of a two-candidate policy matches enumeration") {
  // Reward depends on which candidate was toggled. The oracle enumerates both
  // actions; the estimator averages single-environment updates.
  const graph::BipartiteGraph g(1, 2, {{0}});
  Vector l(2);
  l << 0.4, -0.3;
  const auto policy = policy_with({0, 1}, l, 1);
  const double reward[2] = {1.0, 3.0};

  const Vector p = softmax(l);
  Vector expected = Vector::Zero(2);
  for (Index a = 0; a < 2; ++a) {
    Vector score = -p;
    score[a] += 1.0;
    expected += p[a] * reward[a] * score;
  }

  ReinforceOptions o;
  o.use_baseline = false;
  o.learning_rate = 1.0;
  Engine rng = substream(9, "view");
  const int draws = 200000;
  Vector mean = Vector::Zero(2), sq = Vector::Zero(2);
  for (int k = 0; k < draws; ++k) {
    auto env = sample_view(policy, g, rng);
    env.reward = reward[env.chosen[0][0]];
    const Vector step = reinforce_update({env}, {policy}, o).policies[0].logits[0] - l;
    mean += step;
    sq += step.cwiseProduct(step);
  }
  mean /= draws;
  sq /= draws;
  for (Index j = 0; j < 2; ++j) {
    const double se = std::sqrt((sq[j] - mean[j] * mean[j]) / draws);
    CHECK(std::abs(mean[j] - expected[j]) <= 4.0 * se);
  }
}

TEST_CASE("variance across environment losses") {
  CHECK(variance_loss({0.5, 0.5, 0.5}) == 0.0);
  CHECK(variance_loss({0.0, 1.0}) == 0.25);
  CHECK_THROWS_WITH_AS(variance_loss({1.0}), doctest::Contains("variance needs"), Error);

  Engine rng = substream(10, "variance");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(5);
    for (auto& v : x) v = 1e3 + uniform01(rng);
    Big mean = 0;
    for (double v : x) mean += Big(v);
    mean /= 5;
    Big var = 0;
    for (double v : x) var += (Big(v) - mean) * (Big(v) - mean);
    var /= 5;
    const double exact = static_cast<double>(var);
    CHECK(std::abs(variance_loss(x) - exact) <= 1e-9 * exact + 1e-15);
  }
}
