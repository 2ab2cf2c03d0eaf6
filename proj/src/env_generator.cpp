#include "causaldiffrec/env_generator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace causaldiffrec::envgen {

EditPolicy make_policy(const graph::BipartiteGraph& base, Index candidate_cap, Index edits_per_node,
                       Engine& rng) {
  if (candidate_cap < 1) throw Error("candidate_cap must be at least 1");
  if (edits_per_node < 0) throw Error("edits_per_node must be nonnegative");
  EditPolicy policy;
  policy.edits_per_node = edits_per_node;
  const Index n = base.num_items();
  for (Index u = 0; u < base.num_users(); ++u) {
    std::vector<Index> edges = base.user_items()[static_cast<std::size_t>(u)];
    const Index free = n - static_cast<Index>(edges.size());
    Index non_edge_slots = std::min(free, std::max(candidate_cap - static_cast<Index>(edges.size()), candidate_cap / 4));
    const Index edge_slots = std::min(static_cast<Index>(edges.size()), candidate_cap - non_edge_slots);
    std::shuffle(edges.begin(), edges.end(), rng);
    edges.resize(static_cast<std::size_t>(edge_slots));
    std::sort(edges.begin(), edges.end());

    std::vector<Index> non_edges;
    if (2 * non_edge_slots < free) {
      while (static_cast<Index>(non_edges.size()) < non_edge_slots) {
        const Index i = uniform_int(0, n - 1, rng);
        if (base.has_edge(u, i) || std::find(non_edges.begin(), non_edges.end(), i) != non_edges.end()) continue;
        non_edges.push_back(i);
      }
    } else {
      for (Index i = 0; i < n; ++i)
        if (!base.has_edge(u, i)) non_edges.push_back(i);
      std::shuffle(non_edges.begin(), non_edges.end(), rng);
      non_edges.resize(static_cast<std::size_t>(non_edge_slots));
    }
    std::sort(non_edges.begin(), non_edges.end());
    edges.insert(edges.end(), non_edges.begin(), non_edges.end());
    policy.logits.push_back(Vector::Zero(static_cast<Index>(edges.size())));
    policy.candidates.push_back(std::move(edges));
  }
  return policy;
}

Vector softmax(const Vector& logits) {
  if (logits.size() == 0) throw Error("softmax over an empty candidate list");
  const double top = logits.maxCoeff();
  Vector e = (logits.array() - top).exp();
  return e / e.sum();
}

Vector edit_probabilities(const EditPolicy& policy, Index user) {
  if (user < 0 || user >= static_cast<Index>(policy.logits.size()))
    throw Error(fmt::format("edit_probabilities: user {} out of range", user));
  const Vector& logits = policy.logits[static_cast<std::size_t>(user)];
  if (logits.size() == 0) throw Error(fmt::format("user {} has an empty candidate list", user));
  return softmax(logits);
}

GeneratedEnvironment sample_view(const EditPolicy& policy, const graph::BipartiteGraph& base, Engine& rng) {
  GeneratedEnvironment env;
  env.chosen.resize(policy.candidates.size());
  graph::EditMask mask;
  bool warned = false;
  for (std::size_t u = 0; u < policy.candidates.size(); ++u) {
    const auto& cands = policy.candidates[u];
    if (cands.empty() || policy.edits_per_node == 0) continue;
    Index s = policy.edits_per_node;
    if (s > static_cast<Index>(cands.size())) {
      if (!warned) spdlog::warn("edits_per_node {} exceeds a candidate list of {}; clamping", s, cands.size());
      warned = true;
      s = static_cast<Index>(cands.size());
    }
    const Vector p = softmax(policy.logits[u]);
    Vector remaining = p;
    for (Index t = 0; t < s; ++t) {
      double u01 = uniform01(rng) * remaining.sum();
      Index pick = 0;
      for (; pick + 1 < remaining.size(); ++pick) {
        if (remaining[pick] > 0.0 && u01 < remaining[pick]) break;
        u01 -= remaining[pick];
      }
      while (remaining[pick] <= 0.0) --pick;
      remaining[pick] = 0.0;
      env.chosen[u].push_back(pick);
      env.log_prob += std::log(p[pick]);
      mask.entries.emplace_back(static_cast<Index>(u), base.item_node(cands[static_cast<std::size_t>(pick)]));
    }
  }
  env.view = graph::apply_edits(base, mask);
  return env;
}

std::vector<Vector> log_prob_gradient(const EditPolicy& policy, const GeneratedEnvironment& env) {
  std::vector<Vector> grad(policy.logits.size());
  for (std::size_t u = 0; u < policy.logits.size(); ++u) {
    grad[u] = Vector::Zero(policy.logits[u].size());
    if (u >= env.chosen.size() || env.chosen[u].empty()) continue;
    const Vector p = softmax(policy.logits[u]);
    for (Index c : env.chosen[u]) grad[u][c] += 1.0;
    grad[u] -= static_cast<double>(env.chosen[u].size()) * p;
  }
  return grad;
}

ReinforceResult reinforce_update(const std::vector<GeneratedEnvironment>& envs,
                                 std::vector<EditPolicy> policies, const ReinforceOptions& options) {
  if (envs.size() != policies.size()) throw Error("reinforce_update: one policy per environment expected");
  ReinforceResult result;
  // Mean taken as an offset from the first finite reward so that equal
  // rewards give a baseline exactly equal to them.
  double anchor = 0.0, offset = 0.0;
  std::size_t finite = 0;
  for (const auto& e : envs) {
    if (!std::isfinite(e.reward)) continue;
    if (finite == 0) anchor = e.reward;
    offset += e.reward - anchor;
    ++finite;
  }
  result.baseline = (options.use_baseline && finite > 0) ? anchor + offset / static_cast<double>(finite) : 0.0;
  for (std::size_t k = 0; k < envs.size(); ++k) {
    if (!std::isfinite(envs[k].reward)) {
      spdlog::warn("reinforce_update: non-finite reward in environment {}; skipped", k);
      ++result.skipped;
      continue;
    }
    const double advantage = envs[k].reward - result.baseline;
    if (advantage == 0.0) continue;
    const auto grad = log_prob_gradient(policies[k], envs[k]);
    for (std::size_t u = 0; u < grad.size(); ++u)
      policies[k].logits[u] += options.learning_rate * advantage * grad[u];
  }
  result.policies = std::move(policies);
  return result;
}

double variance_loss(const std::vector<double>& env_losses) {
  if (env_losses.size() < 2) throw Error("variance needs >=2 environments");
  const double k = static_cast<double>(env_losses.size());
  const double mean = std::accumulate(env_losses.begin(), env_losses.end(), 0.0) / k;
  double acc = 0.0;
  for (double l : env_losses) acc += (l - mean) * (l - mean);
  return acc / k;
}

}  // namespace causaldiffrec::envgen
