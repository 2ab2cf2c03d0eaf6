#pragma once

// Environment generator: per-user edge-edit policies that produce perturbed
// views of the interaction graph, trained with a score-function estimator.

#include <vector>

#include "causaldiffrec/graph.hpp"
#include "causaldiffrec/rng.hpp"
#include "causaldiffrec/types.hpp"

namespace causaldiffrec::envgen {

struct EditPolicy {
  // Per user: candidate items (existing edges first, then non-edges) and one
  // logit per candidate.
  std::vector<std::vector<Index>> candidates;
  std::vector<Vector> logits;
  Index edits_per_node = 1;
};

// Builds a zero-logit policy. Each user gets at most `candidate_cap`
// candidates; at least a quarter of the slots go to sampled non-edges when
// that many exist, the rest to existing edges.
EditPolicy make_policy(const graph::BipartiteGraph& base, Index candidate_cap, Index edits_per_node,
                       Engine& rng);

// exp(x_j - max) / sum exp(x - max).
Vector softmax(const Vector& logits);

Vector edit_probabilities(const EditPolicy& policy, Index user);

struct GeneratedEnvironment {
  graph::BipartiteGraph view;
  // Per user, the chosen candidate positions in draw order.
  std::vector<std::vector<Index>> chosen;
  // Sum over chosen actions of log h(action) under the full row softmax.
  double log_prob = 0.0;
  double reward = 0.0;
};

// Draws edits_per_node candidates per user without replacement, toggles
// them in `base`, and records the log-probability of the draw.
GeneratedEnvironment sample_view(const EditPolicy& policy, const graph::BipartiteGraph& base,
                                 Engine& rng);

// d log h(A_k) / d logits for one environment: per user, counts of chosen
// positions minus (number chosen) * probabilities.
std::vector<Vector> log_prob_gradient(const EditPolicy& policy, const GeneratedEnvironment& env);

struct ReinforceOptions {
  double learning_rate = 1e-2;
  // Subtract the mean reward of the environments in the update.
  bool use_baseline = true;
};

struct ReinforceResult {
  std::vector<EditPolicy> policies;
  std::size_t skipped = 0;
  double baseline = 0.0;
};

// Gradient ascent on E[R]: logits += lr * (R_k - baseline) * grad log h(A_k).
// Environments with non-finite rewards are skipped.
ReinforceResult reinforce_update(const std::vector<GeneratedEnvironment>& envs,
                                 std::vector<EditPolicy> policies, const ReinforceOptions& options);

// Population variance of per-environment losses.
double variance_loss(const std::vector<double>& env_losses);

}  // namespace causaldiffrec::envgen
