#pragma once

// LightGCN propagation, dot-product scoring, BPR loss and top-k retrieval.

#include <vector>

#include "causaldiffrec/autodiff.hpp"
#include "causaldiffrec/graph.hpp"

namespace causaldiffrec::rec {

// Final user and item embeddings stacked as rows [users; items].
struct Embeddings {
  Matrix values;
  Index num_users = 0;

  Index num_items() const { return values.rows() - num_users; }
};

// Mean of E^(0..L) with E^(l+1) = A_norm E^(l).
ad::Var propagate(const SparseMatrix& normalized, const ad::Var& layer0, int layers);
Embeddings propagate(const graph::BipartiteGraph& graph, const Matrix& layer0, int layers);

double score(const Embeddings& embeddings, Index user, Index item);
// Scores of one user against every item.
Vector score_all(const Embeddings& embeddings, Index user);

struct BprTriplet {
  Index user = 0;
  Index positive = 0;
  Index negative = 0;
};

// Mean over the batch of softplus(-(s+ - s-)) = -log sigmoid(s+ - s-).
double bpr_loss(const std::vector<BprTriplet>& batch, const Embeddings& embeddings);
ad::Var bpr_loss(const std::vector<BprTriplet>& batch, const ad::Var& final_embeddings, Index num_users);

struct TopK {
  std::vector<Index> items;
  // Fewer than k items were available after exclusion.
  bool truncated = false;
};

// Highest scores first, ties by ascending item index; `excluded` must be
// sorted.
TopK top_k(const Vector& scores, Index k, const std::vector<Index>& excluded);
TopK recommend_topk(const Embeddings& embeddings, Index user, Index k, const std::vector<Index>& excluded);

}  // namespace causaldiffrec::rec
