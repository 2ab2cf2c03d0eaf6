#include "causaldiffrec/recommender.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace causaldiffrec::rec {

namespace {

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

void check_pair(const Embeddings& e, Index user, Index item) {
  if (user < 0 || user >= e.num_users) throw Error(fmt::format("user index {} out of range", user));
  if (item < 0 || item >= e.num_items()) throw Error(fmt::format("item index {} out of range", item));
}

}  // namespace

ad::Var propagate(const SparseMatrix& normalized, const ad::Var& layer0, int layers) {
  if (layers < 0) throw Error("propagate: negative layer count");
  std::vector<ad::Var> all{layer0};
  ad::Var current = layer0;
  for (int l = 0; l < layers; ++l) {
    current = ad::spmm(normalized, current);
    all.push_back(current);
  }
  return layers == 0 ? layer0 : ad::average_matrices(all);
}

Embeddings propagate(const graph::BipartiteGraph& graph, const Matrix& layer0, int layers) {
  ad::Tape tape;
  return {propagate(graph.normalized(), tape.constant(layer0), layers).value(), graph.num_users()};
}

double score(const Embeddings& e, Index user, Index item) {
  check_pair(e, user, item);
  return e.values.row(user).dot(e.values.row(e.num_users + item));
}

Vector score_all(const Embeddings& e, Index user) {
  check_pair(e, user, 0);
  return e.values.bottomRows(e.num_items()) * e.values.row(user).transpose();
}

double bpr_loss(const std::vector<BprTriplet>& batch, const Embeddings& e) {
  if (batch.empty()) throw Error("bpr_loss: empty batch");
  double total = 0.0;
  for (const auto& t : batch) total += softplus(-(score(e, t.user, t.positive) - score(e, t.user, t.negative)));
  return total / static_cast<double>(batch.size());
}

ad::Var bpr_loss(const std::vector<BprTriplet>& batch, const ad::Var& final_embeddings, Index num_users) {
  if (batch.empty()) throw Error("bpr_loss: empty batch");
  std::vector<Index> users, positives, negatives;
  for (const auto& t : batch) {
    users.push_back(t.user);
    positives.push_back(num_users + t.positive);
    negatives.push_back(num_users + t.negative);
  }
  ad::Var u = ad::gather_rows(final_embeddings, users);
  ad::Var diff = ad::sub(ad::rowwise_dot(u, ad::gather_rows(final_embeddings, positives)),
                         ad::rowwise_dot(u, ad::gather_rows(final_embeddings, negatives)));
  return ad::mean(ad::softplus(ad::scale(diff, -1.0)));
}

TopK top_k(const Vector& scores, Index k, const std::vector<Index>& excluded) {
  if (k < 1) throw Error("top_k: k must be at least 1");
  std::vector<Index> candidates;
  candidates.reserve(static_cast<std::size_t>(scores.size()));
  for (Index i = 0; i < scores.size(); ++i)
    if (!std::binary_search(excluded.begin(), excluded.end(), i)) candidates.push_back(i);
  TopK out;
  const auto take = static_cast<std::size_t>(std::min<Index>(k, static_cast<Index>(candidates.size())));
  out.truncated = static_cast<Index>(take) < k;
  auto better = [&](Index a, Index b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); };
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take), candidates.end(), better);
  out.items.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(take));
  return out;
}

TopK recommend_topk(const Embeddings& e, Index user, Index k, const std::vector<Index>& excluded) {
  return top_k(score_all(e, user), k, excluded);
}

}  // namespace causaldiffrec::rec
