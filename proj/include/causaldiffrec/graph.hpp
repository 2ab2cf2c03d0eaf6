#pragma once

#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "causaldiffrec/datasets.hpp"
#include "causaldiffrec/types.hpp"

namespace causaldiffrec::graph {

// User-item bipartite graph over nodes [0, m) users and [m, m + n) items.
// Immutable; edits produce a new graph.
class BipartiteGraph {
 public:
  BipartiteGraph() = default;
  // user_items[u] lists the items of user u; duplicates are collapsed.
  BipartiteGraph(Index num_users, Index num_items, std::vector<std::vector<Index>> user_items);

  Index num_users() const { return num_users_; }
  Index num_items() const { return num_items_; }
  Index num_nodes() const { return num_users_ + num_items_; }
  Index item_node(Index item) const { return num_users_ + item; }
  // Undirected user-item edges.
  Index num_edges() const { return num_edges_; }

  const std::vector<std::vector<Index>>& user_items() const { return user_items_; }
  bool has_edge(Index user, Index item) const;
  const std::vector<Index>& degrees() const { return degrees_; }

  // Binary symmetric (m+n) x (m+n) adjacency.
  const SparseMatrix& adjacency() const { return adjacency_; }
  // D^{-1/2} A D^{-1/2}; rows of isolated nodes are zero.
  const SparseMatrix& normalized() const { return normalized_; }

  Matrix dense_adjacency() const { return Matrix(adjacency_); }

 private:
  Index num_users_ = 0;
  Index num_items_ = 0;
  Index num_edges_ = 0;
  std::vector<std::vector<Index>> user_items_;
  std::vector<Index> degrees_;
  SparseMatrix adjacency_;
  SparseMatrix normalized_;
};

BipartiteGraph from_interactions(const datasets::InteractionTable& train);

// Positions of B_k, given as node-index pairs; (r, c) and (c, r) denote the
// same symmetric entry. Every entry must join a user to an item.
struct EditMask {
  std::vector<std::pair<Index, Index>> entries;
  // Maximum number of toggles per user row, when set.
  std::optional<Index> edit_budget;
};

// Toggles every masked user-item entry: A_k = A + B (.) (A' - A), with A'
// the complement inside the user-item block. Result is re-normalized.
BipartiteGraph apply_edits(const BipartiteGraph& graph, const EditMask& mask);

// Debug dump: `u<TAB>i` per edge.
void write_edge_list(const std::filesystem::path& path, const BipartiteGraph& graph);

}  // namespace causaldiffrec::graph
