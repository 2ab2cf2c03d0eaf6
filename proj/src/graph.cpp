#include "causaldiffrec/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <fmt/format.h>

namespace causaldiffrec::graph {

BipartiteGraph::BipartiteGraph(Index num_users, Index num_items,
                               std::vector<std::vector<Index>> user_items)
    : num_users_(num_users), num_items_(num_items), user_items_(std::move(user_items)) {
  if (static_cast<Index>(user_items_.size()) != num_users_)
    throw Error("graph: user_items must have one list per user");
  const Index nodes = num_nodes();
  degrees_.assign(static_cast<std::size_t>(nodes), 0);
  for (Index u = 0; u < num_users_; ++u) {
    auto& items = user_items_[static_cast<std::size_t>(u)];
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    for (Index i : items) {
      if (i < 0 || i >= num_items_) throw Error(fmt::format("graph: item {} out of range", i));
      ++degrees_[static_cast<std::size_t>(u)];
      ++degrees_[static_cast<std::size_t>(item_node(i))];
    }
    num_edges_ += static_cast<Index>(items.size());
  }

  std::vector<Eigen::Triplet<double>> ones, norm;
  ones.reserve(static_cast<std::size_t>(2 * num_edges_));
  norm.reserve(static_cast<std::size_t>(2 * num_edges_));
  for (Index u = 0; u < num_users_; ++u) {
    for (Index i : user_items_[static_cast<std::size_t>(u)]) {
      const Index v = item_node(i);
      const double w = 1.0 / std::sqrt(static_cast<double>(degrees_[static_cast<std::size_t>(u)]) *
                                       static_cast<double>(degrees_[static_cast<std::size_t>(v)]));
      ones.emplace_back(u, v, 1.0);
      ones.emplace_back(v, u, 1.0);
      norm.emplace_back(u, v, w);
      norm.emplace_back(v, u, w);
    }
  }
  adjacency_.resize(nodes, nodes);
  adjacency_.setFromTriplets(ones.begin(), ones.end());
  normalized_.resize(nodes, nodes);
  normalized_.setFromTriplets(norm.begin(), norm.end());
}

bool BipartiteGraph::has_edge(Index user, Index item) const {
  if (user < 0 || user >= num_users_) return false;
  const auto& items = user_items_[static_cast<std::size_t>(user)];
  return std::binary_search(items.begin(), items.end(), item);
}

BipartiteGraph from_interactions(const datasets::InteractionTable& train) {
  if (train.empty()) throw Error("graph: training table is empty");
  return BipartiteGraph(train.num_users, train.num_items, train.items_by_user());
}

BipartiteGraph apply_edits(const BipartiteGraph& graph, const EditMask& mask) {
  const Index m = graph.num_users();
  const Index nodes = graph.num_nodes();
  // B is binary: repeated mentions of one entry collapse to a single toggle.
  std::map<Index, std::vector<Index>> toggles;
  for (auto [r, c] : mask.entries) {
    if (r < 0 || c < 0 || r >= nodes || c >= nodes)
      throw Error(fmt::format("edit mask entry ({}, {}) out of range", r, c));
    const bool r_user = r < m, c_user = c < m;
    if (r_user == c_user)
      throw Error(fmt::format("edit mask entry ({}, {}) lies outside the user-item block", r, c));
    const Index u = r_user ? r : c;
    const Index i = (r_user ? c : r) - m;
    toggles[u].push_back(i);
  }
  auto rows = graph.user_items();
  for (auto& [u, items] : toggles) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
    if (mask.edit_budget && static_cast<Index>(items.size()) > *mask.edit_budget)
      throw Error(fmt::format("edit mask has {} entries in user row {}, budget is {}", items.size(), u,
                              *mask.edit_budget));
    auto& row = rows[static_cast<std::size_t>(u)];
    std::vector<Index> next;
    std::set_symmetric_difference(row.begin(), row.end(), items.begin(), items.end(),
                                  std::back_inserter(next));
    row = std::move(next);
  }
  return BipartiteGraph(m, graph.num_items(), std::move(rows));
}

void write_edge_list(const std::filesystem::path& path, const BipartiteGraph& graph) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write edge list: " + path.string());
  for (Index u = 0; u < graph.num_users(); ++u)
    for (Index i : graph.user_items()[static_cast<std::size_t>(u)]) out << u << '\t' << i << '\n';
}

}  // namespace causaldiffrec::graph
