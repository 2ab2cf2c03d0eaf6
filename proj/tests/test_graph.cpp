#include <doctest.h>

#include <cmath>
#include <set>

#include "causaldiffrec/graph.hpp"
#include "causaldiffrec/rng.hpp"

using namespace causaldiffrec;
using graph::BipartiteGraph;

TEST_CASE("normalized adjacency of one user with two items") {
  const BipartiteGraph g(1, 2, {{0, 1}});
  CHECK(g.num_edges() == 2);
  CHECK(g.degrees()[0] == 2);
  const Matrix a = Matrix(g.normalized());
  CHECK(a(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(a(0, 2) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));
  CHECK(a(1, 0) == a(0, 1));
  CHECK(a(1, 2) == 0.0);
  CHECK(a(0, 0) == 0.0);
}

TEST_CASE("isolated nodes give zero rows without NaN") {
  const BipartiteGraph g(2, 3, {{0}, {}});
  const Matrix a = Matrix(g.normalized());
  CHECK(a.allFinite());
  CHECK(a.row(1).isZero());
  CHECK(a.row(g.item_node(2)).isZero());
  CHECK(a(0, g.item_node(0)) == 1.0);
}

TEST_CASE("adjacency is symmetric with twice the edge count") {
  Engine rng = substream(4, "graph");
  std::vector<std::vector<Index>> items(20);
  Index edges = 0;
  for (auto& row : items)
    for (Index i = 0; i < 15; ++i)
      if (uniform01(rng) < 0.3) {
        row.push_back(i);
        ++edges;
      }
  items[3].push_back(items[3].empty() ? 0 : items[3][0]);  // duplicate collapses
  const BipartiteGraph g(20, 15, items);
  CHECK(g.num_edges() == edges);
  CHECK(g.adjacency().nonZeros() == 2 * edges);
  const Matrix a = g.dense_adjacency();
  CHECK((a - a.transpose()).isZero());
  const Matrix na = Matrix(g.normalized());
  for (Index r = 0; r < a.rows(); ++r)
    for (Index c = 0; c < a.cols(); ++c) {
      if (a(r, c) == 0.0) continue;
      const double expected = 1.0 / std::sqrt(static_cast<double>(g.degrees()[static_cast<std::size_t>(r)] *
                                                                  g.degrees()[static_cast<std::size_t>(c)]));
      CHECK(na(r, c) == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("edits flip exactly the masked entries") {
  const BipartiteGraph g(2, 3, {{0, 1}, {2}});
  CHECK(graph::apply_edits(g, {}).dense_adjacency() == g.dense_adjacency());

  graph::EditMask remove{{{0, g.item_node(1)}}, std::nullopt};
  const auto r = graph::apply_edits(g, remove);
  CHECK_FALSE(r.has_edge(0, 1));
  CHECK(r.has_edge(0, 0));
  CHECK(r.num_edges() == 2);

  graph::EditMask add{{{g.item_node(0), 1}}, std::nullopt};  // transposed form of (1, item 0)
  const auto a = graph::apply_edits(g, add);
  CHECK(a.has_edge(1, 0));
  CHECK(a.num_edges() == 4);
  CHECK(graph::apply_edits(a, add).dense_adjacency() == g.dense_adjacency());
}

TEST_CASE("random masks match a per-entry brute-force toggle") {
  Engine rng = substream(8, "graph-edits");
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::vector<Index>> items(2);
    for (auto& row : items)
      for (Index i = 0; i < 2; ++i)
        if (uniform01(rng) < 0.5) row.push_back(i);
    const BipartiteGraph g(2, 2, items);
    Matrix expected = g.dense_adjacency();
    graph::EditMask mask;
    for (Index u = 0; u < 2; ++u)
      for (Index i = 0; i < 2; ++i)
        if (uniform01(rng) < 0.5) {
          mask.entries.emplace_back(u, g.item_node(i));
          const Index c = g.item_node(i);
          expected(u, c) = 1.0 - expected(u, c);
          expected(c, u) = expected(u, c);
        }
    const auto edited = graph::apply_edits(g, mask);
    CHECK(edited.dense_adjacency() == expected);
    // Normalization recomputed from scratch.
    const BipartiteGraph rebuilt(2, 2, edited.user_items());
    CHECK(Matrix(edited.normalized()) == Matrix(rebuilt.normalized()));
  }
}

TEST_CASE("edit masks outside the user-item block are rejected") {
  const BipartiteGraph g(2, 2, {{0}, {1}});
  CHECK_THROWS_AS(graph::apply_edits(g, {{{0, 1}}, std::nullopt}), Error);
  CHECK_THROWS_AS(graph::apply_edits(g, {{{g.item_node(0), g.item_node(1)}}, std::nullopt}), Error);
  CHECK_THROWS_AS(graph::apply_edits(g, {{{0, 9}}, std::nullopt}), Error);
  // Budget of one toggle per user.
  CHECK_THROWS_AS(graph::apply_edits(g, {{{0, g.item_node(0)}, {0, g.item_node(1)}}, Index{1}}), Error);
}

TEST_CASE("interaction tables become graphs over their declared universe") {
  datasets::InteractionTable t;
  t.num_users = 3;
  t.num_items = 4;
  t.records = {{0, 1, 0, 1.0}, {0, 1, 5, 1.0}, {2, 3, 0, 1.0}};
  const auto g = graph::from_interactions(t);
  CHECK(g.num_nodes() == 7);
  CHECK(g.num_edges() == 2);
  CHECK(g.has_edge(2, 3));
}
