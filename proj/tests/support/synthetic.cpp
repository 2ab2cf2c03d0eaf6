#include "support/synthetic.hpp"

#include <cmath>
#include <numeric>

namespace causaldiffrec::testing {

datasets::InteractionTable long_tail_corpus(const LongTailOptions& o) {
  Engine rng = substream(o.seed, "long_tail_corpus");
  std::vector<Index> rank(static_cast<std::size_t>(o.items));
  std::iota(rank.begin(), rank.end(), 0);
  for (Index i = o.items - 1; i > 0; --i) std::swap(rank[static_cast<std::size_t>(i)], rank[static_cast<std::size_t>(uniform_int(0, i, rng))]);
  std::vector<Index> item_cluster(static_cast<std::size_t>(o.items));
  for (auto& c : item_cluster) c = uniform_int(0, o.clusters - 1, rng);

  datasets::InteractionTable t;
  t.num_users = o.users;
  t.num_items = o.items;
  std::vector<double> w(static_cast<std::size_t>(o.items));
  for (Index u = 0; u < o.users; ++u) {
    const Index cu = uniform_int(0, o.clusters - 1, rng);
    for (Index i = 0; i < o.items; ++i) {
      const double pop = std::pow(static_cast<double>(rank[static_cast<std::size_t>(i)] + 1), -o.zipf_exponent);
      w[static_cast<std::size_t>(i)] = pop * (item_cluster[static_cast<std::size_t>(i)] == cu ? o.cluster_affinity : 1.0);
    }
    for (Index n = 0; n < std::min(o.per_user, o.items); ++n) {
      double total = std::accumulate(w.begin(), w.end(), 0.0);
      double x = uniform01(rng) * total;
      std::size_t pick = 0;
      for (; pick + 1 < w.size(); ++pick) {
        if (w[pick] > 0.0 && x < w[pick]) break;
        x -= w[pick];
      }
      while (w[pick] <= 0.0) --pick;
      w[pick] = 0.0;
      t.records.push_back({u, static_cast<Index>(pick), n, 1.0});
    }
  }
  return t;
}

}  // namespace causaldiffrec::testing
