#include "causaldiffrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

namespace causaldiffrec::eval {

namespace {

bool contains(const std::vector<Index>& sorted, Index v) { return std::binary_search(sorted.begin(), sorted.end(), v); }

std::vector<Index> sorted_unique(std::vector<Index> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

}  // namespace

double recall_at_k(const std::vector<Index>& ranked, const std::vector<Index>& relevant, Index k) {
  const auto rel = sorted_unique(relevant);
  if (rel.empty()) throw Error("recall_at_k: empty relevant set");
  const auto depth = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max<Index>(k, 0)));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < depth; ++r) hits += contains(rel, ranked[r]);
  return static_cast<double>(hits) / static_cast<double>(rel.size());
}

double ndcg_at_k(const std::vector<Index>& ranked, const std::vector<Index>& relevant, Index k) {
  const auto rel = sorted_unique(relevant);
  if (rel.empty()) throw Error("ndcg_at_k: empty relevant set");
  const auto depth = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(std::max<Index>(k, 0)));
  double dcg = 0.0;
  for (std::size_t r = 0; r < depth; ++r)
    if (contains(rel, ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  double idcg = 0.0;
  const auto ideal = std::min<std::size_t>(rel.size(), static_cast<std::size_t>(std::max<Index>(k, 0)));
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

RankingReport evaluate(const Scorer& scorer, const datasets::InteractionTable& train,
                       const datasets::InteractionTable& test, const std::vector<int>& ks, const std::string& split) {
  if (ks.empty()) throw Error("evaluate: no cutoffs requested");
  const auto train_items = train.items_by_user();
  std::map<Index, std::vector<Index>> relevant;
  for (const auto& r : test.records) relevant[r.user].push_back(r.item);

  RankingReport report;
  report.split = split;
  report.ks = ks;
  report.per_user_recall.assign(ks.size(), {});
  report.per_user_ndcg.assign(ks.size(), {});
  const Index max_k = *std::max_element(ks.begin(), ks.end());
  for (auto& [user, items] : relevant) {
    if (user >= static_cast<Index>(train_items.size()) || train_items[static_cast<std::size_t>(user)].empty()) continue;
    const auto ranked = rec::top_k(scorer(user), max_k, train_items[static_cast<std::size_t>(user)]).items;
    report.users.push_back(user);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      report.per_user_recall[j].push_back(recall_at_k(ranked, items, ks[j]));
      report.per_user_ndcg[j].push_back(ndcg_at_k(ranked, items, ks[j]));
    }
  }
  if (report.users.empty()) throw Error("evaluate: no test users with training history in split '" + split + "'");
  for (std::size_t j = 0; j < ks.size(); ++j) {
    const double n = static_cast<double>(report.users.size());
    report.recall.push_back(std::accumulate(report.per_user_recall[j].begin(), report.per_user_recall[j].end(), 0.0) / n);
    report.ndcg.push_back(std::accumulate(report.per_user_ndcg[j].begin(), report.per_user_ndcg[j].end(), 0.0) / n);
  }
  return report;
}

RankingReport evaluate(const rec::Embeddings& embeddings, const datasets::InteractionTable& train,
                       const datasets::InteractionTable& test, const std::vector<int>& ks, const std::string& split) {
  return evaluate([&](Index u) { return rec::score_all(embeddings, u); }, train, test, ks, split);
}

Degradation compare_iid_ood(const RankingReport& iid, const RankingReport& ood) {
  if (iid.ks != ood.ks) throw Error("compare_iid_ood: reports use different cutoffs");
  Degradation d;
  double sum = 0.0;
  int count = 0;
  auto add = [&](const std::string& name, double a, double b) {
    if (a == 0.0) {
      d.drops.emplace_back(name, std::nullopt);
      return;
    }
    const double drop = (a - b) / a;
    d.drops.emplace_back(name, drop);
    sum += drop;
    ++count;
  };
  for (std::size_t j = 0; j < iid.ks.size(); ++j) {
    add(fmt::format("recall@{}", iid.ks[j]), iid.recall[j], ood.recall[j]);
    add(fmt::format("ndcg@{}", iid.ks[j]), iid.ndcg[j], ood.ndcg[j]);
  }
  if (count > 0) d.average = sum / count;
  return d;
}

std::string format_report(const RankingReport& report, const std::map<std::string, std::string>& metadata) {
  std::string s = "# causaldiffrec ranking report\n";
  for (const auto& [k, v] : metadata) s += fmt::format("{} = {}\n", k, v);
  s += fmt::format("split = {}\n", report.split);
  s += fmt::format("users = {}\n", report.users.size());
  for (std::size_t j = 0; j < report.ks.size(); ++j) {
    s += fmt::format("recall@{} = {:.10f}\n", report.ks[j], report.recall[j]);
    s += fmt::format("ndcg@{} = {:.10f}\n", report.ks[j], report.ndcg[j]);
  }
  return s;
}

std::string format_degradation(const Degradation& d, const std::map<std::string, std::string>& metadata) {
  std::string s = "# causaldiffrec iid/ood degradation\n";
  for (const auto& [k, v] : metadata) s += fmt::format("{} = {}\n", k, v);
  for (const auto& [name, drop] : d.drops)
    s += drop ? fmt::format("drop.{} = {:.10f}\n", name, *drop) : fmt::format("drop.{} = absent\n", name);
  s += d.average ? fmt::format("drop.average = {:.10f}\n", *d.average) : std::string("drop.average = absent\n");
  return s;
}

std::vector<std::string> popularity_tags(const std::vector<Index>& counts) {
  const std::size_t n = counts.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  const std::size_t decile = n == 0 ? 0 : std::max<std::size_t>(1, n / 10);
  std::vector<std::string> tags(n, "mid");
  for (std::size_t r = 0; r < n; ++r) {
    if (r < decile)
      tags[order[r]] = "popular";
    else if (r >= n - decile)
      tags[order[r]] = "unpopular";
  }
  return tags;
}

void export_embeddings(const rec::Embeddings& embeddings, const std::filesystem::path& path,
                       const std::vector<Index>& item_counts) {
  if (static_cast<Index>(item_counts.size()) != embeddings.num_items())
    throw Error("export_embeddings: one popularity count per item required");
  std::ofstream out(path);
  if (!out) throw Error("cannot write embeddings: " + path.string());
  const auto tags = popularity_tags(item_counts);
  const Index d = embeddings.values.cols();
  out << "# item\ttag";
  for (Index j = 0; j < d; ++j) out << "\tdim" << j;
  out << '\n';
  for (Index i = 0; i < embeddings.num_items(); ++i) {
    out << i << '\t' << tags[static_cast<std::size_t>(i)];
    for (Index j = 0; j < d; ++j) out << fmt::format("\t{:.17g}", embeddings.values(embeddings.num_users + i, j));
    out << '\n';
  }
  if (!out) throw Error("failed writing embeddings: " + path.string());
}

std::vector<ExportedItem> read_exported_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read embeddings: " + path.string());
  std::vector<ExportedItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    ExportedItem e;
    std::string field;
    std::getline(ss, field, '\t');
    e.item = std::stoll(field);
    std::getline(ss, e.tag, '\t');
    while (std::getline(ss, field, '\t')) e.values.push_back(std::strtod(field.c_str(), nullptr));
    items.push_back(std::move(e));
  }
  return items;
}

}  // namespace causaldiffrec::eval
