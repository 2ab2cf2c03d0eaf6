#pragma once

// Ranking metrics, per-split reports, IID-vs-OOD degradation and embedding
// export.

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "causaldiffrec/datasets.hpp"
#include "causaldiffrec/recommender.hpp"

namespace causaldiffrec::eval {

// |top-k of ranked intersected with relevant| / |relevant|.
double recall_at_k(const std::vector<Index>& ranked, const std::vector<Index>& relevant, Index k);

// Binary-relevance NDCG with gain 1 / log2(rank + 1).
double ndcg_at_k(const std::vector<Index>& ranked, const std::vector<Index>& relevant, Index k);

struct RankingReport {
  std::string split;
  std::vector<int> ks;
  std::vector<double> recall;  // aligned with ks
  std::vector<double> ndcg;
  std::vector<Index> users;
  // per_user_recall[j][u] is the metric at ks[j] for users[u].
  std::vector<std::vector<double>> per_user_recall;
  std::vector<std::vector<double>> per_user_ndcg;
};

using Scorer = std::function<Vector(Index user)>;

// Full-catalog ranking of every test user, excluding that user's training
// items.
RankingReport evaluate(const Scorer& scorer, const datasets::InteractionTable& train,
                       const datasets::InteractionTable& test, const std::vector<int>& ks,
                       const std::string& split = "test");
RankingReport evaluate(const rec::Embeddings& embeddings, const datasets::InteractionTable& train,
                       const datasets::InteractionTable& test, const std::vector<int>& ks,
                       const std::string& split = "test");

struct Degradation {
  // Metric name (e.g. "recall@20") -> relative drop (iid - ood) / iid, or
  // nullopt where the IID value is zero.
  std::vector<std::pair<std::string, std::optional<double>>> drops;
  std::optional<double> average;
};

Degradation compare_iid_ood(const RankingReport& iid, const RankingReport& ood);

// key = value document: metadata lines, then users and metrics.
std::string format_report(const RankingReport& report, const std::map<std::string, std::string>& metadata);
std::string format_degradation(const Degradation& degradation, const std::map<std::string, std::string>& metadata);

// Top decile by interaction count -> "popular", bottom decile ->
// "unpopular", the rest "mid". Ties rank by item index.
std::vector<std::string> popularity_tags(const std::vector<Index>& item_counts);

// One row per item: `item<TAB>tag<TAB>v_0 ... v_{d-1}`, values at 17
// significant digits.
void export_embeddings(const rec::Embeddings& embeddings, const std::filesystem::path& path,
                       const std::vector<Index>& item_counts);

struct ExportedItem {
  Index item = 0;
  std::string tag;
  std::vector<double> values;
};
std::vector<ExportedItem> read_exported_embeddings(const std::filesystem::path& path);

}  // namespace causaldiffrec::eval
