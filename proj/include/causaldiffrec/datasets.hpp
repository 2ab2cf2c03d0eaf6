#pragma once

// Interaction data: loading, id remapping, distribution-shift splits and
// negative sampling.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "causaldiffrec/rng.hpp"
#include "causaldiffrec/types.hpp"

namespace causaldiffrec::datasets {

struct InteractionRecord {
  Index user = 0;
  Index item = 0;
  std::int64_t timestamp = 0;
  double weight = 1.0;
};

struct InteractionTable {
  std::vector<InteractionRecord> records;
  Index num_users = 0;
  Index num_items = 0;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  // Per-user sorted item lists over the declared universe.
  std::vector<std::vector<Index>> items_by_user() const;
  // Number of records per item.
  std::vector<Index> item_counts() const;
};

// Maps raw string ids to dense 0-based indices in first-seen order.
class IdMap {
 public:
  Index intern(const std::string& raw);
  std::optional<Index> find(const std::string& raw) const;
  const std::string& name(Index dense) const { return names_.at(static_cast<std::size_t>(dense)); }
  Index size() const { return static_cast<Index>(names_.size()); }

  // `original_id<TAB>dense_index`, one line per id.
  void write(const std::filesystem::path& path) const;
  static IdMap read(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, Index> index_;
  std::vector<std::string> names_;
};

// Column layout of a delimiter-separated interaction file. Negative column
// numbers mean "absent".
struct FormatSpec {
  char delimiter = '\t';
  int user_column = 0;
  int item_column = 1;
  int timestamp_column = 2;
  int weight_column = -1;
  bool has_header = false;
};

struct LoadedTable {
  InteractionTable table;
  IdMap users;
  IdMap items;
};

// Reads raw interactions, remapping ids densely. Passing pre-populated maps
// puts several files into one index space. Duplicate (user, item) pairs keep
// the earliest timestamp. Lines starting with '#' are comments.
LoadedTable load_interactions(const std::filesystem::path& path, const FormatSpec& format,
                              IdMap users = {}, IdMap items = {});

// Collapses duplicate (user, item) pairs, keeping the earliest timestamp.
// Output is sorted by (user, item).
InteractionTable deduplicate(InteractionTable table);

enum class ShiftKind { temporal, exposure, popularity, random_iid };

std::string to_string(ShiftKind kind);
// Throws with the list of valid kinds on unknown input.
ShiftKind parse_shift_kind(const std::string& text);

struct SplitAudit {
  std::size_t total_records = 0;
  std::size_t dropped_users = 0;
  std::size_t dropped_test_records = 0;
  // Chi-square statistic of the test item histogram, the threshold it was
  // judged against, and the best statistic after each resampling round.
  double uniformity_statistic = 0.0;
  double uniformity_threshold = 0.0;
  bool uniform = true;
  std::vector<double> statistic_history;
  std::size_t excluded_items = 0;
};

struct SplitBundle {
  InteractionTable train;
  InteractionTable valid;
  InteractionTable test;
  ShiftKind shift_kind = ShiftKind::random_iid;
  SplitAudit audit;
};

// Per user: ascending (timestamp, item) order, first train_frac to train,
// last test_frac to test, the middle to validation. Users with fewer than 3
// interactions are dropped.
SplitBundle temporal_split(const InteractionTable& table, double train_frac = 0.6,
                           double test_frac = 0.2);

struct PopularitySplitOptions {
  double test_frac = 0.2;
  double valid_frac = 0.1;
  std::uint64_t seed = 0;
  // Test histogram passes when its chi-square statistic is at most the
  // (1 - alpha) quantile of chi-square with (items - 1) degrees of freedom.
  double alpha = 0.05;
  int max_iterations = 20;
};

// Test interactions drawn with weight inversely proportional to item
// popularity, so every item contributes equally; resampled until the test
// histogram passes the uniformity audit or the iteration cap is hit.
SplitBundle popularity_uniform_split(const InteractionTable& table,
                                     const PopularitySplitOptions& options);

// train = big minus every pair in small, test = small, validation = a
// seeded fraction of train. Both tables must share one index space.
SplitBundle exposure_split(const InteractionTable& big, const InteractionTable& small,
                           std::uint64_t seed, double valid_frac = 0.1);

// Seeded random per-user split with the same fractions as temporal_split.
SplitBundle random_iid_split(const InteractionTable& table, std::uint64_t seed,
                             double train_frac = 0.6, double test_frac = 0.2);

// Chi-square statistic of the counts of the items present in `table`.
double uniformity_statistic(const InteractionTable& table);
// Returns true when statistic <= critical value (trivially for <= 1 item).
bool passes_uniformity(const InteractionTable& table, double alpha, double* statistic = nullptr,
                       double* threshold = nullptr);

// Throws Error when train and test overlap or a test user has no train
// history.
void check_split_invariants(const SplitBundle& bundle);

// Per-user sorted item sets for fast membership tests.
class UserItemIndex {
 public:
  explicit UserItemIndex(const InteractionTable& table);
  bool contains(Index user, Index item) const;
  const std::vector<Index>& items(Index user) const { return items_.at(static_cast<std::size_t>(user)); }
  Index num_users() const { return static_cast<Index>(items_.size()); }
  Index num_items() const { return num_items_; }

 private:
  std::vector<std::vector<Index>> items_;
  Index num_items_;
};

// `count` distinct items the user has not interacted with, uniform over the
// non-interacted set.
std::vector<Index> sample_negatives(const UserItemIndex& index, Index user, Index count, Engine& rng);
std::vector<Index> sample_negatives(const InteractionTable& train, Index user, Index count, Engine& rng);

// Dense-index table files: `user<TAB>item<TAB>timestamp<TAB>weight`, with a
// leading `# config_hash=...` comment.
void write_table(const std::filesystem::path& path, const InteractionTable& table,
                 const std::string& config_hash);
InteractionTable read_table(const std::filesystem::path& path, Index num_users, Index num_items);

// A split directory: train/valid/test tables, id maps, and audit.txt.
void write_split(const std::filesystem::path& dir, const SplitBundle& bundle, const IdMap& users,
                 const IdMap& items, const std::string& config_hash);

struct LoadedSplit {
  SplitBundle bundle;
  std::string config_hash;
};
LoadedSplit read_split(const std::filesystem::path& dir);

std::string format_audit(const SplitBundle& bundle, const std::string& config_hash);

}  // namespace causaldiffrec::datasets
