#include "causaldiffrec/datasets.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <boost/math/distributions/chi_squared.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace causaldiffrec::datasets {

namespace fs = std::filesystem;

std::vector<std::vector<Index>> InteractionTable::items_by_user() const {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(num_users));
  for (const auto& r : records) out[static_cast<std::size_t>(r.user)].push_back(r.item);
  for (auto& v : out) std::sort(v.begin(), v.end());
  return out;
}

std::vector<Index> InteractionTable::item_counts() const {
  std::vector<Index> counts(static_cast<std::size_t>(num_items), 0);
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.item)];
  return counts;
}

Index IdMap::intern(const std::string& raw) {
  auto [it, inserted] = index_.try_emplace(raw, static_cast<Index>(names_.size()));
  if (inserted) names_.push_back(raw);
  return it->second;
}

std::optional<Index> IdMap::find(const std::string& raw) const {
  auto it = index_.find(raw);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void IdMap::write(const fs::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error("cannot write id map: " + path.string());
  for (std::size_t i = 0; i < names_.size(); ++i) out << names_[i] << '\t' << i << '\n';
}

IdMap IdMap::read(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read id map: " + path.string());
  IdMap map;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw ParseError(fmt::format("{}:{}: expected original_id<TAB>dense_index", path.string(), line_no), line_no);
    const std::string raw = line.substr(0, tab);
    if (map.intern(raw) != std::stoll(line.substr(tab + 1)))
      throw ParseError(fmt::format("{}:{}: dense indices must be consecutive", path.string(), line_no), line_no);
  }
  return map;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == '\r' || f.back() == ' ')) f.remove_suffix(1);
    while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
  }
  return fields;
}

bool parse_int(std::string_view text, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec == std::errc() && ptr == text.data() + text.size()) return true;
  // Accept integral values written as reals, e.g. "1.6e9".
  double d = 0.0;
  auto [p2, ec2] = std::from_chars(text.data(), text.data() + text.size(), d);
  if (ec2 != std::errc() || p2 != text.data() + text.size() || d != std::floor(d)) return false;
  out = static_cast<std::int64_t>(d);
  return true;
}

bool parse_real(std::string_view text, double& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  return ec == std::errc() && ptr == text.data() + text.size() && std::isfinite(out);
}

void sort_records(std::vector<InteractionRecord>& records) {
  std::sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    return std::tie(a.user, a.item, a.timestamp) < std::tie(b.user, b.item, b.timestamp);
  });
}

InteractionTable with_records(const InteractionTable& like, std::vector<InteractionRecord> records) {
  InteractionTable t;
  t.num_users = like.num_users;
  t.num_items = like.num_items;
  t.records = std::move(records);
  sort_records(t.records);
  return t;
}

// Groups record positions by user.
std::vector<std::vector<std::size_t>> group_by_user(const InteractionTable& table) {
  std::vector<std::vector<std::size_t>> groups(static_cast<std::size_t>(table.num_users));
  for (std::size_t i = 0; i < table.records.size(); ++i)
    groups[static_cast<std::size_t>(table.records[i].user)].push_back(i);
  return groups;
}

struct FractionCounts {
  std::size_t train;
  std::size_t test;
};

FractionCounts fraction_counts(std::size_t n, double train_frac, double test_frac) {
  std::size_t test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_frac * n)));
  std::size_t train = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(train_frac * n)));
  if (train + test > n) train = n - test;
  return {train, test};
}

void check_fractions(double train_frac, double test_frac) {
  if (!(train_frac > 0.0) || !(test_frac >= 0.0) || train_frac + test_frac > 1.0)
    throw Error(fmt::format("invalid split fractions train={} test={}", train_frac, test_frac));
}

// Moves a seeded fraction of `train` into a validation table, never taking
// a user's last training interaction.
std::pair<InteractionTable, InteractionTable> carve_validation(const InteractionTable& train,
                                                               double valid_frac, Engine& rng) {
  std::vector<std::size_t> order(train.records.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<Index> remaining(static_cast<std::size_t>(train.num_users), 0);
  for (const auto& r : train.records) ++remaining[static_cast<std::size_t>(r.user)];
  const auto wanted = static_cast<std::size_t>(std::llround(valid_frac * train.records.size()));
  std::vector<char> to_valid(train.records.size(), 0);
  std::size_t taken = 0;
  for (std::size_t pos : order) {
    if (taken == wanted) break;
    auto& left = remaining[static_cast<std::size_t>(train.records[pos].user)];
    if (left < 2) continue;
    --left;
    to_valid[pos] = 1;
    ++taken;
  }
  std::vector<InteractionRecord> keep, valid;
  for (std::size_t i = 0; i < train.records.size(); ++i)
    (to_valid[i] ? valid : keep).push_back(train.records[i]);
  return {with_records(train, std::move(keep)), with_records(train, std::move(valid))};
}

void fill_audit_counts(SplitBundle& b, std::size_t total) {
  b.audit.total_records = total;
  double stat = 0.0, thr = 0.0;
  if (b.shift_kind != ShiftKind::popularity) {
    b.audit.uniform = passes_uniformity(b.test, 0.05, &stat, &thr);
    b.audit.uniformity_statistic = stat;
    b.audit.uniformity_threshold = thr;
  }
}

}  // namespace

InteractionTable deduplicate(InteractionTable table) {
  sort_records(table.records);
  std::vector<InteractionRecord> out;
  out.reserve(table.records.size());
  for (const auto& r : table.records) {
    // Sorted by timestamp within a pair, so the first copy is the earliest.
    if (!out.empty() && out.back().user == r.user && out.back().item == r.item) continue;
    out.push_back(r);
  }
  table.records = std::move(out);
  return table;
}

LoadedTable load_interactions(const fs::path& path, const FormatSpec& format, IdMap users,
                              IdMap items) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open interaction file: " + path.string());
  const int needed = std::max({format.user_column, format.item_column, format.timestamp_column,
                               format.weight_column}) + 1;
  std::vector<InteractionRecord> records;
  std::string line;
  std::size_t line_no = 0;
  bool header_pending = format.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r" || line[0] == '#') continue;
    if (header_pending) {
      header_pending = false;
      continue;
    }
    const auto fields = split_fields(line, format.delimiter);
    auto fail = [&](const std::string& why) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), line_no, why), line_no);
    };
    if (static_cast<int>(fields.size()) < needed)
      fail(fmt::format("expected at least {} columns, found {}", needed, fields.size()));
    const auto user_raw = fields[static_cast<std::size_t>(format.user_column)];
    const auto item_raw = fields[static_cast<std::size_t>(format.item_column)];
    if (user_raw.empty() || item_raw.empty()) fail("empty user or item id");
    InteractionRecord rec;
    if (format.timestamp_column >= 0) {
      if (!parse_int(fields[static_cast<std::size_t>(format.timestamp_column)], rec.timestamp) ||
          rec.timestamp < 0)
        fail("timestamp must be a nonnegative integer");
    }
    if (format.weight_column >= 0) {
      if (!parse_real(fields[static_cast<std::size_t>(format.weight_column)], rec.weight) ||
          rec.weight < 0.0)
        fail("weight must be a nonnegative real");
    }
    rec.user = users.intern(std::string(user_raw));
    rec.item = items.intern(std::string(item_raw));
    records.push_back(rec);
  }
  if (records.empty()) throw Error("no interactions in " + path.string());
  InteractionTable table;
  table.records = std::move(records);
  table.num_users = users.size();
  table.num_items = items.size();
  return LoadedTable{deduplicate(std::move(table)), std::move(users), std::move(items)};
}

std::string to_string(ShiftKind kind) {
  switch (kind) {
    case ShiftKind::temporal: return "temporal";
    case ShiftKind::exposure: return "exposure";
    case ShiftKind::popularity: return "popularity";
    case ShiftKind::random_iid: return "random_iid";
  }
  return "unknown";
}

ShiftKind parse_shift_kind(const std::string& text) {
  if (text == "temporal") return ShiftKind::temporal;
  if (text == "exposure") return ShiftKind::exposure;
  if (text == "popularity") return ShiftKind::popularity;
  if (text == "random_iid") return ShiftKind::random_iid;
  throw Error("unknown shift kind '" + text + "'; expected one of {temporal, exposure, popularity, random_iid}");
}

SplitBundle temporal_split(const InteractionTable& input, double train_frac, double test_frac) {
  check_fractions(train_frac, test_frac);
  const InteractionTable table = deduplicate(input);
  SplitBundle b;
  b.shift_kind = ShiftKind::temporal;
  std::vector<InteractionRecord> train, valid, test;
  for (auto& group : group_by_user(table)) {
    if (group.empty()) continue;
    if (group.size() < 3) {
      ++b.audit.dropped_users;
      continue;
    }
    std::sort(group.begin(), group.end(), [&](std::size_t a, std::size_t c) {
      const auto& ra = table.records[a];
      const auto& rc = table.records[c];
      return std::tie(ra.timestamp, ra.item) < std::tie(rc.timestamp, rc.item);
    });
    const auto [n_train, n_test] = fraction_counts(group.size(), train_frac, test_frac);
    for (std::size_t k = 0; k < group.size(); ++k) {
      const auto& r = table.records[group[k]];
      if (k < n_train)
        train.push_back(r);
      else if (k >= group.size() - n_test)
        test.push_back(r);
      else
        valid.push_back(r);
    }
  }
  if (b.audit.dropped_users > 0)
    spdlog::info("temporal split: dropped {} users with fewer than 3 interactions", b.audit.dropped_users);
  b.train = with_records(table, std::move(train));
  b.valid = with_records(table, std::move(valid));
  b.test = with_records(table, std::move(test));
  fill_audit_counts(b, table.size());
  return b;
}

SplitBundle random_iid_split(const InteractionTable& input, std::uint64_t seed, double train_frac,
                             double test_frac) {
  check_fractions(train_frac, test_frac);
  const InteractionTable table = deduplicate(input);
  Engine rng = substream(seed, "random-iid-split");
  SplitBundle b;
  b.shift_kind = ShiftKind::random_iid;
  std::vector<InteractionRecord> train, valid, test;
  for (auto& group : group_by_user(table)) {
    if (group.empty()) continue;
    if (group.size() < 3) {
      ++b.audit.dropped_users;
      continue;
    }
    std::shuffle(group.begin(), group.end(), rng);
    const auto [n_train, n_test] = fraction_counts(group.size(), train_frac, test_frac);
    for (std::size_t k = 0; k < group.size(); ++k) {
      const auto& r = table.records[group[k]];
      if (k < n_train)
        train.push_back(r);
      else if (k >= group.size() - n_test)
        test.push_back(r);
      else
        valid.push_back(r);
    }
  }
  b.train = with_records(table, std::move(train));
  b.valid = with_records(table, std::move(valid));
  b.test = with_records(table, std::move(test));
  fill_audit_counts(b, table.size());
  return b;
}

double uniformity_statistic(const InteractionTable& table) {
  std::map<Index, double> counts;
  for (const auto& r : table.records) counts[r.item] += 1.0;
  if (counts.size() <= 1) return 0.0;
  const double mean = static_cast<double>(table.records.size()) / static_cast<double>(counts.size());
  double stat = 0.0;
  for (const auto& [item, c] : counts) stat += (c - mean) * (c - mean) / mean;
  return stat;
}

bool passes_uniformity(const InteractionTable& table, double alpha, double* statistic,
                       double* threshold) {
  std::set<Index> present;
  for (const auto& r : table.records) present.insert(r.item);
  const double stat = uniformity_statistic(table);
  double thr = 0.0;
  if (present.size() > 1) {
    boost::math::chi_squared dist(static_cast<double>(present.size() - 1));
    thr = boost::math::quantile(dist, 1.0 - alpha);
  }
  if (statistic) *statistic = stat;
  if (threshold) *threshold = thr;
  return present.size() <= 1 || stat <= thr;
}

SplitBundle popularity_uniform_split(const InteractionTable& input,
                                     const PopularitySplitOptions& options) {
  if (!(options.test_frac >= 0.0 && options.test_frac < 1.0))
    throw Error("popularity split: test_frac must lie in [0, 1)");
  const InteractionTable table = deduplicate(input);
  if (table.empty()) throw Error("popularity split: no interactions");
  const std::size_t n = table.size();
  const auto target = static_cast<std::size_t>(std::llround(options.test_frac * static_cast<double>(n)));

  std::vector<Index> user_count(static_cast<std::size_t>(table.num_users), 0);
  std::vector<std::vector<std::size_t>> by_item(static_cast<std::size_t>(table.num_items));
  for (std::size_t i = 0; i < n; ++i) {
    ++user_count[static_cast<std::size_t>(table.records[i].user)];
    by_item[static_cast<std::size_t>(table.records[i].item)].push_back(i);
  }

  SplitBundle best;
  best.shift_kind = ShiftKind::popularity;
  std::vector<char> best_in_test(n, 0);
  double best_stat = std::numeric_limits<double>::infinity();
  double best_thr = 0.0;
  bool best_pass = false;
  std::vector<char> excluded(by_item.size(), 0);
  std::vector<double> history;

  const int rounds = target == 0 ? 1 : std::max(1, options.max_iterations);
  for (int round = 0; round < rounds; ++round) {
    Engine rng = substream(options.seed, fmt::format("popularity-split/{}", round));
    std::vector<Index> spare = user_count;
    std::vector<char> in_test(n, 0);
    std::vector<std::vector<std::size_t>> queue(by_item.size());
    std::size_t open_items = 0;
    for (std::size_t i = 0; i < by_item.size(); ++i) {
      if (excluded[i] || by_item[i].empty()) continue;
      queue[i] = by_item[i];
      std::shuffle(queue[i].begin(), queue[i].end(), rng);
      ++open_items;
    }
    if (open_items == 0) break;
    const std::size_t quota = (target + open_items - 1) / open_items;
    std::vector<std::size_t> head(by_item.size(), 0), taken(by_item.size(), 0);
    std::vector<char> exhausted(by_item.size(), 0);
    std::vector<double> weight(by_item.size(), 0.0);

    std::size_t drawn = 0;
    while (drawn < target) {
      // Each remaining interaction weighs 1/popularity of its item.
      double total = 0.0;
      for (std::size_t i = 0; i < queue.size(); ++i) {
        const bool open = taken[i] < quota && head[i] < queue[i].size();
        weight[i] = open ? static_cast<double>(queue[i].size() - head[i]) / static_cast<double>(by_item[i].size()) : 0.0;
        total += weight[i];
      }
      if (total <= 0.0) break;
      double u = uniform01(rng) * total;
      std::size_t pick = 0;
      for (; pick + 1 < weight.size(); ++pick) {
        if (weight[pick] > 0.0 && u < weight[pick]) break;
        u -= weight[pick];
      }
      while (weight[pick] <= 0.0) --pick;
      const std::size_t rec = queue[pick][head[pick]++];
      auto& left = spare[static_cast<std::size_t>(table.records[rec].user)];
      if (left >= 2) {
        --left;
        in_test[rec] = 1;
        ++taken[pick];
        ++drawn;
      }
      if (head[pick] == queue[pick].size() && taken[pick] < quota) exhausted[pick] = 1;
    }

    InteractionTable test_view;
    test_view.num_users = table.num_users;
    test_view.num_items = table.num_items;
    for (std::size_t i = 0; i < n; ++i)
      if (in_test[i]) test_view.records.push_back(table.records[i]);
    double stat = 0.0, thr = 0.0;
    const bool pass = passes_uniformity(test_view, options.alpha, &stat, &thr);
    if (stat < best_stat || round == 0) {
      best_stat = stat;
      best_thr = thr;
      best_pass = pass;
      best_in_test = in_test;
    }
    history.push_back(best_stat);
    if (best_pass) break;
    // Items that could not fill their quota skew the histogram; leave them
    // entirely to the training side next round.
    for (std::size_t i = 0; i < exhausted.size(); ++i)
      if (exhausted[i]) excluded[i] = 1;
  }

  std::vector<InteractionRecord> train, test;
  for (std::size_t i = 0; i < n; ++i) (best_in_test[i] ? test : train).push_back(table.records[i]);
  Engine valid_rng = substream(options.seed, "popularity-split/valid");
  auto [kept, valid] = carve_validation(with_records(table, std::move(train)), options.valid_frac, valid_rng);
  best.train = std::move(kept);
  best.valid = std::move(valid);
  best.test = with_records(table, std::move(test));
  best.audit.total_records = n;
  best.audit.uniformity_statistic = best_stat == std::numeric_limits<double>::infinity() ? 0.0 : best_stat;
  best.audit.uniformity_threshold = best_thr;
  best.audit.uniform = target == 0 ? true : best_pass;
  best.audit.statistic_history = std::move(history);
  best.audit.excluded_items = static_cast<std::size_t>(std::count(excluded.begin(), excluded.end(), 1));
  if (!best.audit.uniform)
    spdlog::warn("popularity split: test histogram not uniform after {} rounds (chi2={:.4g} > {:.4g})",
                 rounds, best.audit.uniformity_statistic, best_thr);
  return best;
}

SplitBundle exposure_split(const InteractionTable& big_in, const InteractionTable& small_in,
                           std::uint64_t seed, double valid_frac) {
  const InteractionTable big = deduplicate(big_in);
  const InteractionTable small = deduplicate(small_in);
  InteractionTable universe;
  universe.num_users = std::max(big.num_users, small.num_users);
  universe.num_items = std::max(big.num_items, small.num_items);

  std::set<std::pair<Index, Index>> small_pairs;
  std::set<Index> small_users;
  for (const auto& r : small.records) {
    small_pairs.emplace(r.user, r.item);
    small_users.insert(r.user);
  }
  std::vector<InteractionRecord> train;
  std::set<Index> train_users;
  for (const auto& r : big.records) {
    if (small_pairs.count({r.user, r.item})) continue;
    train.push_back(r);
    train_users.insert(r.user);
  }
  bool overlap = false;
  for (Index u : small_users) overlap = overlap || train_users.count(u) > 0;
  if (train.empty()) throw Error("exposure split: training set is empty after removing the test matrix");
  if (!overlap) throw Error("exposure split: no overlapping users between the two matrices");

  SplitBundle b;
  b.shift_kind = ShiftKind::exposure;
  std::vector<InteractionRecord> test;
  for (const auto& r : small.records) {
    if (train_users.count(r.user))
      test.push_back(r);
    else
      ++b.audit.dropped_test_records;
  }
  Engine rng = substream(seed, "exposure-split/valid");
  auto [kept, valid] = carve_validation(with_records(universe, std::move(train)), valid_frac, rng);
  b.train = std::move(kept);
  b.valid = std::move(valid);
  b.test = with_records(universe, std::move(test));
  fill_audit_counts(b, big.size() + small.size());
  return b;
}

void check_split_invariants(const SplitBundle& b) {
  const UserItemIndex train(b.train);
  for (const auto& r : b.test.records) {
    if (train.contains(r.user, r.item))
      throw Error(fmt::format("split invariant: pair ({}, {}) in both train and test", r.user, r.item));
    if (train.items(r.user).empty())
      throw Error(fmt::format("split invariant: test user {} has no training interactions", r.user));
  }
}

UserItemIndex::UserItemIndex(const InteractionTable& table)
    : items_(table.items_by_user()), num_items_(table.num_items) {
  for (auto& v : items_) v.erase(std::unique(v.begin(), v.end()), v.end());
}

bool UserItemIndex::contains(Index user, Index item) const {
  if (user < 0 || user >= num_users()) return false;
  const auto& v = items_[static_cast<std::size_t>(user)];
  return std::binary_search(v.begin(), v.end(), item);
}

std::vector<Index> sample_negatives(const UserItemIndex& index, Index user, Index count, Engine& rng) {
  if (user < 0 || user >= index.num_users()) throw Error(fmt::format("sample_negatives: user {} out of range", user));
  const auto& seen = index.items(user);
  const Index available = index.num_items() - static_cast<Index>(seen.size());
  if (available <= 0) throw Error(fmt::format("no negatives available for user {}", user));
  if (count > available)
    throw Error(fmt::format("sample_negatives: asked for {} of {} negatives of user {}", count, available, user));
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(count));
  if (2 * seen.size() < static_cast<std::size_t>(index.num_items())) {
    // Sparse user: rejection sampling stays uniform over the complement.
    while (static_cast<Index>(out.size()) < count) {
      const Index item = uniform_int(0, index.num_items() - 1, rng);
      if (std::binary_search(seen.begin(), seen.end(), item)) continue;
      if (std::find(out.begin(), out.end(), item) != out.end()) continue;
      out.push_back(item);
    }
    return out;
  }
  std::vector<Index> pool;
  pool.reserve(static_cast<std::size_t>(available));
  for (Index i = 0; i < index.num_items(); ++i)
    if (!std::binary_search(seen.begin(), seen.end(), i)) pool.push_back(i);
  for (Index k = 0; k < count; ++k) {
    const Index j = uniform_int(k, static_cast<Index>(pool.size()) - 1, rng);
    std::swap(pool[static_cast<std::size_t>(k)], pool[static_cast<std::size_t>(j)]);
    out.push_back(pool[static_cast<std::size_t>(k)]);
  }
  return out;
}

std::vector<Index> sample_negatives(const InteractionTable& train, Index user, Index count, Engine& rng) {
  return sample_negatives(UserItemIndex(train), user, count, rng);
}

void write_table(const fs::path& path, const InteractionTable& table, const std::string& config_hash) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write table: " + path.string());
  out << "# config_hash=" << config_hash << '\n';
  for (const auto& r : table.records)
    out << fmt::format("{}\t{}\t{}\t{:.17g}\n", r.user, r.item, r.timestamp, r.weight);
  if (!out) throw Error("failed writing table: " + path.string());
}

InteractionTable read_table(const fs::path& path, Index num_users, Index num_items) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open table: " + path.string());
  InteractionTable t;
  t.num_users = num_users;
  t.num_items = num_items;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto f = split_fields(line, '\t');
    InteractionRecord r;
    std::int64_t u = 0, i = 0;
    if (f.size() < 4 || !parse_int(f[0], u) || !parse_int(f[1], i) || !parse_int(f[2], r.timestamp) ||
        !parse_real(f[3], r.weight))
      throw ParseError(fmt::format("{}:{}: malformed record", path.string(), line_no), line_no);
    if (u < 0 || u >= num_users || i < 0 || i >= num_items)
      throw ParseError(fmt::format("{}:{}: index outside the declared universe", path.string(), line_no), line_no);
    r.user = u;
    r.item = i;
    t.records.push_back(r);
  }
  return t;
}

std::string format_audit(const SplitBundle& b, const std::string& config_hash) {
  const double total = static_cast<double>(b.train.size() + b.valid.size() + b.test.size());
  std::string history;
  for (std::size_t i = 0; i < b.audit.statistic_history.size(); ++i)
    history += fmt::format("{}{:.17g}", i ? "," : "", b.audit.statistic_history[i]);
  std::string s;
  s += "# causaldiffrec split audit\n";
  s += fmt::format("config_hash = {}\n", config_hash);
  s += fmt::format("shift_kind = {}\n", to_string(b.shift_kind));
  s += fmt::format("num_users = {}\n", b.train.num_users);
  s += fmt::format("num_items = {}\n", b.train.num_items);
  s += fmt::format("total_records = {}\n", b.audit.total_records);
  s += fmt::format("train_records = {}\n", b.train.size());
  s += fmt::format("valid_records = {}\n", b.valid.size());
  s += fmt::format("test_records = {}\n", b.test.size());
  s += fmt::format("train_fraction = {:.6f}\n", total > 0 ? b.train.size() / total : 0.0);
  s += fmt::format("valid_fraction = {:.6f}\n", total > 0 ? b.valid.size() / total : 0.0);
  s += fmt::format("test_fraction = {:.6f}\n", total > 0 ? b.test.size() / total : 0.0);
  s += fmt::format("dropped_users = {}\n", b.audit.dropped_users);
  s += fmt::format("dropped_test_records = {}\n", b.audit.dropped_test_records);
  s += fmt::format("uniformity_statistic = {:.17g}\n", b.audit.uniformity_statistic);
  s += fmt::format("uniformity_threshold = {:.17g}\n", b.audit.uniformity_threshold);
  s += fmt::format("uniform = {}\n", b.audit.uniform ? "true" : "false");
  s += fmt::format("statistic_history = {}\n", history);
  s += fmt::format("excluded_items = {}\n", b.audit.excluded_items);
  return s;
}

void write_split(const fs::path& dir, const SplitBundle& bundle, const IdMap& users, const IdMap& items,
                 const std::string& config_hash) {
  fs::create_directories(dir);
  write_table(dir / "train.tsv", bundle.train, config_hash);
  write_table(dir / "valid.tsv", bundle.valid, config_hash);
  write_table(dir / "test.tsv", bundle.test, config_hash);
  users.write(dir / "users.map");
  items.write(dir / "items.map");
  std::ofstream audit(dir / "audit.txt");
  if (!audit) throw Error("cannot write audit: " + (dir / "audit.txt").string());
  audit << format_audit(bundle, config_hash);
}

LoadedSplit read_split(const fs::path& dir) {
  std::ifstream in(dir / "audit.txt");
  if (!in) throw Error("missing split audit: " + (dir / "audit.txt").string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 3);
  }
  for (const char* key : {"num_users", "num_items", "shift_kind", "config_hash"})
    if (!kv.count(key)) throw Error(fmt::format("split audit {} lacks '{}'", (dir / "audit.txt").string(), key));
  const Index m = std::stoll(kv["num_users"]);
  const Index n = std::stoll(kv["num_items"]);
  LoadedSplit out;
  out.config_hash = kv["config_hash"];
  out.bundle.shift_kind = parse_shift_kind(kv["shift_kind"]);
  out.bundle.train = read_table(dir / "train.tsv", m, n);
  out.bundle.valid = read_table(dir / "valid.tsv", m, n);
  out.bundle.test = read_table(dir / "test.tsv", m, n);
  return out;
}

}  // namespace causaldiffrec::datasets
