#pragma once

// Run configuration: flat `key = value` text grouped by `[section]`
// headers, flag overrides, and a stable digest of the effective settings.

#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "causaldiffrec/training.hpp"

namespace causaldiffrec::config {

class RunConfig {
 public:
  // Accepts `section.key`, or a bare key when it names exactly one known
  // setting. Throws on unknown keys, malformed values and alias conflicts.
  void set(const std::string& key, const std::string& value);
  // `key=value`.
  void apply_override(const std::string& assignment);
  bool contains(const std::string& qualified_key) const { return values_.count(qualified_key) > 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  train::TrainConfig to_train_config() const;
  static RunConfig from_train_config(const train::TrainConfig& config);

 private:
  std::map<std::string, std::string> values_;
  // Keys last set through the embed_dim alias.
  std::set<std::string> aliases_;
};

// `origin` prefixes parse errors ("file:line: ...").
RunConfig parse_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

// Every known key with its effective value, `section.key = value` lines in
// sorted order, including defaults.
std::string canonical_text(const train::TrainConfig& config);
// Config file form with section headers; round-trips through parse_config.
std::string config_file_text(const train::TrainConfig& config);
// 16 hex digits of FNV-1a over canonical_text.
std::string config_hash(const train::TrainConfig& config);

std::string hex_digest(std::uint64_t value);

}  // namespace causaldiffrec::config
