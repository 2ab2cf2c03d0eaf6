#pragma once

// Single-file text checkpoint: versioned header, effective config, every
// parameter group, edit policies, optimizer moments and random-engine
// states, closed by a checksum line.

#include <filesystem>
#include <string>

#include "causaldiffrec/training.hpp"

namespace causaldiffrec::checkpoint {

inline constexpr int kFormatVersion = 1;

struct Checkpoint {
  train::TrainState state;
  std::string config_hash;
  // config_hash of the split directory the state was trained on.
  std::string split_hash;
};

void write_checkpoint(const std::filesystem::path& path, const train::TrainState& state,
                      const std::string& split_hash);

// Throws Error naming the file on any structural or checksum failure.
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace causaldiffrec::checkpoint
