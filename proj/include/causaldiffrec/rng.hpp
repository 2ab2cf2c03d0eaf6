#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "causaldiffrec/types.hpp"

namespace causaldiffrec {

using Engine = std::mt19937_64;

// Stable 64-bit FNV-1a digest.
std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 14695981039346656037ULL);

// Derives an independent engine for a named substream of a global seed, so
// that e.g. the "negatives" draws do not depend on how many "diffusion"
// draws happened before.
Engine substream(std::uint64_t seed, std::string_view name);

Matrix standard_normal(Index rows, Index cols, Engine& engine);

double uniform01(Engine& engine);

// Uniform integer in [lo, hi].
Index uniform_int(Index lo, Index hi, Engine& engine);

}  // namespace causaldiffrec
