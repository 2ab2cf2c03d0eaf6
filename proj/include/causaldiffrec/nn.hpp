#pragma once

#include "causaldiffrec/rng.hpp"
#include "causaldiffrec/types.hpp"

namespace causaldiffrec::nn {

// Glorot/Xavier uniform initialization.
Matrix glorot_uniform(Index fan_in, Index fan_out, Engine& rng);

// Clamp range applied to log standard deviations before exponentiation.
struct StdClamp {
  double min_std = 1e-4;
  double max_std = 10.0;
};

}  // namespace causaldiffrec::nn
