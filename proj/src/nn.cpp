#include "causaldiffrec/nn.hpp"

#include <cmath>

namespace causaldiffrec::nn {

Matrix glorot_uniform(Index fan_in, Index fan_out, Engine& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix w(fan_in, fan_out);
  for (Index r = 0; r < fan_in; ++r)
    for (Index c = 0; c < fan_out; ++c) w(r, c) = dist(rng);
  return w;
}

}  // namespace causaldiffrec::nn
