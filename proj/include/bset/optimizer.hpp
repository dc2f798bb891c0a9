#pragma once

#include <cstdint>
#include <vector>

#include "bset/network.hpp"

namespace bset {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  std::uint64_t step = 0;
};

// One Adam update in place. An empty state is zero-initialised on first use.
void adam_step(ModelParameters& params, const Gradients& grads, AdamState& state, double lr,
               const AdamConfig& config = {});

}  // namespace bset
