#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ga/tensor.hpp"

namespace ga::num {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment estimates, one tensor per parameter.
struct AdamState {
    std::size_t step = 0;
    std::vector<Tensor2> m;
    std::vector<Tensor2> v;
};

/// One bias-corrected Adam update. Moments are created on the first call.
/// Throws ContractError when params, grads and moments disagree in count or shape.
void adam_step(std::span<Tensor2> params, std::span<const Tensor2> grads, AdamState& state,
               const AdamConfig& cfg);

} // namespace ga::num
