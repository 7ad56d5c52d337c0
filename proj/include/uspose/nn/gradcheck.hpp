#pragma once

#include <functional>
#include <string>
#include <vector>

#include "uspose/nn/tensor.hpp"

namespace uspose::nn {

struct GradcheckConfig {
    double step = 1e-5;
    // 0 checks every coordinate; otherwise at most this many per tensor,
    // chosen by a seeded draw so large models stay tractable.
    int samples_per_tensor = 0;
    uint64_t sample_seed = 0;
};

struct GradcheckResult {
    double max_rel_err = 0.0;
    int64_t coords_checked = 0;
    std::string worst;  // human-readable locator of the worst coordinate
};

// Compares tape gradients of loss_fn against central differences over the
// given parameters. loss_fn must be a pure function of the parameter values
// (reseed any internal randomness on every call).
GradcheckResult gradcheck(const std::function<Tensor(Tape&)>& loss_fn, const std::vector<Tensor>& params,
                          const GradcheckConfig& cfg = {});

}  // namespace uspose::nn
