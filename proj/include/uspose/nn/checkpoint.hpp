#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "uspose/nn/tensor.hpp"

namespace uspose::nn {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// On-disk layout: <dir>/meta.json lists the parameters (name, shape) in
// declaration order plus caller extras; <dir>/params.f64 is the flat
// little-endian float64 concatenation in that same order.
void save_checkpoint(const std::filesystem::path& dir, const std::vector<NamedTensor>& params,
                     const nlohmann::json& extra = nlohmann::json::object());

struct Checkpoint {
    nlohmann::json meta;
    std::vector<NamedTensor> params;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Copies checkpoint values into existing tensors, validating names and shapes.
void load_into(const Checkpoint& ckpt, std::vector<NamedTensor>& params);

}  // namespace uspose::nn
