#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "uspose/dsp/preprocess.hpp"
#include "uspose/nn/checkpoint.hpp"
#include "uspose/nn/tensor.hpp"

namespace uspose::models {

struct ViTSpec {
    int patch_height = 2;
    int patch_width = 480;
    int pe_dimension = 256;
    int heads = 16;
    int encoder_blocks = 3;
    int ffn_mul = 1;
    double dropout = 0.1;
    int classes = 6;
};

// CNN layer chain, applied in order to a C x L input.
struct ConvLayer {
    int out_channels = 1;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
};
struct PoolLayer {
    int width = 2;
    int stride = 2;
};
struct ReluLayer {};
struct DropoutLayer {
    double rate = 0.5;
};
struct FlattenLayer {};
struct DenseLayer {
    int out_features = 1;
};
using CNNLayer = std::variant<ConvLayer, PoolLayer, ReluLayer, DropoutLayer, FlattenLayer, DenseLayer>;

struct CNNSpec {
    std::vector<CNNLayer> layers;
    int classes = 6;
};

using ModelSpec = std::variant<ViTSpec, CNNSpec>;

// Round-trippable JSON form ("kind": "vit" | "cnn").
nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

// Validates the spec against a C x L input; throws ConfigError naming the
// violated constraint (for CNNs, the first offending layer index).
void validate_spec(const ModelSpec& spec, int channels, int length);

// Trainable-parameter count derived from the spec alone.
int64_t param_count(const ModelSpec& spec, int channels, int length);

struct Model {
    ModelSpec spec;
    int channels = 0;
    int length = 0;
    std::vector<nn::NamedTensor> params;
    std::vector<double> positional;  // ViT only: constant [tokens * pe_dimension]

    // Builds the graph for a [N, C, L] batch on the given tape and returns
    // [N, classes] logits. rng feeds dropout and is only drawn in train mode.
    nn::Tensor forward(nn::Tape& tape, const nn::Tensor& x, bool train, Rng& rng) const;

    // Eval-mode logits for a batch of preprocessed inputs.
    std::vector<std::vector<double>> predict(const std::vector<dsp::NetworkInput>& batch) const;

    int64_t param_count() const;
};

// Packs a batch of identically-shaped NetworkInputs into a [N, C, L] tensor.
nn::Tensor batch_tensor(const std::vector<dsp::NetworkInput>& batch, size_t begin, size_t end);

Model build_model(const ModelSpec& spec, int channels, int length, uint64_t seed);

// Checkpoint with the spec and input shape embedded in the metadata.
void save_model(const std::filesystem::path& dir, const Model& model,
                const nlohmann::json& extra = nlohmann::json::object());
Model load_model(const std::filesystem::path& dir);

// Shipped reference specs.
CNNSpec udacnn_ref();      // 4 conv blocks sized to 50,584 parameters at 8 x 960
ViTSpec usvit_default();   // the published optimal ViT configuration

}  // namespace uspose::models
