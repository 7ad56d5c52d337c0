#include <cstdint>

#include "uspose/error.hpp"
#include "uspose/models/model.hpp"

namespace uspose::models {

namespace {

nlohmann::json layer_to_json(const CNNLayer& layer) {
    return std::visit(
        [](const auto& l) -> nlohmann::json {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>)
                return {{"type", "conv1d"},
                        {"out_channels", l.out_channels},
                        {"kernel", l.kernel},
                        {"stride", l.stride},
                        {"padding", l.padding}};
            else if constexpr (std::is_same_v<T, PoolLayer>)
                return {{"type", "max_pool1d"}, {"width", l.width}, {"stride", l.stride}};
            else if constexpr (std::is_same_v<T, ReluLayer>)
                return {{"type", "relu"}};
            else if constexpr (std::is_same_v<T, DropoutLayer>)
                return {{"type", "dropout"}, {"rate", l.rate}};
            else if constexpr (std::is_same_v<T, FlattenLayer>)
                return {{"type", "flatten"}};
            else
                return {{"type", "dense"}, {"out_features", l.out_features}};
        },
        layer);
}

CNNLayer layer_from_json(const nlohmann::json& j) {
    const std::string type = j.at("type").get<std::string>();
    if (type == "conv1d")
        return ConvLayer{j.at("out_channels").get<int>(), j.at("kernel").get<int>(), j.value("stride", 1),
                         j.value("padding", 0)};
    if (type == "max_pool1d") {
        const int width = j.at("width").get<int>();
        return PoolLayer{width, j.value("stride", width)};
    }
    if (type == "relu") return ReluLayer{};
    if (type == "dropout") return DropoutLayer{j.at("rate").get<double>()};
    if (type == "flatten") return FlattenLayer{};
    if (type == "dense") return DenseLayer{j.at("out_features").get<int>()};
    throw ConfigError(strf("unknown cnn layer type '%s'", type.c_str()));
}

// Walks the CNN layer chain, validating legality and summing parameters.
// Throws ConfigError naming the first offending layer index.
int64_t walk_cnn(const CNNSpec& spec, int channels, int length) {
    if (spec.classes < 1) throw ConfigError("cnn spec: classes must be positive");
    if (spec.layers.empty()) throw ConfigError("cnn spec: empty layer list");
    int c = channels, l = length;
    bool flat = false;
    int features = 0;
    int64_t count = 0;
    auto fail = [](size_t i, const std::string& what) {
        throw ConfigError(strf("cnn spec: layer %zu: %s", i, what.c_str()));
    };
    for (size_t i = 0; i < spec.layers.size(); ++i) {
        std::visit(
            [&](const auto& layer) {
                using T = std::decay_t<decltype(layer)>;
                if constexpr (std::is_same_v<T, ConvLayer>) {
                    if (flat) fail(i, "conv1d after flatten");
                    if (layer.out_channels < 1 || layer.kernel < 1 || layer.stride < 1 || layer.padding < 0)
                        fail(i, "conv1d fields out of range");
                    if (l + 2 * layer.padding < layer.kernel)
                        fail(i, strf("kernel %d exceeds padded length %d", layer.kernel, l + 2 * layer.padding));
                    count += static_cast<int64_t>(c) * layer.out_channels * layer.kernel + layer.out_channels;
                    l = (l + 2 * layer.padding - layer.kernel) / layer.stride + 1;
                    c = layer.out_channels;
                } else if constexpr (std::is_same_v<T, PoolLayer>) {
                    if (flat) fail(i, "max_pool1d after flatten");
                    if (layer.width < 1 || layer.stride < 1) fail(i, "max_pool1d fields out of range");
                    if (layer.width > l) fail(i, strf("pool width %d exceeds length %d", layer.width, l));
                    l = (l - layer.width) / layer.stride + 1;
                } else if constexpr (std::is_same_v<T, DropoutLayer>) {
                    if (!(layer.rate >= 0.0 && layer.rate < 1.0))
                        fail(i, strf("dropout rate %g outside [0, 1)", layer.rate));
                } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                    if (flat) fail(i, "repeated flatten");
                    flat = true;
                    features = c * l;
                } else if constexpr (std::is_same_v<T, DenseLayer>) {
                    if (!flat) fail(i, "dense before flatten");
                    if (layer.out_features < 1) fail(i, "dense out_features must be positive");
                    count += static_cast<int64_t>(features) * layer.out_features + layer.out_features;
                    features = layer.out_features;
                } else {
                    static_assert(std::is_same_v<T, ReluLayer>);
                }
            },
            spec.layers[i]);
    }
    if (!flat || !std::holds_alternative<DenseLayer>(spec.layers.back()) || features != spec.classes)
        throw ConfigError(strf("cnn spec: chain must end in dense(%d), final width is %d%s", spec.classes,
                               features, flat ? "" : " (never flattened)"));
    return count;
}

void validate_vit(const ViTSpec& s, int channels, int length) {
    auto req = [](bool ok, const char* what) {
        if (!ok) throw ConfigError(strf("vit spec: %s", what));
    };
    req(s.patch_height > 0 && s.patch_width > 0, "patch dimensions must be positive");
    req(s.pe_dimension > 0, "pe_dimension must be positive");
    req(s.heads > 0, "heads must be positive");
    req(s.encoder_blocks > 0, "encoder_blocks must be positive");
    req(s.ffn_mul > 0, "ffn_mul must be positive");
    req(s.dropout >= 0.0 && s.dropout < 1.0, "dropout must lie in [0, 1)");
    req(s.classes > 0, "classes must be positive");
    if (channels % s.patch_height != 0)
        throw ConfigError(strf("vit spec: patch_height %d does not divide input channels %d", s.patch_height,
                               channels));
    if (length % s.patch_width != 0)
        throw ConfigError(strf("vit spec: patch_width %d does not divide input length %d", s.patch_width,
                               length));
    if (s.pe_dimension % s.heads != 0)
        throw ConfigError(strf("vit spec: heads %d do not divide pe_dimension %d", s.heads, s.pe_dimension));
}

}  // namespace

nlohmann::json spec_to_json(const ModelSpec& spec) {
    if (const auto* v = std::get_if<ViTSpec>(&spec)) {
        return {{"kind", "vit"},
                {"patch_height", v->patch_height},
                {"patch_width", v->patch_width},
                {"pe_dimension", v->pe_dimension},
                {"heads", v->heads},
                {"encoder_blocks", v->encoder_blocks},
                {"ffn_mul", v->ffn_mul},
                {"dropout", v->dropout},
                {"classes", v->classes}};
    }
    const auto& c = std::get<CNNSpec>(spec);
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : c.layers) layers.push_back(layer_to_json(l));
    return {{"kind", "cnn"}, {"classes", c.classes}, {"layers", layers}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "vit") {
        ViTSpec s;
        s.patch_height = j.at("patch_height").get<int>();
        s.patch_width = j.at("patch_width").get<int>();
        s.pe_dimension = j.at("pe_dimension").get<int>();
        s.heads = j.at("heads").get<int>();
        s.encoder_blocks = j.at("encoder_blocks").get<int>();
        s.ffn_mul = j.value("ffn_mul", 1);
        s.dropout = j.value("dropout", 0.0);
        s.classes = j.at("classes").get<int>();
        return s;
    }
    if (kind == "cnn") {
        CNNSpec s;
        s.classes = j.at("classes").get<int>();
        for (const auto& l : j.at("layers")) s.layers.push_back(layer_from_json(l));
        return s;
    }
    throw ConfigError(strf("unknown model kind '%s'", kind.c_str()));
}

void validate_spec(const ModelSpec& spec, int channels, int length) {
    if (channels < 1 || length < 1)
        throw ConfigError(strf("model input shape %d x %d must be positive", channels, length));
    if (const auto* v = std::get_if<ViTSpec>(&spec))
        validate_vit(*v, channels, length);
    else
        walk_cnn(std::get<CNNSpec>(spec), channels, length);
}

int64_t param_count(const ModelSpec& spec, int channels, int length) {
    validate_spec(spec, channels, length);
    if (const auto* v = std::get_if<ViTSpec>(&spec)) {
        const int64_t d = v->pe_dimension;
        const int64_t p = static_cast<int64_t>(v->patch_height) * v->patch_width;
        const int64_t h = static_cast<int64_t>(v->ffn_mul) * d;
        const int64_t per_block = 2 * d            // ln1
                                  + 4 * (d * d + d)  // q, k, v, out projections
                                  + 2 * d            // ln2
                                  + (d * h + h) + (h * d + d);
        return (p * d + d) + v->encoder_blocks * per_block + (d * v->classes + v->classes);
    }
    return walk_cnn(std::get<CNNSpec>(spec), channels, length);
}

CNNSpec udacnn_ref() {
    // Four conv blocks sized so the total lands on 50,584 parameters for the
    // 8 x 960 input (see README for the arithmetic).
    CNNSpec s;
    s.classes = 6;
    s.layers = {ConvLayer{12, 7, 1, 3}, ReluLayer{}, PoolLayer{4, 4},
                ConvLayer{52, 7, 1, 3}, ReluLayer{}, PoolLayer{4, 4},
                ConvLayer{64, 5, 1, 2}, ReluLayer{}, PoolLayer{2, 2},
                ConvLayer{70, 5, 1, 2}, ReluLayer{}, PoolLayer{2, 2},
                FlattenLayer{},         DenseLayer{6}};
    return s;
}

ViTSpec usvit_default() { return ViTSpec{2, 480, 256, 16, 3, 1, 0.1, 6}; }

}  // namespace uspose::models
