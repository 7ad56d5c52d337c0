#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "uspose/error.hpp"
#include "uspose/models/model.hpp"
#include "uspose/nn/checkpoint.hpp"
#include "uspose/rng.hpp"

#include <cstdio>
#include <filesystem>
#include <variant>
#include <vector>

using namespace uspose;
using namespace uspose::models;
namespace fs = std::filesystem;

namespace {

// Closed-form parameter count computed directly from the layer formulas,
// independent of the library's implementation.
int64_t oracle_cnn_count(const CNNSpec& spec, int channels, int length) {
    int64_t total = 0;
    int c = channels, l = length;
    bool flat = false;
    int64_t features = 0;
    for (const auto& layer : spec.layers) {
        if (std::holds_alternative<ConvLayer>(layer)) {
            const auto& cv = std::get<ConvLayer>(layer);
            total += static_cast<int64_t>(cv.out_channels) * c * cv.kernel + cv.out_channels;
            l = (l + 2 * cv.padding - cv.kernel) / cv.stride + 1;
            c = cv.out_channels;
        } else if (std::holds_alternative<PoolLayer>(layer)) {
            const auto& p = std::get<PoolLayer>(layer);
            l = (l - p.width) / p.stride + 1;
        } else if (std::holds_alternative<FlattenLayer>(layer)) {
            flat = true;
            features = static_cast<int64_t>(c) * l;
        } else if (std::holds_alternative<DenseLayer>(layer)) {
            const auto& d = std::get<DenseLayer>(layer);
            total += features * d.out_features + d.out_features;
            features = d.out_features;
        }
    }
    (void)flat;
    return total;
}

int64_t oracle_vit_count(const ViTSpec& s, int channels, int length) {
    (void)channels;
    (void)length;
    int64_t d = s.pe_dimension;
    int64_t patch = static_cast<int64_t>(s.patch_height) * s.patch_width;
    int64_t embed = patch * d + d;
    int64_t per_block = 2 * d                         // ln1
                        + 4 * (d * d + d)             // q, k, v, o projections
                        + 2 * d                       // ln2
                        + (d * (s.ffn_mul * d) + s.ffn_mul * d)
                        + (s.ffn_mul * d * d + d);
    int64_t head = d * s.classes + s.classes;
    return embed + s.encoder_blocks * per_block + head;
}

int64_t built_size(const Model& m) {
    int64_t total = 0;
    for (const auto& p : m.params) total += p.tensor.size();
    return total;
}

CNNSpec random_cnn(Rng& r, int& channels, int& length) {
    channels = static_cast<int>(r.uniform_int(1, 8));
    length = static_cast<int>(r.uniform_int(24, 200));
    CNNSpec spec;
    spec.classes = static_cast<int>(r.uniform_int(2, 8));
    int l = length;
    int blocks = static_cast<int>(r.uniform_int(0, 3));
    for (int i = 0; i < blocks && l >= 8; ++i) {
        ConvLayer cv;
        cv.out_channels = static_cast<int>(r.uniform_int(1, 12));
        cv.kernel = static_cast<int>(r.uniform_int(1, std::min(5, l)));
        cv.stride = static_cast<int>(r.uniform_int(1, 2));
        cv.padding = static_cast<int>(r.uniform_int(0, 2));
        spec.layers.push_back(cv);
        l = (l + 2 * cv.padding - cv.kernel) / cv.stride + 1;
        if (r.uniform() < 0.5) spec.layers.push_back(ReluLayer{});
        if (r.uniform() < 0.5 && l >= 4) {
            PoolLayer p;
            p.width = static_cast<int>(r.uniform_int(2, std::min(4, l)));
            p.stride = p.width;
            spec.layers.push_back(p);
            l = (l - p.width) / p.stride + 1;
        }
        if (r.uniform() < 0.3) spec.layers.push_back(DropoutLayer{0.25});
    }
    spec.layers.push_back(FlattenLayer{});
    if (r.uniform() < 0.4) {
        DenseLayer hidden;
        hidden.out_features = static_cast<int>(r.uniform_int(2, 32));
        spec.layers.push_back(hidden);
        spec.layers.push_back(ReluLayer{});
    }
    spec.layers.push_back(DenseLayer{spec.classes});
    return spec;
}

std::vector<dsp::NetworkInput> fake_batch(int n, int channels, int length, uint64_t seed,
                                          dsp::Modality mod = dsp::Modality::AModeUS) {
    Rng r(seed, "fakebatch");
    std::vector<dsp::NetworkInput> batch;
    for (int i = 0; i < n; ++i) {
        dsp::NetworkInput in;
        in.channels = channels;
        in.length = length;
        in.modality = mod;
        in.label = i % 2;
        in.data.resize(static_cast<size_t>(channels) * length);
        for (auto& v : in.data) v = r.uniform(0.0, 1.0);
        batch.push_back(std::move(in));
    }
    return batch;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("uspose_test_" + std::to_string(::getpid()) + "_" +
                                            std::to_string(counter()++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("dense head on a flattened 8x10 input counts 486 parameters") {
    CNNSpec spec;
    spec.layers = {FlattenLayer{}, DenseLayer{6}};
    spec.classes = 6;
    CHECK(param_count(spec, 8, 10) == 486);
}

TEST_CASE("a 16x5 conv over 8 channels contributes 656 parameters") {
    CNNSpec spec;
    spec.layers = {ConvLayer{16, 5, 1, 0}, FlattenLayer{}, DenseLayer{6}};
    spec.classes = 6;
    int64_t dense_part = static_cast<int64_t>(16) * (20 - 5 + 1) * 6 + 6;
    CHECK(param_count(spec, 8, 20) == 656 + dense_part);
    CHECK(8 * 16 * 5 + 16 == 656);
}

TEST_CASE("udacnn_ref counts exactly 50584 parameters at 8x960") {
    CNNSpec spec = udacnn_ref();
    CHECK(param_count(spec, 8, 960) == 50584);
    CHECK(oracle_cnn_count(spec, 8, 960) == 50584);

    Model m = build_model(spec, 8, 960, 7);
    CHECK(built_size(m) == 50584);
    CHECK(m.param_count() == 50584);

    int convs = 0;
    for (const auto& layer : spec.layers) convs += std::holds_alternative<ConvLayer>(layer);
    CHECK(convs == 4);
}

TEST_CASE("param_count matches the closed form on 100 random specs") {
    Rng r(31, "cnnprop");
    for (int trial = 0; trial < 100; ++trial) {
        int c = 0, l = 0;
        CNNSpec spec = random_cnn(r, c, l);
        CAPTURE(trial);
        int64_t want = oracle_cnn_count(spec, c, l);
        CHECK(param_count(spec, c, l) == want);
        Model m = build_model(spec, c, l, 1000 + static_cast<uint64_t>(trial));
        CHECK(built_size(m) == want);
    }
}

TEST_CASE("vit parameter count follows the zoo's layer conventions") {
    ViTSpec s = usvit_default();
    int64_t want = oracle_vit_count(s, 8, 960);
    CHECK(param_count(s, 8, 960) == want);
    CHECK(want == 1434886);
    // The originally reported figure for this configuration is 647,814; the
    // difference is documented in the README (untied per-projection weights
    // and the unit FFN multiple cannot reproduce it).
    CHECK(want != 647814);

    Model m = build_model(s, 8, 960, 3);
    CHECK(built_size(m) == want);
}

TEST_CASE("vit forward yields a logit per class") {
    ViTSpec s = usvit_default();
    Model m = build_model(s, 8, 960, 5);
    auto batch = fake_batch(4, 8, 960, 42);
    auto logits = m.predict(batch);
    REQUIRE(logits.size() == 4);
    for (const auto& row : logits) CHECK(row.size() == 6);
    // 8x960 with 2x480 patches -> a 4x2 grid of 8 tokens.
    CHECK(m.positional.size() == static_cast<size_t>(8 * s.pe_dimension));
}

TEST_CASE("positional embedding starts with the sin0 cos0 pattern") {
    ViTSpec s = usvit_default();
    Model m = build_model(s, 8, 960, 5);
    CHECK(m.positional[0] == 0.0);  // sin(0)
    CHECK(m.positional[1] == 1.0);  // cos(0)
}

TEST_CASE("positional embedding is the same whatever the init seed") {
    ViTSpec s = usvit_default();
    s.pe_dimension = 32;
    s.heads = 4;
    s.encoder_blocks = 1;
    Model a = build_model(s, 8, 960, 1);
    Model b = build_model(s, 8, 960, 2);
    CHECK(a.positional == b.positional);
}

TEST_CASE("builds are deterministic in the seed") {
    CNNSpec spec = udacnn_ref();
    Model a = build_model(spec, 8, 960, 11);
    Model b = build_model(spec, 8, 960, 11);
    Model c = build_model(spec, 8, 960, 12);
    REQUIRE(a.params.size() == b.params.size());
    bool all_equal = true, any_diff_c = false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        all_equal = all_equal && a.params[i].tensor.value() == b.params[i].tensor.value();
        any_diff_c = any_diff_c || a.params[i].tensor.value() != c.params[i].tensor.value();
    }
    CHECK(all_equal);
    CHECK(any_diff_c);
}

TEST_CASE("init draws stay inside the fan-in bound") {
    Model m = build_model(udacnn_ref(), 8, 960, 21);
    for (const auto& p : m.params) {
        if (p.tensor.rank() < 2) continue;  // biases share the weight bound
        // fan_in for conv [out, in, k] is in*k, for dense [in, out] it is in.
        const auto& sh = p.tensor.shape();
        double fan_in = sh.size() == 3 ? static_cast<double>(sh[1]) * sh[2] : static_cast<double>(sh[0]);
        double bound = 1.0 / std::sqrt(fan_in);
        for (double v : p.tensor.value()) {
            CHECK(v >= -bound);
            CHECK(v <= bound);
        }
    }
}

TEST_CASE("predict is deterministic and ignores dropout") {
    ViTSpec s = usvit_default();
    s.pe_dimension = 32;
    s.heads = 4;
    s.encoder_blocks = 1;
    s.dropout = 0.9;  // would be destructive if applied at eval time
    Model m = build_model(s, 8, 960, 9);
    auto batch = fake_batch(3, 8, 960, 13);
    auto p1 = m.predict(batch);
    auto p2 = m.predict(batch);
    CHECK(p1 == p2);
    for (const auto& row : p1)
        for (double v : row) CHECK(std::isfinite(v));
}

TEST_CASE("spec json round trips for both families") {
    ViTSpec v = usvit_default();
    auto jv = spec_to_json(v);
    CHECK(jv["kind"] == "vit");
    ModelSpec v2 = spec_from_json(jv);
    CHECK(spec_to_json(v2) == jv);

    CNNSpec c = udacnn_ref();
    c.layers.push_back(DropoutLayer{0.5});  // exercise every layer tag
    c.layers.push_back(DenseLayer{6});
    auto jc = spec_to_json(c);
    CHECK(jc["kind"] == "cnn");
    ModelSpec c2 = spec_from_json(jc);
    CHECK(spec_to_json(c2) == jc);

    CHECK_THROWS_AS(spec_from_json(nlohmann::json{{"kind", "mlp"}}), ConfigError);
}

TEST_CASE("validate_spec names the violated constraint") {
    ViTSpec v = usvit_default();
    CHECK_THROWS_AS(validate_spec(v, 7, 960), ConfigError);   // patch_height ∤ channels
    CHECK_THROWS_AS(validate_spec(v, 8, 961), ConfigError);   // patch_width ∤ length
    ViTSpec bad_heads = v;
    bad_heads.heads = 3;
    CHECK_THROWS_AS(validate_spec(bad_heads, 8, 960), ConfigError);
    ViTSpec bad_drop = v;
    bad_drop.dropout = 1.0;
    CHECK_THROWS_AS(validate_spec(bad_drop, 8, 960), ConfigError);
    CHECK_NOTHROW(validate_spec(v, 8, 960));

    CNNSpec empty;
    CHECK_THROWS_AS(validate_spec(empty, 8, 960), ConfigError);

    CNNSpec no_flatten;
    no_flatten.layers = {DenseLayer{6}};
    no_flatten.classes = 6;
    CHECK_THROWS_AS(validate_spec(no_flatten, 8, 960), ConfigError);

    CNNSpec wrong_head;
    wrong_head.layers = {FlattenLayer{}, DenseLayer{5}};
    wrong_head.classes = 6;
    CHECK_THROWS_AS(validate_spec(wrong_head, 8, 960), ConfigError);

    CNNSpec big_kernel;
    big_kernel.layers = {ConvLayer{4, 99, 1, 0}, FlattenLayer{}, DenseLayer{6}};
    big_kernel.classes = 6;
    CHECK_THROWS_AS(validate_spec(big_kernel, 8, 32), ConfigError);

    CNNSpec wide_pool;
    wide_pool.layers = {PoolLayer{64, 64}, FlattenLayer{}, DenseLayer{6}};
    wide_pool.classes = 6;
    CHECK_THROWS_AS(validate_spec(wide_pool, 8, 32), ConfigError);
}

TEST_CASE("batch_tensor rejects mixed shapes and modalities") {
    auto batch = fake_batch(3, 4, 32, 1);
    auto odd = fake_batch(1, 4, 30, 2);
    batch.push_back(odd[0]);
    CHECK_THROWS_AS(batch_tensor(batch, 0, batch.size()), InputError);

    auto batch2 = fake_batch(2, 4, 32, 3);
    auto env = fake_batch(1, 4, 32, 4, dsp::Modality::EnvelopeRF);
    batch2.push_back(env[0]);
    CHECK_THROWS_AS(batch_tensor(batch2, 0, batch2.size()), InputError);

    auto t = batch_tensor(batch2, 0, 2);
    CHECK(t.shape() == nn::Shape{2, 4, 32});
}

TEST_CASE("model checkpoints round trip exactly") {
    TempDir tmp;
    CNNSpec spec = udacnn_ref();
    Model m = build_model(spec, 8, 960, 77);
    auto batch = fake_batch(2, 8, 960, 21);
    auto before = m.predict(batch);

    save_model(tmp.path / "ckpt", m);
    Model loaded = load_model(tmp.path / "ckpt");
    CHECK(loaded.channels == 8);
    CHECK(loaded.length == 960);
    CHECK(loaded.param_count() == 50584);
    auto after = loaded.predict(batch);
    CHECK(before == after);
}

TEST_CASE("vit checkpoints preserve the positional table") {
    TempDir tmp;
    ViTSpec s = usvit_default();
    s.pe_dimension = 32;
    s.heads = 4;
    s.encoder_blocks = 1;
    Model m = build_model(s, 8, 960, 5);
    auto batch = fake_batch(2, 8, 960, 8);
    save_model(tmp.path / "vit", m);
    Model loaded = load_model(tmp.path / "vit");
    CHECK(loaded.positional == m.positional);
    CHECK(loaded.predict(batch) == m.predict(batch));
}

TEST_CASE("checkpoint loader validates names shapes and sizes") {
    TempDir tmp;
    using nn::NamedTensor;
    Rng r(5, "ck");
    std::vector<NamedTensor> params{{"a", nn::Tensor::rand_uniform({2, 3}, -1, 1, r, true)},
                                    {"b", nn::Tensor::rand_uniform({4}, -1, 1, r, true)}};
    nn::save_checkpoint(tmp.path / "c", params, {{"note", "x"}});

    auto ck = nn::load_checkpoint(tmp.path / "c");
    CHECK(ck.meta["note"] == "x");
    REQUIRE(ck.params.size() == 2);
    CHECK(ck.params[0].tensor.value() == params[0].tensor.value());

    std::vector<NamedTensor> renamed{{"z", nn::Tensor::zeros({2, 3}, true)},
                                     {"b", nn::Tensor::zeros({4}, true)}};
    CHECK_THROWS_AS(nn::load_into(ck, renamed), DataError);

    std::vector<NamedTensor> reshaped{{"a", nn::Tensor::zeros({3, 2}, true)},
                                      {"b", nn::Tensor::zeros({4}, true)}};
    CHECK_THROWS_AS(nn::load_into(ck, reshaped), DataError);

    std::vector<NamedTensor> fewer{{"a", nn::Tensor::zeros({2, 3}, true)}};
    CHECK_THROWS_AS(nn::load_into(ck, fewer), DataError);

    // Truncated flat file must be rejected.
    auto bin = tmp.path / "c" / "params.f64";
    fs::resize_file(bin, fs::file_size(bin) - 8);
    CHECK_THROWS_AS(nn::load_checkpoint(tmp.path / "c"), DataError);
}

TEST_CASE("missing checkpoint directory raises a data error") {
    CHECK_THROWS_AS(load_model("/nonexistent/uspose_ckpt"), DataError);
}
