#include <cmath>
#include <cstring>

#include "uspose/error.hpp"
#include "uspose/models/model.hpp"

namespace uspose::models {

namespace {

using nn::NamedTensor;
using nn::Shape;
using nn::Tensor;

constexpr double kLayerNormEps = 1e-5;

Tensor init_weight(Shape shape, int64_t fan_in, Rng& root, const std::string& name) {
    Rng rng = root.fork(name);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    return Tensor::rand_uniform(std::move(shape), -bound, bound, rng, true);
}

// Half-and-half 2D sinusoidal embedding: the first half of each token vector
// encodes the patch-grid row, the second half the column, each with the
// interleaved sin/cos frequency ladder.
std::vector<double> sinusoidal_2d(int grid_rows, int grid_cols, int dim) {
    const int row_half = dim / 2;
    const int col_half = dim - row_half;
    auto ladder = [](double pos, int i, int half) {
        const double freq = std::pow(10000.0, -2.0 * (i / 2) / half);
        const double angle = pos * freq;
        return (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    };
    std::vector<double> pe(static_cast<size_t>(grid_rows) * grid_cols * dim);
    for (int r = 0; r < grid_rows; ++r)
        for (int c = 0; c < grid_cols; ++c) {
            double* row = pe.data() + (static_cast<size_t>(r) * grid_cols + c) * dim;
            for (int i = 0; i < row_half; ++i) row[i] = ladder(r, i, row_half);
            for (int i = 0; i < col_half; ++i) row[row_half + i] = ladder(c, i, col_half);
        }
    return pe;
}

void build_vit_params(const ViTSpec& s, Model& model, Rng& root) {
    const int d = s.pe_dimension;
    const int p = s.patch_height * s.patch_width;
    const int h = s.ffn_mul * d;
    auto add = [&](const std::string& name, Shape shape, int64_t fan_in) {
        model.params.push_back({name, init_weight(std::move(shape), fan_in, root, name)});
    };
    auto add_const = [&](const std::string& name, Shape shape, double v) {
        model.params.push_back({name, Tensor::full(std::move(shape), v, true)});
    };
    add("embed.w", {p, d}, p);
    add_const("embed.b", {d}, 0.0);
    for (int b = 0; b < s.encoder_blocks; ++b) {
        const std::string pre = strf("block%d.", b);
        add_const(pre + "ln1.g", {d}, 1.0);
        add_const(pre + "ln1.b", {d}, 0.0);
        for (const char* proj : {"wq", "wk", "wv", "wo"}) add(pre + "attn." + proj, {d, d}, d);
        for (const char* bias : {"bq", "bk", "bv", "bo"}) add_const(pre + "attn." + bias, {d}, 0.0);
        add_const(pre + "ln2.g", {d}, 1.0);
        add_const(pre + "ln2.b", {d}, 0.0);
        add(pre + "ffn.w1", {d, h}, d);
        add_const(pre + "ffn.b1", {h}, 0.0);
        add(pre + "ffn.w2", {h, d}, h);
        add_const(pre + "ffn.b2", {d}, 0.0);
    }
    add("head.w", {d, s.classes}, d);
    add_const("head.b", {s.classes}, 0.0);
    model.positional = sinusoidal_2d(model.channels / s.patch_height, model.length / s.patch_width, d);
}

void build_cnn_params(const CNNSpec& s, Model& model, Rng& root) {
    int c = model.channels, l = model.length;
    int features = 0;
    for (size_t i = 0; i < s.layers.size(); ++i) {
        if (const auto* conv = std::get_if<ConvLayer>(&s.layers[i])) {
            const std::string pre = strf("layer%zu.", i);
            model.params.push_back(
                {pre + "w", init_weight({conv->out_channels, c, conv->kernel},
                                        static_cast<int64_t>(c) * conv->kernel, root, pre + "w")});
            model.params.push_back({pre + "b", Tensor::zeros({conv->out_channels}, true)});
            l = (l + 2 * conv->padding - conv->kernel) / conv->stride + 1;
            c = conv->out_channels;
        } else if (const auto* pool = std::get_if<PoolLayer>(&s.layers[i])) {
            l = (l - pool->width) / pool->stride + 1;
        } else if (std::holds_alternative<FlattenLayer>(s.layers[i])) {
            features = c * l;
        } else if (const auto* dense = std::get_if<DenseLayer>(&s.layers[i])) {
            const std::string pre = strf("layer%zu.", i);
            model.params.push_back({pre + "w", init_weight({features, dense->out_features}, features, root,
                                                           pre + "w")});
            model.params.push_back({pre + "b", Tensor::zeros({dense->out_features}, true)});
            features = dense->out_features;
        }
    }
}

}  // namespace

Model build_model(const ModelSpec& spec, int channels, int length, uint64_t seed) {
    validate_spec(spec, channels, length);
    Model model;
    model.spec = spec;
    model.channels = channels;
    model.length = length;
    Rng root(seed, "init");
    if (const auto* v = std::get_if<ViTSpec>(&spec))
        build_vit_params(*v, model, root);
    else
        build_cnn_params(std::get<CNNSpec>(spec), model, root);
    return model;
}

nn::Tensor Model::forward(nn::Tape& tape, const Tensor& x, bool train, Rng& rng) const {
    if (x.rank() != 3 || x.dim(1) != channels || x.dim(2) != length)
        throw ShapeError(strf("forward: expected [N, %d, %d], got %s", channels, length,
                              nn::shape_str(x.shape()).c_str()));
    size_t pi = 0;
    auto next = [&]() -> const Tensor& { return params[pi++].tensor; };
    if (const auto* s = std::get_if<ViTSpec>(&spec)) {
        const int tokens = (channels / s->patch_height) * (length / s->patch_width);
        Tensor h = tape.patches(x, s->patch_height, s->patch_width);
        const Tensor& ew = next();
        const Tensor& eb = next();
        h = tape.dense(h, ew, eb);
        h = tape.add(h, Tensor::from_data({tokens, s->pe_dimension}, positional));
        for (int b = 0; b < s->encoder_blocks; ++b) {
            const Tensor &ln1g = next(), &ln1b = next();
            const Tensor &wq = next(), &wk = next(), &wv = next(), &wo = next();
            const Tensor &bq = next(), &bk = next(), &bv = next(), &bo = next();
            const Tensor &ln2g = next(), &ln2b = next();
            const Tensor &w1 = next(), &b1 = next(), &w2 = next(), &b2 = next();
            Tensor a = tape.layer_norm(h, ln1g, ln1b, kLayerNormEps);
            Tensor q = tape.dense(a, wq, bq);
            Tensor k = tape.dense(a, wk, bk);
            Tensor v = tape.dense(a, wv, bv);
            Tensor att = tape.attention(q, k, v, s->heads);
            att = tape.dense(att, wo, bo);
            att = tape.dropout(att, s->dropout, train, rng);
            h = tape.add(h, att);
            Tensor f = tape.layer_norm(h, ln2g, ln2b, kLayerNormEps);
            f = tape.dense(f, w1, b1);
            f = tape.relu(f);
            f = tape.dense(f, w2, b2);
            f = tape.dropout(f, s->dropout, train, rng);
            h = tape.add(h, f);
        }
        h = tape.mean(h, 1);
        const Tensor& hw = next();
        const Tensor& hb = next();
        return tape.dense(h, hw, hb);
    }
    const auto& s = std::get<CNNSpec>(spec);
    Tensor cur = x;
    for (const auto& layer : s.layers) {
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            const Tensor& w = next();
            const Tensor& b = next();
            cur = tape.conv1d(cur, w, b, conv->stride, conv->padding);
        } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
            cur = tape.max_pool1d(cur, pool->width, pool->stride);
        } else if (std::holds_alternative<ReluLayer>(layer)) {
            cur = tape.relu(cur);
        } else if (const auto* drop = std::get_if<DropoutLayer>(&layer)) {
            cur = tape.dropout(cur, drop->rate, train, rng);
        } else if (std::holds_alternative<FlattenLayer>(layer)) {
            cur = tape.reshape(cur, {cur.dim(0), cur.dim(1) * cur.dim(2)});
        } else {
            const Tensor& w = next();
            const Tensor& b = next();
            cur = tape.dense(cur, w, b);
        }
    }
    return cur;
}

std::vector<std::vector<double>> Model::predict(const std::vector<dsp::NetworkInput>& batch) const {
    if (batch.empty()) return {};
    std::vector<std::vector<double>> out;
    out.reserve(batch.size());
    const size_t chunk = 64;
    Rng rng(0, "predict");
    for (size_t begin = 0; begin < batch.size(); begin += chunk) {
        const size_t end = std::min(batch.size(), begin + chunk);
        nn::Tape tape;
        Tensor logits = forward(tape, batch_tensor(batch, begin, end), false, rng);
        const int classes = logits.dim(1);
        for (size_t i = 0; i < end - begin; ++i) {
            const double* row = logits.value().data() + i * classes;
            out.emplace_back(row, row + classes);
        }
    }
    return out;
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for (const auto& p : params) n += p.tensor.size();
    return n;
}

nn::Tensor batch_tensor(const std::vector<dsp::NetworkInput>& batch, size_t begin, size_t end) {
    if (begin >= end || end > batch.size())
        throw UsageError(strf("batch_tensor: bad range [%zu, %zu) of %zu", begin, end, batch.size()));
    const auto& first = batch[begin];
    const int n = static_cast<int>(end - begin);
    Tensor x = Tensor::zeros({n, first.channels, first.length});
    double* dst = x.value().data();
    const size_t frame = static_cast<size_t>(first.channels) * first.length;
    for (size_t i = begin; i < end; ++i) {
        const auto& in = batch[i];
        if (in.channels != first.channels || in.length != first.length || in.modality != first.modality)
            throw InputError(strf("batch_tensor: input %zu is %d x %d (%s), expected %d x %d (%s)", i,
                                  in.channels, in.length, dsp::modality_name(in.modality), first.channels,
                                  first.length, dsp::modality_name(first.modality)));
        std::memcpy(dst + (i - begin) * frame, in.data.data(), frame * sizeof(double));
    }
    return x;
}

void save_model(const std::filesystem::path& dir, const Model& model, const nlohmann::json& extra) {
    nlohmann::json meta = extra;
    meta["spec"] = spec_to_json(model.spec);
    meta["input"] = {{"channels", model.channels}, {"length", model.length}};
    nn::save_checkpoint(dir, model.params, meta);
}

Model load_model(const std::filesystem::path& dir) {
    nn::Checkpoint ckpt = nn::load_checkpoint(dir);
    if (!ckpt.meta.contains("spec"))
        throw DataError(strf("%s: checkpoint metadata has no model spec", dir.string().c_str()));
    Model model = build_model(spec_from_json(ckpt.meta["spec"]), ckpt.meta.at("input").at("channels").get<int>(),
                              ckpt.meta.at("input").at("length").get<int>(), 0);
    nn::load_into(ckpt, model.params);
    return model;
}

}  // namespace uspose::models
