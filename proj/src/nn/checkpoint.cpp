#include "uspose/nn/checkpoint.hpp"

#include "uspose/error.hpp"
#include "uspose/io.hpp"

namespace uspose::nn {

namespace fs = std::filesystem;

void save_checkpoint(const fs::path& dir, const std::vector<NamedTensor>& params, const nlohmann::json& extra) {
    nlohmann::json meta = extra;
    meta["params"] = nlohmann::json::array();
    std::vector<double> flat;
    for (const auto& [name, tensor] : params) {
        meta["params"].push_back({{"name", name}, {"shape", tensor.shape()}});
        flat.insert(flat.end(), tensor.value().begin(), tensor.value().end());
    }
    fs::create_directories(dir);
    io::write_json(dir / "meta.json", meta);
    io::write_f64_le(dir / "params.f64", flat);
}

Checkpoint load_checkpoint(const fs::path& dir) {
    Checkpoint ckpt;
    ckpt.meta = io::read_json(dir / "meta.json");
    if (!ckpt.meta.contains("params") || !ckpt.meta["params"].is_array())
        throw DataError(strf("%s: meta.json has no params list", dir.string().c_str()));
    const std::vector<double> flat = io::read_f64_le(dir / "params.f64");
    size_t off = 0;
    for (const auto& entry : ckpt.meta["params"]) {
        const std::string name = entry.at("name").get<std::string>();
        const Shape shape = entry.at("shape").get<Shape>();
        const auto n = static_cast<size_t>(numel(shape));
        if (off + n > flat.size())
            throw DataError(strf("%s: params.f64 too short for %s (need %zu more values, have %zu)",
                                 dir.string().c_str(), name.c_str(), n, flat.size() - off));
        ckpt.params.push_back(
            {name, Tensor::from_data(shape, {flat.begin() + off, flat.begin() + off + n})});
        off += n;
    }
    if (off != flat.size())
        throw DataError(strf("%s: params.f64 has %zu trailing values", dir.string().c_str(), flat.size() - off));
    return ckpt;
}

void load_into(const Checkpoint& ckpt, std::vector<NamedTensor>& params) {
    if (ckpt.params.size() != params.size())
        throw DataError(strf("checkpoint has %zu parameters, model expects %zu", ckpt.params.size(),
                             params.size()));
    for (size_t i = 0; i < params.size(); ++i) {
        const auto& src = ckpt.params[i];
        auto& dst = params[i];
        if (src.name != dst.name)
            throw DataError(strf("checkpoint parameter %zu is %s, model expects %s", i, src.name.c_str(),
                                 dst.name.c_str()));
        if (src.tensor.shape() != dst.tensor.shape())
            throw DataError(strf("checkpoint %s has shape %s, model expects %s", src.name.c_str(),
                                 shape_str(src.tensor.shape()).c_str(), shape_str(dst.tensor.shape()).c_str()));
        dst.tensor.value() = src.tensor.value();
    }
}

}  // namespace uspose::nn
