#include "uspose/io.hpp"

#include <cstring>
#include <fstream>

#include "uspose/error.hpp"

namespace uspose::io {

namespace fs = std::filesystem;

std::vector<uint8_t> read_bytes(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(strf("cannot open %s", path.string().c_str()));
    f.seekg(0, std::ios::end);
    const auto n = static_cast<size_t>(f.tellg());
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> out(n);
    if (n && !f.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(n)))
        throw DataError(strf("short read from %s", path.string().c_str()));
    return out;
}

void write_bytes(const fs::path& path, const void* data, size_t n) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(strf("cannot open %s for writing", path.string().c_str()));
    if (n) f.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    if (!f) throw DataError(strf("short write to %s", path.string().c_str()));
}

namespace {

template <typename T, typename Bits>
std::vector<uint8_t> pack_le(const std::vector<T>& values) {
    static_assert(sizeof(T) == sizeof(Bits));
    std::vector<uint8_t> bytes(values.size() * sizeof(T));
    uint8_t* p = bytes.data();
    for (T v : values) {
        Bits bits;
        std::memcpy(&bits, &v, sizeof(T));
        for (size_t i = 0; i < sizeof(T); ++i) *p++ = static_cast<uint8_t>(bits >> (8 * i));
    }
    return bytes;
}

template <typename T, typename Bits>
std::vector<T> unpack_le(const std::vector<uint8_t>& bytes, const fs::path& path) {
    static_assert(sizeof(T) == sizeof(Bits));
    if (bytes.size() % sizeof(T) != 0)
        throw DataError(strf("%s: size %zu is not a multiple of %zu", path.string().c_str(), bytes.size(),
                             sizeof(T)));
    std::vector<T> values(bytes.size() / sizeof(T));
    const uint8_t* p = bytes.data();
    for (T& v : values) {
        Bits bits = 0;
        for (size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<Bits>(*p++) << (8 * i);
        std::memcpy(&v, &bits, sizeof(T));
    }
    return values;
}

}  // namespace

void write_f64_le(const fs::path& path, const std::vector<double>& values) {
    auto bytes = pack_le<double, uint64_t>(values);
    write_bytes(path, bytes.data(), bytes.size());
}

std::vector<double> read_f64_le(const fs::path& path) {
    return unpack_le<double, uint64_t>(read_bytes(path), path);
}

void write_f32_le(const fs::path& path, const std::vector<float>& values) {
    auto bytes = pack_le<float, uint32_t>(values);
    write_bytes(path, bytes.data(), bytes.size());
}

std::vector<float> read_f32_le(const fs::path& path) {
    return unpack_le<float, uint32_t>(read_bytes(path), path);
}

nlohmann::json read_json(const fs::path& path) {
    const std::string text = read_text(path);
    try {
        return nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(strf("%s: %s", path.string().c_str(), e.what()));
    }
}

void write_json(const fs::path& path, const nlohmann::json& j, int indent) {
    write_text(path, j.dump(indent) + "\n");
}

std::string read_text(const fs::path& path) {
    auto bytes = read_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_text(const fs::path& path, const std::string& text) {
    write_bytes(path, text.data(), text.size());
}

}  // namespace uspose::io
