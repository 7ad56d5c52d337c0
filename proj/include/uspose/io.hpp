#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "json.hpp"

namespace uspose::io {

// Raw file helpers. All throw DataError with the offending path.
std::vector<uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, const void* data, size_t n);

// Flat little-endian numeric arrays, byte-order independent of the host.
void write_f64_le(const std::filesystem::path& path, const std::vector<double>& values);
std::vector<double> read_f64_le(const std::filesystem::path& path);
void write_f32_le(const std::filesystem::path& path, const std::vector<float>& values);
std::vector<float> read_f32_le(const std::filesystem::path& path);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j, int indent = 2);

// Whole-file text helpers.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace uspose::io
