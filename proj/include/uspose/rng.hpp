#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace uspose {

// Counter-based generator: every draw is a hash of (key, counter). Streams are
// derived by name so independent consumers (init, shuffle, dropout, trials)
// never share state, and replaying a stream from the same seed is exact.
class Rng {
public:
    explicit Rng(uint64_t seed) : key_(mix(golden_, seed)) {}
    Rng(uint64_t seed, std::string_view stream) : key_(mix(mix(golden_, seed), hash_str(stream))) {}

    uint64_t next_u64() { return mix(key_, counter_++); }

    // [0, 1) with 53 bits of mantissa.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range; rejection sampling keeps the draw unbiased.
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Standard normal via Box-Muller; the spare value is cached.
    double normal();

    Rng fork(std::string_view name) const { return Rng(key_, tag{}, hash_str(name)); }
    Rng fork(uint64_t n) const { return Rng(key_, tag{}, mix(0x9e3779b97f4a7c15ull, n)); }

    static uint64_t hash_str(std::string_view s) {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
        return h;
    }

    static uint64_t mix(uint64_t a, uint64_t b) {
        uint64_t z = a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2));
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

private:
    struct tag {};
    Rng(uint64_t parent_key, tag, uint64_t salt) : key_(mix(parent_key, salt)) {}

    static constexpr uint64_t golden_ = 0x9e3779b97f4a7c15ull;
    uint64_t key_;
    uint64_t counter_ = 0;
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

// One derivation rule for all grid/trial seeds: hashing names (not positions)
// keeps existing cells stable when new dimensions are added.
uint64_t derive_seed(uint64_t base, std::initializer_list<std::string_view> parts);

}  // namespace uspose
