#include "uspose/rng.hpp"

#include <cmath>

#include "uspose/error.hpp"

namespace uspose {

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    if (lo > hi) throw UsageError(strf("uniform_int: empty range [%lld, %lld]", (long long)lo, (long long)hi));
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    if (span == 0) return lo + static_cast<int64_t>(next_u64());  // full 64-bit range
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t draw;
    do {
        draw = next_u64();
    } while (draw >= limit);
    return lo + static_cast<int64_t>(draw % span);
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_normal_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_normal_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

uint64_t derive_seed(uint64_t base, std::initializer_list<std::string_view> parts) {
    uint64_t h = Rng::mix(0x9e3779b97f4a7c15ull, base);
    for (const auto& p : parts) h = Rng::mix(h, Rng::hash_str(p));
    return h;
}

}  // namespace uspose
