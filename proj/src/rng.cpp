#include "ergolab/rng.hpp"

#include <cmath>
#include <numbers>

#include "ergolab/common.hpp"

namespace ergolab {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t stream_key(std::uint64_t seed, std::string_view stream) {
    return splitmix64(seed ^ splitmix64(fnv1a(std::string(stream))));
}

PathRng::PathRng(std::uint64_t stream_key, std::uint64_t path)
    : key_(splitmix64(stream_key ^ splitmix64(path * 0x9e3779b97f4a7c15ull + 0x632be59bd9b4e019ull))) {}

double PathRng::uniform_at(std::uint64_t counter) const {
    const std::uint64_t r = splitmix64(key_ + counter * 0xd1342543de82ef95ull);
    // Top 53 bits, shifted into (0,1): never returns 0, so log() is safe.
    return static_cast<double>(r >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

double PathRng::normal_raw(std::uint64_t counter_base) const {
    const double u1 = uniform_at(counter_base);
    const double u2 = uniform_at(counter_base + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double PathRng::normal_at(std::uint64_t step, std::uint64_t dim, std::uint64_t dim_count) const {
    return normal_raw(2ull * (step * dim_count + dim));
}

double PathRng::normal_init(std::uint64_t dim) const {
    return normal_raw((1ull << 62) + 2ull * dim);
}

double SeqRng::uniform() { return rng_.uniform_at(ctr_++); }

double SeqRng::uniform(double a, double b) { return a + (b - a) * uniform(); }

double SeqRng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace ergolab
