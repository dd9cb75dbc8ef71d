// Counter-based random streams.
//
// Every draw is a pure function of (master seed, stream name, path index,
// step, dimension), so results are independent of evaluation order and
// thread count, unchanged when n_paths grows, and a horizon extension
// reuses earlier increments exactly.
#pragma once

#include <cstdint>
#include <string_view>

namespace ergolab {

std::uint64_t splitmix64(std::uint64_t x);

// Named sub-stream key: mixes the master seed with a stream label so stages
// draw from disjoint streams ("forward", "adjoint", "coupling", ...).
std::uint64_t stream_key(std::uint64_t seed, std::string_view stream);

// Per-path generator. Stateless apart from the derived key: each counter
// value yields one uniform; normals consume two counters (Box-Muller).
class PathRng {
  public:
    PathRng(std::uint64_t stream_key, std::uint64_t path);

    // Uniform in (0,1) at the given counter.
    double uniform_at(std::uint64_t counter) const;
    // Standard normal consuming counters base and base+1.
    double normal_raw(std::uint64_t counter_base) const;
    // Standard normal for (step, dim); dim_count fixes the counter layout.
    double normal_at(std::uint64_t step, std::uint64_t dim, std::uint64_t dim_count) const;
    // Initial-condition draws live in a counter region disjoint from steps.
    double normal_init(std::uint64_t dim) const;

  private:
    std::uint64_t key_;
};

// Sequential convenience wrapper for samplers (assumption checks, probes).
class SeqRng {
  public:
    SeqRng(std::uint64_t seed, std::string_view stream, std::uint64_t path = 0)
        : rng_(stream_key(seed, stream), path) {}

    double uniform();               // (0,1)
    double uniform(double a, double b);
    double normal();

  private:
    PathRng rng_;
    std::uint64_t ctr_ = 0;
};

}  // namespace ergolab
