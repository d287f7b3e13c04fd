#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace resadapt {

/// Counter-based 64-bit generator: draw i is splitmix64's finalizer applied to
/// seed + (i + 1) * 0x9E3779B97F4A7C15. Identical streams in every language;
/// with seed 0 the first draw is 0xE220A8397B1DCDAF.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed = 0, std::uint64_t counter = 0)
        : seed_(seed), counter_(counter) {}

    static std::uint64_t mix(std::uint64_t z);
    static std::uint64_t at(std::uint64_t seed, std::uint64_t counter);

    std::uint64_t next_u64();
    /// Uniform in [0, 1) with 53 random bits.
    double next_uniform();
    /// Standard normal via Box-Muller; consumes exactly two draws per call.
    double next_gaussian();
    /// Uniform integer in [0, bound) by rejection; bound > 0.
    std::uint64_t next_below(std::uint64_t bound);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t counter() const { return counter_; }

    /// Deterministic child stream, e.g. one per epoch or per layer.
    CounterRng fork(std::uint64_t stream) const;

private:
    std::uint64_t seed_;
    std::uint64_t counter_;
};

/// Fisher-Yates permutation of [0, n) driven by `rng`.
std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng);

}  // namespace resadapt
