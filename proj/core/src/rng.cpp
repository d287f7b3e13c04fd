#include "resadapt/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace resadapt {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t CounterRng::mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t CounterRng::at(std::uint64_t seed, std::uint64_t counter) {
    return mix(seed + (counter + 1) * kGolden);
}

std::uint64_t CounterRng::next_u64() { return at(seed_, counter_++); }

double CounterRng::next_uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::next_gaussian() {
    // 1 - u keeps the log argument in (0, 1].
    const double u1 = 1.0 - next_uniform();
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t CounterRng::next_below(std::uint64_t bound) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
    for (;;) {
        const std::uint64_t x = next_u64();
        if (x < limit) {
            return x % bound;
        }
    }
}

CounterRng CounterRng::fork(std::uint64_t stream) const { return CounterRng(mix(seed_ ^ mix(stream + kGolden))); }

std::vector<std::size_t> shuffled_indices(std::size_t n, CounterRng& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.next_below(i);
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

}  // namespace resadapt
