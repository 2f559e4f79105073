#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace passorder {

/// SplitMix64 finalizer; used to derive independent stream seeds from (seed, tags...).
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) { return mix64(mix64(seed) ^ a); }
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    return mix64(derive_seed(seed, a) ^ mix64(b + 0x632BE59BD9B4E019ULL));
}

/// Seeded random source. The standard distributions are implementation defined, so the
/// draws used by the library are built directly on the engine bits to stay portable.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = engine_();
        } while (x >= limit);
        return x % n;
    }

    double exponential(double rate) { return -std::log1p(-uniform()) / rate; }

    bool bernoulli(double p) { return uniform() < p; }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

/// Fisher-Yates with the portable draw.
template <class Range>
void shuffle(Range& r, Rng& rng) {
    using std::swap;
    for (std::size_t i = r.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(rng.below(i));
        swap(r[i - 1], r[j]);
    }
}

}  // namespace passorder
