#pragma once

#include <cmath>
#include <cstdint>

namespace memtrain {

// Deterministic random streams.
//
// Every stochastic component (device init, programming error, read noise,
// ADC noise, shuffling, transfer noise) draws from its own stream, derived
// from the run seed by key mixing rather than by sequential consumption.
// Streams are keyed by purpose and by sample/layer/trial indices, so the
// draw sequence of one component never depends on how much randomness
// another component consumed, and batch elements can be processed in any
// order (or in parallel) with identical results.

namespace detail {
inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ull;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}
inline uint64_t rotl(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
} // namespace detail

// xoshiro256++ generator.
class Rng {
public:
    explicit Rng(uint64_t seed) {
        uint64_t x = seed;
        for (auto& si : s_) si = detail::splitmix64(x);
    }
    Rng(uint64_t k0, uint64_t k1) {
        uint64_t x = k0;
        s_[0] = detail::splitmix64(x);
        s_[1] = detail::splitmix64(x);
        x ^= k1 * 0x9e3779b97f4a7c15ull;
        s_[2] = detail::splitmix64(x);
        s_[3] = detail::splitmix64(x);
    }

    uint64_t next_u64() {
        const uint64_t result = detail::rotl(s_[0] + s_[3], 23) + s_[0];
        const uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = detail::rotl(s_[3], 45);
        return result;
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; consumes exactly two uniforms.
    double normal() {
        const double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Integer in [0, n).
    uint64_t below(uint64_t n) { return next_u64() % n; }

private:
    uint64_t s_[4];
};

// Hierarchical stream key. sub() derives an independent child key; rng()
// instantiates a generator. Keys are value types and cheap to copy.
struct StreamKey {
    uint64_t a = 0;
    uint64_t b = 0;

    StreamKey sub(uint64_t tag) const {
        uint64_t x = a ^ (tag * 0xd1342543de82ef95ull);
        uint64_t na = detail::splitmix64(x);
        x = b + tag + 0x2545f4914f6cdd1dull;
        uint64_t nb = detail::splitmix64(x);
        return {na, nb};
    }
    StreamKey sub(uint64_t t0, uint64_t t1) const { return sub(t0).sub(t1); }
    StreamKey sub(uint64_t t0, uint64_t t1, uint64_t t2) const { return sub(t0).sub(t1).sub(t2); }

    Rng rng() const { return Rng(a, b); }
};

// Stream purposes hung off the run seed. Fixed tags keep noise sources
// independent: disabling one never perturbs the draws of another.
namespace streams {
constexpr uint64_t kInit = 1;
constexpr uint64_t kShuffle = 2;
constexpr uint64_t kReadNoise = 3;
constexpr uint64_t kProgNoise = 4;
constexpr uint64_t kAdcNoise = 5;
constexpr uint64_t kTransfer = 6;
constexpr uint64_t kEval = 7;
constexpr uint64_t kWeightInit = 8;
} // namespace streams

inline StreamKey root_key(uint64_t seed) {
    uint64_t x = seed;
    uint64_t a = detail::splitmix64(x);
    uint64_t b = detail::splitmix64(x);
    return {a, b};
}

} // namespace memtrain
