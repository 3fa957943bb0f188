#pragma once

// Portable seeded randomness. The standard <random> distributions are not
// specified bit-for-bit across library implementations, so draws go through
// xoshiro256** with explicit uniform/normal transforms instead.

#include <array>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <utility>

namespace sru2b {

inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed) {
        std::uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    // Independent stream for a (seed, key...) tuple, e.g. (seed, user, session).
    static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> keys) {
        std::uint64_t h = seed;
        std::uint64_t mix = splitmix64(h);
        for (std::uint64_t k : keys) {
            std::uint64_t t = mix ^ (k + 0x632BE59BD9B4E019ULL);
            mix = splitmix64(t);
        }
        return Rng(mix);
    }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()() { return next(); }

    std::uint64_t next() {
        const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
        const std::uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1)
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n), unbiased.
    std::uint64_t below(std::uint64_t n) {
        const std::uint64_t limit = max() - max() % n;
        std::uint64_t x;
        do {
            x = next();
        } while (x >= limit);
        return x % n;
    }

    // Box-Muller; one draw per call, the second variate is discarded so the
    // stream position depends only on the number of calls.
    double normal(double mean = 0.0, double stddev = 1.0) {
        const double u1 = 1.0 - uniform();  // (0, 1]
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

    std::array<std::uint64_t, 4> s_{};
};

// Fisher-Yates; std::shuffle's draw pattern is implementation-defined.
template <class Seq>
void shuffle(Seq& seq, Rng& rng) {
    using std::swap;
    for (std::size_t i = seq.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i));
        swap(seq[i - 1], seq[j]);
    }
}

}  // namespace sru2b
