#pragma once

#include <cmath>
#include <cstdint>

namespace dropreg {

// Counter-style splittable generator. Every consumer derives a fresh stream
// from a key tuple (seed, epoch, layer, index, ...), so draw order never
// depends on execution order. Core mix is splitmix64.
class KeyedRng {
  public:
    explicit KeyedRng(std::uint64_t seed) : state_(mix(seed ^ kGolden)) {}

    KeyedRng(std::uint64_t seed, std::uint64_t a) : KeyedRng(combine(seed, a)) {}
    KeyedRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b)
        : KeyedRng(combine(combine(seed, a), b)) {}
    KeyedRng(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c)
        : KeyedRng(combine(combine(combine(seed, a), b), c)) {}

    std::uint64_t next_u64() {
        state_ += kGolden;
        return mix(state_);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t uniform_int(std::uint64_t n) {
        // Rejection sampling keeps the draw unbiased.
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x = next_u64();
        while (x >= limit) x = next_u64();
        return x % n;
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Standard normal via Box-Muller; the spare draw is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = radius * std::sin(theta);
        has_spare_ = true;
        return radius * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    static std::uint64_t combine(std::uint64_t key, std::uint64_t field) {
        return mix(key ^ (field + kGolden + (key << 6) + (key >> 2)));
    }

  private:
    static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace dropreg
