#pragma once

#include <cmath>
#include <cstdint>

namespace avt {

// Deterministic random source. All draws are derived from raw engine words by
// fixed arithmetic, so a given seed produces the same stream on every platform
// and standard-library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // splitmix warmup so that small seeds do not start in a low-entropy state
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform in [lo, hi)
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

    // standard normal via Box-Muller (cosine branch only; one draw per call)
    double gaussian() {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53; // (0, 1]
        double u2 = uniform01();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

private:
    std::uint64_t state_;
};

// Combines two seeds into a new one (used to derive per-node / per-head seeds).
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a ^ (b + 0x9E3779B97F4A7C15ull + (a << 6) + (a >> 2));
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace avt
