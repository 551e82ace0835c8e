#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>

namespace oryx {

// Seeded generator with hand-rolled transforms so that a fixed seed produces
// the same bit pattern on every platform (std::normal_distribution does not
// guarantee that).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [lo, hi] inclusive
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(uniform() * static_cast<double>(hi - lo + 1));
    }

    // Box-Muller; cosine branch only, one normal per pair of uniforms.
    double normal() {
        double u1 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    }

    double normal(double stddev) { return stddev * normal(); }

    // Rejection-sampled normal restricted to |z| <= cut standard deviations.
    double truncated_normal(double stddev, double cut = 2.0) {
        for (;;) {
            const double z = normal();
            if (std::abs(z) <= cut) return stddev * z;
        }
    }

private:
    std::mt19937_64 gen_;
};

template <typename T>
void fill_normal(std::span<T> out, Rng& rng, double stddev) {
    for (auto& x : out) x = static_cast<T>(rng.normal(stddev));
}

template <typename T>
void fill_truncated_normal(std::span<T> out, Rng& rng, double stddev, double cut = 2.0) {
    for (auto& x : out) x = static_cast<T>(rng.truncated_normal(stddev, cut));
}

} // namespace oryx
