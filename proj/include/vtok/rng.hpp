#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace vtok {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Deterministic RNG. All distributions are hand-rolled on top of
// mt19937_64 so that streams are reproducible bit-for-bit, independent of
// the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(splitmix64(seed)) {}

    std::uint64_t seed() const { return seed_; }

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive on both ends.
    int uniform_int(int lo, int hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(next_u64() % span);
    }

    // Standard normal via Box-Muller; no cached spare so the stream
    // position is a simple function of the number of calls.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log1p(-u1));
        return r * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // Independent child stream. Derived from the original seed, not the
    // current engine state, so children are stable no matter how much the
    // parent has been consumed.
    Rng child(std::uint64_t salt) const { return Rng(splitmix64(seed_ ^ splitmix64(salt))); }

    template <typename T>
    void shuffle(std::vector<T>& xs) {
        for (std::size_t i = xs.size(); i > 1; --i) {
            const std::size_t j = next_u64() % i;
            std::swap(xs[i - 1], xs[j]);
        }
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

} // namespace vtok
