#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace ppx {

// Seeded random source used everywhere corpora or training runs must be
// reproducible. The engine is std::mt19937_64, whose output sequence is
// pinned by the C++ standard, and all value mappings (uniform, normal,
// shuffle) are implemented here explicitly instead of going through
// std::*_distribution, which is not portable across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. Consumes two draws per value; no
    // second-value caching so the stream position is predictable.
    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log1p(-u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double sigma) { return mean + sigma * normal(); }

    // Uniform integer in [0, n). Modulo bias is negligible for the n used
    // here (n << 2^64) and keeps the mapping trivially portable.
    std::size_t index(std::size_t n) { return std::size_t(gen_() % n); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::swap(v[i - 1], v[index(i)]);
        }
    }

private:
    std::mt19937_64 gen_;
};

} // namespace ppx
