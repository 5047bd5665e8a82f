#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace stgcrn {

// Stable 64-bit string hash (FNV-1a). std::hash is implementation-defined,
// which would make seed derivation non-portable across rebuilds.
inline uint64_t fnv1a(const std::string& s) {
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// splitmix64 step; used to decorrelate derived seeds.
inline uint64_t mix_seed(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t a, uint64_t b) { return mix_seed(a ^ mix_seed(b)); }

inline uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
    return mix_seed(mix_seed(a, b), c);
}

// Seeded RNG wrapper. All randomness in the library flows through this so a
// run is reproducible from its seed.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed), seed_of_(seed) {}

    // Derived stream, decorrelated by tag.
    Rng child(const std::string& tag) const {
        return Rng(mix_seed(seed_of_, fnv1a(tag)));
    }

    double uniform(double lo, double hi) {
        std::uniform_real_distribution<double> d(lo, hi);
        return d(engine_);
    }

    double normal(double mean, double stddev) {
        std::normal_distribution<double> d(mean, stddev);
        return d(engine_);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(engine_);
    }

    std::vector<double> uniform_vec(int64_t n, double lo, double hi) {
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) x = uniform(lo, hi);
        return v;
    }

    std::vector<double> normal_vec(int64_t n, double mean, double stddev) {
        std::vector<double> v(static_cast<size_t>(n));
        for (auto& x : v) x = normal(mean, stddev);
        return v;
    }

    std::vector<int64_t> permutation(int64_t n) {
        std::vector<int64_t> p(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) p[static_cast<size_t>(i)] = i;
        for (int64_t i = n - 1; i > 0; --i) {
            int64_t j = uniform_int(0, i);
            std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
        }
        return p;
    }

    // k distinct indices from [0, n), ascending.
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
        std::vector<int64_t> p = permutation(n);
        p.resize(static_cast<size_t>(std::min(n, k)));
        std::sort(p.begin(), p.end());
        return p;
    }

private:
    std::mt19937_64 engine_;
    uint64_t seed_of_ = 0;
};

}  // namespace stgcrn
