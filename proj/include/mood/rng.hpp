#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mood {

// FNV-1a, used to fold string labels into seeds.
inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a base seed, a label and an index.
inline uint64_t derive_seed(uint64_t base, std::string_view label, uint64_t index = 0) {
    return mix64(base + 0x9e3779b97f4a7c15ull * (fnv1a(label) ^ mix64(index)));
}

// SplitMix64 generator. All randomness in the pipeline flows through this
// class so that runs are reproducible bit-for-bit across platforms; the
// standard-library distributions are implementation-defined and are not used.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        return mix64(z);
    }

    // Uniform in [0,1) with 53 random bits.
    double uniform() { return double(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Inclusive integer range, rejection sampled so every value is equally likely.
    int uniform_int(int lo, int hi) {
        uint64_t span = uint64_t(int64_t(hi) - int64_t(lo)) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t r;
        do {
            r = next();
        } while (r >= limit);
        return lo + int(r % span);
    }

    // Box-Muller with a cached spare.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double mag = std::sqrt(-2.0 * std::log(u1));
        spare_ = mag * std::sin(2.0 * M_PI * u2);
        has_spare_ = true;
        return mag * std::cos(2.0 * M_PI * u2);
    }

    // Fisher-Yates.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = size_t(uniform_int(0, int(i - 1)));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace mood
