#pragma once
// Seeded RNG with named substreams. All randomness in the project flows
// through Rng instances derived from one master seed, so any artifact is
// reproducible from (config, seed) alone.
//
// Distributions are hand-rolled on top of mt19937_64 because the standard
// library's distribution algorithms are implementation-defined; frozen test
// values must not depend on the libstdc++ version.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace alab {

// FNV-1a, also used for layout hashes and file checksums.
inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// splitmix64 finalizer; mixes a seed with a stream label.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t seed, std::string_view stream) {
    return mix_seed(seed, fnv1a(stream));
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    uint64_t seed() const { return seed_; }

    // Named child stream; independent of draws already made on this one.
    Rng child(std::string_view stream) const { return Rng(mix_seed(seed_, fnv1a(stream))); }
    Rng child(uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

    uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), unbiased via rejection.
    uint64_t uniform_u64(uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_u64: n must be positive");
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    int uniform_int(int n) { return static_cast<int>(uniform_u64(static_cast<uint64_t>(n))); }

    // Standard normal via the polar (Marsaglia) method, no cached spare.
    double normal() {
        double u, v, s;
        do {
            u = 2.0 * uniform() - 1.0;
            v = 2.0 * uniform() - 1.0;
            s = u * u + v * v;
        } while (s >= 1.0 || s == 0.0);
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }

    double normal(double mean, double std) { return mean + std * normal(); }

    // k distinct values from [0, n), uniform over subsets (partial Fisher-Yates).
    std::vector<int> sample_without_replacement(int n, int k) {
        if (k > n) throw std::invalid_argument("sample_without_replacement: k > n");
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        for (int i = 0; i < k; ++i) {
            int j = i + uniform_int(n - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(k);
        return pool;
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(v[i], v[j]);
        }
    }

private:
    uint64_t seed_;
    std::mt19937_64 engine_;
};

}  // namespace alab
