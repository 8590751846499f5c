#pragma once

#include <cmath>
#include <cstdint>
#include <cstddef>
#include <string>
#include <vector>

namespace relemb::nn {

// Deterministic random source. The mt19937_64 engine is specified bit-for-bit
// by the standard, but the distribution adaptors are not, so the transforms
// (uniform doubles, Box-Muller normals, bounded ints, Fisher-Yates) are done
// by hand here. Identical seeds give identical streams on every platform.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix(seed)) {}

    std::uint64_t next_u64() {
        // xorshift* step over a splitmix-expanded state; small, fast, and
        // well distributed for the scales used here.
        std::uint64_t x = state_;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        state_ = x;
        return x * 0x2545F4914F6CDD1DULL;
    }

    // Uniform double in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller. No spare caching: two raw draws per
    // sample keeps the stream position a pure function of the call count.
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double z = r * std::cos(6.283185307179586476925286766559 * u2);
        return mean + stddev * z;
    }

    // Uniform index in [0, n). Rejection sampling, bias-free.
    std::size_t index(std::size_t n) {
        if (n <= 1) return 0;
        std::uint64_t bound = n;
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
        std::uint64_t r;
        do {
            r = next_u64();
        } while (r >= limit);
        return static_cast<std::size_t>(r % bound);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            using std::swap;
            swap(v[i - 1], v[j]);
        }
    }

    // Derives an independent stream, e.g. per relation id or per worker.
    Rng fork(std::uint64_t stream) const {
        return Rng(splitmix(state_ ^ splitmix(stream)));
    }

    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9E3779B97F4A7C15ULL;
        x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
        x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
        return x ^ (x >> 31);
    }

    // Stable 64-bit hash for strings (FNV-1a), used to derive per-key streams.
    static std::uint64_t hash_str(const std::string& s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        return h;
    }

private:
    std::uint64_t state_;
};

} // namespace relemb::nn
