#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace mialab {

// splitmix64 finalizer; used both as a generator step and to whiten seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// All randomness in the project flows from one master seed through these
// derivations: a fixed role tag (and optionally an index) yields an
// independent stream, so every component is reproducible in isolation.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view role) {
    std::uint64_t s = master ^ fnv1a64(role);
    return splitmix64(s);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::string_view role, std::uint64_t index) {
    std::uint64_t s = master ^ fnv1a64(role);
    s = splitmix64(s);
    s ^= 0x5851f42d4c957f2dULL * (index + 1);
    return splitmix64(s);
}

// Deterministic generator with hand-rolled distributions so that sequences
// do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        splitmix64(state_);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n)
    std::size_t index(std::size_t n) {
        // rejection sampling to avoid modulo bias
        std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return static_cast<std::size_t>(v % n);
    }

    bool coin() { return (next_u64() & 1u) != 0; }

    // standard normal via Box-Muller (pairwise, cached)
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.empty()) return;
        for (std::size_t i = v.size() - 1; i > 0; --i) {
            std::size_t j = index(i + 1);
            std::swap(v[i], v[j]);
        }
    }

    // k distinct values from [0, n), returned sorted ascending
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        shuffle(all);
        all.resize(k);
        std::sort(all.begin(), all.end());
        return all;
    }

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mialab
