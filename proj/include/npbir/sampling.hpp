// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "npbir/common.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace npbir {

// Counter-seeded PCG32. Every pixel/sample gets its own stream derived from a
// hash of (seed, indices) so renders are reproducible regardless of how work is
// split across threads.
class Pcg32 {
public:
    Pcg32() { seed(0x853c49e6748fea9bULL, 0xda3e39cb94b95bdbULL); }
    explicit Pcg32(uint64_t s, uint64_t stream = 1) { seed(s, stream); }

    void seed(uint64_t init_state, uint64_t stream) {
        state_ = 0;
        inc_ = (stream << 1u) | 1u;
        next_u32();
        state_ += init_state;
        next_u32();
    }

    uint32_t next_u32() {
        const uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        const auto xorshifted = static_cast<uint32_t>(((old >> 18u) ^ old) >> 27u);
        const auto rot = static_cast<uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((-rot) & 31));
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        const uint64_t hi = next_u32() >> 5;
        const uint64_t lo = next_u32() >> 6;
        return static_cast<double>(hi * 67108864ULL + lo) * (1.0 / 9007199254740992.0);
    }
    Vec2 uniform2() {
        const double a = uniform();
        return {a, uniform()};
    }

private:
    uint64_t state_ = 0;
    uint64_t inc_ = 0;
};

// SplitMix64 finalizer; used to mix seeds with pixel/sample counters.
inline uint64_t mix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
inline uint64_t hash_combine(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }

inline Pcg32 make_rng(uint64_t seed, uint64_t a, uint64_t b = 0, uint64_t c = 0) {
    const uint64_t h = hash_combine(hash_combine(hash_combine(seed, a), b), c);
    return Pcg32(h, mix64(h) | 1u);
}

Vec3 sample_uniform_sphere(const Vec2& u);
Vec3 sample_cosine_hemisphere(const Vec2& u);  // local frame, +z up
Vec3 sample_uniform_hemisphere(const Vec2& u); // local frame, +z up

// Discrete distribution over non-negative weights (inverse CDF sampling).
class Distribution1D {
public:
    Distribution1D() = default;
    explicit Distribution1D(std::vector<double> weights);

    std::size_t size() const { return pdf_.size(); }
    double total() const { return total_; }
    // Returns index; `pmf` receives the probability of that index.
    std::size_t sample(double u, double* pmf = nullptr) const;
    double pmf(std::size_t i) const { return pdf_[i]; }
    // Cumulative probability below bin i.
    double cdf(std::size_t i) const { return cdf_[i]; }

private:
    std::vector<double> pdf_;
    std::vector<double> cdf_;
    double total_ = 0.0;
};

// Number of worker threads: NPBIR_THREADS if set, else hardware concurrency.
int worker_count();

// Runs fn(chunk_index, begin, end) over `count` items split into `chunks`
// contiguous chunks, on up to `worker_count()` threads. Chunk boundaries depend
// only on (count, chunks), so per-chunk reductions merged in chunk order are
// deterministic. The first exception thrown by `fn` is rethrown.
void parallel_chunks(std::size_t count, int chunks,
                     const std::function<void(int, std::size_t, std::size_t)>& fn);

// Lower median (element at index (n-1)/2 after sorting). Reorders `v`.
double lower_median(std::vector<double>& v);

}  // namespace npbir
