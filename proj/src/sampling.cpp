// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#include "npbir/sampling.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace npbir {

Vec3 sample_uniform_sphere(const Vec2& u) {
    const double z = 1.0 - 2.0 * u[0];
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * kPi * u[1];
    return {r * std::cos(phi), r * std::sin(phi), z};
}

Vec3 sample_cosine_hemisphere(const Vec2& u) {
    const double r = std::sqrt(u[0]);
    const double phi = 2.0 * kPi * u[1];
    return {r * std::cos(phi), r * std::sin(phi), std::sqrt(std::max(0.0, 1.0 - u[0]))};
}

Vec3 sample_uniform_hemisphere(const Vec2& u) {
    const double z = u[0];
    const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
    const double phi = 2.0 * kPi * u[1];
    return {r * std::cos(phi), r * std::sin(phi), z};
}

Distribution1D::Distribution1D(std::vector<double> weights) : pdf_(std::move(weights)) {
    cdf_.resize(pdf_.size() + 1);
    cdf_[0] = 0.0;
    for (std::size_t i = 0; i < pdf_.size(); ++i) cdf_[i + 1] = cdf_[i] + std::max(0.0, pdf_[i]);
    total_ = cdf_.back();
    if (total_ <= 0.0) {
        // Degenerate: fall back to uniform.
        for (std::size_t i = 0; i < pdf_.size(); ++i) cdf_[i + 1] = static_cast<double>(i + 1);
        total_ = static_cast<double>(pdf_.size());
        std::fill(pdf_.begin(), pdf_.end(), 1.0);
    }
    for (auto& p : pdf_) p = std::max(0.0, p) / total_;
    for (auto& c : cdf_) c /= total_;
}

std::size_t Distribution1D::sample(double u, double* pmf) const {
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, (it - cdf_.begin()) - 1));
    i = std::min(i, pdf_.size() - 1);
    // Skip zero-probability bins that share a CDF value.
    while (pdf_[i] == 0.0 && i + 1 < pdf_.size()) ++i;
    if (pmf) *pmf = pdf_[i];
    return i;
}

int worker_count() {
    if (const char* env = std::getenv("NPBIR_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_chunks(std::size_t count, int chunks,
                     const std::function<void(int, std::size_t, std::size_t)>& fn) {
    chunks = std::max(1, chunks);
    auto bounds = [&](int c) {
        return count * static_cast<std::size_t>(c) / static_cast<std::size_t>(chunks);
    };
    const int threads = std::min(chunks, worker_count());
    if (threads <= 1 || count < 2) {
        for (int c = 0; c < chunks; ++c) fn(c, bounds(c), bounds(c + 1));
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            try {
                for (int c = next++; c < chunks; c = next++) fn(c, bounds(c), bounds(c + 1));
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
                next = chunks;
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

double lower_median(std::vector<double>& v) {
    if (v.empty()) throw ArgumentError("lower_median: empty input");
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace npbir
