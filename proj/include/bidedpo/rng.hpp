// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "bidedpo/common.hpp"

namespace bidedpo {

// Counter-based splittable RNG. The state is a pure function of
// (seed, stream_id, counter), so identical (seed, stream_id) pairs produce
// identical sequences on any platform and independent streams can be handed
// to parallel workers without coordination.
class RngStream {
public:
    RngStream() : RngStream(0, 0) {}
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : seed_(seed), stream_id_(stream_id) {
        base_ = mix_(seed ^ 0x9e3779b97f4a7c15ULL);
        base_ = mix_(base_ ^ mix_(stream_id ^ 0xbf58476d1ce4e5b9ULL));
        counter_ = 0;
        has_cached_normal_ = false;
        cached_normal_ = 0.0;
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    // Child stream addressed by a label; independent of draws made so far.
    RngStream derive(std::string_view label) const {
        return RngStream(seed_, mix_(stream_id_ ^ fnv1a64(label)));
    }
    RngStream derive(std::string_view label, std::uint64_t index) const {
        return RngStream(seed_, mix_(mix_(stream_id_ ^ fnv1a64(label)) ^ (index + 1)));
    }

    std::uint64_t next_u64() {
        std::uint64_t z = base_ + (++counter_) * 0x9e3779b97f4a7c15ULL;
        return mix_(z);
    }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n). Rejection-free modulo bias is negligible for the
    // small ranges used here, but use Lemire-style multiply-shift anyway.
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) return 0;
        __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
        return static_cast<std::uint64_t>(m >> 64);
    }

    // Standard normal via Box-Muller with a cached spare.
    double normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = uniform();
        double u2 = uniform();
        // Avoid log(0).
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        cached_normal_ = r * std::sin(theta);
        has_cached_normal_ = true;
        return r * std::cos(theta);
    }

    bool bernoulli(double p) { return uniform() < p; }

private:
    static std::uint64_t mix_(std::uint64_t z) {
        // splitmix64 finalizer
        z += 0x9e3779b97f4a7c15ULL;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t base_;
    std::uint64_t counter_;
    bool has_cached_normal_;
    double cached_normal_;
};

}  // namespace bidedpo
