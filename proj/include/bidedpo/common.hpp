// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace bidedpo {

inline constexpr std::string_view kCodeVersion = "0.1.0";

// ----------------------------- errors -----------------------------
// Contract violations use std::invalid_argument directly; the types below
// carry the distinct failure modes that map onto CLI exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct MissingFileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BudgetExhaustedError : std::runtime_error {
    BudgetExhaustedError(const std::string& msg, std::size_t realized)
        : std::runtime_error(msg), realized_count(realized) {}
    std::size_t realized_count;
};
struct NumericError : std::runtime_error {
    NumericError(const std::string& msg, long step = -1)
        : std::runtime_error(msg), step_index(step) {}
    long step_index;
};
// Raised when condition extraction yields an empty or full mask.
struct DegenerateCondition : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------- logging -----------------------------
enum class LogLevel { debug = 0, info = 1, warn = 2 };

inline LogLevel& log_threshold() {
    static LogLevel level = LogLevel::info;
    return level;
}

template <class... Args>
inline void log_at(LogLevel level, const char* tag, const char* fmt, Args... args) {
    if (level < log_threshold()) return;
    std::fprintf(stderr, "[%s] ", tag);
    std::fprintf(stderr, fmt, args...);
    std::fprintf(stderr, "\n");
}

template <class... Args>
inline void log_info(const char* fmt, Args... args) {
    log_at(LogLevel::info, "info", fmt, args...);
}
template <class... Args>
inline void log_warn(const char* fmt, Args... args) {
    log_at(LogLevel::warn, "warn", fmt, args...);
}

// ----------------------------- hashing -----------------------------
// FNV-1a 64-bit. Used for config/manifest/checkpoint fingerprints; these are
// determinism checks, not security boundaries.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t seed = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 1469598103934665603ULL) {
    return fnv1a64(s.data(), s.size(), seed);
}

inline std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

// ----------------------------- parallel_for -----------------------------
// Static block partition over [0, n). Deterministic as long as each index
// writes only to its own slot and draws from its own RNG stream.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         unsigned n_threads = 0) {
    if (n == 0) return;
    unsigned hw = n_threads ? n_threads : std::thread::hardware_concurrency();
    if (hw <= 1 || n == 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    hw = static_cast<unsigned>(std::min<std::size_t>(hw, n));
    std::vector<std::thread> workers;
    workers.reserve(hw);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (unsigned w = 0; w < hw; ++w) {
        workers.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += hw) body(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& t : workers) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace bidedpo
