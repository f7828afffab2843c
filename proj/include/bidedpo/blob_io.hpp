// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "bidedpo/common.hpp"

namespace bidedpo {

static_assert(std::endian::native == std::endian::little,
              "blob format is little-endian float64; big-endian hosts unsupported");

inline void write_f64_blob(const std::filesystem::path& file, const double* data,
                           std::size_t count) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw MissingFileError("cannot open for write: " + file.string());
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
    if (!out) throw std::runtime_error("short write: " + file.string());
}

inline std::vector<double> read_f64_blob(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw MissingFileError("cannot open: " + file.string());
    const auto bytes = static_cast<std::size_t>(in.tellg());
    if (bytes % 8 != 0) throw std::runtime_error("blob size not a multiple of 8: " + file.string());
    std::vector<double> data(bytes / 8);
    in.seekg(0);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!in) throw std::runtime_error("short read: " + file.string());
    return data;
}

inline std::uint64_t blob_hash(const double* data, std::size_t count,
                               std::uint64_t seed = 1469598103934665603ULL) {
    return fnv1a64(data, count * 8, seed);
}

}  // namespace bidedpo
