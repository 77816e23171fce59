// Copyright 2026 The npbir Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Little-endian primitives shared by the checkpoint formats.

#include "npbir/common.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <vector>

namespace npbir::io {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

inline void write_magic(std::ostream& os, const char (&magic)[5]) { os.write(magic, 4); }

inline void expect_magic(std::istream& is, const char (&magic)[5]) {
    char buf[4] = {};
    is.read(buf, 4);
    if (!is || std::memcmp(buf, magic, 4) != 0)
        throw LoadError(std::string("bad magic, expected ") + magic);
}

template <class T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw LoadError("unexpected end of file");
    return v;
}

inline void write_u32(std::ostream& os, uint32_t v) { write_pod(os, v); }
inline void write_u64(std::ostream& os, uint64_t v) { write_pod(os, v); }
inline void write_f64(std::ostream& os, double v) { write_pod(os, v); }
inline uint32_t read_u32(std::istream& is) { return read_pod<uint32_t>(is); }
inline uint64_t read_u64(std::istream& is) { return read_pod<uint64_t>(is); }
inline double read_f64(std::istream& is) { return read_pod<double>(is); }

inline void write_f32_array(std::ostream& os, std::span<const double> values) {
    std::vector<float> tmp(values.begin(), values.end());
    os.write(reinterpret_cast<const char*>(tmp.data()),
             static_cast<std::streamsize>(tmp.size() * sizeof(float)));
}
inline void read_f32_array(std::istream& is, std::span<double> out) {
    std::vector<float> tmp(out.size());
    is.read(reinterpret_cast<char*>(tmp.data()), static_cast<std::streamsize>(tmp.size() * sizeof(float)));
    if (!is) throw LoadError("unexpected end of file in f32 block");
    std::copy(tmp.begin(), tmp.end(), out.begin());
}
inline void write_f64_array(std::ostream& os, std::span<const double> values) {
    os.write(reinterpret_cast<const char*>(values.data()),
             static_cast<std::streamsize>(values.size() * sizeof(double)));
}
inline void read_f64_array(std::istream& is, std::span<double> out) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size() * sizeof(double)));
    if (!is) throw LoadError("unexpected end of file in f64 block");
}

}  // namespace npbir::io
