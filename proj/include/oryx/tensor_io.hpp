#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "oryx/errors.hpp"

namespace oryx {

// Flat binary tensor container. Layout, all little-endian:
//   magic "ORYXTNSR" | version u32 | dtype u8 (0=f32, 1=f64) | ndim u8
//   | dims u32[ndim] | payload row-major

inline constexpr char kTensorMagic[8] = {'O', 'R', 'Y', 'X', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kTensorVersion = 1;

struct TensorFile {
    std::uint32_t version = kTensorVersion;
    std::uint8_t dtype = 0;
    std::vector<std::uint32_t> dims;
    std::vector<float> f32;
    std::vector<double> f64;

    std::size_t element_count() const {
        std::size_t n = 1;
        for (const std::uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
    std::size_t element_size() const { return dtype == 0 ? 4 : 8; }
};

inline TensorFile tensor_from_f32(std::vector<std::uint32_t> dims, std::vector<float> data) {
    TensorFile t;
    t.dtype = 0;
    t.dims = std::move(dims);
    t.f32 = std::move(data);
    if (t.f32.size() != t.element_count()) throw ShapeError("payload does not match dims");
    return t;
}

inline TensorFile tensor_from_f64(std::vector<std::uint32_t> dims, std::vector<double> data) {
    TensorFile t;
    t.dtype = 1;
    t.dims = std::move(dims);
    t.f64 = std::move(data);
    if (t.f64.size() != t.element_count()) throw ShapeError("payload does not match dims");
    return t;
}

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int k = 0; k < 4; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int k = 0; k < 8; ++k) out.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
}

inline std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= std::uint32_t(b[at + k]) << (8 * k);
    return v;
}

inline std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t at) {
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= std::uint64_t(b[at + k]) << (8 * k);
    return v;
}

} // namespace detail

inline std::vector<std::uint8_t> serialize_tensor(const TensorFile& t) {
    if (t.dims.empty()) throw InvalidInput("tensor needs at least one dim");
    if (t.dims.size() > 255) throw InvalidInput("too many dims");
    if (t.dtype > 1) throw InvalidInput("dtype must be 0 (f32) or 1 (f64)");
    for (const std::uint32_t d : t.dims)
        if (d == 0) throw InvalidInput("zero-sized dims are not representable");
    const std::size_t n = t.element_count();
    if ((t.dtype == 0 ? t.f32.size() : t.f64.size()) != n)
        throw ShapeError("payload does not match dims");
    std::vector<std::uint8_t> out;
    out.reserve(14 + 4 * t.dims.size() + n * t.element_size());
    for (const char c : kTensorMagic) out.push_back(static_cast<std::uint8_t>(c));
    detail::put_u32(out, t.version);
    out.push_back(t.dtype);
    out.push_back(static_cast<std::uint8_t>(t.dims.size()));
    for (const std::uint32_t d : t.dims) detail::put_u32(out, d);
    if (t.dtype == 0)
        for (const float x : t.f32) detail::put_u32(out, std::bit_cast<std::uint32_t>(x));
    else
        for (const double x : t.f64) detail::put_u64(out, std::bit_cast<std::uint64_t>(x));
    return out;
}

// Throws TensorFormatError carrying the offset of the first byte that breaks
// the format: a wrong magic/dtype byte, a zero dim, the end of a truncated
// file, or the first surplus byte.
inline TensorFile parse_tensor(std::span<const std::uint8_t> bytes) {
    auto need = [&](std::size_t upto, const char* what) {
        if (bytes.size() < upto)
            throw TensorFormatError(std::string("truncated before ") + what, bytes.size());
    };
    need(8, "magic");
    for (std::size_t i = 0; i < 8; ++i)
        if (bytes[i] != static_cast<std::uint8_t>(kTensorMagic[i]))
            throw TensorFormatError("magic mismatch", i);
    need(12, "version");
    const std::uint32_t version = detail::get_u32(bytes, 8);
    if (version != kTensorVersion) throw TensorFormatError("unsupported version", 8);
    need(13, "dtype");
    const std::uint8_t dtype = bytes[12];
    if (dtype > 1) throw TensorFormatError("unknown dtype code", 12);
    need(14, "ndim");
    const std::uint8_t ndim = bytes[13];
    if (ndim == 0) throw TensorFormatError("ndim must be at least 1", 13);
    need(14 + 4 * static_cast<std::size_t>(ndim), "dims");
    TensorFile t;
    t.version = version;
    t.dtype = dtype;
    std::size_t n = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
        const std::size_t at = 14 + 4 * i;
        const std::uint32_t d = detail::get_u32(bytes, at);
        if (d == 0) throw TensorFormatError("zero dim", at);
        t.dims.push_back(d);
        n *= d;
    }
    const std::size_t header = 14 + 4 * static_cast<std::size_t>(ndim);
    const std::size_t esz = dtype == 0 ? 4 : 8;
    const std::size_t expect = header + n * esz;
    if (bytes.size() < expect)
        throw TensorFormatError("payload shorter than dims require", bytes.size());
    if (bytes.size() > expect) throw TensorFormatError("trailing bytes after payload", expect);
    if (dtype == 0) {
        t.f32.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            t.f32.push_back(std::bit_cast<float>(detail::get_u32(bytes, header + 4 * i)));
    } else {
        t.f64.reserve(n);
        for (std::size_t i = 0; i < n; ++i)
            t.f64.push_back(std::bit_cast<double>(detail::get_u64(bytes, header + 8 * i)));
    }
    return t;
}

inline void write_tensor_file(const std::string& path, const TensorFile& t) {
    const std::vector<std::uint8_t> bytes = serialize_tensor(t);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot open for writing: " + path);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IntegrityError("short write: " + path);
}

inline TensorFile read_tensor_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw InvalidInput("cannot open: " + path);
    const std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (size > 0) in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw IntegrityError("short read: " + path);
    return parse_tensor(bytes);
}

} // namespace oryx
