#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "vtok/error.hpp"
#include "vtok/tensor.hpp"

// Binary checkpoint container. Layout: the 5-byte magic "VTOK1", then for
// each entry (in sorted name order) a u32 LE name length, the UTF-8 name,
// a u32 LE rank, one u32 LE extent per axis, and the values as f64 LE.
// There is no count field; readers consume entries until end of file.
namespace vtok {

using NamedTensors = std::map<std::string, Tensor>;

namespace detail {

inline void put_u32(std::ofstream& out, std::uint32_t x) {
    unsigned char b[4] = {static_cast<unsigned char>(x & 0xff), static_cast<unsigned char>((x >> 8) & 0xff),
                          static_cast<unsigned char>((x >> 16) & 0xff), static_cast<unsigned char>((x >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_f64(std::ofstream& out, double x) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline bool get_u32(std::ifstream& in, std::uint32_t& x) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) return false;
    x = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
        (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    return true;
}

inline bool get_f64(std::ifstream& in, double& x) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) return false;
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    std::memcpy(&x, &bits, 8);
    return true;
}

} // namespace detail

inline void save_checkpoint(const std::string& path, const NamedTensors& entries) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write("VTOK1", 5);
    for (const auto& [name, t] : entries) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t e : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(e));
        for (double x : t.v) detail::put_f64(out, x);
    }
    if (!out) throw IoError("write failed for checkpoint: " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, "VTOK1", 5) != 0)
        throw IoError("bad checkpoint magic in " + path);
    NamedTensors entries;
    std::uint32_t name_len;
    while (detail::get_u32(in, name_len)) {
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw IoError("truncated checkpoint name in " + path);
        std::uint32_t rank;
        if (!detail::get_u32(in, rank)) throw IoError("truncated checkpoint header for '" + name + "'");
        Shape shape(rank);
        for (std::uint32_t i = 0; i < rank; ++i) {
            std::uint32_t e;
            if (!detail::get_u32(in, e)) throw IoError("truncated extents for '" + name + "'");
            shape[i] = e;
        }
        Tensor t(shape);
        for (double& x : t.v)
            if (!detail::get_f64(in, x)) throw IoError("truncated values for '" + name + "'");
        if (entries.count(name)) throw IoError("duplicate checkpoint entry '" + name + "'");
        entries.emplace(std::move(name), std::move(t));
    }
    return entries;
}

} // namespace vtok
