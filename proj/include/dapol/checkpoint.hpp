#pragma once

// Binary network checkpoints.
//
// Layout (all integers and floats little-endian):
//   magic      8 bytes  "DAPOLNET"
//   version    u32      (currently 1)
//   n_meta     u32, then n_meta x (u32 key_len, key bytes, u32 val_len, val bytes)
//   n_layers   u32, then per layer:
//                u8 kind, u8 role, u64 in_dim, u64 out_dim,
//                u64 channels_in, u64 channels_out, u64 width, u64 stride
//   then, for each parametric layer in order:
//                weight (rows*cols f64, row-major), bias (rows f64)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <string>

#include "dapol/error.hpp"
#include "dapol/net.hpp"

namespace dapol::nn {

inline constexpr std::array<char, 8> kCheckpointMagic{'D', 'A', 'P', 'O', 'L', 'N', 'E', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Free-form string metadata stored alongside the parameters.
using CheckpointMeta = std::map<std::string, std::string>;

struct Checkpoint {
    Network net;
    CheckpointMeta meta;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <typename U>
U get_le(std::istream& is) {
    unsigned char buf[sizeof(U)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw invalid_argument("checkpoint: truncated file");
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
}

inline void put_f64(std::ostream& os, double d) { put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(d)); }
inline double get_f64(std::istream& is) { return std::bit_cast<double>(get_le<std::uint64_t>(is)); }

inline void put_str(std::ostream& os, const std::string& s) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::istream& is) {
    const auto n = get_le<std::uint32_t>(is);
    if (n > (1u << 24)) throw invalid_argument("checkpoint: implausible string length");
    std::string s(n, '\0');
    if (n && !is.read(s.data(), n)) throw invalid_argument("checkpoint: truncated file");
    return s;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const Network& net, const CheckpointMeta& meta = {}) {
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    detail::put_le<std::uint32_t>(os, kCheckpointVersion);
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::put_str(os, k);
        detail::put_str(os, v);
    }
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(net.layers.size()));
    for (const auto& s : net.layers) {
        detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.kind));
        detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(s.role));
        for (std::size_t v : {s.in_dim, s.out_dim, s.channels_in, s.channels_out, s.width, s.stride})
            detail::put_le<std::uint64_t>(os, v);
    }
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        if (!net.layers[l].parametric()) continue;
        for (double w : net.params[l].weight.data()) detail::put_f64(os, w);
        for (double b : net.params[l].bias) detail::put_f64(os, b);
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

inline Checkpoint read_checkpoint(std::istream& is) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
        throw invalid_argument("checkpoint: bad magic");
    const auto version = detail::get_le<std::uint32_t>(is);
    if (version != kCheckpointVersion)
        throw invalid_argument("checkpoint: unsupported format version " + std::to_string(version));
    Checkpoint cp;
    const auto n_meta = detail::get_le<std::uint32_t>(is);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto k = detail::get_str(is);
        cp.meta[std::move(k)] = detail::get_str(is);
    }
    const auto n_layers = detail::get_le<std::uint32_t>(is);
    if (n_layers == 0 || n_layers > 4096) throw invalid_argument("checkpoint: implausible layer count");
    std::vector<LayerSpec> specs(n_layers);
    for (auto& s : specs) {
        const auto kind = detail::get_le<std::uint8_t>(is);
        const auto role = detail::get_le<std::uint8_t>(is);
        if (kind > 3 || role > 2) throw invalid_argument("checkpoint: unknown layer kind or role");
        s.kind = static_cast<LayerKind>(kind);
        s.role = static_cast<Role>(role);
        s.in_dim = detail::get_le<std::uint64_t>(is);
        s.out_dim = detail::get_le<std::uint64_t>(is);
        s.channels_in = detail::get_le<std::uint64_t>(is);
        s.channels_out = detail::get_le<std::uint64_t>(is);
        s.width = detail::get_le<std::uint64_t>(is);
        s.stride = detail::get_le<std::uint64_t>(is);
    }
    try {
        validate_specs(specs);
    } catch (const invalid_spec_error& e) {
        throw invalid_argument(std::string("checkpoint: ") + e.what());
    }
    cp.net.layers = specs;
    cp.net.params.resize(specs.size());
    for (std::size_t l = 0; l < specs.size(); ++l) {
        if (!specs[l].parametric()) continue;
        auto& p = cp.net.params[l];
        p.weight = Matrix(specs[l].weight_rows(), specs[l].weight_cols());
        for (auto& w : p.weight.data()) w = detail::get_f64(is);
        p.bias.resize(specs[l].bias_size());
        for (auto& b : p.bias) b = detail::get_f64(is);
    }
    return cp;
}

inline void save_checkpoint(const std::string& path, const Network& net, const CheckpointMeta& meta = {}) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    write_checkpoint(os, net, meta);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw invalid_argument("checkpoint: cannot open " + path);
    return read_checkpoint(is);
}

}  // namespace dapol::nn
