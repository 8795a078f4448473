#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>

#include "core.hpp"

namespace pnpmag {

/// 128-bit FNV-1a. Used only as a binding checksum between measurement files
/// and the geometry they came from, not for security.
class Fnv1a128 {
public:
    void update(std::span<const std::uint8_t> bytes) {
        for (std::uint8_t b : bytes) {
            state_ ^= b;
            state_ *= kPrime;
        }
    }

    void update_u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        update(b);
    }

    void update_u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        update(b);
    }

    void update_f64(double v) { update_u64(std::bit_cast<std::uint64_t>(v)); }

    void update_vec3(const Vec3& v) {
        update_f64(v.x);
        update_f64(v.y);
        update_f64(v.z);
    }

    [[nodiscard]] Digest finish() const {
        Digest d{};
        for (int i = 0; i < 16; ++i) d[i] = static_cast<std::uint8_t>(state_ >> (8 * (15 - i)));
        return d;
    }

private:
    static constexpr unsigned __int128 kOffset =
        (static_cast<unsigned __int128>(0x6c62272e07bb0142ULL) << 64) | 0x62b821756295c58dULL;
    static constexpr unsigned __int128 kPrime =
        (static_cast<unsigned __int128>(0x0000000001000000ULL) << 64) | 0x000000000000013BULL;
    unsigned __int128 state_ = kOffset;
};

/// Digest over the canonical little-endian serialization of a geometry.
inline Digest geometry_digest(const ImagingGeometry& g) {
    Fnv1a128 h;
    const std::string_view tag = "pnpmag-geometry-v1";
    h.update({reinterpret_cast<const std::uint8_t*>(tag.data()), tag.size()});
    h.update_u64(g.tx_positions.size());
    for (const Vec3& p : g.tx_positions) h.update_vec3(p);
    h.update_u64(g.rx_positions.size());
    for (const Vec3& p : g.rx_positions) h.update_vec3(p);
    h.update_u64(g.wavenumbers.size());
    for (double k : g.wavenumbers) h.update_f64(k);
    h.update_u64(g.grid.dims.nx);
    h.update_u64(g.grid.dims.ny);
    h.update_u64(g.grid.dims.nz);
    h.update_vec3(g.grid.voxel_size);
    h.update_vec3(g.grid.origin);
    h.update_u64(g.channels.size());
    for (const Channel& c : g.channels) {
        h.update_u32(c.tx);
        h.update_u32(c.rx);
        h.update_u32(c.k);
    }
    return h.finish();
}

inline std::string to_hex(const Digest& d) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string s;
    for (std::uint8_t b : d) {
        s += kHex[b >> 4];
        s += kHex[b & 15];
    }
    return s;
}

}  // namespace pnpmag
