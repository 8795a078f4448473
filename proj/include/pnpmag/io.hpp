#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"

namespace pnpmag {

// ---------------------------------------------------------------------------
// Little-endian byte encoding, independent of host byte order.

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    [[nodiscard]] const std::vector<std::uint8_t>& bytes() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}

    void raw(void* p, std::size_t n) {
        need(n);
        std::memcpy(p, b_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        need(1);
        return b_[pos_++];
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[pos_++]} << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= std::uint64_t{b_[pos_++]} << (8 * i);
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    double f64() { return std::bit_cast<double>(u64()); }
    [[nodiscard]] std::size_t remaining() const { return b_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw IoError("unexpected end of data");
    }
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> b) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// CVOL: "CVOL1", u32 nx ny nz, f64 dx dy dz x0 y0 z0, u8 kind, f32 payload.

enum class CvolKind : std::uint8_t { complex = 0, magnitude = 1 };

struct CvolContents {
    GridSpec grid;
    CvolKind kind = CvolKind::complex;
    CVector data;  // magnitude files decode with zero imaginary part

    [[nodiscard]] ComplexVolume as_complex() const { return {grid, data}; }
    [[nodiscard]] MagnitudeVolume as_magnitude() const {
        MagnitudeVolume m(grid);
        for (std::size_t n = 0; n < data.size(); ++n) m[n] = std::abs(data[n]);
        return m;
    }
};

namespace detail {
inline void write_cvol_header(ByteWriter& w, const GridSpec& g, CvolKind kind) {
    w.raw("CVOL1", 5);
    w.u32(static_cast<std::uint32_t>(g.dims.nx));
    w.u32(static_cast<std::uint32_t>(g.dims.ny));
    w.u32(static_cast<std::uint32_t>(g.dims.nz));
    w.f64(g.voxel_size.x);
    w.f64(g.voxel_size.y);
    w.f64(g.voxel_size.z);
    w.f64(g.origin.x);
    w.f64(g.origin.y);
    w.f64(g.origin.z);
    w.u8(static_cast<std::uint8_t>(kind));
}
}  // namespace detail

inline std::vector<std::uint8_t> encode_cvol(const ComplexVolume& v) {
    ByteWriter w;
    detail::write_cvol_header(w, v.grid(), CvolKind::complex);
    for (const cplx& z : v.values()) {
        w.f32(static_cast<float>(z.real()));
        w.f32(static_cast<float>(z.imag()));
    }
    return w.bytes();
}

inline std::vector<std::uint8_t> encode_cvol(const MagnitudeVolume& v) {
    ByteWriter w;
    detail::write_cvol_header(w, v.grid(), CvolKind::magnitude);
    for (double x : v.values()) w.f32(static_cast<float>(x));
    return w.bytes();
}

inline CvolContents decode_cvol(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    char magic[5];
    r.raw(magic, 5);
    if (std::memcmp(magic, "CVOL1", 5) != 0) throw IoError("not a CVOL1 file");
    CvolContents c;
    c.grid.dims.nx = r.u32();
    c.grid.dims.ny = r.u32();
    c.grid.dims.nz = r.u32();
    c.grid.voxel_size = {r.f64(), r.f64(), r.f64()};
    c.grid.origin = {r.f64(), r.f64(), r.f64()};
    const std::uint8_t kind = r.u8();
    if (kind > 1) throw IoError("unknown CVOL kind " + std::to_string(kind));
    c.kind = static_cast<CvolKind>(kind);
    try {
        c.grid.validate();
    } catch (const ArgumentError& e) {
        throw IoError(std::string("bad CVOL grid: ") + e.what());
    }
    const std::size_t n = c.grid.size();
    const std::size_t per = c.kind == CvolKind::complex ? 8 : 4;
    if (r.remaining() != n * per) throw IoError("CVOL payload length does not match dims");
    c.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double re = r.f32();
        const double im = c.kind == CvolKind::complex ? r.f32() : 0.0f;
        c.data[i] = {re, im};
    }
    return c;
}

template <class T>
void write_cvol(const std::filesystem::path& path, const Volume<T>& v) {
    write_file_bytes(path, encode_cvol(v));
}

inline CvolContents read_cvol(const std::filesystem::path& path) {
    return decode_cvol(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// CMEA: "CMEA1", u32 M, 16-byte digest, f64 sigma (NaN = unknown), f32 pairs.

inline std::vector<std::uint8_t> encode_cmea(const MeasurementSet& ms) {
    ByteWriter w;
    w.raw("CMEA1", 5);
    w.u32(static_cast<std::uint32_t>(ms.values.size()));
    w.raw(ms.geometry_digest.data(), ms.geometry_digest.size());
    w.f64(ms.noise_sigma.value_or(std::numeric_limits<double>::quiet_NaN()));
    for (const cplx& z : ms.values) {
        w.f32(static_cast<float>(z.real()));
        w.f32(static_cast<float>(z.imag()));
    }
    return w.bytes();
}

inline MeasurementSet decode_cmea(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    char magic[5];
    r.raw(magic, 5);
    if (std::memcmp(magic, "CMEA1", 5) != 0) throw IoError("not a CMEA1 file");
    MeasurementSet ms;
    const std::uint32_t m = r.u32();
    r.raw(ms.geometry_digest.data(), ms.geometry_digest.size());
    const double sigma = r.f64();
    if (!std::isnan(sigma)) ms.noise_sigma = sigma;
    if (r.remaining() != std::size_t{m} * 8) throw IoError("CMEA payload length does not match M");
    ms.values.resize(m);
    for (auto& z : ms.values) {
        const double re = r.f32();
        const double im = r.f32();
        z = {re, im};
    }
    return ms;
}

inline void write_cmea(const std::filesystem::path& path, const MeasurementSet& ms) {
    write_file_bytes(path, encode_cmea(ms));
}

inline MeasurementSet read_cmea(const std::filesystem::path& path) {
    return decode_cmea(read_file_bytes(path));
}

// ---------------------------------------------------------------------------
// Geometry files (JSON):
//   { "tx": [[x,y,z],...], "rx": [...], "freqs_hz": [...],
//     "grid": {"dims": [nx,ny,nz], "voxel_size": [dx,dy,dz], "origin": [x0,y0,z0]},
//     "channels": [[tx,rx,k],...]      (optional; default tx x rx x freq)
//     "pulse": [[re,im],...] }         (optional; default all ones)

struct GeometryFile {
    ImagingGeometry geometry;
    std::vector<cplx> pulse;  // empty = flat
};

namespace detail {
inline Vec3 vec3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw IoError("expected [x, y, z]");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}
inline nlohmann::json vec3_to_json(const Vec3& v) { return nlohmann::json::array({v.x, v.y, v.z}); }

// A frequency that converts back to exactly `k`, so a written geometry keeps its digest.
inline double hz_for_wavenumber(double k) {
    const double f0 = k * kSpeedOfLight / (2.0 * std::numbers::pi);
    double lo = f0, hi = f0;
    for (int i = 0; i < 64; ++i) {
        if (wavenumber_from_hz(lo) == k) return lo;
        if (wavenumber_from_hz(hi) == k) return hi;
        lo = std::nextafter(lo, 0.0);
        hi = std::nextafter(hi, std::numeric_limits<double>::infinity());
    }
    return f0;
}
}  // namespace detail

inline GeometryFile geometry_from_json(const nlohmann::json& j) {
    GeometryFile out;
    ImagingGeometry& g = out.geometry;
    try {
        for (const auto& p : j.at("tx")) g.tx_positions.push_back(detail::vec3_from_json(p));
        for (const auto& p : j.at("rx")) g.rx_positions.push_back(detail::vec3_from_json(p));
        for (const auto& f : j.at("freqs_hz")) g.wavenumbers.push_back(wavenumber_from_hz(f.get<double>()));
        const auto& grid = j.at("grid");
        const auto& dims = grid.at("dims");
        if (!dims.is_array() || dims.size() != 3) throw IoError("grid.dims must have 3 entries");
        g.grid.dims = {dims[0].get<std::size_t>(), dims[1].get<std::size_t>(), dims[2].get<std::size_t>()};
        g.grid.voxel_size = detail::vec3_from_json(grid.at("voxel_size"));
        g.grid.origin = detail::vec3_from_json(grid.at("origin"));
        if (j.contains("channels")) {
            for (const auto& c : j.at("channels")) {
                if (!c.is_array() || c.size() != 3) throw IoError("channel must be [tx, rx, k]");
                g.channels.push_back({c[0].get<std::uint32_t>(), c[1].get<std::uint32_t>(),
                                      c[2].get<std::uint32_t>()});
            }
        } else {
            g.channels = ImagingGeometry::cross_product_channels(
                g.tx_positions.size(), g.rx_positions.size(), g.wavenumbers.size());
        }
        if (j.contains("pulse"))
            for (const auto& p : j.at("pulse")) out.pulse.emplace_back(p.at(0).get<double>(), p.at(1).get<double>());
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("malformed geometry: ") + e.what());
    }
    try {
        g.validate();
    } catch (const ArgumentError& e) {
        throw IoError(std::string("invalid geometry: ") + e.what());
    }
    return out;
}

inline nlohmann::json geometry_to_json(const ImagingGeometry& g, const std::vector<cplx>& pulse = {}) {
    nlohmann::json j;
    j["tx"] = nlohmann::json::array();
    for (const auto& p : g.tx_positions) j["tx"].push_back(detail::vec3_to_json(p));
    j["rx"] = nlohmann::json::array();
    for (const auto& p : g.rx_positions) j["rx"].push_back(detail::vec3_to_json(p));
    j["freqs_hz"] = nlohmann::json::array();
    for (double k : g.wavenumbers) j["freqs_hz"].push_back(detail::hz_for_wavenumber(k));
    j["grid"] = {{"dims", {g.grid.dims.nx, g.grid.dims.ny, g.grid.dims.nz}},
                 {"voxel_size", detail::vec3_to_json(g.grid.voxel_size)},
                 {"origin", detail::vec3_to_json(g.grid.origin)}};
    j["channels"] = nlohmann::json::array();
    for (const auto& c : g.channels) j["channels"].push_back({c.tx, c.rx, c.k});
    if (!pulse.empty()) {
        j["pulse"] = nlohmann::json::array();
        for (const cplx& p : pulse) j["pulse"].push_back({p.real(), p.imag()});
    }
    return j;
}

inline GeometryFile read_geometry(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("cannot parse " + path.string() + ": " + e.what());
    }
    return geometry_from_json(j);
}

inline void write_geometry(const std::filesystem::path& path, const ImagingGeometry& g,
                           const std::vector<cplx>& pulse = {}) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << geometry_to_json(g, pulse).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Dataset manifest, one JSON object per line.

struct ManifestEntry {
    std::string path;  // relative to the manifest's directory
    std::string split;
    std::uint64_t seed = 0;
    std::string recipe_hash;
};

inline void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& rows) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    for (const auto& r : rows)
        out << nlohmann::json{{"path", r.path}, {"split", r.split}, {"seed", r.seed},
                              {"recipe_hash", r.recipe_hash}}
                   .dump()
            << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ManifestEntry> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            rows.push_back({j.at("path").get<std::string>(), j.at("split").get<std::string>(),
                            j.at("seed").get<std::uint64_t>(), j.value("recipe_hash", "")});
        } catch (const nlohmann::json::exception& e) {
            throw IoError("bad manifest line in " + path.string() + ": " + e.what());
        }
    }
    return rows;
}

}  // namespace pnpmag
