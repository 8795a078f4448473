#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pnpmag {

using cplx = std::complex<double>;
using CVector = std::vector<cplx>;

// ---------------------------------------------------------------------------
// Errors. The CLI maps these onto exit codes (usage 1, I/O 2, numerical 3).

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ArgumentError : Error {
    using Error::Error;
};
struct DimensionError : ArgumentError {
    using ArgumentError::ArgumentError;
};
struct BoundsError : ArgumentError {
    using ArgumentError::ArgumentError;
};
struct IoError : Error {
    using Error::Error;
};
struct ProtocolError : IoError {
    using IoError::IoError;
};
struct NumericalError : Error {
    using Error::Error;
};

// ---------------------------------------------------------------------------

struct Vec3 {
    double x = 0, y = 0, z = 0;

    friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
    friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
    friend Vec3 operator*(double c, Vec3 a) { return {c * a.x, c * a.y, c * a.z}; }
    friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double distance(Vec3 a, Vec3 b) {
    const Vec3 d = a - b;
    return std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
}

struct Dims {
    std::size_t nx = 0, ny = 0, nz = 0;

    [[nodiscard]] std::size_t size() const { return nx * ny * nz; }
    friend bool operator==(const Dims&, const Dims&) = default;
};

inline std::string to_string(const Dims& d) {
    return std::to_string(d.nx) + "x" + std::to_string(d.ny) + "x" + std::to_string(d.nz);
}

/// Regular voxel grid: dims, voxel pitch and the center of voxel (0,0,0).
/// Voxels are stored x-fastest: index = ix + nx*(iy + ny*iz).
struct GridSpec {
    Dims dims;
    Vec3 voxel_size{1, 1, 1};
    Vec3 origin;

    void validate() const {
        if (dims.size() == 0) throw ArgumentError("grid has zero voxels");
        if (!(voxel_size.x > 0 && voxel_size.y > 0 && voxel_size.z > 0))
            throw ArgumentError("voxel size must be strictly positive");
    }

    [[nodiscard]] std::size_t size() const { return dims.size(); }

    [[nodiscard]] std::size_t index(std::size_t ix, std::size_t iy, std::size_t iz) const {
        if (ix >= dims.nx || iy >= dims.ny || iz >= dims.nz)
            throw BoundsError("voxel index out of range");
        return ix + dims.nx * (iy + dims.ny * iz);
    }

    [[nodiscard]] std::array<std::size_t, 3> unravel(std::size_t n) const {
        if (n >= size()) throw BoundsError("linear voxel index out of range");
        const std::size_t ix = n % dims.nx;
        const std::size_t rest = n / dims.nx;
        return {ix, rest % dims.ny, rest / dims.ny};
    }

    [[nodiscard]] Vec3 voxel_center(std::size_t ix, std::size_t iy, std::size_t iz) const {
        if (ix >= dims.nx || iy >= dims.ny || iz >= dims.nz)
            throw BoundsError("voxel index out of range");
        return {origin.x + static_cast<double>(ix) * voxel_size.x,
                origin.y + static_cast<double>(iy) * voxel_size.y,
                origin.z + static_cast<double>(iz) * voxel_size.z};
    }

    [[nodiscard]] Vec3 voxel_center(std::size_t n) const {
        const auto [ix, iy, iz] = unravel(n);
        return voxel_center(ix, iy, iz);
    }

    friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline Vec3 voxel_center(const GridSpec& grid, std::size_t ix, std::size_t iy, std::size_t iz) {
    return grid.voxel_center(ix, iy, iz);
}

/// Dense voxel volume on a GridSpec.
template <class T>
class Volume {
public:
    using value_type = T;

    Volume() = default;

    explicit Volume(GridSpec grid) : grid_(std::move(grid)), data_(grid_.size(), T{}) {
        grid_.validate();
    }

    Volume(GridSpec grid, std::vector<T> data) : grid_(std::move(grid)), data_(std::move(data)) {
        grid_.validate();
        if (data_.size() != grid_.size())
            throw DimensionError("volume data length " + std::to_string(data_.size()) +
                                 " does not match grid " + to_string(grid_.dims));
    }

    [[nodiscard]] const GridSpec& grid() const { return grid_; }
    [[nodiscard]] const Dims& dims() const { return grid_.dims; }
    [[nodiscard]] std::size_t size() const { return data_.size(); }

    [[nodiscard]] std::span<const T> values() const { return data_; }
    [[nodiscard]] std::span<T> values() { return data_; }
    [[nodiscard]] const std::vector<T>& data() const { return data_; }
    [[nodiscard]] std::vector<T>& data() { return data_; }

    T& operator[](std::size_t n) { return data_[n]; }
    const T& operator[](std::size_t n) const { return data_[n]; }

    T& at(std::size_t ix, std::size_t iy, std::size_t iz) { return data_[grid_.index(ix, iy, iz)]; }
    const T& at(std::size_t ix, std::size_t iy, std::size_t iz) const {
        return data_[grid_.index(ix, iy, iz)];
    }

    friend bool operator==(const Volume&, const Volume&) = default;

private:
    GridSpec grid_;
    std::vector<T> data_;
};

using ComplexVolume = Volume<cplx>;
using MagnitudeVolume = Volume<double>;
using PhaseVolume = Volume<double>;

inline void require_same_dims(const GridSpec& a, const GridSpec& b, const char* what) {
    if (a.dims != b.dims)
        throw DimensionError(std::string(what) + ": dims " + to_string(a.dims) + " vs " +
                             to_string(b.dims));
}

inline void require_nonnegative(const MagnitudeVolume& m) {
    for (double v : m.values())
        if (!(v >= 0)) throw ArgumentError("magnitude volume has a negative or NaN entry");
}

inline MagnitudeVolume magnitude(const ComplexVolume& v) {
    MagnitudeVolume out(v.grid());
    for (std::size_t n = 0; n < v.size(); ++n) out[n] = std::abs(v[n]);
    return out;
}

/// Per-voxel angle in (-pi, pi]; a zero entry has phase 0.
inline PhaseVolume phase(const ComplexVolume& v) {
    PhaseVolume out(v.grid());
    for (std::size_t n = 0; n < v.size(); ++n)
        out[n] = (v[n] == cplx{}) ? 0.0 : std::arg(v[n]);
    return out;
}

inline ComplexVolume combine(const MagnitudeVolume& mag, const PhaseVolume& ph) {
    require_same_dims(mag.grid(), ph.grid(), "combine");
    ComplexVolume out(mag.grid());
    for (std::size_t n = 0; n < mag.size(); ++n) out[n] = std::polar(mag[n], ph[n]);
    return out;
}

inline double max_value(std::span<const double> v) {
    double m = 0;
    for (double x : v) m = std::max(m, x);
    return m;
}

inline double max_abs(std::span<const cplx> v) {
    double m = 0;
    for (const cplx& z : v) m = std::max(m, std::abs(z));
    return m;
}

// ---------------------------------------------------------------------------
// Flat complex-vector helpers shared by the operator and the solver.

/// <a, b> = sum conj(a_i) b_i
inline cplx dot(std::span<const cplx> a, std::span<const cplx> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double re = 0, im = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        re += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
        im += a[i].real() * b[i].imag() - a[i].imag() * b[i].real();
    }
    return {re, im};
}

inline double squared_norm(std::span<const cplx> a) {
    double s = 0;
    for (const cplx& z : a) s += std::norm(z);
    return s;
}

inline double norm2(std::span<const cplx> a) { return std::sqrt(squared_norm(a)); }

inline double norm2(std::span<const double> a) {
    double s = 0;
    for (double x : a) s += x * x;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------

struct Channel {
    std::uint32_t tx = 0;
    std::uint32_t rx = 0;
    std::uint32_t k = 0;
    friend bool operator==(const Channel&, const Channel&) = default;
};

inline constexpr double kSpeedOfLight = 299792458.0;

inline double wavenumber_from_hz(double f) { return 2.0 * std::numbers::pi * f / kSpeedOfLight; }

/// Antenna positions, wavenumbers, scene grid and the ordered channel list
/// that fixes the measurement index m.
struct ImagingGeometry {
    std::vector<Vec3> tx_positions;
    std::vector<Vec3> rx_positions;
    std::vector<double> wavenumbers;
    GridSpec grid;
    std::vector<Channel> channels;

    [[nodiscard]] std::size_t num_channels() const { return channels.size(); }
    [[nodiscard]] std::size_t num_voxels() const { return grid.size(); }

    /// Channels ordered tx-major, then rx, then frequency.
    static std::vector<Channel> cross_product_channels(std::size_t ntx, std::size_t nrx,
                                                       std::size_t nk) {
        std::vector<Channel> ch;
        ch.reserve(ntx * nrx * nk);
        for (std::size_t t = 0; t < ntx; ++t)
            for (std::size_t r = 0; r < nrx; ++r)
                for (std::size_t k = 0; k < nk; ++k)
                    ch.push_back({static_cast<std::uint32_t>(t), static_cast<std::uint32_t>(r),
                                  static_cast<std::uint32_t>(k)});
        return ch;
    }

    void validate() const {
        grid.validate();
        if (channels.empty()) throw ArgumentError("geometry has no channels");
        for (double k : wavenumbers)
            if (!(k > 0) || !std::isfinite(k))
                throw ArgumentError("wavenumbers must be finite and strictly positive");
        for (const Channel& c : channels)
            if (c.tx >= tx_positions.size() || c.rx >= rx_positions.size() ||
                c.k >= wavenumbers.size())
                throw BoundsError("channel index out of range");
        // The kernel has 1/(d_T d_R); a voxel sitting on an antenna is not allowed.
        const double tiny = 1e-12;
        for (std::size_t n = 0; n < grid.size(); ++n) {
            const Vec3 r = grid.voxel_center(n);
            for (const Vec3& a : tx_positions)
                if (distance(a, r) <= tiny) throw ArgumentError("voxel coincides with a transmitter");
            for (const Vec3& a : rx_positions)
                if (distance(a, r) <= tiny) throw ArgumentError("voxel coincides with a receiver");
        }
    }
};

using Digest = std::array<std::uint8_t, 16>;

/// Measurement vector tied to the geometry it was acquired with.
struct MeasurementSet {
    CVector values;
    Digest geometry_digest{};
    std::optional<double> noise_sigma;
};

enum class DenoiserKind { identity, soft_threshold, tv_chambolle, external };

struct SolverConfig {
    double kappa = 5e4;
    double alpha = 1e-3;
    double epsilon = 0.0;
    int max_iters = 1000;
    int cg_iters = 5;
    double rel_change_tol = 5e-4;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (!(kappa > 0)) throw ArgumentError("kappa must be > 0");
        if (!(alpha >= 0)) throw ArgumentError("alpha must be >= 0");
        if (!(epsilon >= 0)) throw ArgumentError("epsilon must be >= 0");
        if (max_iters < 1) throw ArgumentError("max_iters must be >= 1");
        if (cg_iters < 1) throw ArgumentError("cg_iters must be >= 1");
        if (!(rel_change_tol >= 0)) throw ArgumentError("rel_change_tol must be >= 0");
    }

    /// Defaults used for each prior: kappa 5e4 with a relative-change stop for
    /// the analytical denoisers; kappa 5e2 and a 30 iteration cap for plugins.
    static SolverConfig defaults_for(DenoiserKind kind) {
        SolverConfig c;
        if (kind == DenoiserKind::external) {
            c.kappa = 5e2;
            c.max_iters = 30;
        }
        return c;
    }
};

}  // namespace pnpmag
