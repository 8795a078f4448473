#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "core.hpp"
#include "digest.hpp"
#include "io.hpp"

namespace pnpmag {

/// Voxel pitch of the default scene: 1.25 cm across range, 0.625 cm in range.
inline constexpr Vec3 kDefaultVoxelSize{0.0125, 0.0125, 0.00625};
/// Scene center 50 cm in front of the aperture.
inline constexpr Vec3 kDefaultSceneCenter{0.0, 0.0, 0.5};

/// Grid of the given dims and pitch whose voxel centers are symmetric about `center`.
inline GridSpec centered_grid(Dims dims, Vec3 voxel_size = kDefaultVoxelSize,
                              Vec3 center = kDefaultSceneCenter) {
    const auto half = [](std::size_t n, double d) { return 0.5 * static_cast<double>(n - 1) * d; };
    GridSpec g{dims, voxel_size,
               {center.x - half(dims.nx, voxel_size.x), center.y - half(dims.ny, voxel_size.y),
                center.z - half(dims.nz, voxel_size.z)}};
    g.validate();
    return g;
}

struct SceneRecipe {
    Dims dims{25, 25, 49};
    int n_points = 15;
    double gaussian_sigma_voxels = 1.0;
    double sigmoid_gain = 6.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (dims.size() == 0) throw ArgumentError("scene dims must be nonzero");
        if (n_points < 1) throw ArgumentError("n_points must be >= 1");
        if (static_cast<std::size_t>(n_points) > dims.size())
            throw ArgumentError("n_points exceeds the number of voxels");
        if (!(gaussian_sigma_voxels > 0)) throw ArgumentError("gaussian_sigma_voxels must be > 0");
        if (!(sigmoid_gain > 0)) throw ArgumentError("sigmoid_gain must be > 0");
    }

    /// Hash of every field except the seed.
    [[nodiscard]] std::string hash() const {
        Fnv1a128 h;
        h.update_u64(dims.nx);
        h.update_u64(dims.ny);
        h.update_u64(dims.nz);
        h.update_u64(static_cast<std::uint64_t>(n_points));
        h.update_f64(gaussian_sigma_voxels);
        h.update_f64(sigmoid_gain);
        return to_hex(h.finish()).substr(0, 16);
    }
};

/// Zero-preserving sigmoid squashing onto [0, 1).
inline double squash(double m, double gain) {
    const double logistic = 1.0 / (1.0 + std::exp(-gain * m));
    return 2.0 * (logistic - 0.5);
}

namespace detail {

inline std::vector<double> gaussian_taps(double sigma) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> taps(2 * radius + 1);
    double sum = 0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += taps[i + radius];
    }
    for (double& t : taps) t /= sum;
    return taps;
}

// Separable zero-padded convolution along one axis (stride in voxels).
inline void convolve_axis(std::vector<double>& v, const Dims& d, int axis,
                          const std::vector<double>& taps) {
    const int radius = static_cast<int>(taps.size() / 2);
    const std::size_t len = axis == 0 ? d.nx : axis == 1 ? d.ny : d.nz;
    const std::size_t stride = axis == 0 ? 1 : axis == 1 ? d.nx : d.nx * d.ny;
    std::vector<double> out(v.size(), 0.0);
    for (std::size_t n = 0; n < v.size(); ++n) {
        const std::size_t pos = (n / stride) % len;
        double acc = 0;
        for (int t = -radius; t <= radius; ++t) {
            const long q = static_cast<long>(pos) + t;
            if (q < 0 || q >= static_cast<long>(len)) continue;
            acc += taps[t + radius] * v[n + static_cast<std::size_t>(q - static_cast<long>(pos)) * stride];
        }
        out[n] = acc;
    }
    v.swap(out);
}

}  // namespace detail

/// Random extended target: impulses at distinct random voxels, blurred by an
/// isotropic Gaussian (truncated at 3 sigma, unit sum), peak-normalized,
/// squashed by a zero-preserving sigmoid, and given i.i.d. uniform phase.
inline ComplexVolume generate_scene(const SceneRecipe& recipe, const GridSpec& grid) {
    recipe.validate();
    if (grid.dims != recipe.dims) throw DimensionError("scene grid does not match recipe dims");
    std::mt19937_64 rng(recipe.seed);
    const std::size_t n = recipe.dims.size();

    std::vector<double> mag(n, 0.0);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::unordered_set<std::size_t> used;
    while (used.size() < static_cast<std::size_t>(recipe.n_points)) {
        const std::size_t v = pick(rng);
        if (used.insert(v).second) mag[v] = 1.0;
    }

    const auto taps = detail::gaussian_taps(recipe.gaussian_sigma_voxels);
    for (int axis = 0; axis < 3; ++axis) detail::convolve_axis(mag, recipe.dims, axis, taps);

    const double peak = max_value(mag);
    for (double& m : mag) m = squash(m / peak, recipe.sigmoid_gain);

    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    ComplexVolume out(grid);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::polar(mag[i], angle(rng));
    return out;
}

inline ComplexVolume generate_scene(const SceneRecipe& recipe) {
    return generate_scene(recipe, centered_grid(recipe.dims));
}

struct SplitCounts {
    std::size_t train = 800, val = 100, test = 100;
};

/// Writes one CVOL file per scene plus `manifest.jsonl`. Scene i (train, then
/// val, then test) uses seed base_seed + i.
inline std::vector<ManifestEntry> generate_dataset(const SceneRecipe& recipe, SplitCounts counts,
                                                   const std::filesystem::path& out_dir) {
    recipe.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec || !std::filesystem::is_directory(out_dir))
        throw IoError("cannot create output directory " + out_dir.string());

    const GridSpec grid = centered_grid(recipe.dims);
    const std::string rhash = recipe.hash();
    std::vector<ManifestEntry> manifest;
    std::uint64_t index = 0;
    const auto emit = [&](const char* split, std::size_t count) {
        for (std::size_t i = 0; i < count; ++i, ++index) {
            SceneRecipe r = recipe;
            r.seed = recipe.seed + index;
            char name[64];
            std::snprintf(name, sizeof name, "%s_%04zu.cvol", split, i);
            write_cvol(out_dir / name, generate_scene(r, grid));
            manifest.push_back({name, split, r.seed, rhash});
        }
    };
    emit("train", counts.train);
    emit("val", counts.val);
    emit("test", counts.test);
    write_manifest(out_dir / "manifest.jsonl", manifest);
    return manifest;
}

struct MillsCrossParams {
    double width_m = 0.3;
    int n_tx = 12;
    int n_rx = 13;
    double f_lo = 4e9;
    double f_hi = 16e9;
    int n_freq = 20;
};

/// Mill's Cross MIMO array in the z = 0 plane: transmitters evenly spaced on
/// the y = x diagonal of a width x width square, receivers on y = -x. The
/// frequency comb includes both endpoints.
inline ImagingGeometry mills_cross_array(const MillsCrossParams& p, GridSpec grid) {
    if (p.n_freq < 1) throw ArgumentError("n_freq must be >= 1");
    if (p.n_tx < 1 || p.n_rx < 1) throw ArgumentError("antenna counts must be >= 1");
    if (!(p.width_m > 0)) throw ArgumentError("aperture width must be > 0");
    if (!(p.f_lo > 0) || p.f_hi < p.f_lo) throw ArgumentError("invalid frequency band");
    const auto along = [&](int i, int count) {
        return count == 1 ? 0.0 : -0.5 * p.width_m + p.width_m * i / (count - 1);
    };
    ImagingGeometry g;
    for (int i = 0; i < p.n_tx; ++i) {
        const double t = along(i, p.n_tx);
        g.tx_positions.push_back({t, t, 0.0});
    }
    for (int i = 0; i < p.n_rx; ++i) {
        const double t = along(i, p.n_rx);
        g.rx_positions.push_back({t, -t, 0.0});
    }
    for (int i = 0; i < p.n_freq; ++i) {
        const double f = p.n_freq == 1 ? p.f_lo : p.f_lo + (p.f_hi - p.f_lo) * i / (p.n_freq - 1);
        g.wavenumbers.push_back(wavenumber_from_hz(f));
    }
    g.grid = std::move(grid);
    g.channels = ImagingGeometry::cross_product_channels(g.tx_positions.size(),
                                                          g.rx_positions.size(), g.wavenumbers.size());
    g.validate();
    return g;
}

inline ImagingGeometry mills_cross_array(const MillsCrossParams& p = {}) {
    return mills_cross_array(p, centered_grid({25, 25, 49}));
}

}  // namespace pnpmag
