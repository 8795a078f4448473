#pragma once

#include <cmath>
#include <limits>
#include <span>

#include "core.hpp"

namespace pnpmag {

inline constexpr double kInfDb = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) between ground-truth magnitudes (already in [0, 1]) and
/// reconstructed magnitudes divided by their own maximum. Returns +inf on
/// an exact match.
inline double psnr(const MagnitudeVolume& gt, const MagnitudeVolume& recon) {
    require_same_dims(gt.grid(), recon.grid(), "psnr");
    const double peak = max_value(recon.values());
    if (!(peak > 0)) throw NumericalError("psnr: reconstruction is identically zero");
    double se = 0;
    for (std::size_t n = 0; n < gt.size(); ++n) {
        const double e = gt[n] - recon[n] / peak;
        se += e * e;
    }
    const double mse = se / static_cast<double>(gt.size());
    return mse == 0 ? kInfDb : 10.0 * std::log10(1.0 / mse);
}

inline double psnr(const MagnitudeVolume& gt, const ComplexVolume& recon) {
    return psnr(gt, magnitude(recon));
}

/// Refuses ground truth outside [0, 1]; PSNR assumes a unit peak.
inline void require_unit_range(const MagnitudeVolume& gt) {
    for (double v : gt.values())
        if (!(v >= 0 && v <= 1))
            throw ArgumentError("ground truth magnitudes must lie in [0, 1]; normalize first");
}

/// CL = 1 - M/N
inline double compression_level(std::size_t m, std::size_t n) {
    if (n == 0) throw ArgumentError("compression_level: N must be > 0");
    return 1.0 - static_cast<double>(m) / static_cast<double>(n);
}

/// M/N
inline double data_fraction(std::size_t m, std::size_t n) {
    if (n == 0) throw ArgumentError("data_fraction: N must be > 0");
    return static_cast<double>(m) / static_cast<double>(n);
}

/// 10 log10(||clean||^2 / ||noisy - clean||^2); +inf when noisy == clean.
inline double empirical_snr(std::span<const cplx> clean, std::span<const cplx> noisy) {
    if (clean.size() != noisy.size()) throw DimensionError("empirical_snr: length mismatch");
    double sig = 0, noise = 0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        sig += std::norm(clean[i]);
        noise += std::norm(noisy[i] - clean[i]);
    }
    if (noise == 0) return kInfDb;
    return 10.0 * std::log10(sig / noise);
}

}  // namespace pnpmag
