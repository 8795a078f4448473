#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "core.hpp"

namespace pnpmag {

/// The plug-and-play slot: a real, nonnegative magnitude denoiser.
///
/// `alpha` is the regularization weight of the outer problem. Each denoiser
/// maps it onto its own parameterization (the analytical proxes use it as
/// the threshold/weight directly, a learned denoiser reads sqrt(alpha) as a
/// noise standard deviation). Output has the input's dims and is >= 0.
class MagnitudeDenoiser {
public:
    virtual ~MagnitudeDenoiser() = default;
    [[nodiscard]] virtual DenoiserKind kind() const = 0;
    virtual MagnitudeVolume denoise(const MagnitudeVolume& m, double alpha) = 0;
};

inline const char* to_string(DenoiserKind k) {
    switch (k) {
        case DenoiserKind::identity: return "identity";
        case DenoiserKind::soft_threshold: return "soft_threshold";
        case DenoiserKind::tv_chambolle: return "tv_chambolle";
        case DenoiserKind::external: return "external";
    }
    return "?";
}

inline MagnitudeVolume denoise_identity(const MagnitudeVolume& m, double /*level*/ = 0) { return m; }

/// max(m - alpha, 0): the prox of alpha*||.||_1 restricted to m >= 0.
inline MagnitudeVolume denoise_soft_threshold(const MagnitudeVolume& m, double alpha) {
    if (!(alpha >= 0)) throw ArgumentError("soft threshold: alpha must be >= 0");
    MagnitudeVolume out(m.grid());
    for (std::size_t n = 0; n < m.size(); ++n) out[n] = std::max(m[n] - alpha, 0.0);
    return out;
}

namespace tv {

// Forward differences with a zero difference across the last slice (Neumann).
inline void gradient(const std::vector<double>& u, const Dims& d, std::vector<double>& gx,
                     std::vector<double>& gy, std::vector<double>& gz) {
    const std::size_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
    for (std::size_t iz = 0; iz < d.nz; ++iz)
        for (std::size_t iy = 0; iy < d.ny; ++iy)
            for (std::size_t ix = 0; ix < d.nx; ++ix) {
                const std::size_t n = ix * sx + iy * sy + iz * sz;
                gx[n] = ix + 1 < d.nx ? u[n + sx] - u[n] : 0.0;
                gy[n] = iy + 1 < d.ny ? u[n + sy] - u[n] : 0.0;
                gz[n] = iz + 1 < d.nz ? u[n + sz] - u[n] : 0.0;
            }
}

// Negative adjoint of `gradient`.
inline void divergence(const std::vector<double>& px, const std::vector<double>& py,
                       const std::vector<double>& pz, const Dims& d, std::vector<double>& div) {
    const std::size_t sx = 1, sy = d.nx, sz = d.nx * d.ny;
    const auto term = [](const std::vector<double>& p, std::size_t n, std::size_t i, std::size_t len,
                         std::size_t stride) {
        double v = i + 1 < len ? p[n] : 0.0;
        if (i > 0) v -= p[n - stride];
        return v;
    };
    for (std::size_t iz = 0; iz < d.nz; ++iz)
        for (std::size_t iy = 0; iy < d.ny; ++iy)
            for (std::size_t ix = 0; ix < d.nx; ++ix) {
                const std::size_t n = ix * sx + iy * sy + iz * sz;
                div[n] = term(px, n, ix, d.nx, sx) + term(py, n, iy, d.ny, sy) +
                         term(pz, n, iz, d.nz, sz);
            }
}

/// Isotropic total variation with the same discrete gradient as the denoiser.
inline double isotropic_tv(const MagnitudeVolume& v) {
    const std::size_t n = v.size();
    std::vector<double> gx(n), gy(n), gz(n);
    gradient(v.data(), v.dims(), gx, gy, gz);
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + gz[i] * gz[i]);
    return s;
}

/// alpha * TV(v) + 0.5 ||v - m||^2
inline double objective(const MagnitudeVolume& v, const MagnitudeVolume& m, double alpha) {
    double fid = 0;
    for (std::size_t i = 0; i < v.size(); ++i) fid += (v[i] - m[i]) * (v[i] - m[i]);
    return alpha * isotropic_tv(v) + 0.5 * fid;
}

}  // namespace tv

/// Isotropic 3D TV denoising by Chambolle's dual projection iteration,
///   p <- (p + tau grad(div p - m/alpha)) / (1 + tau |grad(div p - m/alpha)|),
///   v  = m - alpha div p,
/// started from p = 0 with tau = 1/12 (||div||^2 <= 12 in 3D). Clamped at 0.
inline MagnitudeVolume denoise_tv_chambolle(const MagnitudeVolume& m, double alpha, int inner_iters = 5) {
    if (!(alpha >= 0)) throw ArgumentError("tv denoiser: alpha must be >= 0");
    if (inner_iters < 0) throw ArgumentError("tv denoiser: inner_iters must be >= 0");
    if (alpha == 0 || inner_iters == 0) return m;
    constexpr double tau = 1.0 / 12.0;
    const Dims& d = m.dims();
    const std::size_t n = m.size();
    std::vector<double> px(n, 0.0), py(n, 0.0), pz(n, 0.0), div(n, 0.0), w(n), gx(n), gy(n), gz(n);
    for (int it = 0; it < inner_iters; ++it) {
        tv::divergence(px, py, pz, d, div);
        for (std::size_t i = 0; i < n; ++i) w[i] = div[i] - m[i] / alpha;
        tv::gradient(w, d, gx, gy, gz);
        for (std::size_t i = 0; i < n; ++i) {
            const double g = std::sqrt(gx[i] * gx[i] + gy[i] * gy[i] + gz[i] * gz[i]);
            const double denom = 1.0 + tau * g;
            px[i] = (px[i] + tau * gx[i]) / denom;
            py[i] = (py[i] + tau * gy[i]) / denom;
            pz[i] = (pz[i] + tau * gz[i]) / denom;
        }
    }
    tv::divergence(px, py, pz, d, div);
    MagnitudeVolume out(m.grid());
    for (std::size_t i = 0; i < n; ++i) out[i] = std::max(m[i] - alpha * div[i], 0.0);
    return out;
}

class IdentityDenoiser final : public MagnitudeDenoiser {
public:
    [[nodiscard]] DenoiserKind kind() const override { return DenoiserKind::identity; }
    MagnitudeVolume denoise(const MagnitudeVolume& m, double) override { return m; }
};

class SoftThresholdDenoiser final : public MagnitudeDenoiser {
public:
    [[nodiscard]] DenoiserKind kind() const override { return DenoiserKind::soft_threshold; }
    MagnitudeVolume denoise(const MagnitudeVolume& m, double alpha) override {
        return denoise_soft_threshold(m, alpha);
    }
};

class TvChambolleDenoiser final : public MagnitudeDenoiser {
public:
    explicit TvChambolleDenoiser(int inner_iters = 5) : inner_iters_(inner_iters) {
        if (inner_iters < 0) throw ArgumentError("tv denoiser: inner_iters must be >= 0");
    }
    [[nodiscard]] DenoiserKind kind() const override { return DenoiserKind::tv_chambolle; }
    [[nodiscard]] int inner_iters() const { return inner_iters_; }
    MagnitudeVolume denoise(const MagnitudeVolume& m, double alpha) override {
        return denoise_tv_chambolle(m, alpha, inner_iters_);
    }

private:
    int inner_iters_;
};

/// Complex prox of alpha*R(|v|): denoise |p| and put back the phase of p,
///   prox(p) = exp(j angle p) * Psi_alpha(|p|).
inline ComplexVolume complex_magnitude_prox(const ComplexVolume& p, MagnitudeDenoiser& denoiser,
                                            double alpha) {
    MagnitudeVolume mag(p.grid());
    for (std::size_t n = 0; n < p.size(); ++n) mag[n] = std::abs(p[n]);
    const MagnitudeVolume den = denoiser.denoise(mag, alpha);
    require_same_dims(den.grid(), p.grid(), "denoiser output");
    ComplexVolume out(p.grid());
    for (std::size_t n = 0; n < p.size(); ++n) {
        const double a = std::max(den[n], 0.0);
        // p / |p| carries the phase exactly; a zero p takes phase 0.
        out[n] = mag[n] > 0 ? p[n] * (a / mag[n]) : cplx{a, 0.0};
    }
    return out;
}

}  // namespace pnpmag
