#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <numbers>
#include <random>
#include <utility>
#include <vector>

#include "core.hpp"
#include "digest.hpp"
#include "parallel.hpp"

namespace pnpmag {

/// Matrix-free near-field MIMO observation operator
///
///   A[m, n] = p(k_m) exp(-j k_m (d_T + d_R)) / (4 pi d_T d_R)
///
/// with d_T, d_R the distances from voxel n to the transmitter and receiver
/// of channel m. A is never materialized. Channels sharing a tx/rx pair and
/// lying on a uniform wavenumber comb are evaluated together: for each voxel
/// the phasor of the first wavenumber is advanced by a fixed per-voxel step,
/// which turns the inner loop into one complex multiply-add per entry.
/// Per-(pair, voxel) weights and steps are cached when they fit in the
/// configured memory budget and recomputed per block otherwise.
///
/// apply/apply_adjoint are const and may be called concurrently. Summation
/// order is fixed by the voxel blocking and lane layout, not by the thread
/// count, so results are bit-identical for any `threads` setting.
class ForwardOperator {
public:
    struct Options {
        unsigned threads = default_thread_count();
        std::size_t cache_budget_bytes = std::size_t{1} << 30;
    };

    explicit ForwardOperator(ImagingGeometry geometry, std::vector<cplx> pulse_spectrum = {})
        : ForwardOperator(std::move(geometry), std::move(pulse_spectrum), Options{}) {}

    ForwardOperator(ImagingGeometry geometry, std::vector<cplx> pulse_spectrum, Options opts)
        : geometry_(std::move(geometry)), pulse_(std::move(pulse_spectrum)), opts_(opts) {
        geometry_.validate();
        if (pulse_.empty()) pulse_.assign(geometry_.wavenumbers.size(), cplx{1.0, 0.0});
        if (pulse_.size() != geometry_.wavenumbers.size())
            throw DimensionError("pulse spectrum length must equal the wavenumber count");
        opts_.threads = std::max(1u, opts_.threads);
        digest_ = geometry_digest(geometry_);
        build_distance_tables();
        build_segments();
        build_cache();
    }

    [[nodiscard]] const ImagingGeometry& geometry() const { return geometry_; }
    [[nodiscard]] const GridSpec& grid() const { return geometry_.grid; }
    [[nodiscard]] const Digest& digest() const { return digest_; }
    [[nodiscard]] const std::vector<cplx>& pulse_spectrum() const { return pulse_; }
    [[nodiscard]] std::size_t rows() const { return geometry_.num_channels(); }
    [[nodiscard]] std::size_t cols() const { return geometry_.num_voxels(); }
    [[nodiscard]] bool cached() const { return !cache_.empty(); }

    /// Direct evaluation of a single matrix entry.
    [[nodiscard]] cplx kernel_eval(std::size_t m, std::size_t n) const {
        if (m >= rows() || n >= cols()) throw BoundsError("kernel_eval index out of range");
        const Channel& c = geometry_.channels[m];
        const Vec3 r = geometry_.grid.voxel_center(n);
        const double dt = distance(geometry_.tx_positions[c.tx], r);
        const double dr = distance(geometry_.rx_positions[c.rx], r);
        const double k = geometry_.wavenumbers[c.k];
        return pulse_[c.k] * std::polar(1.0 / (4.0 * std::numbers::pi * dt * dr), -k * (dt + dr));
    }

    /// y = A s
    void apply(std::span<const cplx> s, std::span<cplx> y) const {
        if (s.size() != cols()) throw DimensionError("apply_forward: volume size mismatch");
        if (y.size() != rows()) throw DimensionError("apply_forward: output length mismatch");
        const std::size_t np = padded_voxels_;
        std::vector<double> sre(np, 0.0), sim(np, 0.0);
        for (std::size_t n = 0; n < s.size(); ++n) {
            sre[n] = s[n].real();
            sim[n] = s[n].imag();
        }
        parallel_chunks(segments_.size(), opts_.threads, [&](unsigned, std::size_t b, std::size_t e) {
            Scratch scratch;
            std::vector<double> laccr, lacci;
            for (std::size_t g = b; g < e; ++g) {
                const Segment& seg = segments_[g];
                const std::size_t nf = seg.channels.size();
                laccr.assign(nf * kLanes, 0.0);
                lacci.assign(nf * kLanes, 0.0);
                for (std::size_t v0 = 0; v0 < np; v0 += kBlock) {
                    const std::size_t len = std::min(kBlock, np - v0);
                    const BlockCoeffs c = coefficients(g, v0, len, scratch);
                    forward_block(c, sre.data() + v0, sim.data() + v0, len, nf, laccr.data(),
                                  lacci.data());
                }
                for (std::size_t f = 0; f < nf; ++f) {
                    double re = 0, im = 0;
                    for (std::size_t l = 0; l < kLanes; ++l) {
                        re += laccr[f * kLanes + l];
                        im += lacci[f * kLanes + l];
                    }
                    const std::uint32_t m = seg.channels[f];
                    y[m] = pulse_[geometry_.channels[m].k] * cplx{re, im};
                }
            }
        });
    }

    /// s = A^H y
    void apply_adjoint(std::span<const cplx> y, std::span<cplx> s) const {
        if (y.size() != rows()) throw DimensionError("apply_adjoint: measurement length mismatch");
        if (s.size() != cols()) throw DimensionError("apply_adjoint: output size mismatch");
        const std::size_t np = padded_voxels_;
        const std::size_t nblocks = (np + kBlock - 1) / kBlock;
        std::vector<double> outr(np, 0.0), outi(np, 0.0);
        parallel_chunks(nblocks, opts_.threads, [&](unsigned, std::size_t b, std::size_t e) {
            Scratch scratch;
            std::vector<double> yr, yi;
            for (std::size_t blk = b; blk < e; ++blk) {
                const std::size_t v0 = blk * kBlock;
                const std::size_t len = std::min(kBlock, np - v0);
                for (std::size_t g = 0; g < segments_.size(); ++g) {
                    const Segment& seg = segments_[g];
                    const std::size_t nf = seg.channels.size();
                    yr.resize(nf);
                    yi.resize(nf);
                    for (std::size_t f = 0; f < nf; ++f) {
                        const std::uint32_t m = seg.channels[f];
                        const cplx v = std::conj(pulse_[geometry_.channels[m].k]) * y[m];
                        yr[f] = v.real();
                        yi[f] = v.imag();
                    }
                    const BlockCoeffs c = coefficients(g, v0, len, scratch);
                    adjoint_block(c, yr.data(), yi.data(), nf, len, outr.data() + v0,
                                  outi.data() + v0);
                }
            }
        });
        for (std::size_t n = 0; n < s.size(); ++n) s[n] = {outr[n], outi[n]};
    }

    [[nodiscard]] CVector apply_forward(const ComplexVolume& s) const {
        require_same_dims(s.grid(), grid(), "apply_forward");
        CVector y(rows());
        apply(s.values(), y);
        return y;
    }

    [[nodiscard]] ComplexVolume apply_adjoint(std::span<const cplx> y) const {
        ComplexVolume s(grid());
        apply_adjoint(y, s.values());
        return s;
    }

private:
    static constexpr std::size_t kBlock = 512;
    static constexpr std::size_t kLanes = 8;

    // Channels of one tx/rx pair on the comb k0 + f*dk, f = 0..F-1.
    struct Segment {
        std::uint32_t tx = 0, rx = 0;
        double k0 = 0, dk = 0;
        std::vector<std::uint32_t> channels;
    };

    struct BlockCoeffs {
        const double* wr;
        const double* wi;
        const double* sr;
        const double* si;
    };

    struct Scratch {
        std::vector<double> wr, wi, sr, si;
        Scratch() : wr(kBlock), wi(kBlock), sr(kBlock), si(kBlock) {}
    };

    void build_distance_tables() {
        const std::size_t n = cols();
        padded_voxels_ = (n + kLanes - 1) / kLanes * kLanes;
        const auto table = [&](const std::vector<Vec3>& antennas) {
            std::vector<double> t(antennas.size() * padded_voxels_, 1.0);
            for (std::size_t a = 0; a < antennas.size(); ++a)
                for (std::size_t v = 0; v < n; ++v)
                    t[a * padded_voxels_ + v] = distance(antennas[a], geometry_.grid.voxel_center(v));
            return t;
        };
        dist_tx_ = table(geometry_.tx_positions);
        dist_rx_ = table(geometry_.rx_positions);
    }

    void build_segments() {
        std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<std::pair<double, std::uint32_t>>>
            by_pair;
        for (std::uint32_t m = 0; m < geometry_.channels.size(); ++m) {
            const Channel& c = geometry_.channels[m];
            by_pair[{c.tx, c.rx}].push_back({geometry_.wavenumbers[c.k], m});
        }
        for (auto& [pair, list] : by_pair) {
            std::stable_sort(list.begin(), list.end(),
                             [](const auto& a, const auto& b) { return a.first < b.first; });
            const std::size_t nf = list.size();
            bool uniform = true;
            double dk = 0;
            if (nf > 1) {
                dk = (list.back().first - list.front().first) / static_cast<double>(nf - 1);
                for (std::size_t f = 0; f < nf && uniform; ++f) {
                    const double expect = list.front().first + static_cast<double>(f) * dk;
                    uniform = std::abs(list[f].first - expect) <= 1e-13 * list.back().first;
                }
            }
            if (uniform) {
                Segment seg{pair.first, pair.second, list.front().first, dk, {}};
                for (const auto& e : list) seg.channels.push_back(e.second);
                segments_.push_back(std::move(seg));
            } else {
                for (const auto& e : list)
                    segments_.push_back(Segment{pair.first, pair.second, e.first, 0.0, {e.second}});
            }
        }
    }

    void build_cache() {
        const std::size_t bytes = segments_.size() * padded_voxels_ * 4 * sizeof(double);
        if (bytes > opts_.cache_budget_bytes) return;
        cache_.resize(segments_.size() * padded_voxels_ * 4);
        Scratch scratch;
        for (std::size_t g = 0; g < segments_.size(); ++g)
            for (std::size_t v0 = 0; v0 < padded_voxels_; v0 += kBlock) {
                const std::size_t len = std::min(kBlock, padded_voxels_ - v0);
                compute_coefficients(segments_[g], v0, len, scratch.wr.data(), scratch.wi.data(),
                                     scratch.sr.data(), scratch.si.data());
                double* base = cache_.data() + g * padded_voxels_ * 4;
                std::copy_n(scratch.wr.data(), len, base + v0);
                std::copy_n(scratch.wi.data(), len, base + padded_voxels_ + v0);
                std::copy_n(scratch.sr.data(), len, base + 2 * padded_voxels_ + v0);
                std::copy_n(scratch.si.data(), len, base + 3 * padded_voxels_ + v0);
            }
    }

    // w = exp(-j k0 d) / (4 pi dT dR), step = exp(-j dk d); zero weight on padding.
    void compute_coefficients(const Segment& seg, std::size_t v0, std::size_t len, double* wr,
                              double* wi, double* sr, double* si) const {
        const double* dt = dist_tx_.data() + seg.tx * padded_voxels_ + v0;
        const double* dr = dist_rx_.data() + seg.rx * padded_voxels_ + v0;
        const std::size_t n = cols();
        for (std::size_t i = 0; i < len; ++i) {
            const double d = dt[i] + dr[i];
            const double amp = (v0 + i < n) ? 1.0 / (4.0 * std::numbers::pi * dt[i] * dr[i]) : 0.0;
            wr[i] = amp * std::cos(seg.k0 * d);
            wi[i] = -amp * std::sin(seg.k0 * d);
            sr[i] = std::cos(seg.dk * d);
            si[i] = -std::sin(seg.dk * d);
        }
    }

    BlockCoeffs coefficients(std::size_t g, std::size_t v0, std::size_t len, Scratch& scratch) const {
        if (!cache_.empty()) {
            const double* base = cache_.data() + g * padded_voxels_ * 4;
            return {base + v0, base + padded_voxels_ + v0, base + 2 * padded_voxels_ + v0,
                    base + 3 * padded_voxels_ + v0};
        }
        compute_coefficients(segments_[g], v0, len, scratch.wr.data(), scratch.wi.data(),
                             scratch.sr.data(), scratch.si.data());
        return {scratch.wr.data(), scratch.wi.data(), scratch.sr.data(), scratch.si.data()};
    }

    // lacc[f*kLanes + l] += sum over voxels i = l (mod kLanes) of w_i s_i step_i^f
    static void forward_block(const BlockCoeffs& c, const double* __restrict s_re,
                              const double* __restrict s_im, std::size_t len, std::size_t nf,
                              double* __restrict laccr, double* __restrict lacci) {
        constexpr std::size_t kGroup = 4 * kLanes;
        std::size_t i0 = 0;
        for (; i0 + kGroup <= len; i0 += kGroup) recurrence<kGroup>(c, s_re, s_im, i0, nf, laccr, lacci);
        for (; i0 < len; i0 += kLanes) recurrence<kLanes>(c, s_re, s_im, i0, nf, laccr, lacci);
    }

    template <std::size_t G>
    static void recurrence(const BlockCoeffs& c, const double* __restrict s_re,
                           const double* __restrict s_im, std::size_t i0, std::size_t nf,
                           double* __restrict laccr, double* __restrict lacci) {
        double zr[G], zi[G], sr[G], si[G];
        for (std::size_t l = 0; l < G; ++l) {
            const std::size_t i = i0 + l;
            zr[l] = c.wr[i] * s_re[i] - c.wi[i] * s_im[i];
            zi[l] = c.wr[i] * s_im[i] + c.wi[i] * s_re[i];
            sr[l] = c.sr[i];
            si[l] = c.si[i];
        }
        for (std::size_t f = 0; f < nf; ++f) {
            double* __restrict ar = laccr + f * kLanes;
            double* __restrict ai = lacci + f * kLanes;
            for (std::size_t v = 0; v < G; v += kLanes)
                for (std::size_t l = 0; l < kLanes; ++l) {
                    ar[l] += zr[v + l];
                    ai[l] += zi[v + l];
                }
            for (std::size_t l = 0; l < G; ++l) {
                const double nr = zr[l] * sr[l] - zi[l] * si[l];
                const double ni = zr[l] * si[l] + zi[l] * sr[l];
                zr[l] = nr;
                zi[l] = ni;
            }
        }
    }

    // out_i += conj(w_i) sum_f conj(step_i)^f y_f, evaluated by Horner's rule
    // on kGroup voxels at once so independent chains hide multiply latency.
    static void adjoint_block(const BlockCoeffs& c, const double* yr, const double* yi,
                              std::size_t nf, std::size_t len, double* __restrict outr,
                              double* __restrict outi) {
        constexpr std::size_t kGroup = 4 * kLanes;
        const double* __restrict wr = c.wr;
        const double* __restrict wi = c.wi;
        const double* __restrict str = c.sr;
        const double* __restrict sti = c.si;
        std::size_t i0 = 0;
        for (; i0 + kGroup <= len; i0 += kGroup) horner<kGroup>(wr, wi, str, sti, yr, yi, nf, i0, outr, outi);
        for (; i0 < len; i0 += kLanes) horner<kLanes>(wr, wi, str, sti, yr, yi, nf, i0, outr, outi);
    }

    template <std::size_t G>
    static void horner(const double* __restrict wr, const double* __restrict wi,
                       const double* __restrict str, const double* __restrict sti,
                       const double* yr, const double* yi, std::size_t nf, std::size_t i0,
                       double* __restrict outr, double* __restrict outi) {
        double tr[G] = {}, ti[G] = {}, sr[G], si[G];
        for (std::size_t l = 0; l < G; ++l) {
            sr[l] = str[i0 + l];
            si[l] = -sti[i0 + l];
        }
        for (std::size_t f = nf; f-- > 0;) {
            const double ar = yr[f], ai = yi[f];
            for (std::size_t l = 0; l < G; ++l) {
                const double nr = tr[l] * sr[l] - ti[l] * si[l] + ar;
                const double ni = tr[l] * si[l] + ti[l] * sr[l] + ai;
                tr[l] = nr;
                ti[l] = ni;
            }
        }
        for (std::size_t l = 0; l < G; ++l) {
            const double a = wr[i0 + l], b = -wi[i0 + l];
            outr[i0 + l] += a * tr[l] - b * ti[l];
            outi[i0 + l] += a * ti[l] + b * tr[l];
        }
    }

    ImagingGeometry geometry_;
    std::vector<cplx> pulse_;
    Options opts_;
    Digest digest_{};
    std::size_t padded_voxels_ = 0;
    std::vector<double> dist_tx_, dist_rx_;
    std::vector<Segment> segments_;
    std::vector<double> cache_;
};

inline cplx kernel_eval(const ForwardOperator& op, std::size_t m, std::size_t n) {
    return op.kernel_eval(m, n);
}

inline CVector apply_forward(const ForwardOperator& op, const ComplexVolume& s) {
    return op.apply_forward(s);
}

inline ComplexVolume apply_adjoint(const ForwardOperator& op, std::span<const cplx> y) {
    return op.apply_adjoint(y);
}

/// y = A s + w with w circular complex Gaussian of per-sample variance
/// sigma_w^2 = ||A s||^2 / (M 10^(snr_db/10)). snr_db = +inf gives y = A s.
inline MeasurementSet simulate_measurements(const ForwardOperator& op, const ComplexVolume& s,
                                            double snr_db, std::uint64_t seed) {
    if (std::isnan(snr_db) || snr_db == -std::numeric_limits<double>::infinity())
        throw ArgumentError("snr_db must be finite or +inf");
    MeasurementSet out;
    out.geometry_digest = op.digest();
    out.values = op.apply_forward(s);
    if (std::isinf(snr_db)) {
        out.noise_sigma = 0.0;
        return out;
    }
    const double energy = squared_norm(out.values);
    if (!(energy > 0)) throw NumericalError("cannot set a noise level for a zero signal");
    const double m = static_cast<double>(out.values.size());
    const double sigma = std::sqrt(energy / (m * std::pow(10.0, snr_db / 10.0)));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma / std::numbers::sqrt2);
    for (cplx& v : out.values) {
        const double re = gauss(rng);
        const double im = gauss(rng);
        v += cplx{re, im};
    }
    out.noise_sigma = sigma;
    return out;
}

}  // namespace pnpmag
