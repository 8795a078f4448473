#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "denoise.hpp"
#include "forward_model.hpp"

namespace pnpmag {

struct IterationRecord {
    int iter = 0;
    double residual = 0;    // ||y - A s||
    double rel_change = 0;  // || |s_new| - |s_old| || / || |s_old| ||
    double slack = 0;       // ||y - A s|| - epsilon
    double ms = 0;
};

struct IterationTrace {
    std::vector<IterationRecord> records;
    bool converged = false;
};

inline void write_trace(std::ostream& out, const IterationTrace& trace) {
    for (const auto& r : trace.records)
        out << nlohmann::json{{"iter", r.iter}, {"residual", r.residual}, {"rel_change", r.rel_change},
                              {"slack", r.slack}, {"ms", r.ms}}
                   .dump()
            << '\n';
}

/// Thrown when the denoiser fails mid-run; carries the iterations completed so far.
struct ReconstructionAborted : Error {
    ReconstructionAborted(const std::string& what, IterationTrace t) : Error(what), trace(std::move(t)) {}
    IterationTrace trace;
};

// ---------------------------------------------------------------------------

struct CgResult {
    ComplexVolume x;
    CVector ax;                          // A x, maintained alongside x
    std::vector<double> residual_norms;  // ||r|| before the first step and after each step
    int steps = 0;
};

/// `iters` conjugate-gradient steps on (A^H A + kappa I) x = rhs from x0,
/// given ax0 = A x0. Uses the conjugate-residual recurrences, which minimize
/// ||r|| over the Krylov space, so the residual norm never increases. Stops
/// early once ||r|| < 1e-12 ||rhs||.
inline CgResult cg_normal_solve(const ForwardOperator& op, double kappa, const ComplexVolume& rhs,
                                const ComplexVolume& x0, const CVector& ax0, int iters) {
    if (!(kappa > 0)) throw ArgumentError("cg: kappa must be > 0");
    require_same_dims(rhs.grid(), op.grid(), "cg rhs");
    require_same_dims(x0.grid(), op.grid(), "cg x0");
    if (ax0.size() != op.rows()) throw DimensionError("cg: A x0 has wrong length");
    const std::size_t n = rhs.size();
    const std::size_t m = op.rows();

    CgResult res{x0, ax0, {}, 0};
    ComplexVolume r(op.grid());
    op.apply_adjoint(ax0, r.values());
    for (std::size_t i = 0; i < n; ++i) r[i] = rhs[i] - r[i] - kappa * x0[i];

    const double stop = 1e-12 * norm2(rhs.values());
    res.residual_norms.push_back(norm2(r.values()));
    if (res.residual_norms.back() <= stop || iters < 1) return res;

    // mr = M r and ar = A r for M = A^H A + kappa I; p, mp, ap follow the same pattern.
    ComplexVolume mr(op.grid());
    CVector ar(m);
    const auto normal = [&](const ComplexVolume& v) {
        op.apply(v.values(), ar);
        op.apply_adjoint(ar, mr.values());
        for (std::size_t i = 0; i < n; ++i) mr[i] += kappa * v[i];
    };
    normal(r);
    ComplexVolume p = r, mp = mr;
    CVector ap = ar;
    double rmr = dot(r.values(), mr.values()).real();
    for (int k = 0; k < iters; ++k) {
        const double mp2 = squared_norm(mp.values());
        if (!(mp2 > 0) || !(rmr > 0)) break;
        const double step = rmr / mp2;
        for (std::size_t i = 0; i < n; ++i) {
            res.x[i] += step * p[i];
            r[i] -= step * mp[i];
        }
        for (std::size_t i = 0; i < m; ++i) res.ax[i] += step * ap[i];
        res.residual_norms.push_back(norm2(r.values()));
        ++res.steps;
        if (res.residual_norms.back() <= stop || k + 1 == iters) break;
        normal(r);
        const double rmr_new = dot(r.values(), mr.values()).real();
        const double beta = rmr_new / rmr;
        rmr = rmr_new;
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = r[i] + beta * p[i];
            mp[i] = mr[i] + beta * mp[i];
        }
        for (std::size_t i = 0; i < m; ++i) ap[i] = ar[i] + beta * ap[i];
    }
    return res;
}

inline ComplexVolume cg_normal_solve(const ForwardOperator& op, double kappa, const ComplexVolume& rhs,
                                     const ComplexVolume& x0, int iters = 5) {
    return cg_normal_solve(op, kappa, rhs, x0, op.apply_forward(x0), iters).x;
}

/// Euclidean projection of u onto the ball ||v - y|| <= epsilon.
inline CVector project_epsilon_ball(std::span<const cplx> u, std::span<const cplx> y, double epsilon) {
    if (!(epsilon >= 0)) throw ArgumentError("epsilon must be >= 0");
    if (u.size() != y.size()) throw DimensionError("projection: length mismatch");
    CVector out(u.begin(), u.end());
    double dist2 = 0;
    for (std::size_t i = 0; i < u.size(); ++i) dist2 += std::norm(u[i] - y[i]);
    const double dist = std::sqrt(dist2);
    if (dist <= epsilon) return out;
    const double scale = epsilon / dist;
    for (std::size_t i = 0; i < u.size(); ++i) out[i] = y[i] + scale * (u[i] - y[i]);
    return out;
}

/// sqrt(M sigma_w^2): the noise-matched radius.
inline double default_epsilon(double sigma_w, std::size_t m) {
    if (!(sigma_w >= 0)) throw ArgumentError("sigma_w must be >= 0");
    return std::sqrt(static_cast<double>(m)) * sigma_w;
}

/// ||y|| / sqrt(10), roughly a 10 dB noise floor; for data with unknown noise.
inline double experimental_epsilon(std::span<const cplx> y) {
    if (y.empty()) throw ArgumentError("empty measurement vector");
    return norm2(y) / std::sqrt(10.0);
}

// ---------------------------------------------------------------------------

struct SolverState {
    ComplexVolume s, v2, d2;
    CVector v1, d1;
    int iter = 0;
    double rel_change = 0;
    ComplexVolume prox_input;  // s - d2 as handed to the denoiser this iteration
};

struct Reconstruction {
    ComplexVolume image;
    IterationTrace trace;
};

using IterationObserver = std::function<void(const SolverState&)>;

/// ADMM with an epsilon-ball data constraint and a magnitude prior:
///
///   s   <- (A^H A + kappa I)^-1 (A^H (v1 + d1) + kappa (v2 + d2))   [cg_iters CG steps]
///   v1  <- project(A s - d1; y, epsilon)
///   v2  <- exp(j angle(s - d2)) Psi_alpha(|s - d2|)
///   d1  <- d1 - (A s - v1),  d2 <- d2 - (s - v2)
///
/// from s0 = A^H y / max|A^H y|, v1 = A s0, v2 = s0, d = 0. Stops when the
/// relative change of |s| drops below rel_change_tol (checked from the second
/// iteration on) or after max_iters.
inline Reconstruction reconstruct(const MeasurementSet& y, const ForwardOperator& op,
                                  MagnitudeDenoiser& denoiser, const SolverConfig& cfg,
                                  const IterationObserver& observer = {}) {
    using clock = std::chrono::steady_clock;
    cfg.validate();
    if (y.geometry_digest != op.digest())
        throw ArgumentError("measurement set was not produced with this geometry");
    if (y.values.size() != op.rows()) throw DimensionError("measurement length does not match geometry");

    const std::size_t n = op.cols();
    const std::size_t m = op.rows();

    SolverState st;
    st.s = op.apply_adjoint(y.values);
    const double peak = max_abs(st.s.values());
    if (!(peak > 0)) throw NumericalError("A^H y is zero; cannot initialize");
    for (cplx& v : st.s.values()) v /= peak;
    CVector as = op.apply_forward(st.s);
    st.v1 = as;
    st.v2 = st.s;
    st.d1.assign(m, cplx{});
    st.d2 = ComplexVolume(op.grid());

    Reconstruction out;
    std::vector<double> prev_mag(n);
    for (std::size_t i = 0; i < n; ++i) prev_mag[i] = std::abs(st.s[i]);

    ComplexVolume rhs(op.grid());
    CVector tmp(m);
    for (int l = 0; l < cfg.max_iters; ++l) {
        const auto t0 = clock::now();

        for (std::size_t i = 0; i < m; ++i) tmp[i] = st.v1[i] + st.d1[i];
        op.apply_adjoint(tmp, rhs.values());
        for (std::size_t i = 0; i < n; ++i) rhs[i] += cfg.kappa * (st.v2[i] + st.d2[i]);
        CgResult cg = cg_normal_solve(op, cfg.kappa, rhs, st.s, as, cfg.cg_iters);
        st.s = std::move(cg.x);
        as = std::move(cg.ax);

        for (std::size_t i = 0; i < m; ++i) tmp[i] = as[i] - st.d1[i];
        st.v1 = project_epsilon_ball(tmp, y.values, cfg.epsilon);

        st.prox_input = ComplexVolume(op.grid());
        for (std::size_t i = 0; i < n; ++i) st.prox_input[i] = st.s[i] - st.d2[i];
        try {
            st.v2 = complex_magnitude_prox(st.prox_input, denoiser, cfg.alpha);
        } catch (const std::exception& e) {
            throw ReconstructionAborted(std::string("denoiser failed: ") + e.what(), out.trace);
        }

        for (std::size_t i = 0; i < m; ++i) st.d1[i] -= as[i] - st.v1[i];
        for (std::size_t i = 0; i < n; ++i) st.d2[i] -= st.s[i] - st.v2[i];

        double diff2 = 0, prev2 = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double a = std::abs(st.s[i]);
            diff2 += (a - prev_mag[i]) * (a - prev_mag[i]);
            prev2 += prev_mag[i] * prev_mag[i];
            prev_mag[i] = a;
        }
        st.rel_change = prev2 > 0 ? std::sqrt(diff2 / prev2) : std::numeric_limits<double>::infinity();
        st.iter = l + 1;

        double res2 = 0;
        for (std::size_t i = 0; i < m; ++i) res2 += std::norm(y.values[i] - as[i]);
        const double residual = std::sqrt(res2);
        out.trace.records.push_back(
            {st.iter, residual, st.rel_change, residual - cfg.epsilon,
             std::chrono::duration<double, std::milli>(clock::now() - t0).count()});
        if (observer) observer(st);
        // The first s-update starts from a fixed point of the split (v1 = A s0,
        // v2 = s0, d = 0), so its relative change is zero and cannot end the run.
        if (l > 0 && st.rel_change < cfg.rel_change_tol) {
            out.trace.converged = true;
            break;
        }
    }
    out.image = std::move(st.s);
    return out;
}

}  // namespace pnpmag
