#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include <pnpmag/denoise.hpp>

using namespace pnpmag;

namespace {

GridSpec cube(std::size_t n) { return {{n, n, n}, {1, 1, 1}, {}}; }

MagnitudeVolume random_magnitudes(const GridSpec& g, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, scale);
    MagnitudeVolume m(g);
    for (double& v : m.values()) v = u(rng);
    return m;
}

ComplexVolume random_complex(const GridSpec& g, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> mag(0, 1), ang(-std::numbers::pi, std::numbers::pi);
    ComplexVolume p(g);
    for (cplx& z : p.values()) z = std::polar(mag(rng), ang(rng));
    return p;
}

// Per-entry objective of alpha |v| + 1/2 |v - p|^2 minimised over a
// magnitude x phase grid.
double brute_force_l1_prox_objective(cplx p, double alpha, double mag_step, double phase_step) {
    const double mmax = std::abs(p) + 0.1;
    std::vector<double> re_proj;  // Re(conj(p) e^{j theta})
    for (double t = 0; t < 2 * std::numbers::pi; t += phase_step)
        re_proj.push_back(p.real() * std::cos(t) + p.imag() * std::sin(t));
    const double pp = std::norm(p);
    double best = std::numeric_limits<double>::infinity();
    for (double m = 0; m <= mmax; m += mag_step)
        for (double c : re_proj) best = std::min(best, alpha * m + 0.5 * (m * m + pp - 2 * m * c));
    return best;
}

double l1_objective(cplx v, cplx p, double alpha) { return alpha * std::abs(v) + 0.5 * std::norm(v - p); }

}  // namespace

TEST(Identity, ReturnsInput) {
    const MagnitudeVolume m = random_magnitudes(cube(3), 1);
    EXPECT_EQ(denoise_identity(m, 0.7), m);
    IdentityDenoiser d;
    EXPECT_EQ(d.denoise(m, 123.0), m);
    EXPECT_EQ(d.kind(), DenoiserKind::identity);
}

TEST(SoftThreshold, Examples) {
    GridSpec g{{1, 1, 1}, {1, 1, 1}, {}};
    MagnitudeVolume m(g, {0.5});
    EXPECT_NEAR(denoise_soft_threshold(m, 0.2)[0], 0.3, 1e-15);
    m[0] = 0.1;
    EXPECT_EQ(denoise_soft_threshold(m, 0.2)[0], 0.0);
    EXPECT_THROW(denoise_soft_threshold(m, -0.1), ArgumentError);
}

TEST(SoftThreshold, MatchesScalarGridSearch) {
    const MagnitudeVolume m = random_magnitudes(cube(4), 2);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> ua(0, 0.6);
    for (int trial = 0; trial < 5; ++trial) {
        const double alpha = ua(rng);
        const MagnitudeVolume out = denoise_soft_threshold(m, alpha);
        for (std::size_t i = 0; i < m.size(); ++i) {
            double best_v = 0, best = std::numeric_limits<double>::infinity();
            for (double v = 0; v <= 1.0; v += 1e-4) {
                const double f = alpha * v + 0.5 * (v - m[i]) * (v - m[i]);
                if (f < best) best = f, best_v = v;
            }
            EXPECT_NEAR(out[i], best_v, 1e-4);
        }
    }
}

TEST(SoftThreshold, Nonexpansive) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const MagnitudeVolume a = random_magnitudes(cube(3), seed), b = random_magnitudes(cube(3), seed + 100);
        const MagnitudeVolume ta = denoise_soft_threshold(a, 0.3), tb = denoise_soft_threshold(b, 0.3);
        double d_in = 0, d_out = 0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            d_in += (a[i] - b[i]) * (a[i] - b[i]);
            d_out += (ta[i] - tb[i]) * (ta[i] - tb[i]);
        }
        EXPECT_LE(d_out, d_in);
    }
}

TEST(TvOperators, DivergenceIsNegativeAdjointOfGradient) {
    const Dims d{4, 5, 3};
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd;
    const std::size_t n = d.size();
    std::vector<double> u(n), px(n), py(n), pz(n), gx(n), gy(n), gz(n), div(n);
    for (std::size_t i = 0; i < n; ++i) u[i] = nd(rng), px[i] = nd(rng), py[i] = nd(rng), pz[i] = nd(rng);
    tv::gradient(u, d, gx, gy, gz);
    tv::divergence(px, py, pz, d, div);
    double lhs = 0, rhs = 0;
    for (std::size_t i = 0; i < n; ++i) {
        lhs += gx[i] * px[i] + gy[i] * py[i] + gz[i] * pz[i];
        rhs -= u[i] * div[i];
    }
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(lhs));
}

TEST(TvOperators, IsotropicTvHandValue) {
    GridSpec g{{2, 1, 1}, {1, 1, 1}, {}};
    EXPECT_DOUBLE_EQ(tv::isotropic_tv(MagnitudeVolume(g, {0.0, 3.0})), 3.0);
    GridSpec h{{2, 2, 1}, {1, 1, 1}, {}};
    // Only voxel (0,0) has both forward differences nonzero: sqrt(1 + 4).
    EXPECT_DOUBLE_EQ(tv::isotropic_tv(MagnitudeVolume(h, {0.0, 1.0, 2.0, 2.0})), std::sqrt(5.0) + 1.0);
}

TEST(TvChambolle, ZeroAlphaIsIdentity) {
    const MagnitudeVolume m = random_magnitudes(cube(5), 5);
    EXPECT_EQ(denoise_tv_chambolle(m, 0.0), m);
    EXPECT_THROW(denoise_tv_chambolle(m, -1.0), ArgumentError);
}

TEST(TvChambolle, ConstantVolumeUnchanged) {
    MagnitudeVolume m(cube(6));
    for (double& v : m.values()) v = 0.37;
    for (double alpha : {0.01, 0.5, 10.0}) {
        const MagnitudeVolume out = denoise_tv_chambolle(m, alpha);
        for (double v : out.values()) EXPECT_NEAR(v, 0.37, 1e-15);
    }
}

TEST(TvChambolle, FiveIterationsWithinFivePercentOfLongRun) {
    const MagnitudeVolume m = random_magnitudes(cube(8), 6);
    const double alpha = 0.1;
    const double f5 = tv::objective(denoise_tv_chambolle(m, alpha, 5), m, alpha);
    const double f500 = tv::objective(denoise_tv_chambolle(m, alpha, 500), m, alpha);
    EXPECT_LE(std::abs(f5 - f500), 0.05 * f500);
    EXPECT_LE(f500, f5 + 1e-12);
}

TEST(TvChambolle, NeverWorseThanInput) {
    for (std::uint64_t seed = 0; seed < 10; ++seed)
        for (double alpha : {0.01, 0.1, 1.0}) {
            const MagnitudeVolume m = random_magnitudes(cube(6), seed);
            const MagnitudeVolume out = denoise_tv_chambolle(m, alpha);
            EXPECT_LE(tv::objective(out, m, alpha), tv::objective(m, m, alpha));
            for (double v : out.values()) EXPECT_GE(v, 0.0);
            EXPECT_EQ(out.dims(), m.dims());
        }
}

TEST(ComplexProx, IdentityIsExact) {
    const ComplexVolume p = random_complex(cube(4), 7);
    IdentityDenoiser id;
    EXPECT_EQ(complex_magnitude_prox(p, id, 0.3), p);
}

TEST(ComplexProx, SoftThresholdExample) {
    GridSpec g{{1, 1, 1}, {1, 1, 1}, {}};
    const ComplexVolume p(g, {std::polar(0.5, 1.2)});
    SoftThresholdDenoiser st;
    const cplx out = complex_magnitude_prox(p, st, 0.2)[0];
    EXPECT_NEAR(std::abs(out), 0.3, 1e-15);
    EXPECT_NEAR(std::arg(out), 1.2, 1e-15);
}

TEST(ComplexProx, ZeroEntryTakesZeroPhase) {
    GridSpec g{{2, 1, 1}, {1, 1, 1}, {}};
    const ComplexVolume p(g, {cplx{}, cplx{0, 1}});
    IdentityDenoiser id;
    const ComplexVolume out = complex_magnitude_prox(p, id, 0);
    EXPECT_EQ(out[0], cplx{});
    EXPECT_EQ(out[1], cplx(0, 1));
}

TEST(ComplexProx, L1MatchesBruteForceMinimum) {
    GridSpec g{{3, 1, 1}, {1, 1, 1}, {}};
    SoftThresholdDenoiser st;
    for (std::uint64_t seed = 0; seed < 4; ++seed)
        for (double alpha : {0.05, 0.2}) {
            const ComplexVolume p = random_complex(g, 50 + seed);
            const ComplexVolume v = complex_magnitude_prox(p, st, alpha);
            for (std::size_t i = 0; i < 3; ++i) {
                const double got = l1_objective(v[i], p[i], alpha);
                const double grid = brute_force_l1_prox_objective(p[i], alpha, 1e-3, 1e-3);
                EXPECT_LE(got, grid + 1e-12);
                EXPECT_LE(grid - got, 2e-3);
            }
        }
}

TEST(ComplexProx, PhasePassThroughForEveryDenoiser) {
    const ComplexVolume p = random_complex(cube(5), 9);
    IdentityDenoiser id;
    SoftThresholdDenoiser st;
    TvChambolleDenoiser tvd;
    for (MagnitudeDenoiser* d : std::initializer_list<MagnitudeDenoiser*>{&id, &st, &tvd}) {
        const ComplexVolume out = complex_magnitude_prox(p, *d, 0.1);
        for (std::size_t i = 0; i < p.size(); ++i)
            if (std::abs(out[i]) > 0) {
                EXPECT_NEAR(std::remainder(std::arg(out[i]) - std::arg(p[i]), 2 * std::numbers::pi), 0.0, 1e-12);
            }
    }
}

namespace {
class WrongDims final : public MagnitudeDenoiser {
public:
    DenoiserKind kind() const override { return DenoiserKind::external; }
    MagnitudeVolume denoise(const MagnitudeVolume&, double) override { return MagnitudeVolume(cube(2)); }
};
class Negative final : public MagnitudeDenoiser {
public:
    DenoiserKind kind() const override { return DenoiserKind::external; }
    MagnitudeVolume denoise(const MagnitudeVolume& m, double) override {
        MagnitudeVolume out = m;
        for (double& v : out.values()) v = -v;
        return out;
    }
};
}  // namespace

TEST(ComplexProx, RejectsWrongDimsAndClampsNegatives) {
    const ComplexVolume p = random_complex(cube(3), 10);
    WrongDims wd;
    EXPECT_THROW(complex_magnitude_prox(p, wd, 0.1), DimensionError);
    Negative neg;
    const ComplexVolume out = complex_magnitude_prox(p, neg, 0.1);
    for (const cplx& z : out.values()) EXPECT_EQ(z, cplx{});
}

TEST(Denoisers, KindsAndNames) {
    EXPECT_EQ(SoftThresholdDenoiser{}.kind(), DenoiserKind::soft_threshold);
    EXPECT_EQ(TvChambolleDenoiser{}.kind(), DenoiserKind::tv_chambolle);
    EXPECT_EQ(TvChambolleDenoiser{}.inner_iters(), 5);
    EXPECT_STREQ(to_string(DenoiserKind::tv_chambolle), "tv_chambolle");
    EXPECT_THROW(TvChambolleDenoiser{-1}, ArgumentError);
}
