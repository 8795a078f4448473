#include <gtest/gtest.h>

#include <numbers>
#include <random>
#include <thread>

#include <pnpmag/forward_model.hpp>
#include <pnpmag/metrics.hpp>
#include <pnpmag/scene_gen.hpp>

using namespace pnpmag;

namespace {

constexpr double kPi = std::numbers::pi;

// Random antennas in the z = 0 plane, random wavenumbers in 4..16 GHz.
ImagingGeometry random_geometry(Dims dims, int ntx, int nrx, int nk, std::uint64_t seed, bool uniform_k) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> pos(-0.15, 0.15), freq(4e9, 16e9);
    ImagingGeometry g;
    for (int i = 0; i < ntx; ++i) g.tx_positions.push_back({pos(rng), pos(rng), 0.0});
    for (int i = 0; i < nrx; ++i) g.rx_positions.push_back({pos(rng), pos(rng), 0.0});
    for (int i = 0; i < nk; ++i)
        g.wavenumbers.push_back(wavenumber_from_hz(uniform_k ? 4e9 + 12e9 * i / std::max(1, nk - 1) : freq(rng)));
    g.grid = centered_grid(dims, {0.02, 0.02, 0.02});
    g.channels = ImagingGeometry::cross_product_channels(ntx, nrx, nk);
    g.validate();
    return g;
}

// Dense reference matrix computed straight from the kernel formula.
std::vector<CVector> dense_matrix(const ImagingGeometry& g, const std::vector<cplx>& pulse) {
    std::vector<CVector> a(g.channels.size(), CVector(g.grid.size()));
    for (std::size_t m = 0; m < g.channels.size(); ++m) {
        const Channel c = g.channels[m];
        const Vec3 t = g.tx_positions[c.tx], r = g.rx_positions[c.rx];
        const double k = g.wavenumbers[c.k];
        const cplx p = pulse.empty() ? cplx{1, 0} : pulse[c.k];
        for (std::size_t n = 0; n < g.grid.size(); ++n) {
            const Vec3 v = g.grid.voxel_center(n);
            const double dt = std::hypot(t.x - v.x, t.y - v.y, t.z - v.z);
            const double dr = std::hypot(r.x - v.x, r.y - v.y, r.z - v.z);
            a[m][n] = p * std::exp(cplx{0, -k * (dt + dr)}) / (4 * kPi * dt * dr);
        }
    }
    return a;
}

ComplexVolume random_volume(const GridSpec& g, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    ComplexVolume v(g);
    for (auto& z : v.values()) z = {nd(rng), nd(rng)};
    return v;
}

CVector random_vector(std::size_t n, std::mt19937_64& rng) {
    std::normal_distribution<double> nd;
    CVector v(n);
    for (auto& z : v) z = {nd(rng), nd(rng)};
    return v;
}

double rel_err(std::span<const cplx> a, std::span<const cplx> b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += std::norm(a[i] - b[i]);
        den += std::norm(b[i]);
    }
    return std::sqrt(num / den);
}

}  // namespace

TEST(Kernel, HandEvaluatedMonostaticExample) {
    ImagingGeometry g;
    g.tx_positions = {{0, 0, 0}};
    g.rx_positions = {{0, 0, 0}};
    g.wavenumbers = {2 * kPi * 4e9 / kSpeedOfLight};
    g.grid = GridSpec{{1, 1, 1}, {0.01, 0.01, 0.01}, {0, 0, 0.5}};
    g.channels = {{0, 0, 0}};
    const ForwardOperator op(g);
    const cplx a = kernel_eval(op, 0, 0);
    EXPECT_NEAR(std::abs(a), 1.0 / (4 * kPi * 0.25), 1e-15);
    EXPECT_NEAR(std::abs(a), 0.3183098861837907, 1e-12);
    EXPECT_NEAR(g.wavenumbers[0], 83.8, 0.05);
    const double expected_phase = std::remainder(-g.wavenumbers[0] * 1.0, 2 * kPi);
    EXPECT_NEAR(std::remainder(std::arg(a) - expected_phase, 2 * kPi), 0.0, 1e-9);
}

TEST(Kernel, LowWavenumberIsNearlyReal) {
    ImagingGeometry g;
    g.tx_positions = {{0.1, 0, 0}};
    g.rx_positions = {{-0.1, 0, 0}};
    g.wavenumbers = {1e-12};
    g.grid = GridSpec{{1, 1, 1}, {1, 1, 1}, {0, 0, 0.4}};
    g.channels = {{0, 0, 0}};
    const cplx a = ForwardOperator(g).kernel_eval(0, 0);
    const double d = std::hypot(0.1, 0.4);
    EXPECT_NEAR(a.real(), 1.0 / (4 * kPi * d * d), 1e-14);
    EXPECT_NEAR(a.imag(), 0.0, 1e-12);
}

TEST(Kernel, DoublingDistancesQuartersMagnitude) {
    ImagingGeometry g;
    g.tx_positions = {{0, 0, 0}};
    g.rx_positions = {{0, 0.05, 0}};
    g.wavenumbers = {100.0};
    g.grid = GridSpec{{1, 1, 2}, {1, 1, 1}, {0, 0, 0.3}};
    g.channels = {{0, 0, 0}};
    ImagingGeometry far = g;
    far.rx_positions = {{0, 0.1, 0}};
    far.grid.origin = {0, 0, 0.6};
    const double near_mag = std::abs(ForwardOperator(g).kernel_eval(0, 0));
    const double far_mag = std::abs(ForwardOperator(far).kernel_eval(0, 0));
    EXPECT_NEAR(far_mag / near_mag, 0.25, 1e-14);
}

TEST(Kernel, SymmetricUnderTxRxSwap) {
    const ImagingGeometry g = random_geometry({3, 3, 3}, 3, 4, 5, 2, false);
    ImagingGeometry swapped = g;
    std::swap(swapped.tx_positions, swapped.rx_positions);
    for (auto& c : swapped.channels) std::swap(c.tx, c.rx);
    const ForwardOperator a(g), b(swapped);
    for (std::size_t m = 0; m < a.rows(); ++m)
        for (std::size_t n = 0; n < a.cols(); ++n)
            EXPECT_NEAR(std::abs(a.kernel_eval(m, n)), std::abs(b.kernel_eval(m, n)), 1e-15);
}

TEST(Kernel, OutOfRangeThrows) {
    const ForwardOperator op(random_geometry({2, 2, 2}, 1, 1, 2, 1, true));
    EXPECT_THROW((void)op.kernel_eval(2, 0), BoundsError);
    EXPECT_THROW((void)op.kernel_eval(0, 8), BoundsError);
}

struct DenseCase {
    Dims dims;
    int ntx, nrx, nk;
    bool uniform;
    bool pulse;
    bool shuffle;
};

class DenseOracle : public ::testing::TestWithParam<DenseCase> {};

TEST_P(DenseOracle, ForwardAndAdjointMatchDenseMatrix) {
    const DenseCase c = GetParam();
    ImagingGeometry g = random_geometry(c.dims, c.ntx, c.nrx, c.nk, 11, c.uniform);
    std::mt19937_64 rng(3);
    if (c.shuffle) std::shuffle(g.channels.begin(), g.channels.end(), rng);
    std::vector<cplx> pulse;
    if (c.pulse)
        for (int i = 0; i < c.nk; ++i) pulse.push_back(std::polar(0.5 + 0.1 * i, 0.3 * i));
    const auto a = dense_matrix(g, pulse);
    for (std::size_t budget : {std::size_t{1} << 30, std::size_t{0}}) {
        const ForwardOperator op(g, pulse, {2, budget});
        EXPECT_EQ(op.cached(), budget > 0);
        const ComplexVolume s = random_volume(g.grid, rng);
        const CVector y = random_vector(op.rows(), rng);
        CVector ref_y(op.rows());
        ComplexVolume ref_s(g.grid);
        for (std::size_t m = 0; m < op.rows(); ++m)
            for (std::size_t n = 0; n < op.cols(); ++n) {
                ref_y[m] += a[m][n] * s[n];
                ref_s[n] += std::conj(a[m][n]) * y[m];
            }
        EXPECT_LT(rel_err(op.apply_forward(s), ref_y), 1e-11);
        EXPECT_LT(rel_err(op.apply_adjoint(y).values(), ref_s.values()), 1e-11);
        for (std::size_t m = 0; m < op.rows(); m += 7)
            for (std::size_t n = 0; n < op.cols(); n += 5)
                EXPECT_LT(std::abs(op.kernel_eval(m, n) - a[m][n]), 1e-12 * std::abs(a[m][n]));
    }
}

INSTANTIATE_TEST_SUITE_P(Geometries, DenseOracle,
                         ::testing::Values(DenseCase{{3, 4, 5}, 3, 2, 6, true, false, false},
                                           DenseCase{{5, 5, 5}, 2, 3, 9, false, false, false},
                                           DenseCase{{4, 3, 2}, 2, 2, 5, true, true, true},
                                           DenseCase{{7, 1, 3}, 1, 1, 1, true, false, false},
                                           DenseCase{{2, 2, 9}, 4, 1, 20, true, true, false}));

TEST(Forward, ZeroInZeroOut) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 2, 4, 1, true));
    const CVector y = op.apply_forward(ComplexVolume(op.grid()));
    for (const cplx& v : y) EXPECT_EQ(v, cplx{});
    const ComplexVolume s = op.apply_adjoint(CVector(op.rows()));
    for (const cplx& v : s.values()) EXPECT_EQ(v, cplx{});
}

TEST(Forward, UnitVoxelGivesKernelColumn) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 3, 4, 5, true));
    ComplexVolume e(op.grid());
    e[13] = 1.0;
    const CVector y = op.apply_forward(e);
    for (std::size_t m = 0; m < op.rows(); ++m) EXPECT_LT(std::abs(y[m] - op.kernel_eval(m, 13)), 1e-12 * std::abs(op.kernel_eval(m, 13)));
}

TEST(Adjoint, UnitChannelGivesConjugateRow) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 3, 4, 5, true));
    CVector e(op.rows());
    e[7] = 1.0;
    const ComplexVolume s = op.apply_adjoint(e);
    for (std::size_t n = 0; n < op.cols(); ++n) EXPECT_LT(std::abs(s[n] - std::conj(op.kernel_eval(7, n))), 1e-15);
}

TEST(Forward, SuperpositionAndHomogeneity) {
    const ForwardOperator op(random_geometry({5, 5, 5}, 3, 3, 8, 7, true));
    std::mt19937_64 rng(9);
    const ComplexVolume s1 = random_volume(op.grid(), rng), s2 = random_volume(op.grid(), rng);
    ComplexVolume sum(op.grid()), scaled(op.grid());
    const cplx c{0.3, -1.7};
    for (std::size_t n = 0; n < sum.size(); ++n) {
        sum[n] = s1[n] + s2[n];
        scaled[n] = c * s1[n];
    }
    const CVector y1 = op.apply_forward(s1), y2 = op.apply_forward(s2);
    CVector lin(y1.size()), hom(y1.size());
    for (std::size_t m = 0; m < y1.size(); ++m) {
        lin[m] = y1[m] + y2[m];
        hom[m] = c * y1[m];
    }
    EXPECT_LT(rel_err(op.apply_forward(sum), lin), 1e-12);
    EXPECT_LT(rel_err(op.apply_forward(scaled), hom), 1e-12);
}

TEST(Adjoint, DotProductIdentityOnSevenCubed) {
    const ForwardOperator op(random_geometry({7, 7, 7}, 3, 4, 5, 21, false));
    ASSERT_EQ(op.rows(), 60u);
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 10; ++trial) {
        const ComplexVolume s = random_volume(op.grid(), rng);
        const CVector y = random_vector(op.rows(), rng);
        const CVector as = op.apply_forward(s);
        const ComplexVolume ahy = op.apply_adjoint(y);
        const double gap = std::abs(dot(as, y) - dot(s.values(), ahy.values()));
        EXPECT_LT(gap / (norm2(as) * norm2(y)), 1e-10);
    }
}

TEST(Adjoint, DotProductIdentityOnMillsCross) {
    const ForwardOperator op(mills_cross_array({0.3, 12, 13, 4e9, 16e9, 5}, centered_grid({9, 9, 13})));
    std::mt19937_64 rng(8);
    const ComplexVolume s = random_volume(op.grid(), rng);
    const CVector y = random_vector(op.rows(), rng);
    const double gap = std::abs(dot(op.apply_forward(s), y) - dot(s.values(), op.apply_adjoint(y).values()));
    EXPECT_LT(gap / (norm2(op.apply_forward(s)) * norm2(y)), 1e-10);
}

TEST(Forward, BitIdenticalAcrossThreadCounts) {
    const ImagingGeometry g = random_geometry({9, 8, 7}, 3, 3, 6, 12, true);
    std::mt19937_64 rng(1);
    const ComplexVolume s = random_volume(g.grid, rng);
    const CVector y = random_vector(g.channels.size(), rng);
    const ForwardOperator one(g, {}, {1, std::size_t{1} << 30});
    for (unsigned t : {2u, 3u, 8u}) {
        const ForwardOperator many(g, {}, {t, std::size_t{1} << 30});
        EXPECT_EQ(one.apply_forward(s), many.apply_forward(s));
        EXPECT_EQ(one.apply_adjoint(y), many.apply_adjoint(y));
    }
}

TEST(Forward, ConcurrentCallsAgree) {
    const ForwardOperator op(random_geometry({6, 6, 6}, 2, 2, 10, 3, true));
    std::mt19937_64 rng(2);
    const ComplexVolume s = random_volume(op.grid(), rng);
    const CVector ref = op.apply_forward(s);
    std::vector<CVector> out(4);
    std::vector<std::thread> pool;
    for (int i = 0; i < 4; ++i) pool.emplace_back([&, i] { out[i] = op.apply_forward(s); });
    for (auto& t : pool) t.join();
    for (const auto& o : out) EXPECT_EQ(o, ref);
}

TEST(Forward, DimensionErrors) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 2, 2, 1, true));
    CVector y(op.rows());
    std::vector<cplx> s(5);
    EXPECT_THROW(op.apply(s, y), DimensionError);
    EXPECT_THROW((void)op.apply_adjoint(CVector(3)), DimensionError);
    EXPECT_THROW(ForwardOperator(op.geometry(), std::vector<cplx>(7)), DimensionError);
}

TEST(Simulate, NoiselessIsExact) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 2, 4, 1, true));
    std::mt19937_64 rng(5);
    const ComplexVolume s = random_volume(op.grid(), rng);
    const MeasurementSet y = simulate_measurements(op, s, kInfDb, 1);
    EXPECT_EQ(y.values, op.apply_forward(s));
    EXPECT_EQ(y.noise_sigma, 0.0);
    EXPECT_EQ(y.geometry_digest, op.digest());
}

TEST(Simulate, DeterministicGivenSeed) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 2, 4, 1, true));
    std::mt19937_64 rng(5);
    const ComplexVolume s = random_volume(op.grid(), rng);
    EXPECT_EQ(simulate_measurements(op, s, 10, 42).values, simulate_measurements(op, s, 10, 42).values);
    EXPECT_NE(simulate_measurements(op, s, 10, 42).values, simulate_measurements(op, s, 10, 43).values);
}

TEST(Simulate, Errors) {
    const ForwardOperator op(random_geometry({3, 3, 3}, 2, 2, 4, 1, true));
    const ComplexVolume zero(op.grid());
    EXPECT_THROW(simulate_measurements(op, zero, 20, 1), NumericalError);
    EXPECT_NO_THROW(simulate_measurements(op, zero, kInfDb, 1));
    ComplexVolume one(op.grid());
    one[0] = 1;
    EXPECT_THROW(simulate_measurements(op, one, std::nan(""), 1), ArgumentError);
    EXPECT_THROW(simulate_measurements(op, one, -kInfDb, 1), ArgumentError);
}

namespace {
// 100 000 channels on a single voxel: 50 tx x 50 rx x 40 wavenumbers.
ForwardOperator big_channel_operator() {
    ImagingGeometry g = random_geometry({1, 1, 1}, 50, 50, 40, 77, true);
    return ForwardOperator(std::move(g));
}
}  // namespace

TEST(Simulate, EmpiricalSnrMatchesRequest) {
    const ForwardOperator op = big_channel_operator();
    ASSERT_GE(op.rows(), 100000u);
    ComplexVolume s(op.grid());
    s[0] = {0.6, -0.8};
    const CVector clean = op.apply_forward(s);
    for (double snr : {0.0, 10.0, 20.0, 30.0}) {
        const MeasurementSet y = simulate_measurements(op, s, snr, 1000 + static_cast<int>(snr));
        EXPECT_NEAR(empirical_snr(clean, y.values), snr, 0.3) << snr;
        const double expected_sigma = std::sqrt(squared_norm(clean) / (op.rows() * std::pow(10, snr / 10)));
        EXPECT_NEAR(*y.noise_sigma, expected_sigma, 1e-12 * expected_sigma);
    }
}

TEST(Simulate, NoiseIsCircularWithEqualHalves) {
    const ForwardOperator op = big_channel_operator();
    ComplexVolume s(op.grid());
    s[0] = 1.0;
    const CVector clean = op.apply_forward(s);
    const MeasurementSet y = simulate_measurements(op, s, 0.0, 99);
    const double sigma = *y.noise_sigma;
    double vr = 0, vi = 0, cross = 0;
    for (std::size_t m = 0; m < clean.size(); ++m) {
        const cplx w = y.values[m] - clean[m];
        vr += w.real() * w.real();
        vi += w.imag() * w.imag();
        cross += w.real() * w.imag();
    }
    const double n = static_cast<double>(clean.size());
    // Each half carries sigma^2 / 2; relative standard error ~ sqrt(2/n) ~ 0.45 %.
    EXPECT_NEAR(vr / n, sigma * sigma / 2, 0.03 * sigma * sigma / 2);
    EXPECT_NEAR(vi / n, sigma * sigma / 2, 0.03 * sigma * sigma / 2);
    EXPECT_NEAR(cross / n, 0.0, 0.02 * sigma * sigma);
}
