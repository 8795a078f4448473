// Small end-to-end run: a random scene on a coarse grid, 30 dB measurements
// from a Mill's Cross, then back-projection, l1 and TV reconstructions.
// A large TV weight flattens the magnitudes, hence the smaller TV alpha.

#include <cstdio>

#include <pnpmag/pnpmag.hpp>

int main() {
    using namespace pnpmag;

    SceneRecipe recipe;
    recipe.dims = {13, 13, 17};
    recipe.n_points = 4;
    recipe.seed = 3;
    const GridSpec grid = centered_grid(recipe.dims, {0.025, 0.025, 0.0125});
    const ComplexVolume scene = generate_scene(recipe, grid);
    const MagnitudeVolume gt = magnitude(scene);

    MillsCrossParams array;
    array.n_freq = 10;
    const ForwardOperator op(mills_cross_array(array, grid));
    const MeasurementSet y = simulate_measurements(op, scene, 30.0, 11);
    std::printf("N=%zu M=%zu CL=%.3f\n", op.cols(), op.rows(), compression_level(op.rows(), op.cols()));

    std::printf("bp  psnr=%.2f dB\n", psnr(gt, back_projection(y, op)));
    for (Prior p : {Prior::l1, Prior::tv}) {
        PriorSettings ps;
        ps.prior = p;
        ps.alpha = p == Prior::l1 ? 1e-3 : 1e-4;
        const PriorRun run = run_prior(ps, y, op);
        std::printf("%-3s psnr=%.2f dB  iters=%zu  residual/eps=%.3f\n", to_string(p), psnr(gt, run.image),
                    run.trace.records.size(), run.trace.records.back().residual / epsilon_for(y));
    }
}
