// pnpmag: dataset generation, simulation, reconstruction, alpha search and sweeps.
//
// Exit codes: 0 ok, 1 usage, 2 I/O, 3 numerical failure.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <pnpmag/pnpmag.hpp>

namespace {

using namespace pnpmag;

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kNumerical = 3 };

struct ArrayFlags {
    int freqs = 20;
    double width = 0.3;
    int n_tx = 12;
    int n_rx = 13;
    double f_lo = 4e9;
    double f_hi = 16e9;
    std::vector<std::size_t> dims{25, 25, 49};
    std::string geometry;

    void add(CLI::App* app, bool with_dims) {
        app->add_option("--geometry", geometry, "Geometry JSON file (overrides the Mill's Cross preset)");
        app->add_option("--freqs", freqs, "Mill's Cross: number of frequency steps")->check(CLI::PositiveNumber);
        app->add_option("--aperture", width, "Mill's Cross: aperture width [m]")->check(CLI::PositiveNumber);
        app->add_option("--n-tx", n_tx, "Mill's Cross: transmitters")->check(CLI::PositiveNumber);
        app->add_option("--n-rx", n_rx, "Mill's Cross: receivers")->check(CLI::PositiveNumber);
        app->add_option("--f-lo", f_lo, "Mill's Cross: lowest frequency [Hz]");
        app->add_option("--f-hi", f_hi, "Mill's Cross: highest frequency [Hz]");
        if (with_dims) app->add_option("--dims", dims, "Mill's Cross: grid dims nx ny nz")->expected(3);
    }

    [[nodiscard]] GeometryFile resolve(const GridSpec* scene_grid) const {
        if (!geometry.empty()) return read_geometry(geometry);
        MillsCrossParams p{width, n_tx, n_rx, f_lo, f_hi, freqs};
        const GridSpec grid = scene_grid ? *scene_grid : centered_grid({dims[0], dims[1], dims[2]});
        return {mills_cross_array(p, grid), {}};
    }
};

struct SolverFlags {
    std::string prior = "l1";
    double alpha = 1e-3;
    std::optional<double> kappa, tol, epsilon;
    std::optional<int> max_iters, cg_iters;
    int tv_inner = 5;
    std::string plugin;

    void add(CLI::App* app, bool with_prior) {
        if (with_prior)
            app->add_option("--prior", prior, "bp, l1, tv, pnp or identity")
                ->check(CLI::IsMember({"bp", "l1", "tv", "pnp", "identity"}));
        app->add_option("--alpha", alpha, "Regularization weight")->check(CLI::NonNegativeNumber);
        app->add_option("--kappa", kappa, "Penalty ratio (default 5e4, 5e2 for pnp)");
        app->add_option("--tol", tol, "Relative-change stopping tolerance (default 5e-4)");
        app->add_option("--max-iters", max_iters, "Iteration cap (default 1000, 30 for pnp)");
        app->add_option("--cg-iters", cg_iters, "CG steps per s-update (default 5)");
        app->add_option("--tv-inner", tv_inner, "Chambolle iterations per TV prox")->check(CLI::NonNegativeNumber);
        app->add_option("--plugin", plugin, "Denoiser endpoint: host:port or a command line")
            ->envname(kPluginEnvVar);
    }

    [[nodiscard]] PriorSettings settings(Prior p) const {
        PriorSettings s;
        s.prior = p;
        s.alpha = alpha;
        s.kappa = kappa;
        s.max_iters = max_iters;
        s.rel_change_tol = tol;
        s.cg_iters = cg_iters;
        s.tv_inner_iters = tv_inner;
        s.plugin = plugin;
        if (p == Prior::pnp && plugin.empty())
            throw ArgumentError("--prior pnp needs --plugin or $" + std::string(kPluginEnvVar));
        return s;
    }
};

struct EvalFlags {
    std::string manifest;
    std::string split;
    double snr = 30;
    int freqs = 20;
    std::uint64_t noise_seed = 1;
    unsigned workers = 1;
    std::size_t max_scenes = 0;

    void add(CLI::App* app, const std::string& default_split) {
        split = default_split;
        app->add_option("--manifest", manifest, "Dataset manifest (manifest.jsonl)")->required();
        app->add_option("--split", split, "Manifest split to use");
        app->add_option("--snr", snr, "Measurement SNR [dB]");
        app->add_option("--freqs", freqs, "Frequency steps of the Mill's Cross preset")->check(CLI::PositiveNumber);
        app->add_option("--noise-seed", noise_seed, "Base seed for measurement noise");
        app->add_option("--workers", workers, "Scenes evaluated in parallel")->check(CLI::PositiveNumber);
        app->add_option("--max-scenes", max_scenes, "Use only the first N scenes (0 = all)");
    }

    [[nodiscard]] std::vector<SceneRef> scenes() const {
        auto s = manifest_scenes(manifest, split);
        if (s.empty()) throw ArgumentError("no scenes with split '" + split + "' in " + manifest);
        if (max_scenes > 0 && s.size() > max_scenes) s.resize(max_scenes);
        return s;
    }
    [[nodiscard]] EvalSettings settings() const { return {snr, freqs, noise_seed, workers}; }
};

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    return f;
}

// Per-prior alpha overrides given as prior=value.
std::map<std::string, double> parse_alpha_map(const std::vector<std::string>& items) {
    std::map<std::string, double> out;
    for (const auto& it : items) {
        const auto eq = it.find('=');
        if (eq == std::string::npos) throw ArgumentError("--alpha-for expects prior=value, got '" + it + "'");
        try {
            out[it.substr(0, eq)] = std::stod(it.substr(eq + 1));
        } catch (const std::exception&) {
            throw ArgumentError("bad alpha value in '" + it + "'");
        }
    }
    return out;
}

int run(int argc, char** argv) {
    CLI::App app{"Magnitude-regularized near-field MIMO imaging: simulate, reconstruct, benchmark"};
    app.set_config("--config", "", "INI/TOML file supplying any flag");
    app.require_subcommand(1);

    // gen-dataset
    auto* gen = app.add_subcommand("gen-dataset", "Write random extended-target scenes and a manifest");
    SceneRecipe recipe;
    std::vector<std::size_t> gen_dims{25, 25, 49};
    SplitCounts counts;
    std::string gen_out;
    gen->add_option("--train", counts.train, "Training scenes");
    gen->add_option("--val", counts.val, "Validation scenes");
    gen->add_option("--test", counts.test, "Test scenes");
    gen->add_option("--seed", recipe.seed, "Base seed; scene i gets seed + i");
    gen->add_option("--dims", gen_dims, "Grid dims nx ny nz")->expected(3);
    gen->add_option("--points", recipe.n_points, "Impulses per scene");
    gen->add_option("--sigma", recipe.gaussian_sigma_voxels, "Gaussian blur sigma [voxels]");
    gen->add_option("--gain", recipe.sigmoid_gain, "Sigmoid gain");
    gen->add_option("-o,--out", gen_out, "Output directory")->required();

    // simulate
    auto* sim = app.add_subcommand("simulate", "Simulate noisy measurements of a scene");
    std::string sim_scene, sim_out, sim_geom_out;
    double sim_snr = 30;
    bool sim_noiseless = false;
    std::uint64_t sim_seed = 1;
    ArrayFlags sim_array;
    sim->add_option("--scene", sim_scene, "Complex CVOL scene")->required();
    sim_array.add(sim, false);
    auto* snr_opt = sim->add_option("--snr", sim_snr, "SNR [dB]");
    sim->add_flag("--noiseless", sim_noiseless, "No noise (sigma recorded as 0)")->excludes(snr_opt);
    sim->add_option("--seed", sim_seed, "Noise seed");
    sim->add_option("-o,--out", sim_out, "Output CMEA file")->required();
    sim->add_option("--write-geometry", sim_geom_out, "Also write the geometry used as JSON");

    // reconstruct
    auto* rec = app.add_subcommand("reconstruct", "Reconstruct a scene from measurements");
    std::string rec_meas, rec_out, rec_trace, rec_gt;
    std::optional<double> rec_epsilon;
    ArrayFlags rec_array;
    SolverFlags rec_solver;
    rec->add_option("-m,--measurements", rec_meas, "CMEA file")->required();
    rec_array.add(rec, true);
    rec_solver.add(rec, true);
    rec->add_option("--epsilon", rec_epsilon, "Data-ball radius (default from the recorded noise sigma)");
    rec->add_option("-o,--out", rec_out, "Output CVOL (complex)")->required();
    rec->add_option("--trace", rec_trace, "Per-iteration trace (JSON lines)");
    rec->add_option("--gt", rec_gt, "Ground-truth scene; prints PSNR");

    // search-alpha
    auto* search = app.add_subcommand("search-alpha", "Coarse-to-fine alpha search on a validation split");
    EvalFlags search_eval;
    SolverFlags search_solver;
    AlphaGrid grid;
    std::string search_out;
    search_eval.add(search, "val");
    search_solver.add(search, true);
    search->add_option("--lo", grid.lo, "Smallest alpha");
    search->add_option("--hi", grid.hi, "Largest alpha");
    search->add_option("--per-decade", grid.per_decade, "Coarse points per decade");
    search->add_option("--fine-points", grid.fine_points, "Fine points (odd)");
    search->add_option("-o,--out", search_out, "Also write the report here");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "PSNR table over compression or SNR");
    EvalFlags sweep_eval;
    SolverFlags sweep_solver;
    std::string sweep_axis = "compression", sweep_table, sweep_records;
    std::vector<double> sweep_values;
    std::vector<std::string> sweep_priors{"bp", "l1", "tv"}, sweep_alphas;
    sweep_eval.add(sweep, "test");
    sweep_solver.add(sweep, false);
    sweep->add_option("--axis", sweep_axis, "compression or snr")->check(CLI::IsMember({"compression", "snr"}));
    sweep->add_option("--values", sweep_values, "Axis values (frequency steps or dB)");
    auto* priors_opt = sweep->add_option("--priors", sweep_priors, "Priors to compare")->expected(0, -1);
    sweep->add_option("--alpha-for", sweep_alphas, "Per-prior alpha, e.g. l1=1e-3 tv=3e-3");
    sweep->add_option("--table", sweep_table, "Write the table here as well as to stdout");
    sweep->add_option("--records", sweep_records, "Per-scene records (JSON lines)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help requests exit 0; every other parse failure is a usage error.
        return app.exit(e) == 0 ? kOk : kUsage;
    }

    if (*gen) {
        recipe.dims = {gen_dims[0], gen_dims[1], gen_dims[2]};
        const auto rows = generate_dataset(recipe, counts, gen_out);
        std::cout << "wrote " << rows.size() << " scenes to " << gen_out << "\n";
        return kOk;
    }

    if (*sim) {
        const ComplexVolume scene = read_cvol(sim_scene).as_complex();
        const GeometryFile g = sim_array.resolve(&scene.grid());
        require_same_dims(g.geometry.grid, scene.grid(), "scene vs geometry grid");
        const ForwardOperator op(g.geometry, g.pulse);
        const double snr = sim_noiseless ? kInfDb : sim_snr;
        const MeasurementSet y = simulate_measurements(op, scene, snr, sim_seed);
        write_cmea(sim_out, y);
        if (!sim_geom_out.empty()) write_geometry(sim_geom_out, g.geometry, g.pulse);
        std::cout << "M=" << y.values.size() << " sigma_w=" << *y.noise_sigma << " digest=" << to_hex(op.digest())
                  << "\n";
        return kOk;
    }

    if (*rec) {
        const Prior prior = parse_prior(rec_solver.prior);
        const PriorSettings ps = rec_solver.settings(prior);
        MeasurementSet y = read_cmea(rec_meas);
        const GeometryFile g = rec_array.resolve(nullptr);
        const ForwardOperator op(g.geometry, g.pulse);
        if (y.geometry_digest != op.digest())
            throw ArgumentError("measurements were not produced with this geometry (digest " +
                                to_hex(y.geometry_digest) + " vs " + to_hex(op.digest()) + ")");
        if (rec_epsilon) {
            // An explicit radius replaces whatever the file recorded.
            if (!(*rec_epsilon >= 0)) throw ArgumentError("--epsilon must be >= 0");
            y.noise_sigma = *rec_epsilon / std::sqrt(static_cast<double>(y.values.size()));
        }
        PriorRun run;
        try {
            run = run_prior(ps, y, op);
        } catch (const ReconstructionAborted& e) {
            if (!rec_trace.empty()) {
                auto f = open_out(rec_trace);
                write_trace(f, e.trace);
            }
            throw;
        }
        write_cvol(rec_out, run.image);
        if (!rec_trace.empty()) {
            auto f = open_out(rec_trace);
            write_trace(f, run.trace);
        }
        std::cout << "prior=" << to_string(prior) << " iters=" << run.trace.records.size()
                  << " converged=" << (run.trace.converged ? "yes" : "no") << " ms=" << run.ms;
        if (!run.trace.records.empty()) std::cout << " residual=" << run.trace.records.back().residual;
        if (!rec_gt.empty()) {
            const MagnitudeVolume gt = magnitude(read_cvol(rec_gt).as_complex());
            require_unit_range(gt);
            std::cout << " psnr=" << format_db(psnr(gt, run.image));
        }
        std::cout << "\n";
        return kOk;
    }

    if (*search) {
        const Prior prior = parse_prior(search_solver.prior);
        if (prior == Prior::bp) throw ArgumentError("bp has no alpha to search");
        const auto result = search_alpha(search_eval.scenes(), search_solver.settings(prior), search_eval.settings(), grid);
        write_alpha_report(std::cout, result);
        if (!search_out.empty()) {
            auto f = open_out(search_out);
            write_alpha_report(f, result);
        }
        return kOk;
    }

    if (*sweep) {
        if (priors_opt->count() > 0 && sweep_priors.empty()) throw ArgumentError("--priors needs at least one prior");
        if (sweep_priors.empty()) throw ArgumentError("--priors needs at least one prior");
        const auto alphas = parse_alpha_map(sweep_alphas);
        SweepPlan plan;
        plan.axis = parse_axis(sweep_axis);
        plan.values = sweep_values.empty() ? default_axis_values(plan.axis) : sweep_values;
        plan.base = sweep_eval.settings();
        for (const auto& name : sweep_priors) {
            PriorSettings p = sweep_solver.settings(parse_prior(name));
            if (auto it = alphas.find(name); it != alphas.end()) p.alpha = it->second;
            plan.priors.push_back(p);
        }
        const SweepResult result = run_sweep(sweep_eval.scenes(), plan);
        write_sweep_table(std::cout, result);
        if (!sweep_table.empty()) {
            auto f = open_out(sweep_table);
            write_sweep_table(f, result);
        }
        if (!sweep_records.empty()) {
            auto f = open_out(sweep_records);
            write_sweep_records(f, result);
        }
        return kOk;
    }
    return kUsage;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const pnpmag::ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const pnpmag::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return kIo;
    } catch (const pnpmag::ReconstructionAborted& e) {
        std::cerr << "reconstruction aborted after " << e.trace.records.size() << " iterations: " << e.what() << "\n";
        return kIo;
    } catch (const pnpmag::NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kNumerical;
    }
}
