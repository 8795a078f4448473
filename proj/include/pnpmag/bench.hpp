#pragma once

// Experiment drivers: per-scene evaluation of a prior, the coarse-to-fine
// alpha search and the compression / SNR sweeps.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "baselines.hpp"
#include "core.hpp"
#include "denoise.hpp"
#include "forward_model.hpp"
#include "io.hpp"
#include "metrics.hpp"
#include "parallel.hpp"
#include "plugin.hpp"
#include "scene_gen.hpp"
#include "solver.hpp"

namespace pnpmag {

// ---------------------------------------------------------------------------
// Priors

enum class Prior { bp, l1, tv, pnp, identity };

inline Prior parse_prior(const std::string& s) {
    if (s == "bp") return Prior::bp;
    if (s == "l1") return Prior::l1;
    if (s == "tv") return Prior::tv;
    if (s == "pnp") return Prior::pnp;
    if (s == "identity") return Prior::identity;
    throw ArgumentError("unknown prior '" + s + "' (expected bp, l1, tv, pnp or identity)");
}

inline const char* to_string(Prior p) {
    switch (p) {
        case Prior::bp: return "bp";
        case Prior::l1: return "l1";
        case Prior::tv: return "tv";
        case Prior::pnp: return "pnp";
        case Prior::identity: return "identity";
    }
    return "?";
}

inline DenoiserKind denoiser_kind(Prior p) {
    switch (p) {
        case Prior::l1: return DenoiserKind::soft_threshold;
        case Prior::tv: return DenoiserKind::tv_chambolle;
        case Prior::pnp: return DenoiserKind::external;
        default: return DenoiserKind::identity;
    }
}

/// A prior plus its solver settings. Unset fields take the per-kind defaults.
struct PriorSettings {
    Prior prior = Prior::l1;
    double alpha = 1e-3;
    std::optional<double> kappa;
    std::optional<int> max_iters;
    std::optional<double> rel_change_tol;
    std::optional<int> cg_iters;
    int tv_inner_iters = 5;
    std::string plugin;  // endpoint, required for pnp

    [[nodiscard]] SolverConfig solver_config(double epsilon) const {
        SolverConfig c = SolverConfig::defaults_for(denoiser_kind(prior));
        c.alpha = alpha;
        c.epsilon = epsilon;
        if (kappa) c.kappa = *kappa;
        if (max_iters) c.max_iters = *max_iters;
        if (rel_change_tol) c.rel_change_tol = *rel_change_tol;
        if (cg_iters) c.cg_iters = *cg_iters;
        return c;
    }
};

inline std::unique_ptr<MagnitudeDenoiser> make_denoiser(const PriorSettings& p) {
    switch (p.prior) {
        case Prior::l1: return std::make_unique<SoftThresholdDenoiser>();
        case Prior::tv: return std::make_unique<TvChambolleDenoiser>(p.tv_inner_iters);
        case Prior::pnp:
            if (p.plugin.empty()) throw ArgumentError("the pnp prior needs a plugin endpoint");
            return std::make_unique<ExternalDenoiser>(p.plugin);
        case Prior::identity: return std::make_unique<IdentityDenoiser>();
        case Prior::bp: break;
    }
    return nullptr;
}

/// Epsilon for a measurement set: the noise-matched radius when sigma is
/// known, the ||y||/sqrt(10) rule otherwise.
inline double epsilon_for(const MeasurementSet& y) {
    if (y.noise_sigma) return default_epsilon(*y.noise_sigma, y.values.size());
    return experimental_epsilon(y.values);
}

struct PriorRun {
    ComplexVolume image;  // bp results carry zero phase
    IterationTrace trace;
    double ms = 0;
};

/// Runs one prior on one measurement set. `denoiser` may be null for bp and
/// is created on demand otherwise.
inline PriorRun run_prior(const PriorSettings& p, const MeasurementSet& y, const ForwardOperator& op,
                          MagnitudeDenoiser* denoiser = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    PriorRun out;
    if (p.prior == Prior::bp) {
        const MagnitudeVolume m = back_projection(y, op);
        out.image = ComplexVolume(m.grid());
        for (std::size_t n = 0; n < m.size(); ++n) out.image[n] = m[n];
    } else {
        std::unique_ptr<MagnitudeDenoiser> owned;
        if (!denoiser) {
            owned = make_denoiser(p);
            denoiser = owned.get();
        }
        Reconstruction r = reconstruct(y, op, *denoiser, p.solver_config(epsilon_for(y)));
        out.image = std::move(r.image);
        out.trace = std::move(r.trace);
    }
    out.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// Scenes and measurement seeds

struct SceneRef {
    std::filesystem::path path;
    std::uint64_t seed = 0;
};

/// Scenes of one split from a manifest, paths resolved against its directory.
inline std::vector<SceneRef> manifest_scenes(const std::filesystem::path& manifest, const std::string& split) {
    std::vector<SceneRef> out;
    for (const auto& e : read_manifest(manifest))
        if (split.empty() || e.split == split) out.push_back({manifest.parent_path() / e.path, e.seed});
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Noise seed for (scene, setting); independent of evaluation order.
inline std::uint64_t measurement_seed(std::uint64_t base, std::uint64_t scene_seed, std::uint64_t setting) {
    return splitmix64(base ^ splitmix64(scene_seed ^ splitmix64(setting)));
}

/// Mill's Cross geometry on the scene's grid with the given number of frequencies.
inline ImagingGeometry preset_geometry(const GridSpec& grid, int n_freq) {
    MillsCrossParams p;
    p.n_freq = n_freq;
    return mills_cross_array(p, grid);
}

// ---------------------------------------------------------------------------
// Alpha search

struct AlphaGrid {
    double lo = 1e-5;
    double hi = 1e-1;
    int per_decade = 5;
    int fine_points = 9;  // odd; spans +-1 coarse step around the coarse winner

    void validate() const {
        if (!(lo > 0) || !(hi > lo)) throw ArgumentError("alpha grid needs 0 < lo < hi");
        if (per_decade < 1) throw ArgumentError("alpha grid needs >= 1 point per decade");
        if (fine_points < 3 || fine_points % 2 == 0) throw ArgumentError("fine_points must be odd and >= 3");
    }
    [[nodiscard]] int sub_steps() const { return (fine_points - 1) / 2; }
    // Grid points live on an integer lattice of 1/(per_decade * sub_steps) decades.
    [[nodiscard]] int coarse_units() const { return sub_steps(); }
    [[nodiscard]] long max_unit() const {
        return static_cast<long>(std::floor(std::log10(hi / lo) * per_decade * sub_steps() + 1e-9));
    }
    [[nodiscard]] double alpha_at(long unit) const {
        if (unit == max_unit() && std::abs(std::log10(hi / lo) * per_decade * sub_steps() - unit) < 1e-9)
            return hi;
        return lo * std::pow(10.0, static_cast<double>(unit) / (per_decade * sub_steps()));
    }
};

struct AlphaRow {
    std::string stage;  // "coarse" or "fine"
    double alpha = 0;
    double mean_psnr = 0;
};

struct AlphaSearchResult {
    std::vector<AlphaRow> rows;
    double best_alpha = 0;
    double best_psnr = 0;
};

/// Two-stage log-grid search maximizing `mean_psnr(alpha)`. Ties go to the
/// smallest alpha. The fine window is +-1 coarse step around the coarse
/// winner, shifted inward where it would leave [lo, hi]; repeated grid points
/// are evaluated once and reported in both stages.
inline AlphaSearchResult search_alpha(const std::function<double(double)>& mean_psnr, const AlphaGrid& grid = {}) {
    grid.validate();
    std::map<long, double> cache;
    AlphaSearchResult res;
    const auto eval = [&](const char* stage, long unit) {
        auto it = cache.find(unit);
        if (it == cache.end()) it = cache.emplace(unit, mean_psnr(grid.alpha_at(unit))).first;
        res.rows.push_back({stage, grid.alpha_at(unit), it->second});
    };
    const long step = grid.coarse_units();
    const long top = grid.max_unit();
    for (long u = 0; u <= top; u += step) eval("coarse", u);

    const auto best_of = [&](const std::vector<long>& units) {
        long best = units.front();
        for (long u : units)
            if (cache.at(u) > cache.at(best) || (cache.at(u) == cache.at(best) && u < best)) best = u;
        return best;
    };
    std::vector<long> coarse;
    for (long u = 0; u <= top; u += step) coarse.push_back(u);
    const long centre = best_of(coarse);

    long first = centre - step;
    first = std::max(0L, std::min(first, top - 2 * step));
    if (top < 2 * step) first = 0;
    for (int i = 0; i < grid.fine_points; ++i) eval("fine", std::min<long>(first + i, top));

    std::vector<long> all;
    for (const auto& [u, v] : cache) all.push_back(u);
    const long best = best_of(all);
    res.best_alpha = grid.alpha_at(best);
    res.best_psnr = cache.at(best);
    return res;
}

// ---------------------------------------------------------------------------
// Scene evaluation shared by the search and the sweeps

struct EvalSettings {
    double snr_db = 30;
    int n_freq = 20;
    std::uint64_t noise_seed = 1;
    unsigned workers = 1;
};

struct SceneResult {
    std::string scene;
    std::uint64_t scene_seed = 0;
    double psnr = 0;
    int iters = 0;
    double residual = 0;
    double epsilon = 0;
    double ms = 0;
};

/// Caches one operator per frequency count for a fixed grid.
class OperatorCache {
public:
    const ForwardOperator& get(const GridSpec& grid, int n_freq) {
        std::lock_guard lock(mu_);
        auto& slot = ops_[n_freq];
        if (!slot || slot->grid().dims != grid.dims) slot = std::make_unique<ForwardOperator>(preset_geometry(grid, n_freq));
        return *slot;
    }

private:
    std::mutex mu_;
    std::map<int, std::unique_ptr<ForwardOperator>> ops_;
};

inline ComplexVolume load_scene(const std::filesystem::path& path) {
    CvolContents c = read_cvol(path);
    if (c.kind != CvolKind::complex) throw IoError(path.string() + ": expected a complex volume");
    return c.as_complex();
}

/// Simulates and reconstructs every scene with every prior. `setting` keys
/// the noise seed so that all priors see identical measurements.
inline std::vector<std::vector<SceneResult>> evaluate_scenes(const std::vector<SceneRef>& scenes,
                                                             const std::vector<PriorSettings>& priors,
                                                             const EvalSettings& ev, std::uint64_t setting,
                                                             OperatorCache& ops) {
    std::vector<std::vector<SceneResult>> out(priors.size(), std::vector<SceneResult>(scenes.size()));
    const unsigned workers = std::max(1u, ev.workers);
    parallel_chunks(scenes.size(), workers, [&](unsigned, std::size_t b, std::size_t e) {
        std::vector<std::unique_ptr<MagnitudeDenoiser>> denoisers;
        for (const auto& p : priors) denoisers.push_back(p.prior == Prior::bp ? nullptr : make_denoiser(p));
        for (std::size_t i = b; i < e; ++i) {
            const ComplexVolume scene = load_scene(scenes[i].path);
            const MagnitudeVolume gt = magnitude(scene);
            require_unit_range(gt);
            const ForwardOperator& op = ops.get(scene.grid(), ev.n_freq);
            const MeasurementSet y = simulate_measurements(
                op, scene, ev.snr_db, measurement_seed(ev.noise_seed, scenes[i].seed, setting));
            for (std::size_t k = 0; k < priors.size(); ++k) {
                PriorRun run = run_prior(priors[k], y, op, denoisers[k].get());
                SceneResult& r = out[k][i];
                r.scene = scenes[i].path.filename().string();
                r.scene_seed = scenes[i].seed;
                r.psnr = psnr(gt, run.image);
                if (!run.trace.records.empty()) {
                    r.iters = run.trace.records.back().iter;
                    r.residual = run.trace.records.back().residual;
                } else {
                    r.residual = std::numeric_limits<double>::quiet_NaN();
                }
                r.epsilon = epsilon_for(y);
                r.ms = run.ms;
            }
        }
    });
    return out;
}

inline double mean_psnr(const std::vector<SceneResult>& rs) {
    if (rs.empty()) throw ArgumentError("no scenes to average");
    double s = 0;
    for (const auto& r : rs) s += r.psnr;
    return s / static_cast<double>(rs.size());
}

/// Alpha search over a validation set: each alpha is scored by the mean PSNR
/// of `prior` over all scenes.
inline AlphaSearchResult search_alpha(const std::vector<SceneRef>& scenes, PriorSettings prior,
                                      const EvalSettings& ev, const AlphaGrid& grid = {}) {
    if (scenes.empty()) throw ArgumentError("alpha search needs at least one validation scene");
    OperatorCache ops;
    return search_alpha(
        [&](double alpha) {
            prior.alpha = alpha;
            return mean_psnr(evaluate_scenes(scenes, {prior}, ev, 0, ops).front());
        },
        grid);
}

inline void write_alpha_report(std::ostream& out, const AlphaSearchResult& r) {
    char line[128];
    out << "stage   alpha         mean_psnr_db\n";
    for (const auto& row : r.rows) {
        std::snprintf(line, sizeof line, "%-7s %-13.6e %.4f\n", row.stage.c_str(), row.alpha, row.mean_psnr);
        out << line;
    }
    std::snprintf(line, sizeof line, "best    %-13.6e %.4f\n", r.best_alpha, r.best_psnr);
    out << line;
}

// ---------------------------------------------------------------------------
// Sweeps

enum class SweepAxis { compression, snr };

inline SweepAxis parse_axis(const std::string& s) {
    if (s == "compression") return SweepAxis::compression;
    if (s == "snr") return SweepAxis::snr;
    throw ArgumentError("unknown sweep axis '" + s + "' (expected compression or snr)");
}

struct SweepPlan {
    SweepAxis axis = SweepAxis::compression;
    std::vector<double> values;  // frequency steps or SNR in dB
    std::vector<PriorSettings> priors;
    EvalSettings base;           // snr_db used on the compression axis, n_freq on the snr axis
};

struct SweepRecord {
    std::string prior;
    double axis_value = 0;
    SceneResult result;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::compression;
    std::vector<double> values;
    std::vector<std::string> priors;
    std::vector<std::vector<double>> mean_psnr;  // [prior][value]
    std::vector<SweepRecord> records;
};

inline const std::vector<double>& default_axis_values(SweepAxis axis) {
    static const std::vector<double> compression{5, 10, 15, 20, 30, 40};
    static const std::vector<double> snr{0, 10, 20, 30};
    return axis == SweepAxis::compression ? compression : snr;
}

/// Percentage of the 25x25x49 unknowns covered by the 12x13 Mill's Cross with n_freq steps.
inline double preset_data_percent(int n_freq, const Dims& dims = {25, 25, 49}) {
    return 100.0 * data_fraction(static_cast<std::size_t>(12 * 13 * n_freq), dims.size());
}

inline SweepResult run_sweep(const std::vector<SceneRef>& scenes, const SweepPlan& plan) {
    if (plan.priors.empty()) throw ArgumentError("sweep needs at least one prior");
    if (plan.values.empty()) throw ArgumentError("sweep needs at least one axis value");
    if (scenes.empty()) throw ArgumentError("sweep needs at least one scene");
    SweepResult res;
    res.axis = plan.axis;
    res.values = plan.values;
    for (const auto& p : plan.priors) res.priors.push_back(to_string(p.prior));
    res.mean_psnr.assign(plan.priors.size(), std::vector<double>(plan.values.size()));
    OperatorCache ops;
    for (std::size_t v = 0; v < plan.values.size(); ++v) {
        EvalSettings ev = plan.base;
        if (plan.axis == SweepAxis::compression) {
            const double steps = plan.values[v];
            if (!(steps >= 1) || steps != std::floor(steps))
                throw ArgumentError("compression axis values are frequency step counts (integers >= 1)");
            ev.n_freq = static_cast<int>(steps);
        } else {
            ev.snr_db = plan.values[v];
        }
        const auto per_prior = evaluate_scenes(scenes, plan.priors, ev, v + 1, ops);
        for (std::size_t k = 0; k < plan.priors.size(); ++k) {
            res.mean_psnr[k][v] = mean_psnr(per_prior[k]);
            for (const auto& r : per_prior[k]) res.records.push_back({res.priors[k], plan.values[v], r});
        }
    }
    return res;
}

inline std::string format_db(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

/// Fixed-width table: one row per prior, one column per axis value.
inline void write_sweep_table(std::ostream& out, const SweepResult& r) {
    char cell[64];
    std::snprintf(cell, sizeof cell, "%-10s", r.axis == SweepAxis::compression ? "data%" : "snr_db");
    out << cell;
    for (double v : r.values) {
        if (r.axis == SweepAxis::compression)
            std::snprintf(cell, sizeof cell, " %9.2f", preset_data_percent(static_cast<int>(v)));
        else
            std::snprintf(cell, sizeof cell, " %9g", v);
        out << cell;
    }
    out << '\n';
    for (std::size_t k = 0; k < r.priors.size(); ++k) {
        std::snprintf(cell, sizeof cell, "%-10s", r.priors[k].c_str());
        out << cell;
        for (double m : r.mean_psnr[k]) {
            std::snprintf(cell, sizeof cell, " %9s", format_db(m).c_str());
            out << cell;
        }
        out << '\n';
    }
}

inline nlohmann::json db_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return nullptr;
    return v;
}

inline void write_sweep_records(std::ostream& out, const SweepResult& r) {
    for (const auto& rec : r.records)
        out << nlohmann::json{{"prior", rec.prior},
                              {r.axis == SweepAxis::compression ? "freq_steps" : "snr_db", rec.axis_value},
                              {"scene", rec.result.scene},
                              {"scene_seed", rec.result.scene_seed},
                              {"psnr_db", db_json(rec.result.psnr)},
                              {"iters", rec.result.iters},
                              {"residual", db_json(rec.result.residual)},
                              {"epsilon", rec.result.epsilon},
                              {"ms", rec.result.ms}}
                   .dump()
            << '\n';
}

}  // namespace pnpmag
