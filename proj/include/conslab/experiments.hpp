#pragma once

// Experiment registry (E1-E23), the cell runner and the on-disk result
// layout: <out>/<EID>/{config.json, results.json, trace_<cell>.csv, plots/}.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <ctime>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "conslab/data.hpp"
#include "conslab/drift.hpp"
#include "conslab/fitting.hpp"
#include "conslab/spectral.hpp"
#include "conslab/theory.hpp"

namespace conslab {

using Json = nlohmann::json;

inline constexpr int kConfigSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Specs and results
// ---------------------------------------------------------------------------

// A declarative expectation on one scalar (or boolean) metric.
struct Target {
    std::string metric;
    std::string op = "<=";  // <, <=, >, >=, in, true
    double lo = 0.0;
    double hi = 0.0;  // upper end for "in"
    bool hard = true;
    std::string note;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Target, metric, op, lo, hi, hard, note)

struct ExperimentSpec {
    std::string id;
    std::string name;
    std::string key_result;  // headline result this experiment checks
    std::string theory;
    std::string description;
    // data
    std::size_t n = 200, d = 20, c = 5;
    double separation = 2.0;
    std::vector<std::uint64_t> seeds{42, 137, 256, 512, 1024};
    // base training configuration
    std::size_t hidden = 64;
    std::size_t depth = 2;  // number of weight layers
    std::string activation = "relu";
    std::string loss = "mse";
    std::string optimizer = "gd";
    double eta = 0.01;
    std::size_t steps = 2000;
    // sweep axes (empty = not swept)
    std::vector<double> etas;
    std::vector<std::size_t> widths, depths, ns, dims;
    std::vector<std::string> activations, losses;
    Json params = Json::object();  // experiment-specific knobs
    std::vector<Target> targets;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentSpec, id, name, key_result, theory, description, n, d, c,
                                                separation, seeds, hidden, depth, activation, loss, optimizer, eta,
                                                steps, etas, widths, depths, ns, dims, activations, losses, params,
                                                targets)

struct TargetOutcome {
    Target target;
    bool evaluated = false;
    bool pass = false;
    Json measured;
};

struct ExperimentResult {
    std::string id, name, key_result;
    std::string status = "ok";  // ok | partial
    Json config;
    Json cells = Json::array();
    Json metrics = Json::object();
    Json fits = Json::object();
    Json notes = Json::array();
    std::vector<TargetOutcome> outcomes;
    double wall_seconds = 0.0;
    std::string started_at;

    bool passed() const {
        return std::all_of(outcomes.begin(), outcomes.end(),
                           [](const TargetOutcome& o) { return !o.target.hard || (o.evaluated && o.pass); });
    }

    // Everything except the "timing" field is a deterministic function of
    // the spec.
    Json to_json(bool with_timing = true) const {
        Json j;
        j["schema_version"] = kConfigSchemaVersion;
        j["id"] = id;
        j["name"] = name;
        j["key_result"] = key_result;
        j["status"] = status;
        j["passed"] = passed();
        j["metrics"] = metrics;
        j["fits"] = fits;
        j["cells"] = cells;
        j["notes"] = notes;
        j["targets"] = Json::array();
        for (const auto& o : outcomes)
            j["targets"].push_back({{"target", o.target},
                                    {"evaluated", o.evaluated},
                                    {"pass", o.pass},
                                    {"measured", o.measured}});
        if (with_timing) j["timing"] = {{"started_at", started_at}, {"wall_seconds", wall_seconds}};
        return j;
    }
};

// ---------------------------------------------------------------------------
// Run context: output layout and bounded parallelism
// ---------------------------------------------------------------------------

enum class TracePolicy { None, FirstSeed, All };

inline TracePolicy parse_trace_policy(const std::string& s) {
    if (s == "none") return TracePolicy::None;
    if (s == "first") return TracePolicy::FirstSeed;
    if (s == "all") return TracePolicy::All;
    throw InvalidInput("unknown trace policy '" + s + "' (none|first|all)");
}

struct RunContext {
    std::filesystem::path dir;  // <out>/<EID>; empty = write nothing
    std::size_t jobs = 1;
    TracePolicy traces = TracePolicy::FirstSeed;
    std::uint64_t first_seed = 0;

    bool writes() const { return !dir.empty(); }

    void trace(const std::string& cell, std::uint64_t seed, const TrainTrace& tr) const {
        if (!writes() || traces == TracePolicy::None) return;
        if (traces == TracePolicy::FirstSeed && seed != first_seed) return;
        std::ofstream os(dir / ("trace_" + cell + ".csv"));
        write_trace_csv(os, tr);
    }

    void plot(const std::string& name, const std::vector<std::string>& columns,
              const std::vector<std::vector<double>>& rows) const {
        if (!writes()) return;
        std::filesystem::create_directories(dir / "plots");
        std::ofstream os(dir / "plots" / (name + ".csv"));
        for (std::size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
        os << '\n' << std::setprecision(17);
        for (const auto& r : rows) {
            for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << r[i];
            os << '\n';
        }
    }
};

// Runs f(0..count-1) on at most `jobs` threads; results keep index order.
// The first exception (by index) is rethrown after all workers finish.
template <class F>
auto parallel_map(std::size_t count, std::size_t jobs, F&& f) {
    using R = decltype(f(std::size_t{}));
    std::vector<std::optional<R>> slots(count);
    std::vector<std::exception_ptr> errors(count);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < count;) {
            try {
                slots[i].emplace(f(i));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(count, 1));
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
    std::vector<R> out;
    out.reserve(count);
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

namespace detail {

template <class T>
T param(const ExperimentSpec& s, const char* key, T fallback) {
    return s.params.contains(key) ? s.params.at(key).get<T>() : fallback;
}

inline std::vector<std::size_t> layer_widths(std::size_t d, std::size_t hidden, std::size_t depth, std::size_t c) {
    if (depth < 2) throw InvalidInput("depth must be >= 2");
    std::vector<std::size_t> w{d};
    for (std::size_t l = 1; l < depth; ++l) w.push_back(hidden);
    w.push_back(c);
    return w;
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "gd") return OptimizerKind::gd();
    if (s == "adam") return OptimizerKind::adam();
    throw InvalidInput("unknown optimizer '" + s + "'");
}

inline Dataset dataset_for(const ExperimentSpec& s, std::uint64_t seed, std::size_t n = 0, std::size_t d = 0) {
    return gen_gaussian_mixture(n ? n : s.n, d ? d : s.d, s.c, s.separation, seed);
}

inline TrainConfig base_config(const ExperimentSpec& s, std::uint64_t seed) {
    TrainConfig cfg;
    cfg.widths = layer_widths(s.d, s.hidden, s.depth, s.c);
    cfg.activation = Activation::parse(s.activation);
    cfg.loss = parse_loss(s.loss);
    cfg.optimizer = parse_optimizer(s.optimizer);
    cfg.eta = s.eta;
    cfg.steps = s.steps;
    cfg.seed = seed;
    return cfg;
}

inline std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(4) << v;
    return os.str();
}

inline Json fit_json(const FitResult& f) {
    return {{"slope", f.slope},           {"intercept", f.intercept},
            {"r2", f.r2},                 {"stderr", f.stderr_slope},
            {"loglog_curvature", f.loglog_curvature}, {"points", f.points}};
}

inline Json stats_json(const Vector& v) {
    Json j{{"values", v}, {"n", v.size()}};
    if (!v.empty()) {
        j["mean"] = mean(v);
        j["stderr"] = v.size() > 1 ? sample_stddev(v) / std::sqrt(static_cast<double>(v.size())) : 0.0;
        j["min"] = *std::min_element(v.begin(), v.end());
        j["max"] = *std::max_element(v.begin(), v.end());
    }
    return j;
}

inline double vmin(const Vector& v) { return v.empty() ? std::nan("") : *std::min_element(v.begin(), v.end()); }
inline double vmax(const Vector& v) { return v.empty() ? std::nan("") : *std::max_element(v.begin(), v.end()); }
inline double vmean(const Vector& v) { return v.empty() ? std::nan("") : mean(v); }

// One GD (or Adam) run reduced to its drift statistics.
struct DriftCell {
    std::uint64_t seed = 0;
    double eta = 0.0;
    bool ok = false;
    Vector drift;       // per pair, |sum_t measured Delta C|
    double drift_mean = 0.0;
    Vector drift_direct;  // per pair, |C(T) - C(0)|
    Vector imbalance;   // per pair G_l
    double residual = 0.0, residual_scaled = 0.0;
    double loss_final = 0.0;
    std::size_t steps = 0;

    Json to_json() const {
        return {{"seed", seed},           {"eta", eta},
                {"status", ok ? "ok" : "diverged"},
                {"drift", drift},         {"drift_mean", drift_mean},
                {"drift_direct", drift_direct}, {"imbalance_sum", imbalance},
                {"identity_residual", residual}, {"identity_residual_scaled", residual_scaled},
                {"loss_final", loss_final}, {"steps", steps}};
    }
};

inline DriftCell drift_cell(const TrainTrace& tr, std::uint64_t seed) {
    DriftCell c;
    c.seed = seed;
    c.eta = tr.eta;
    c.ok = tr.status == RunStatus::Ok;
    c.steps = tr.steps();
    if (!tr.loss.empty()) c.loss_final = tr.loss.back();
    if (tr.imbalance.empty()) return c;
    const DriftReport r = drift_report(tr);
    for (const auto& p : r.pairs) {
        c.drift.push_back(p.drift);
        c.drift_direct.push_back(p.drift_direct);
        c.imbalance.push_back(p.imbalance_sum);
    }
    c.drift_mean = r.mean_drift();
    if (r.identity_applicable) {
        c.residual = r.max_identity_residual();
        c.residual_scaled = r.max_identity_residual_scaled();
    }
    return c;
}

inline std::string cell_name(const std::string& tag, std::uint64_t seed, double eta) {
    std::ostringstream os;
    os << tag << (tag.empty() ? "" : "_") << "s" << seed << "_eta" << std::setprecision(4) << eta;
    std::string s = os.str();
    std::replace(s.begin(), s.end(), '+', 'p');
    return s;
}

inline DriftCell run_drift(const TrainConfig& cfg, const Dataset& ds, const RunContext& ctx, const std::string& tag,
                           bool use_direct = false) {
    const TrainTrace tr = train(cfg, ds);
    ctx.trace(cell_name(tag, cfg.seed, cfg.eta), cfg.seed, tr);
    DriftCell c = drift_cell(tr, cfg.seed);
    if (use_direct) c.drift_mean = c.drift_direct.empty() ? 0.0 : mean(c.drift_direct);
    return c;
}

struct SweepFit {
    bool ok = false;
    FitResult fit;                  // mean-over-pairs drift vs eta
    std::vector<FitResult> per_pair;
    FitResult imbalance_fit;        // |G_0| vs eta
    std::size_t used = 0, diverged = 0;
};

// Power-law fits over the converged (non-diverged, positive) cells of one
// sweep, all of which must share a seed and configuration.
inline SweepFit fit_sweep(const std::vector<DriftCell>& cells) {
    SweepFit s;
    Vector xs, ys, gs;
    std::vector<Vector> pair_ys;
    for (const auto& c : cells) {
        if (!c.ok) {
            ++s.diverged;
            continue;
        }
        if (!(c.drift_mean > 0.0)) continue;
        xs.push_back(c.eta);
        ys.push_back(c.drift_mean);
        gs.push_back(c.imbalance.empty() ? 0.0 : std::abs(c.imbalance[0]));
        if (pair_ys.size() < c.drift.size()) pair_ys.resize(c.drift.size());
        for (std::size_t l = 0; l < c.drift.size(); ++l) pair_ys[l].push_back(c.drift[l]);
    }
    s.used = xs.size();
    if (xs.size() < 3) return s;
    s.fit = fit_power_law(xs, ys);
    s.ok = true;
    for (const auto& py : pair_ys) {
        if (py.size() == xs.size() && std::all_of(py.begin(), py.end(), [](double v) { return v > 0.0; }))
            s.per_pair.push_back(fit_power_law(xs, py));
    }
    if (std::all_of(gs.begin(), gs.end(), [](double v) { return v > 0.0; })) s.imbalance_fit = fit_power_law(xs, gs);
    return s;
}

inline Json sweep_json(const SweepFit& s) {
    Json j{{"ok", s.ok}, {"used_points", s.used}, {"diverged_points", s.diverged}};
    if (s.ok) {
        j["drift"] = fit_json(s.fit);
        j["imbalance"] = fit_json(s.imbalance_fit);
        j["per_pair"] = Json::array();
        for (const auto& f : s.per_pair) j["per_pair"].push_back(fit_json(f));
    }
    return j;
}

// Runs the eta sweep for every (variant, seed) and returns cells grouped as
// [variant][seed][eta].
struct SweepGrid {
    std::vector<std::vector<std::vector<DriftCell>>> cells;
    std::vector<std::vector<SweepFit>> fits;
};

inline SweepGrid run_sweeps(const ExperimentSpec& spec, const RunContext& ctx, const std::vector<TrainConfig>& variants,
                            const std::vector<std::string>& tags, const std::vector<std::size_t>& data_dims = {},
                            bool use_direct = false) {
    const std::size_t nv = variants.size(), ns = spec.seeds.size(), ne = spec.etas.size();
    auto flat = parallel_map(nv * ns * ne, ctx.jobs, [&](std::size_t i) {
        const std::size_t v = i / (ns * ne), s = (i / ne) % ns, e = i % ne;
        TrainConfig cfg = variants[v];
        cfg.seed = spec.seeds[s];
        cfg.eta = spec.etas[e];
        const Dataset ds = dataset_for(spec, cfg.seed, 0, data_dims.empty() ? 0 : data_dims[v]);
        return run_drift(cfg, ds, ctx, tags[v], use_direct);
    });
    SweepGrid g;
    g.cells.assign(nv, std::vector<std::vector<DriftCell>>(ns));
    g.fits.assign(nv, std::vector<SweepFit>(ns));
    for (std::size_t i = 0; i < flat.size(); ++i) g.cells[i / (ns * ne)][(i / ne) % ns].push_back(flat[i]);
    for (std::size_t v = 0; v < nv; ++v)
        for (std::size_t s = 0; s < ns; ++s) g.fits[v][s] = fit_sweep(g.cells[v][s]);
    return g;
}

struct VariantSummary {
    Vector betas, r2s, curvatures, g_exponents;
    std::size_t failed_fits = 0;
};

inline VariantSummary summarize(const std::vector<SweepFit>& fits) {
    VariantSummary v;
    for (const auto& f : fits) {
        if (!f.ok) {
            ++v.failed_fits;
            continue;
        }
        v.betas.push_back(f.fit.slope);
        v.r2s.push_back(f.fit.r2);
        v.curvatures.push_back(f.fit.loglog_curvature);
        if (f.imbalance_fit.points) v.g_exponents.push_back(f.imbalance_fit.slope);
    }
    return v;
}

inline void record_sweeps(ExperimentResult& res, const ExperimentSpec& spec, const RunContext& ctx,
                          const SweepGrid& g, const std::vector<std::string>& tags) {
    for (std::size_t v = 0; v < g.cells.size(); ++v) {
        std::vector<std::vector<double>> rows;
        for (std::size_t s = 0; s < g.cells[v].size(); ++s) {
            for (const auto& c : g.cells[v][s]) {
                Json cj = c.to_json();
                cj["variant"] = tags[v];
                res.cells.push_back(std::move(cj));
                rows.push_back({static_cast<double>(c.seed), c.eta, c.drift_mean,
                                c.imbalance.empty() ? 0.0 : c.imbalance[0], c.ok ? 1.0 : 0.0});
            }
            res.fits[tags[v]]["s" + std::to_string(spec.seeds[s])] = sweep_json(g.fits[v][s]);
        }
        ctx.plot("drift_vs_eta_" + tags[v], {"seed", "eta", "drift", "imbalance_sum", "ok"}, rows);
    }
}

inline std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
#if defined(_WIN32)
    gmtime_s(&tm, &t);
#else
    gmtime_r(&t, &tm);
#endif
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// Smallest multiplier m (in the given order) for which eta = m * 2 / lambda0
// puts the run at the edge of stability.
struct EosSearch {
    bool found = false;
    double eta = 0.0;
    double multiplier = 0.0;
    double dwell = 0.0;
    double lambda0 = 0.0;
    TrainTrace trace;
    Json tried = Json::array();
};

inline EosSearch find_eos(TrainConfig cfg, const Dataset& ds, const std::vector<double>& multipliers,
                          std::size_t lambda_stride, const SpectralOptions& opts, const EosCriterion& crit = {}) {
    EosSearch out;
    Rng rng(cfg.seed, 0x656f73);  // "eos"
    out.lambda0 = gn_lambda_max(init_kaiming_balanced(cfg.widths, cfg.seed, cfg.bias), ds, cfg.activation, cfg.loss,
                                rng, opts);
    cfg.record.lambda_stride = lambda_stride;
    for (double m : multipliers) {
        cfg.eta = m * 2.0 / out.lambda0;
        TrainTrace tr = train_with_sharpness(cfg, ds, opts);
        const double dwell = eos_dwell_fraction(tr.lambda_max, cfg.eta, crit.band);
        out.tried.push_back({{"multiplier", m}, {"eta", cfg.eta}, {"dwell", dwell}, {"status", to_string(tr.status)}});
        if (at_eos(tr, crit)) {
            out.found = true;
            out.eta = cfg.eta;
            out.multiplier = m;
            out.dwell = dwell;
            out.trace = std::move(tr);
            return out;
        }
    }
    return out;
}

inline SpectralOptions fast_spectral(double tol = 1e-6) {
    SpectralOptions o;
    o.dense_max_params = 0;
    o.power.tol = tol;
    o.power.max_iter = 20000;
    return o;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Experiment procedures
// ---------------------------------------------------------------------------

namespace experiments {

using detail::param;

// E1: conservation under RK4 gradient flow.
inline void conservation_flow(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const double duration = param(spec, "duration", 0.5);
    const double step = param(spec, "flow_step", 1e-4);
    struct Out {
        double excursion;
        bool ok;
        Vector c0, c1;
    };
    auto outs = parallel_map(spec.seeds.size(), ctx.jobs, [&](std::size_t i) {
        const auto seed = spec.seeds[i];
        const TrainConfig cfg = detail::base_config(spec, seed);
        const Dataset ds = detail::dataset_for(spec, seed);
        const TrainTrace tr =
            integrate_flow(init_kaiming_balanced(cfg.widths, seed, false), ds, cfg.activation, cfg.loss, duration, step);
        ctx.trace("flow_s" + std::to_string(seed), seed, tr);
        return Out{max_relative_excursion(tr), tr.status == RunStatus::Ok, tr.cons.front(), tr.cons_final};
    });
    Vector ex;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        res.cells.push_back({{"seed", spec.seeds[i]}, {"max_relative_excursion", outs[i].excursion},
                             {"status", outs[i].ok ? "ok" : "diverged"}, {"c_initial", outs[i].c0},
                             {"c_final", outs[i].c1}});
        ex.push_back(outs[i].ok ? outs[i].excursion : std::numeric_limits<double>::infinity());
    }
    res.metrics["max_relative_drift"] = detail::vmax(ex);
    res.metrics["per_seed"] = detail::stats_json(ex);
    res.metrics["duration"] = duration;
    res.metrics["flow_step"] = step;
}

// E2: the exact per-step identity, with and without biases.
inline void bias_breaks(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    struct Out {
        detail::DriftCell plain, bias;
        double trace_gap;
    };
    auto outs = parallel_map(spec.seeds.size(), ctx.jobs, [&](std::size_t i) {
        const auto seed = spec.seeds[i];
        const Dataset ds = detail::dataset_for(spec, seed);
        TrainConfig cfg = detail::base_config(spec, seed);
        Out o;
        o.plain = detail::run_drift(cfg, ds, ctx, "nobias");
        cfg.bias = true;
        // Biases start at zero; a random start makes the failure generic from step 0.
        MlpParams p = init_kaiming_balanced(cfg.widths, seed, true);
        Rng rng(seed, 0x62696173);  // "bias"
        for (auto& b : p.biases)
            for (double& v : b) v = 0.5 * rng.normal();
        const TrainTrace tr = train_from(cfg, ds, p);
        ctx.trace(detail::cell_name("bias", seed, cfg.eta), seed, tr);
        o.bias = detail::drift_cell(tr, seed);
        const Evaluation ev = evaluate(p, ds, cfg.activation, cfg.loss);
        const Vector tp = trace_pairing(p, ev.grads);
        o.trace_gap = std::abs(tp[1] - tp[0]) / (std::abs(tp[0]) + std::abs(tp[1]) + 1e-300);
        return o;
    });
    Vector plain_res, plain_scaled, bias_res, bias_scaled, gaps;
    for (const auto& o : outs) {
        res.cells.push_back({{"seed", o.plain.seed}, {"bias_free", o.plain.to_json()}, {"bias", o.bias.to_json()},
                             {"bias_trace_pairing_gap", o.trace_gap}});
        plain_res.push_back(o.plain.residual);
        plain_scaled.push_back(o.plain.residual_scaled);
        bias_res.push_back(o.bias.residual);
        bias_scaled.push_back(o.bias.residual_scaled);
        gaps.push_back(o.trace_gap);
    }
    res.metrics["bias_free_residual_max"] = detail::vmax(plain_res);
    res.metrics["bias_free_residual_scaled_max"] = detail::vmax(plain_scaled);
    res.metrics["bias_residual_min"] = detail::vmin(bias_res);
    res.metrics["bias_residual_scaled_min"] = detail::vmin(bias_scaled);
    res.metrics["bias_trace_pairing_gap_min"] = detail::vmin(gaps);
}

// E3/E5/E7 and friends: one eta sweep per seed, power-law fit per seed.
inline void drift_scaling(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const TrainConfig base = detail::base_config(spec, 0);
    const bool adam = base.optimizer.kind == OptimizerKind::Kind::Adam;
    const std::string tag = spec.activation + "_" + spec.loss + "_" + spec.optimizer;
    const auto g = detail::run_sweeps(spec, ctx, {base}, {tag}, {}, adam);
    detail::record_sweeps(res, spec, ctx, g, {tag});
    const auto v = detail::summarize(g.fits[0]);
    res.metrics["beta"] = detail::stats_json(v.betas);
    res.metrics["beta_mean"] = detail::vmean(v.betas);
    res.metrics["beta_min"] = detail::vmin(v.betas);
    res.metrics["beta_max"] = detail::vmax(v.betas);
    res.metrics["r2_min"] = detail::vmin(v.r2s);
    res.metrics["imbalance_exponent_mean"] = detail::vmean(v.g_exponents);
    res.metrics["failed_fits"] = v.failed_fits;
    res.metrics["eta_decades"] = std::log10(spec.etas.back() / spec.etas.front());
    if (v.failed_fits) res.status = "partial";

    if (param(spec, "formula_check", false) && !adam) {
        // Exponent implied by the crossover formula with the init spectrum.
        const auto seed = spec.seeds.front();
        const Dataset ds = detail::dataset_for(spec, seed);
        const MlpParams p0 = init_kaiming_balanced(base.widths, seed, false);
        const DataSpectrum dspec = data_cov_spectrum(ds);
        const Vector lam = effective_spectrum(p0, ds, base.activation, base.loss, &dspec);
        const Vector ck = predict_ck(initial_mode_errors(p0, ds, dspec, base.activation), dspec.eigenvalues);
        Vector gs;
        for (double eta : spec.etas) gs.push_back(crossover_sum({lam, ck, eta, spec.steps}).stable_total);
        const FitResult f = fit_power_law(spec.etas, gs);
        res.metrics["beta_formula"] = 2.0 + f.slope;
    }
}

// E9: linear vs ReLU exponents on matched configurations, plus the switch
// rate of ReLU against a nearly linear leaky unit.
inline void linear_relu_gap(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    TrainConfig lin = detail::base_config(spec, 0), relu = lin;
    lin.activation = Activation::linear();
    relu.activation = Activation::relu();
    const auto g = detail::run_sweeps(spec, ctx, {lin, relu}, {"linear", "relu"});
    detail::record_sweeps(res, spec, ctx, g, {"linear", "relu"});
    const auto vl = detail::summarize(g.fits[0]), vr = detail::summarize(g.fits[1]);
    res.metrics["beta_linear"] = detail::stats_json(vl.betas);
    res.metrics["beta_relu"] = detail::stats_json(vr.betas);
    res.metrics["beta_gap"] = std::abs(detail::vmean(vl.betas) - detail::vmean(vr.betas));
    if (vl.failed_fits || vr.failed_fits) res.status = "partial";

    const double leak = param(spec, "leaky_slope", 0.99);
    const double eta = param(spec, "switch_eta", 0.01);
    const auto steps = param<std::size_t>(spec, "switch_steps", 100);
    auto rates = parallel_map(spec.seeds.size() * 2, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[i / 2]);
        cfg.activation = i % 2 ? Activation::leaky(leak) : Activation::relu();
        cfg.eta = eta;
        cfg.steps = steps;
        cfg.record.signs = true;
        const TrainTrace tr = train(cfg, detail::dataset_for(spec, cfg.seed));
        return switch_rate(tr, cfg.activation).per_neuron;
    });
    Vector r_relu, r_leaky;
    for (std::size_t i = 0; i < rates.size(); ++i) (i % 2 ? r_leaky : r_relu).push_back(rates[i]);
    const double a = detail::vmean(r_relu), b = detail::vmean(r_leaky);
    res.metrics["switch_rate_relu"] = a;
    res.metrics["switch_rate_leaky"] = b;
    res.metrics["switch_rate_relative_difference"] = a > 0.0 ? (a - b) / a : 0.0;
}

// E4: drift at an edge-of-stability learning rate against eta / 100.
inline void eos_breaking(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto mults = param(spec, "eos_multipliers", std::vector<double>{0.9, 1.0, 1.1, 1.25, 1.5, 2.0});
    const auto stride = param<std::size_t>(spec, "lambda_stride", 25);
    const double factor = param(spec, "reference_factor", 100.0);
    const auto opts = detail::fast_spectral(param(spec, "power_tol", 1e-4));
    struct Out {
        detail::EosSearch eos;
        detail::DriftCell at, ref;
    };
    auto outs = parallel_map(spec.seeds.size(), ctx.jobs, [&](std::size_t i) {
        const auto seed = spec.seeds[i];
        const Dataset ds = detail::dataset_for(spec, seed);
        const TrainConfig cfg = detail::base_config(spec, seed);
        Out o;
        o.eos = detail::find_eos(cfg, ds, mults, stride, opts);
        if (!o.eos.found) return o;
        o.at = detail::drift_cell(o.eos.trace, seed);
        ctx.trace(detail::cell_name("eos", seed, o.eos.eta), seed, o.eos.trace);
        o.eos.trace = {};
        TrainConfig small = cfg;
        small.eta = o.eos.eta / factor;
        o.ref = detail::run_drift(small, ds, ctx, "reference");
        return o;
    });
    Vector ratios;
    for (std::size_t i = 0; i < outs.size(); ++i) {
        const auto& o = outs[i];
        Json cj{{"seed", spec.seeds[i]}, {"eos_found", o.eos.found}, {"lambda0", o.eos.lambda0}, {"tried", o.eos.tried}};
        if (o.eos.found) {
            const double ratio = o.at.drift_mean / o.ref.drift_mean;
            cj["eta_eos"] = o.eos.eta;
            cj["dwell"] = o.eos.dwell;
            cj["at_eos"] = o.at.to_json();
            cj["reference"] = o.ref.to_json();
            cj["drift_ratio"] = ratio;
            ratios.push_back(ratio);
        } else {
            res.status = "partial";
        }
        res.cells.push_back(std::move(cj));
    }
    res.metrics["drift_ratio"] = detail::stats_json(ratios);
    res.metrics["drift_ratio_min"] = ratios.size() == spec.seeds.size() ? detail::vmin(ratios) : std::nan("");
}

// E6: drift exponent against depth (mean over the L-1 pairs, per-pair kept).
inline void depth_dependence(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    std::vector<TrainConfig> variants;
    std::vector<std::string> tags;
    for (std::size_t depth : spec.depths) {
        TrainConfig cfg = detail::base_config(spec, 0);
        cfg.widths = detail::layer_widths(spec.d, spec.hidden, depth, spec.c);
        variants.push_back(cfg);
        tags.push_back("depth" + std::to_string(depth));
    }
    const auto g = detail::run_sweeps(spec, ctx, variants, tags);
    detail::record_sweeps(res, spec, ctx, g, tags);
    Json by_depth = Json::object();
    Vector means;
    std::vector<std::vector<double>> rows;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto s = detail::summarize(g.fits[v]);
        by_depth[std::to_string(spec.depths[v])] = detail::stats_json(s.betas);
        means.push_back(detail::vmean(s.betas));
        rows.push_back({static_cast<double>(spec.depths[v]), means.back()});
        if (s.failed_fits) res.status = "partial";
    }
    ctx.plot("beta_vs_depth", {"depth", "beta"}, rows);
    res.metrics["beta_by_depth"] = by_depth;
    res.metrics["beta_shallowest"] = means.front();
    res.metrics["beta_deepest"] = means.back();
    res.metrics["beta_depth_increase"] = means.back() - means.front();
}

// E8: crossover-formula prediction of G(eta) with predicted c_k and one
// fitted global scale per (activation, seed).
inline void crossover_prediction(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto acts = spec.activations.empty() ? std::vector<std::string>{spec.activation} : spec.activations;
    const std::size_t na = acts.size(), ns = spec.seeds.size(), ne = spec.etas.size();
    struct Model {
        Vector lambdas, ck;
    };
    auto models = parallel_map(na * ns, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[i % ns]);
        cfg.activation = Activation::parse(acts[i / ns]);
        const Dataset ds = detail::dataset_for(spec, cfg.seed);
        const MlpParams p0 = init_kaiming_balanced(cfg.widths, cfg.seed, false);
        const DataSpectrum dspec = data_cov_spectrum(ds);
        return Model{effective_spectrum(p0, ds, cfg.activation, cfg.loss, &dspec),
                     predict_ck(initial_mode_errors(p0, ds, dspec, cfg.activation, cfg.loss), dspec.eigenvalues)};
    });
    auto cells = parallel_map(na * ns * ne, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[(i / ne) % ns]);
        cfg.activation = Activation::parse(acts[i / (ns * ne)]);
        cfg.eta = spec.etas[i % ne];
        return detail::run_drift(cfg, detail::dataset_for(spec, cfg.seed), ctx, acts[i / (ns * ne)]);
    });
    for (std::size_t a = 0; a < na; ++a) {
        Vector errs;
        std::vector<std::vector<double>> rows;
        for (std::size_t s = 0; s < ns; ++s) {
            const Model& m = models[a * ns + s];
            Vector meas, pred;
            bool usable = true;
            for (std::size_t e = 0; e < ne; ++e) {
                const auto& c = cells[(a * ns + s) * ne + e];
                usable = usable && c.ok;
                meas.push_back(c.imbalance.empty() ? 0.0 : std::abs(c.imbalance[0]));
                pred.push_back(crossover_sum({m.lambdas, m.ck, spec.etas[e], spec.steps}).stable_total);
            }
            if (!usable) {
                res.status = "partial";
                continue;
            }
            const double scale = relative_scale_fit(pred, meas);
            Json cj{{"activation", acts[a]}, {"seed", spec.seeds[s]}, {"scale", scale}, {"lambdas", m.lambdas},
                    {"c_predicted", m.ck}, {"points", Json::array()}};
            for (std::size_t e = 0; e < ne; ++e) {
                const double err = std::abs(scale * pred[e] - meas[e]) / meas[e];
                errs.push_back(err);
                cj["points"].push_back(
                    {{"eta", spec.etas[e]}, {"measured", meas[e]}, {"predicted", scale * pred[e]}, {"rel_error", err}});
                rows.push_back({static_cast<double>(spec.seeds[s]), spec.etas[e], meas[e], scale * pred[e]});
            }
            res.cells.push_back(std::move(cj));
        }
        ctx.plot("imbalance_prediction_" + acts[a], {"seed", "eta", "measured", "predicted"}, rows);
        const std::string key = Activation::parse(acts[a]).kind == Activation::Kind::Linear ? "linear" : acts[a];
        res.metrics["max_rel_error_" + key] = errs.empty() ? std::nan("") : detail::vmax(errs);
        res.metrics["mean_rel_error_" + key] = detail::vmean(errs);
    }
}

// E10/E11: leaky-slope family between ReLU (0) and linear (1).
inline void activation_family(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto slopes = param(spec, "slopes", std::vector<double>{0.0, 0.25, 0.5, 0.75, 1.0});
    std::vector<TrainConfig> variants;
    std::vector<std::string> tags;
    for (double a : slopes) {
        TrainConfig cfg = detail::base_config(spec, 0);
        cfg.activation = a >= 1.0 ? Activation::linear() : Activation::leaky(a);
        variants.push_back(cfg);
        tags.push_back("slope" + detail::fmt(a));
    }
    const auto g = detail::run_sweeps(spec, ctx, variants, tags);
    detail::record_sweeps(res, spec, ctx, g, tags);
    Vector means;
    std::vector<std::vector<double>> rows;
    Json by_slope = Json::object();
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto s = detail::summarize(g.fits[v]);
        means.push_back(detail::vmean(s.betas));
        by_slope[detail::fmt(slopes[v])] = detail::stats_json(s.betas);
        if (s.failed_fits) res.status = "partial";
    }
    // Switch rate along the family at a fixed learning rate.
    const double eta = param(spec, "switch_eta", 0.01);
    const auto steps = param<std::size_t>(spec, "switch_steps", 100);
    auto rates = parallel_map(slopes.size() * spec.seeds.size(), ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = variants[i / spec.seeds.size()];
        cfg.seed = spec.seeds[i % spec.seeds.size()];
        cfg.eta = eta;
        cfg.steps = steps;
        cfg.record.signs = true;
        return switch_rate(train(cfg, detail::dataset_for(spec, cfg.seed)), cfg.activation).per_neuron;
    });
    Json rate_by_slope = Json::object();
    double max_jump = 0.0;
    for (std::size_t v = 0; v < slopes.size(); ++v) {
        Vector r(rates.begin() + static_cast<std::ptrdiff_t>(v * spec.seeds.size()),
                 rates.begin() + static_cast<std::ptrdiff_t>((v + 1) * spec.seeds.size()));
        rate_by_slope[detail::fmt(slopes[v])] = detail::vmean(r);
        rows.push_back({slopes[v], means[v], detail::vmean(r)});
        if (v) max_jump = std::max(max_jump, std::abs(means[v] - means[v - 1]));
    }
    ctx.plot("beta_vs_slope", {"slope", "beta", "switch_rate"}, rows);
    res.metrics["beta_by_slope"] = by_slope;
    res.metrics["switch_rate_by_slope"] = rate_by_slope;
    res.metrics["beta_range"] = detail::vmax(means) - detail::vmin(means);
    res.metrics["beta_max_adjacent_jump"] = max_jump;
}

// E12: loss x width x depth factorial; non-additivity of beta.
inline void factorial(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    std::vector<TrainConfig> variants;
    std::vector<std::string> tags;
    for (const auto& loss : spec.losses)
        for (std::size_t w : spec.widths)
            for (std::size_t depth : spec.depths) {
                TrainConfig cfg = detail::base_config(spec, 0);
                cfg.loss = parse_loss(loss);
                cfg.widths = detail::layer_widths(spec.d, w, depth, spec.c);
                variants.push_back(cfg);
                tags.push_back(loss + "_w" + std::to_string(w) + "_L" + std::to_string(depth));
            }
    const auto g = detail::run_sweeps(spec, ctx, variants, tags);
    detail::record_sweeps(res, spec, ctx, g, tags);
    const std::size_t nl = spec.losses.size(), nw = spec.widths.size(), nd = spec.depths.size();
    Vector beta(variants.size());
    Json table = Json::object();
    bool complete = true;
    for (std::size_t v = 0; v < variants.size(); ++v) {
        const auto s = detail::summarize(g.fits[v]);
        beta[v] = detail::vmean(s.betas);
        complete = complete && std::isfinite(beta[v]);
        table[tags[v]] = beta[v];
    }
    res.metrics["beta_table"] = table;
    if (!complete) {
        res.status = "partial";
        return;
    }
    // Additive model: grand mean + main effects; residual = interactions.
    auto idx = [&](std::size_t l, std::size_t w, std::size_t d) { return (l * nw + w) * nd + d; };
    const double grand = mean(beta);
    Vector el(nl, 0.0), ew(nw, 0.0), ed(nd, 0.0);
    for (std::size_t l = 0; l < nl; ++l)
        for (std::size_t w = 0; w < nw; ++w)
            for (std::size_t d = 0; d < nd; ++d) {
                const double b = beta[idx(l, w, d)];
                el[l] += b / static_cast<double>(nw * nd);
                ew[w] += b / static_cast<double>(nl * nd);
                ed[d] += b / static_cast<double>(nl * nw);
            }
    double ss_int = 0.0, ss_tot = 0.0;
    for (std::size_t l = 0; l < nl; ++l)
        for (std::size_t w = 0; w < nw; ++w)
            for (std::size_t d = 0; d < nd; ++d) {
                const double b = beta[idx(l, w, d)];
                const double additive = el[l] + ew[w] + ed[d] - 2.0 * grand;
                ss_int += (b - additive) * (b - additive);
                ss_tot += (b - grand) * (b - grand);
            }
    res.metrics["interaction_rms"] = std::sqrt(ss_int / static_cast<double>(beta.size()));
    res.metrics["interaction_share"] = ss_tot > 0.0 ? ss_int / ss_tot : 0.0;
    res.metrics["main_effect_loss"] = el;
    res.metrics["main_effect_width"] = ew;
    res.metrics["main_effect_depth"] = ed;
}

// E13/E14/E17/E19: drift exponent across widths for each loss.
inline void width_sweep(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto losses = spec.losses.empty() ? std::vector<std::string>{spec.loss} : spec.losses;
    std::vector<TrainConfig> variants;
    std::vector<std::string> tags;
    for (const auto& loss : losses)
        for (std::size_t w : spec.widths) {
            TrainConfig cfg = detail::base_config(spec, 0);
            cfg.loss = parse_loss(loss);
            cfg.widths = detail::layer_widths(spec.d, w, spec.depth, spec.c);
            variants.push_back(cfg);
            tags.push_back(loss + "_w" + std::to_string(w));
        }
    const auto g = detail::run_sweeps(spec, ctx, variants, tags);
    detail::record_sweeps(res, spec, ctx, g, tags);
    const std::size_t nw = spec.widths.size();
    std::map<std::string, Vector> beta, r2;
    std::vector<std::vector<double>> rows;
    for (std::size_t li = 0; li < losses.size(); ++li) {
        Json by_width = Json::object();
        for (std::size_t wi = 0; wi < nw; ++wi) {
            const auto s = detail::summarize(g.fits[li * nw + wi]);
            if (s.failed_fits) res.status = "partial";
            beta[losses[li]].push_back(detail::vmean(s.betas));
            r2[losses[li]].push_back(detail::vmean(s.r2s));
            by_width[std::to_string(spec.widths[wi])] = {{"beta", detail::stats_json(s.betas)},
                                                         {"r2", detail::stats_json(s.r2s)},
                                                         {"curvature", detail::stats_json(s.curvatures)}};
            rows.push_back({static_cast<double>(li), static_cast<double>(spec.widths[wi]), beta[losses[li]].back(),
                            r2[losses[li]].back()});
        }
        res.metrics["by_width_" + losses[li]] = by_width;
    }
    ctx.plot("beta_vs_width", {"loss_index", "width", "beta", "r2"}, rows);
    auto nanfree = [](const Vector& v) { return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); }); };
    if (beta.count("ce") && nanfree(beta["ce"])) {
        res.metrics["beta_ce_min"] = detail::vmin(beta["ce"]);
        res.metrics["beta_ce_max"] = detail::vmax(beta["ce"]);
    }
    if (beta.count("mse") && nanfree(beta["mse"])) {
        const Vector& b = beta["mse"];
        const Vector& q = r2["mse"];
        res.metrics["beta_mse_widest"] = b.back();
        bool decreasing = true;
        for (std::size_t i = 1; i < q.size(); ++i) decreasing = decreasing && q[i] < q[i - 1];
        res.metrics["mse_r2_decreasing"] = decreasing;
        res.metrics["mse_r2_first"] = q.front();
        res.metrics["mse_r2_last"] = q.back();
        // beta - 1 ~ w^gamma over the widths where beta > 1.
        Vector ws, excess;
        for (std::size_t i = 0; i < b.size(); ++i)
            if (b[i] > 1.0) {
                ws.push_back(static_cast<double>(spec.widths[i]));
                excess.push_back(b[i] - 1.0);
            }
        if (ws.size() >= 3) {
            const FitResult f = fit_power_law(ws, excess);
            res.fits["excess_beta_vs_width"] = detail::fit_json(f);
            res.metrics["excess_growth_exponent"] = f.slope;
        }
    }
    if (beta.count("ce") && beta.count("mse") && nanfree(beta["ce"]) && nanfree(beta["mse"])) {
        Vector gap;
        for (std::size_t i = 0; i < nw; ++i) gap.push_back(beta["mse"][i] - beta["ce"][i]);
        res.metrics["mse_minus_ce"] = gap;
        res.metrics["mse_minus_ce_widest"] = gap.back();
        res.metrics["gap_growth"] = gap.back() - gap.front();
    }
}

// E15: per-neuron activation switch rate vs width, below and at the EoS.
inline void switch_scaling(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const double sub_eta = param(spec, "sub_eos_eta", 0.01);
    const auto sub_steps = param<std::size_t>(spec, "sub_eos_steps", 100);
    const auto eos_widths = param(spec, "eos_widths", std::vector<std::size_t>{32, 64, 128, 256});
    const auto eos_seeds = param(spec, "eos_seeds", std::vector<std::uint64_t>{42});
    const auto eos_steps = param<std::size_t>(spec, "eos_steps", 1500);
    const auto mults = param(spec, "eos_multipliers", std::vector<double>{1.0, 1.1, 1.25, 1.5, 2.0, 2.5, 3.0});
    const auto stride = param<std::size_t>(spec, "lambda_stride", 50);
    const auto opts = detail::fast_spectral(param(spec, "power_tol", 1e-4));
    const std::size_t nw = spec.widths.size(), ns = spec.seeds.size();

    auto sub = parallel_map(nw * ns, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[i % ns]);
        cfg.widths = detail::layer_widths(spec.d, spec.widths[i / ns], spec.depth, spec.c);
        cfg.eta = sub_eta;
        cfg.steps = sub_steps;
        cfg.record.signs = true;
        const TrainTrace tr = train(cfg, detail::dataset_for(spec, cfg.seed));
        return std::pair{switch_rate(tr, cfg.activation), tr.status == RunStatus::Ok};
    });
    Vector ws, rates;
    std::vector<std::vector<double>> rows;
    for (std::size_t w = 0; w < nw; ++w) {
        Vector r;
        for (std::size_t s = 0; s < ns; ++s) {
            const auto& [rate, ok] = sub[w * ns + s];
            res.cells.push_back({{"regime", "sub_eos"}, {"width", spec.widths[w]}, {"seed", spec.seeds[s]},
                                 {"eta", sub_eta}, {"per_neuron", rate.per_neuron}, {"total", rate.total},
                                 {"status", ok ? "ok" : "diverged"}});
            if (ok) r.push_back(rate.per_neuron);
        }
        ws.push_back(static_cast<double>(spec.widths[w]));
        rates.push_back(detail::vmean(r));
        rows.push_back({0.0, ws.back(), rates.back()});
    }
    if (std::all_of(rates.begin(), rates.end(), [](double v) { return v > 0.0; })) {
        const FitResult f = fit_power_law(ws, rates);
        res.fits["sub_eos_rate_vs_width"] = detail::fit_json(f);
        res.metrics["sub_eos_exponent"] = f.slope;
    } else {
        res.status = "partial";
    }

    const std::size_t ne = eos_widths.size(), nse = eos_seeds.size();
    auto eos = parallel_map(ne * nse, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, eos_seeds[i % nse]);
        cfg.widths = detail::layer_widths(spec.d, eos_widths[i / nse], spec.depth, spec.c);
        cfg.steps = eos_steps;
        cfg.record.signs = true;
        const Dataset ds = detail::dataset_for(spec, cfg.seed);
        auto found = detail::find_eos(cfg, ds, mults, stride, opts);
        const double rate = found.found ? switch_rate(found.trace, cfg.activation).per_neuron : std::nan("");
        found.trace = {};
        return std::pair{std::move(found), rate};
    });
    Vector eos_rates;
    bool all_found = true;
    for (std::size_t w = 0; w < ne; ++w) {
        Vector r;
        for (std::size_t s = 0; s < nse; ++s) {
            const auto& [found, rate] = eos[w * nse + s];
            res.cells.push_back({{"regime", "eos"}, {"width", eos_widths[w]}, {"seed", eos_seeds[s]},
                                 {"eos_found", found.found}, {"eta", found.eta}, {"multiplier", found.multiplier},
                                 {"dwell", found.dwell}, {"lambda0", found.lambda0}, {"per_neuron", rate},
                                 {"tried", found.tried}});
            if (found.found) r.push_back(rate);
            all_found = all_found && found.found;
        }
        eos_rates.push_back(detail::vmean(r));
        rows.push_back({1.0, static_cast<double>(eos_widths[w]), eos_rates.back()});
    }
    ctx.plot("switch_rate_vs_width", {"at_eos", "width", "per_neuron_rate"}, rows);
    res.metrics["sub_eos_rates"] = rates;
    res.metrics["eos_rates"] = eos_rates;
    if (all_found) {
        res.metrics["eos_rate_ratio"] = detail::vmax(eos_rates) / detail::vmin(eos_rates);
    } else {
        res.status = "partial";
        res.notes.push_back("no EoS learning rate found for at least one width; ratio not computed");
    }
}

// E16: crossover prediction for CE with the spectrum frozen at step 0 vs a
// snapshot later in training.
inline void time_dependent_hessian(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto snap_steps = param(spec, "snapshot_steps", std::vector<std::size_t>{0, 250});
    const double ref_eta = param(spec, "reference_eta", 0.01);
    const std::size_t ns = spec.seeds.size(), ne = spec.etas.size(), nt = snap_steps.size();
    struct Model {
        std::vector<Vector> lambdas, ck;
    };
    auto models = parallel_map(ns, ctx.jobs, [&](std::size_t s) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[s]);
        cfg.eta = ref_eta;
        const Dataset ds = detail::dataset_for(spec, cfg.seed);
        const DataSpectrum dspec = data_cov_spectrum(ds);
        Model m;
        std::vector<MlpParams> snaps(nt);
        cfg.steps = *std::max_element(snap_steps.begin(), snap_steps.end());
        train(cfg, ds, [&](std::size_t t, const MlpParams& p) {
            for (std::size_t k = 0; k < nt; ++k)
                if (snap_steps[k] == t) snaps[k] = p;
        });
        for (const auto& p : snaps) {
            m.lambdas.push_back(effective_spectrum_gn(p, ds, cfg.activation, cfg.loss));
            m.ck.push_back(predict_ck(initial_mode_errors(p, ds, dspec, cfg.activation, cfg.loss), dspec.eigenvalues));
        }
        return m;
    });
    auto cells = parallel_map(ns * ne, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[i / ne]);
        cfg.eta = spec.etas[i % ne];
        return detail::run_drift(cfg, detail::dataset_for(spec, cfg.seed), ctx, "ce");
    });
    std::vector<Vector> rs(nt);
    for (std::size_t s = 0; s < ns; ++s) {
        Vector meas;
        bool ok = true;
        for (std::size_t e = 0; e < ne; ++e) {
            const auto& c = cells[s * ne + e];
            res.cells.push_back(c.to_json());
            ok = ok && c.ok && !c.imbalance.empty() && c.imbalance[0] != 0.0;
            meas.push_back(ok ? std::log(std::abs(c.imbalance[0])) : 0.0);
        }
        if (!ok) {
            res.status = "partial";
            continue;
        }
        for (std::size_t k = 0; k < nt; ++k) {
            Vector pred;
            for (std::size_t e = 0; e < ne; ++e)
                pred.push_back(std::log(
                    crossover_sum({models[s].lambdas[k], models[s].ck[k], spec.etas[e], spec.steps}).stable_total));
            rs[k].push_back(pearson(pred, meas));
        }
    }
    Json by_t = Json::object();
    for (std::size_t k = 0; k < nt; ++k) {
        by_t[std::to_string(snap_steps[k])] = detail::stats_json(rs[k]);
        res.metrics["r_t" + std::to_string(snap_steps[k])] = detail::vmean(rs[k]);
    }
    res.metrics["r_by_snapshot"] = by_t;
}

// E18: CE spectral compression and its n-(in)dependence.
inline void compression(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const auto stride = param<std::size_t>(spec, "stride", 50);
    const auto ref_n = param<std::size_t>(spec, "reference_n", 200);
    const auto opts = detail::fast_spectral(param(spec, "power_tol", 1e-6));
    const auto ns_grid = spec.ns.empty() ? std::vector<std::size_t>{spec.n} : spec.ns;
    const std::size_t nn = ns_grid.size(), ns = spec.seeds.size();
    auto profiles = parallel_map(nn * ns, ctx.jobs, [&](std::size_t i) {
        const TrainConfig cfg = detail::base_config(spec, spec.seeds[i % ns]);
        return track_compression(cfg, detail::dataset_for(spec, cfg.seed, ns_grid[i / ns]), stride, opts);
    });
    Vector taus_by_n, ratio_ref, qmin_ref, qmargin_ratio_ref;
    std::size_t violations = 0, checkpoints = 0;
    for (std::size_t a = 0; a < nn; ++a) {
        Vector taus;
        for (std::size_t s = 0; s < ns; ++s) {
            const auto& pr = profiles[a * ns + s];
            const auto& first = pr.snapshots.front();
            const auto& last = pr.snapshots.back();
            for (const auto& snap : pr.snapshots) {
                ++checkpoints;
                violations += snap.lambda_max > snap.bound_rhs + 1e-8;
            }
            const double ratio = last.lambda_max / first.lambda_max;
            Json cj{{"n", ns_grid[a]},
                    {"seed", spec.seeds[s]},
                    {"status", to_string(pr.status)},
                    {"lambda_initial", first.lambda_max},
                    {"lambda_final", last.lambda_max},
                    {"ratio", ratio},
                    {"q_min_initial", first.q_min},
                    {"q_min_final", last.q_min},
                    {"q_margin_initial", first.q_margin},
                    {"q_margin_final", last.q_margin},
                    {"tau", pr.tau.ok ? Json(pr.tau.tau) : Json()},
                    {"tau_r2", pr.tau.r2},
                    {"bound_held", pr.bound_held},
                    {"snapshots", Json::array()}};
            for (const auto& snap : pr.snapshots) cj["snapshots"].push_back(to_json(snap));
            res.cells.push_back(std::move(cj));
            if (pr.tau.ok) taus.push_back(pr.tau.tau);
            if (ns_grid[a] == ref_n) {
                ratio_ref.push_back(ratio);
                qmin_ref.push_back(last.q_min);
                qmargin_ratio_ref.push_back(last.q_margin / first.q_margin);
            }
            if (ctx.writes() && s == 0) {
                std::filesystem::create_directories(ctx.dir / "plots");
                std::ofstream os(ctx.dir / "plots" / ("profile_n" + std::to_string(ns_grid[a]) + ".csv"));
                write_profile_csv(os, pr);
            }
        }
        if (taus.size() != ns) res.status = "partial";
        taus_by_n.push_back(detail::vmean(taus));
    }
    res.metrics["tau_by_n"] = taus_by_n;
    res.metrics["tau_spread"] = detail::vmax(taus_by_n) / detail::vmin(taus_by_n) - 1.0;
    res.metrics["ratio_reference_max"] = detail::vmax(ratio_ref);
    res.metrics["ratio_reference_mean"] = detail::vmean(ratio_ref);
    res.metrics["q_min_final_min"] = detail::vmin(qmin_ref);
    res.metrics["q_margin_ratio_max"] = detail::vmax(qmargin_ratio_ref);
    res.metrics["bound_violations"] = violations;
    res.metrics["bound_checkpoints"] = checkpoints;
}

// E20/E21: predicted vs empirical mode coefficients across learning rates;
// optionally adds an edge-of-stability learning rate per seed.
inline void mode_coefficients(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const bool add_eos = param(spec, "include_eos", false);
    const auto mults = param(spec, "eos_multipliers", std::vector<double>{1.0, 1.1, 1.25, 1.5});
    const auto stride = param<std::size_t>(spec, "lambda_stride", 50);
    const auto eos_opts = detail::fast_spectral(param(spec, "power_tol", 1e-4));
    const std::size_t ns = spec.seeds.size();

    struct SeedSetup {
        Vector lambdas, ck;
        std::vector<double> etas;
        Json eos;
    };
    auto setups = parallel_map(ns, ctx.jobs, [&](std::size_t s) {
        const TrainConfig cfg = detail::base_config(spec, spec.seeds[s]);
        const Dataset ds = detail::dataset_for(spec, cfg.seed);
        const MlpParams p0 = init_kaiming_balanced(cfg.widths, cfg.seed, false);
        const DataSpectrum dspec = data_cov_spectrum(ds);
        SeedSetup su;
        su.lambdas = effective_spectrum(p0, ds, cfg.activation, cfg.loss, &dspec);
        su.ck = predict_ck(initial_mode_errors(p0, ds, dspec, cfg.activation, cfg.loss), dspec.eigenvalues);
        su.etas = spec.etas;
        if (add_eos) {
            auto found = detail::find_eos(cfg, ds, mults, stride, eos_opts);
            su.eos = {{"found", found.found}, {"eta", found.eta}, {"tried", found.tried}};
            if (found.found) su.etas.push_back(found.eta);
        }
        return su;
    });
    std::vector<std::pair<std::size_t, double>> jobs;
    for (std::size_t s = 0; s < ns; ++s)
        for (double eta : setups[s].etas) jobs.emplace_back(s, eta);
    struct Out {
        double r = 0.0;
        bool ok = false;
        std::size_t excluded = 0;
        Vector empirical;
    };
    auto outs = parallel_map(jobs.size(), ctx.jobs, [&](std::size_t i) {
        const auto [s, eta] = jobs[i];
        TrainConfig cfg = detail::base_config(spec, spec.seeds[s]);
        cfg.eta = eta;
        const Dataset ds = detail::dataset_for(spec, cfg.seed);
        const TrainTrace tr = train(cfg, ds);
        Out o;
        o.ok = tr.status == RunStatus::Ok;
        if (!o.ok) return o;
        const auto emp = empirical_ck(tr, data_cov_spectrum(ds), ds, cfg.activation, setups[s].lambdas);
        o.r = compare_ck(setups[s].ck, emp).r;
        o.excluded = static_cast<std::size_t>(std::count(emp.excluded.begin(), emp.excluded.end(), true));
        o.empirical = emp.ck;
        return o;
    });
    Vector rs;
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const auto [s, eta] = jobs[i];
        const Out& o = outs[i];
        const bool is_eos = add_eos && i + 1 < jobs.size() ? jobs[i + 1].first != s : add_eos && i + 1 == jobs.size();
        res.cells.push_back({{"seed", spec.seeds[s]}, {"eta", eta}, {"eos_point", is_eos && setups[s].etas.size() > spec.etas.size()},
                             {"status", o.ok ? "ok" : "diverged"}, {"r", o.r}, {"excluded_modes", o.excluded},
                             {"c_predicted", setups[s].ck}, {"c_empirical", o.empirical}});
        if (o.ok) rs.push_back(o.r);
        else res.status = "partial";
        rows.push_back({static_cast<double>(spec.seeds[s]), eta, o.r});
    }
    for (std::size_t s = 0; s < ns; ++s)
        if (add_eos) res.fits["eos_s" + std::to_string(spec.seeds[s])] = setups[s].eos;
    ctx.plot("ck_correlation", {"seed", "eta", "r"}, rows);
    res.metrics["r"] = detail::stats_json(rs);
    res.metrics["r_min"] = rs.size() == jobs.size() ? detail::vmin(rs) : std::nan("");
    res.metrics["r_mean"] = detail::vmean(rs);
}

// E22: transition width per input dimension.
inline void width_dimension(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const double r2_threshold = param(spec, "r2_threshold", 0.95);
    const double curvature_threshold = param(spec, "curvature_threshold", 0.25);
    std::vector<TrainConfig> variants;
    std::vector<std::string> tags;
    std::vector<std::size_t> dims;
    for (std::size_t d : spec.dims)
        for (std::size_t w : spec.widths) {
            TrainConfig cfg = detail::base_config(spec, 0);
            cfg.widths = detail::layer_widths(d, w, spec.depth, spec.c);
            variants.push_back(cfg);
            tags.push_back("d" + std::to_string(d) + "_w" + std::to_string(w));
            dims.push_back(d);
        }
    const auto g = detail::run_sweeps(spec, ctx, variants, tags, dims);
    detail::record_sweeps(res, spec, ctx, g, tags);
    const std::size_t nw = spec.widths.size();
    Vector ratios;
    bool all_found = true;
    std::vector<std::vector<double>> rows;
    for (std::size_t di = 0; di < spec.dims.size(); ++di) {
        std::optional<std::size_t> wstar;
        for (std::size_t wi = 0; wi < nw; ++wi) {
            const auto s = detail::summarize(g.fits[di * nw + wi]);
            const double r2 = detail::vmean(s.r2s), curv = detail::vmean(s.curvatures), beta = detail::vmean(s.betas);
            rows.push_back({static_cast<double>(spec.dims[di]), static_cast<double>(spec.widths[wi]), beta, r2, curv});
            const bool transitioned = !(r2 >= r2_threshold) || std::abs(curv) > curvature_threshold;
            if (!wstar && transitioned) wstar = spec.widths[wi];
        }
        if (wstar) {
            ratios.push_back(static_cast<double>(*wstar) / static_cast<double>(spec.dims[di]));
        } else {
            all_found = false;
            ratios.push_back(std::nan(""));
        }
    }
    ctx.plot("transition", {"d", "width", "beta", "r2", "curvature"}, rows);
    res.metrics["transition_ratio"] = ratios;
    if (!all_found) {
        res.status = "partial";
        res.notes.push_back("no transition detected for at least one input dimension");
        return;
    }
    bool decreasing = true;
    for (std::size_t i = 1; i < ratios.size(); ++i) decreasing = decreasing && ratios[i] < ratios[i - 1];
    res.metrics["transition_ratio_decreasing"] = decreasing;
}

// E23: compression timescale against 1/eta. Each run covers the same
// continuous-time horizon eta * T.
inline void tau_scaling(const ExperimentSpec& spec, const RunContext& ctx, ExperimentResult& res) {
    const double horizon = param(spec, "horizon", 200.0);
    const auto snapshots = param<std::size_t>(spec, "snapshots", 40);
    const auto opts = detail::fast_spectral(param(spec, "power_tol", 1e-6));
    const std::size_t ns = spec.seeds.size(), ne = spec.etas.size();
    auto profiles = parallel_map(ns * ne, ctx.jobs, [&](std::size_t i) {
        TrainConfig cfg = detail::base_config(spec, spec.seeds[i / ne]);
        cfg.eta = spec.etas[i % ne];
        cfg.steps = static_cast<std::size_t>(std::llround(horizon / cfg.eta));
        const std::size_t stride = std::max<std::size_t>(1, cfg.steps / snapshots);
        return track_compression(cfg, detail::dataset_for(spec, cfg.seed), stride, opts);
    });
    Vector inv_eta, tau_mean;
    std::size_t violations = 0, checkpoints = 0;
    bool complete = true;
    std::vector<std::vector<double>> rows;
    for (std::size_t e = 0; e < ne; ++e) {
        Vector taus;
        for (std::size_t s = 0; s < ns; ++s) {
            const auto& pr = profiles[s * ne + e];
            for (const auto& snap : pr.snapshots) {
                ++checkpoints;
                violations += snap.lambda_max > snap.bound_rhs + 1e-8;
            }
            res.cells.push_back({{"seed", spec.seeds[s]},
                                 {"eta", spec.etas[e]},
                                 {"status", to_string(pr.status)},
                                 {"tau", pr.tau.ok ? Json(pr.tau.tau) : Json()},
                                 {"tau_r2", pr.tau.r2},
                                 {"window", {pr.tau.window_begin, pr.tau.window_end}},
                                 {"lambda_initial", pr.snapshots.front().lambda_max},
                                 {"lambda_final", pr.snapshots.back().lambda_max}});
            if (pr.tau.ok) taus.push_back(pr.tau.tau);
        }
        complete = complete && taus.size() == ns;
        inv_eta.push_back(1.0 / spec.etas[e]);
        tau_mean.push_back(detail::vmean(taus));
        rows.push_back({spec.etas[e], inv_eta.back(), tau_mean.back()});
    }
    ctx.plot("tau_vs_inverse_eta", {"eta", "inverse_eta", "tau"}, rows);
    res.metrics["tau_by_eta"] = tau_mean;
    res.metrics["bound_violations"] = violations;
    res.metrics["bound_checkpoints"] = checkpoints;
    if (!complete) {
        res.status = "partial";
        return;
    }
    const FitResult f = fit_linear(inv_eta, tau_mean);
    res.fits["tau_vs_inverse_eta"] = detail::fit_json(f);
    res.metrics["tau_slope"] = f.slope;
    res.metrics["tau_intercept"] = f.intercept;
    res.metrics["tau_r2"] = f.r2;
}

}  // namespace experiments

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

using ExperimentProc = void (*)(const ExperimentSpec&, const RunContext&, ExperimentResult&);

struct RegistryEntry {
    ExperimentSpec spec;
    ExperimentProc run = nullptr;
};

inline const std::vector<RegistryEntry>& registry_entries() {
    static const std::vector<RegistryEntry> entries = [] {
        std::vector<RegistryEntry> r;
        auto add = [&](ExperimentSpec s, ExperimentProc p) { r.push_back({std::move(s), p}); };
        const Vector fine_grid = logspace(3e-5, 3e-2, 12);     // sub-EoS, 3 decades
        const Vector wide_grid = logspace(1e-3, 3e-1, 12);     // reaches the EoS of wide MSE nets
        const std::vector<std::uint64_t> three{42, 137, 256};

        ExperimentSpec s;
        s.id = "E1";
        s.name = "Conservation verification";
        s.key_result = "Drift < 0.003%";
        s.theory = "conservation under gradient flow";
        s.description = "RK4 gradient flow on a 2-layer ReLU MSE network; max_l |C_l(t)-C_l(0)|/(1+|C_l(0)|).";
        s.params = {{"duration", 0.5}, {"flow_step", 1e-4}};
        s.targets = {{"max_relative_drift", "<", 3e-5, 0.0, true, "relative drift < 0.003%"}};
        add(s, experiments::conservation_flow);

        s = {};
        s.id = "E2";
        s.name = "Conservation with bias";
        s.key_result = "Bias breaks conservation";
        s.theory = "conservation under gradient flow";
        s.description = "Per-step identity Delta C = eta^2 delta with and without (randomly initialised) biases.";
        s.steps = 200;
        s.targets = {{"bias_free_residual_scaled_max", "<=", 1e-8, 0.0, true, "identity exact without biases"},
                     {"bias_residual_min", ">", 1e-7, 0.0, true, "identity fails by >10x tolerance with biases"}};
        add(s, experiments::bias_breaks);

        s = {};
        s.id = "E3";
        s.name = "Drift vs. learning rate";
        s.key_result = "Drift ~ eta scaling";
        s.theory = "exact drift decomposition";
        s.description = "Total drift vs eta at moderate learning rates.";
        s.steps = 500;
        s.etas = logspace(1e-3, 3e-2, 6);
        s.targets = {{"beta_mean", "in", 0.8, 1.5, false, "drift grows roughly linearly in eta"}};
        add(s, experiments::drift_scaling);

        s = {};
        s.id = "E4";
        s.name = "EoS conservation breaking";
        s.key_result = "5500x drift increase";
        s.theory = "exact drift decomposition";
        s.description = "Drift at an EoS learning rate (dwell criterion) vs the same run at eta/100.";
        s.seeds = three;
        s.steps = 1000;
        s.targets = {{"drift_ratio_min", ">", 100.0, 0.0, true, "reference 5500x; floor 100x"}};
        add(s, experiments::eos_breaking);

        s = {};
        s.id = "E5";
        s.name = "Drift scaling law";
        s.key_result = "beta = 1.16, R^2 > 0.99";
        s.theory = "spectral crossover formula";
        s.description = "Drift power law over 3 decades of eta, 2-layer ReLU, MSE, GD.";
        s.etas = fine_grid;
        s.params = {{"formula_check", true}};
        s.targets = {{"beta_mean", "in", 1.0, 1.35, true, "reference 1.16"},
                     {"r2_min", ">", 0.97, 0.0, true, "reference R^2 > 0.99"},
                     {"imbalance_exponent_mean", "in", -1.0, -0.65, true, "G ~ eta^-0.84"},
                     {"eta_decades", ">=", 3.0, 0.0, true, "grid spans >= 3 decades"}};
        add(s, experiments::drift_scaling);

        s = {};
        s.id = "E6";
        s.name = "Depth dependence";
        s.key_result = "beta: 1.07 (2L) to 1.72 (8L)";
        s.theory = "spectral crossover formula";
        s.description = "Mean-over-pairs drift exponent for depths 2..8.";
        s.seeds = three;
        s.steps = 1000;
        s.depths = {2, 3, 4, 5, 6, 7, 8};
        s.etas = logspace(3e-5, 1e-2, 8);
        s.targets = {{"beta_depth_increase", ">", 0.0, 0.0, false, "beta grows with depth"}};
        add(s, experiments::depth_dependence);

        s = {};
        s.id = "E7";
        s.name = "Optimizer dependence";
        s.key_result = "Adam: beta = 0.56";
        s.theory = "spectral crossover formula";
        s.description = "Adam drift exponent (identity not applicable) from |C(T)-C(0)|.";
        s.optimizer = "adam";
        s.etas = logspace(1e-6, 1e-4, 10);
        s.targets = {{"beta_mean", "in", 0.3, 0.9, true, "reference 0.56"}};
        add(s, experiments::drift_scaling);

        s = {};
        s.id = "E8";
        s.name = "Spectral universality";
        s.key_result = "14-27% prediction error";
        s.theory = "spectral crossover formula";
        s.description = "Crossover formula with init spectrum and predicted c_k vs measured G(eta).";
        s.activations = {"linear", "relu"};
        s.etas = logspace(3e-5, 3e-2, 8);
        s.targets = {{"max_rel_error_linear", "<=", 0.40, 0.0, true, "reference 14-18%"},
                     {"max_rel_error_relu", "<=", 0.45, 0.0, true, "reference 14-27%"}};
        add(s, experiments::crossover_prediction);

        s = {};
        s.id = "E9";
        s.name = "Linear-ReLU gap";
        s.key_result = "2.2% switch rate difference";
        s.theory = "linear-network exponent; crossover formula";
        s.description = "Drift exponents of linear vs ReLU on matched configs; ReLU vs leaky(0.99) switch rate.";
        s.etas = fine_grid;
        s.targets = {{"beta_gap", "<=", 0.15, 0.0, true, "reference 1.10 vs 1.08"}};
        add(s, experiments::linear_relu_gap);

        s = {};
        s.id = "E10";
        s.name = "Activation coupling";
        s.key_result = "Smooth beta transition";
        s.theory = "spectral crossover formula";
        s.description = "Leaky slope family on the E5 grid: beta and switch rate vs slope.";
        s.seeds = three;
        s.etas = fine_grid;
        s.targets = {{"beta_max_adjacent_jump", "<=", 0.15, 0.0, false, "no jumps along the family"}};
        add(s, experiments::activation_family);

        s = {};
        s.id = "E11";
        s.name = "Interpolated activation";
        s.key_result = "beta varies with homogeneity";
        s.theory = "spectral crossover formula";
        s.description = "Leaky slope family at width 192 on the wide grid, where coupling matters.";
        s.seeds = {42};
        s.hidden = 192;
        s.etas = logspace(1e-3, 3e-1, 8);
        s.targets = {{"beta_range", ">", 0.1, 0.0, false, "beta changes along the family"}};
        add(s, experiments::activation_family);

        s = {};
        s.id = "E12";
        s.name = "Loss function interaction";
        s.key_result = "Non-additive 3-factor decomp.";
        s.theory = "crossover formula; CE compression";
        s.description = "loss x width x depth factorial; RMS of interaction terms of beta.";
        s.seeds = {42};
        s.steps = 1000;
        s.losses = {"mse", "ce"};
        s.widths = {16, 64, 192};
        s.depths = {2, 4};
        s.etas = logspace(1e-3, 3e-1, 8);
        s.targets = {{"interaction_rms", ">", 0.05, 0.0, false, "factors do not add"}};
        add(s, experiments::factorial);

        s = {};
        s.id = "E13";
        s.name = "CE clamping mechanism";
        s.key_result = "CE beta ~ 1.0 at all widths";
        s.theory = "CE spectral compression";
        s.description = "CE drift exponent at widths 16, 64, 192.";
        s.seeds = three;
        s.loss = "ce";
        s.widths = {16, 64, 192};
        s.etas = wide_grid;
        s.targets = {{"beta_ce_min", ">=", 0.85, 0.0, true, "CE beta >= 0.85"},
                     {"beta_ce_max", "<=", 1.25, 0.0, true, "CE beta <= 1.25"}};
        add(s, experiments::width_sweep);

        s = {};
        s.id = "E14";
        s.name = "Interaction with width";
        s.key_result = "CE regularization grows with width";
        s.theory = "CE spectral compression";
        s.description = "beta_MSE - beta_CE across widths.";
        s.seeds = three;
        s.losses = {"mse", "ce"};
        s.widths = {16, 64, 192};
        s.etas = wide_grid;
        s.targets = {{"gap_growth", ">", 0.0, 0.0, false, "gap widens with width"}};
        add(s, experiments::width_sweep);

        s = {};
        s.id = "E15";
        s.name = "Width switch rate";
        s.key_result = "Per-neuron rate width-independent at EoS";
        s.theory = "EoS / sub-EoS dichotomy";
        s.description = "Per-neuron switch rate vs width, sub-EoS (fixed eta) and at EoS (eta per width).";
        s.widths = {16, 32, 64, 128, 256};
        s.targets = {{"sub_eos_exponent", "in", -0.8, -0.2, true, "reference -0.5"},
                     {"eos_rate_ratio", "<", 2.0, 0.0, true, "width-independent at EoS"}};
        add(s, experiments::switch_scaling);

        s = {};
        s.id = "E16";
        s.name = "Time-dependent Hessian";
        s.key_result = "CE R = 0.988 at t = 250";
        s.theory = "CE spectral compression";
        s.description = "log G(eta) predicted from the CE spectrum at t=0 and t=250 vs measured.";
        s.seeds = three;
        s.loss = "ce";
        s.steps = 1000;
        s.etas = logspace(1e-3, 1e-1, 8);
        s.targets = {{"r_t250", ">=", 0.9, 0.0, false, "reference R = 0.988"}};
        add(s, experiments::time_dependent_hessian);

        s = {};
        s.id = "E17";
        s.name = "CE clamping effect";
        s.key_result = "CE clamps beta ~ 1.0";
        s.theory = "CE spectral compression";
        s.description = "CE vs MSE drift exponents at widths 16, 64, 192 on a common eta grid.";
        s.seeds = three;
        s.losses = {"ce", "mse"};
        s.widths = {16, 64, 192};
        s.etas = wide_grid;
        s.targets = {{"beta_ce_min", ">=", 0.85, 0.0, true, "CE beta in [0.85, 1.25]"},
                     {"beta_ce_max", "<=", 1.25, 0.0, true, "CE beta in [0.85, 1.25]"},
                     {"mse_minus_ce_widest", ">=", 0.3, 0.0, true, "MSE diverges at width 192"},
                     {"mse_r2_decreasing", "true", 0.0, 0.0, true, "MSE fit quality degrades with width"}};
        add(s, experiments::width_sweep);

        s = {};
        s.id = "E18";
        s.name = "CE Hessian evolution";
        s.key_result = "24x compression, n-indep.";
        s.theory = "CE spectral compression";
        s.description = "lambda_max of the CE Gauss-Newton matrix over 2000 steps for n = 100, 200, 400.";
        s.seeds = three;
        s.loss = "ce";
        s.eta = 0.1;
        s.ns = {100, 200, 400};
        s.targets = {{"ratio_reference_max", "<=", 0.1, 0.0, true, "reference 1/24"},
                     {"tau_spread", "<=", 0.3, 0.0, true, "n-independent timescale"},
                     {"bound_violations", "<=", 0.0, 0.0, true, "compression bound"},
                     {"q_min_final_min", ">", 0.9, 0.0, true, "q_i -> 1"},
                     {"q_margin_ratio_max", "<", 0.25, 0.0, true, "softmax curvature shrinks"}};
        add(s, experiments::compression);

        s = {};
        s.id = "E19";
        s.name = "MSE fine width sweep";
        s.key_result = "beta - 1 ~ w^1.18";
        s.theory = "EoS / sub-EoS dichotomy";
        s.description = "MSE drift exponent at widths 16..192.";
        s.seeds = three;
        s.widths = {16, 32, 48, 64, 96, 128, 192};
        s.etas = wide_grid;
        s.targets = {{"excess_growth_exponent", "in", 0.7, 1.7, true, "reference 1.18"},
                     {"mse_r2_last", "<", 0.97, 0.0, false, "reference R^2 0.887 at width 192"}};
        add(s, experiments::width_sweep);

        s = {};
        s.id = "E20";
        s.name = "Linear c_k validation";
        s.key_result = "R = 0.847";
        s.theory = "mode coefficients";
        s.description = "Pearson R of predicted vs empirical c_k, linear network.";
        s.seeds = three;
        s.activation = "linear";
        s.etas = logspace(3e-5, 3e-2, 6);
        s.targets = {{"r_min", ">=", 0.7, 0.0, true, "reference 0.847"}};
        add(s, experiments::mode_coefficients);

        s = {};
        s.id = "E21";
        s.name = "ReLU c_k validation";
        s.key_result = "R > 0.80 at all eta";
        s.theory = "mode coefficients";
        s.description = "Pearson R of predicted vs empirical c_k, ReLU, including one EoS learning rate per seed.";
        s.seeds = three;
        s.etas = logspace(3e-5, 3e-2, 6);
        s.params = {{"include_eos", true}};
        s.targets = {{"r_min", ">=", 0.6, 0.0, true, "reference > 0.80 at all eta"}};
        add(s, experiments::mode_coefficients);

        s = {};
        s.id = "E22";
        s.name = "Width-dimension transition";
        s.key_result = "w*/d varies: 6.0, 3.0, 1.0";
        s.theory = "EoS / sub-EoS dichotomy";
        s.description = "Smallest width whose MSE drift fit loses power-law quality, for d = 10, 20, 40.";
        s.seeds = {42};
        s.steps = 1000;
        s.dims = {10, 20, 40};
        s.widths = {8, 16, 32, 64, 96, 128, 192};
        s.etas = logspace(1e-3, 3e-1, 8);
        s.targets = {{"transition_ratio_decreasing", "true", 0.0, 0.0, true, "w*/d decreasing in d"}};
        add(s, experiments::width_dimension);

        s = {};
        s.id = "E23";
        s.name = "tau vs. learning rate";
        s.key_result = "tau = 1.33/eta + 29, R^2 = 0.988";
        s.theory = "compression timescale";
        s.description = "Compression timescale for five learning rates at a fixed horizon eta*T.";
        s.seeds = three;
        s.loss = "ce";
        s.etas = {0.025, 0.05, 0.1, 0.2, 0.4};
        s.targets = {{"tau_r2", ">=", 0.9, 0.0, true, "reference R^2 = 0.988"},
                     {"tau_slope", "in", 1.33 / 2.0, 1.33 * 2.0, true, "reference slope 1.33"},
                     {"bound_violations", "<=", 0.0, 0.0, true, "compression bound"}};
        add(s, experiments::tau_scaling);
        return r;
    }();
    return entries;
}

inline std::vector<ExperimentSpec> registry() {
    std::vector<ExperimentSpec> out;
    for (const auto& e : registry_entries()) out.push_back(e.spec);
    return out;
}

inline const RegistryEntry& find_experiment(const std::string& id) {
    for (const auto& e : registry_entries())
        if (e.spec.id == id) return e;
    throw InvalidInput("unknown experiment id '" + id + "'");
}

// Applies a JSON merge patch to the spec; unknown keys are rejected.
inline ExperimentSpec apply_overrides(const ExperimentSpec& base, const Json& overrides) {
    if (overrides.is_null()) return base;
    if (!overrides.is_object()) throw InvalidInput("overrides must be a JSON object");
    if (overrides.empty()) return base;
    Json j = base;
    for (const auto& [key, value] : overrides.items())
        if (!j.contains(key)) throw InvalidInput("unknown spec field '" + key + "'");
    if (overrides.contains("id") && overrides["id"] != base.id) throw InvalidInput("overrides cannot change the id");
    j.merge_patch(overrides);
    return j.get<ExperimentSpec>();
}

inline void evaluate_targets(ExperimentResult& res, const std::vector<Target>& targets) {
    res.outcomes.clear();
    for (const auto& t : targets) {
        TargetOutcome o;
        o.target = t;
        if (res.metrics.contains(t.metric)) {
            const Json& m = res.metrics.at(t.metric);
            o.measured = m;
            if (t.op == "true" && m.is_boolean()) {
                o.evaluated = true;
                o.pass = m.get<bool>();
            } else if (m.is_number()) {
                const double v = m.get<double>();
                o.evaluated = std::isfinite(v);
                if (t.op == "<") o.pass = v < t.lo;
                else if (t.op == "<=") o.pass = v <= t.lo;
                else if (t.op == ">") o.pass = v > t.lo;
                else if (t.op == ">=") o.pass = v >= t.lo;
                else if (t.op == "in") o.pass = v >= t.lo && v <= t.hi;
                o.pass = o.pass && o.evaluated;
            }
        }
        res.outcomes.push_back(std::move(o));
    }
}

inline std::string describe(const Target& t) {
    if (t.op == "true") return t.metric + " is true";
    if (t.op == "in") return t.metric + " in [" + detail::fmt(t.lo) + ", " + detail::fmt(t.hi) + "]";
    return t.metric + " " + t.op + " " + detail::fmt(t.lo);
}

struct RunOptions {
    std::size_t jobs = 1;
    TracePolicy traces = TracePolicy::FirstSeed;
};

// Resolves the spec, runs every cell, evaluates the targets and (when
// out_dir is non-empty) writes config.json and results.json.
inline ExperimentResult run_experiment(const std::string& id, const Json& overrides,
                                       const std::filesystem::path& out_dir, const RunOptions& opts = {}) {
    const RegistryEntry& entry = find_experiment(id);
    const ExperimentSpec spec = apply_overrides(entry.spec, overrides);
    if (spec.seeds.empty()) throw InvalidInput(id + ": no seeds");
    RunContext ctx;
    ctx.jobs = std::max<std::size_t>(1, opts.jobs);
    ctx.traces = opts.traces;
    ctx.first_seed = spec.seeds.front();
    if (!out_dir.empty()) {
        ctx.dir = out_dir / id;
        std::filesystem::create_directories(ctx.dir);
    }
    ExperimentResult res;
    res.id = spec.id;
    res.name = spec.name;
    res.key_result = spec.key_result;
    res.config = spec;
    res.config["schema_version"] = kConfigSchemaVersion;
    res.started_at = detail::iso_now();
    if (ctx.writes()) {
        std::ofstream os(ctx.dir / "config.json");
        os << res.config.dump(2) << '\n';
    }
    const auto t0 = std::chrono::steady_clock::now();
    entry.run(spec, ctx, res);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    evaluate_targets(res, spec.targets);
    if (std::any_of(res.outcomes.begin(), res.outcomes.end(), [](const auto& o) { return !o.evaluated; }))
        res.status = "partial";
    if (ctx.writes()) {
        std::ofstream os(ctx.dir / "results.json");
        os << res.to_json().dump(2) << '\n';
    }
    return res;
}

// ---------------------------------------------------------------------------
// Suites and reports
// ---------------------------------------------------------------------------

struct SuiteRow {
    std::string id, name, key_result, status;
    bool passed = false;
    bool has_hard_targets = false;
    std::string measured;  // "metric=value; ..."
    std::string error;
    double wall_seconds = 0.0;
};

struct SuiteSummary {
    std::vector<SuiteRow> rows;
    bool all_passed() const {
        return std::all_of(rows.begin(), rows.end(), [](const SuiteRow& r) { return r.passed && r.error.empty(); });
    }
};

inline std::string measured_string(const Json& results) {
    std::ostringstream os;
    bool first = true;
    for (const auto& t : results.value("targets", Json::array())) {
        const Json& m = t["measured"];
        os << (first ? "" : "; ") << t["target"]["metric"].get<std::string>() << '=';
        if (m.is_number()) os << detail::fmt(m.get<double>());
        else if (m.is_boolean()) os << (m.get<bool>() ? "true" : "false");
        else os << "n/a";
        os << (t["pass"].get<bool>() ? "" : (t["target"]["hard"].get<bool>() ? " (FAIL)" : " (soft miss)"));
        first = false;
    }
    return os.str();
}

inline SuiteRow suite_row(const Json& results) {
    SuiteRow r;
    r.id = results.value("id", "");
    r.name = results.value("name", "");
    r.key_result = results.value("key_result", "");
    r.status = results.value("status", "");
    r.passed = results.value("passed", false);
    for (const auto& t : results.value("targets", Json::array())) r.has_hard_targets |= t["target"].value("hard", true);
    r.measured = measured_string(results);
    if (results.contains("timing")) r.wall_seconds = results["timing"].value("wall_seconds", 0.0);
    return r;
}

inline std::string summary_markdown(const SuiteSummary& s) {
    std::ostringstream os;
    os << "| # | Name | Expected | Measured | Status |\n|---|---|---|---|---|\n";
    for (const auto& r : s.rows) {
        std::string status = !r.error.empty() ? "error" : r.passed ? (r.has_hard_targets ? "pass" : "info") : "FAIL";
        if (r.status == "partial" && r.error.empty()) status += " (partial)";
        os << "| " << r.id << " | " << r.name << " | " << r.key_result << " | "
           << (r.error.empty() ? r.measured : r.error) << " | " << status << " |\n";
    }
    return os.str();
}

inline Json summary_json(const SuiteSummary& s) {
    Json j = Json::array();
    for (const auto& r : s.rows)
        j.push_back({{"id", r.id}, {"name", r.name}, {"key_result", r.key_result}, {"status", r.status},
                     {"passed", r.passed}, {"measured", r.measured}, {"error", r.error}});
    return j;
}

inline void write_summary(const SuiteSummary& s, const std::filesystem::path& out_dir) {
    if (out_dir.empty()) return;
    std::filesystem::create_directories(out_dir);
    std::ofstream(out_dir / "summary.md") << summary_markdown(s);
    std::ofstream(out_dir / "summary.json") << summary_json(s).dump(2) << '\n';
}

// Experiments run one after another; `jobs` bounds the concurrent cells
// inside each experiment.
inline SuiteSummary run_suite(const std::vector<std::string>& ids, std::size_t jobs,
                              const std::filesystem::path& out_dir, const RunOptions& base = {},
                              const std::function<void(const SuiteRow&)>& progress = {},
                              const Json& overrides = Json::object()) {
    SuiteSummary s;
    RunOptions opts = base;
    opts.jobs = jobs;
    for (const auto& id : ids) {
        SuiteRow row;
        try {
            const ExperimentResult res = run_experiment(id, overrides, out_dir, opts);
            row = suite_row(res.to_json());
        } catch (const std::exception& e) {
            row.id = id;
            row.name = find_experiment(id).spec.name;
            row.key_result = find_experiment(id).spec.key_result;
            row.status = "error";
            row.error = e.what();
        }
        if (progress) progress(row);
        s.rows.push_back(std::move(row));
    }
    write_summary(s, out_dir);
    return s;
}

// Rebuilds the summary table from the results.json files under out_dir.
inline SuiteSummary load_report(const std::filesystem::path& out_dir) {
    if (!std::filesystem::is_directory(out_dir)) throw InvalidInput("report: '" + out_dir.string() + "' is not a directory");
    SuiteSummary s;
    for (const auto& e : registry_entries()) {
        const auto path = out_dir / e.spec.id / "results.json";
        if (!std::filesystem::exists(path)) continue;
        std::ifstream is(path);
        s.rows.push_back(suite_row(Json::parse(is)));
    }
    return s;
}

inline std::vector<std::string> all_experiment_ids() {
    std::vector<std::string> ids;
    for (const auto& e : registry_entries()) ids.push_back(e.spec.id);
    return ids;
}

}  // namespace conslab
