#pragma once

// Command-line front end: parse() turns argv into a Command, execute() runs
// it. Exit codes: 0 ok, 1 runtime failure, 2 usage, 3 hard target failed.

#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "conslab/experiments.hpp"

namespace conslab::cli {

enum ExitCode : int { kOk = 0, kRuntime = 1, kUsage = 2, kTargetFailure = 3 };

struct Command {
    std::string sub;  // gen-data | train | flow | experiment | suite | predict | report
    // common
    std::uint64_t seed = 42;
    bool seed_given = false;
    std::string out;
    std::size_t jobs = 1;
    // data
    std::size_t n = 200, d = 20, classes = 5;
    double separation = 2.0;
    // train / flow
    std::string widths = "20,64,5";
    std::string activation = "relu";
    std::string loss = "mse";
    std::string optimizer = "gd";
    double eta = 0.01;
    std::size_t steps = 1000;
    bool bias = false;
    std::size_t sharpness_stride = 0;
    double duration = 0.5;
    double flow_step = 1e-4;
    // experiment / suite
    std::vector<std::string> ids;
    std::string seeds;
    std::string etas;
    std::size_t steps_override = 0;
    std::string set;
    std::string traces = "first";
    bool svg = false;
    // predict
    std::string spectrum;
    std::string eta_grid = "1e-4:3e-1:12";
    // report
    std::string dir;
};

struct ParseOutcome {
    std::optional<Command> command;
    int exit_code = kOk;  // meaningful when command is empty (help or usage error)
};

inline std::string default_out() {
    const char* env = std::getenv("CONSLAB_OUT");
    return env && *env ? env : "runs";
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        if (item.empty()) continue;
        std::size_t used = 0;
        try {
            if constexpr (std::is_floating_point_v<T>) out.push_back(static_cast<T>(std::stod(item, &used)));
            else out.push_back(static_cast<T>(std::stoull(item, &used)));
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size()) throw InvalidInput(std::string("bad ") + what + " entry '" + item + "'");
    }
    if (out.empty()) throw InvalidInput(std::string("empty ") + what + " list");
    return out;
}

// "lo:hi:n" (log-spaced) or a comma list.
inline Vector parse_eta_grid(const std::string& s) {
    if (s.find(':') == std::string::npos) return parse_list<double>(s, "eta");
    std::stringstream ss(s);
    std::string a, b, c;
    std::getline(ss, a, ':');
    std::getline(ss, b, ':');
    std::getline(ss, c, ':');
    try {
        const double lo = std::stod(a), hi = std::stod(b);
        const auto n = static_cast<std::size_t>(std::stoul(c));
        if (!(lo > 0.0) || !(hi > lo) || n < 2) throw InvalidInput("");
        return logspace(lo, hi, n);
    } catch (const std::exception&) {
        throw InvalidInput("bad eta grid '" + s + "' (expected lo:hi:n with 0 < lo < hi, n >= 2)");
    }
}

inline ParseOutcome parse(int argc, const char* const* argv, std::ostream& out = std::cout,
                          std::ostream& err = std::cerr) {
    Command c;
    c.out = default_out();
    CLI::App app{"conslab: conservation-law drift experiments for small MLPs"};
    app.require_subcommand(1, 1);
    app.fallthrough(false);

    auto common = [&](CLI::App* s) {
        s->add_option("--seed", c.seed, "RNG seed (default 42; for experiment/suite: run only this seed)");
        s->add_option("--out", c.out, "output directory (default $CONSLAB_OUT or ./runs)");
        s->add_option("--jobs", c.jobs, "max concurrent experiment cells (default 1)")->check(CLI::PositiveNumber);
    };
    auto data_opts = [&](CLI::App* s) {
        s->add_option("--n", c.n, "samples (default 200)")->check(CLI::PositiveNumber);
        s->add_option("--separation", c.separation, "class-mean scale (default 2.0)");
    };
    auto net_opts = [&](CLI::App* s) {
        s->add_option("--widths", c.widths, "layer widths d,h,...,C (default 20,64,5)");
        s->add_option("--activation", c.activation, "relu | linear | leaky:<slope> (default relu)");
        s->add_option("--loss", c.loss, "mse | ce (default mse)");
    };

    auto* gen = app.add_subcommand("gen-data", "write a Gaussian-mixture dataset as CSV");
    common(gen);
    data_opts(gen);
    gen->add_option("--d", c.d, "input dimension (default 20)")->check(CLI::PositiveNumber);
    gen->add_option("--classes", c.classes, "classes (default 5)")->check(CLI::PositiveNumber);

    auto* tr = app.add_subcommand("train", "one GD/Adam run; writes trace.csv and drift.json");
    common(tr);
    data_opts(tr);
    net_opts(tr);
    tr->add_option("--optimizer", c.optimizer, "gd | adam (default gd)");
    tr->add_option("--eta", c.eta, "learning rate (default 0.01)");
    tr->add_option("--steps", c.steps, "steps (default 1000)");
    tr->add_flag("--bias", c.bias, "add biases (breaks conservation)");
    tr->add_option("--sharpness-stride", c.sharpness_stride, "track lambda_max every k steps (default off)");

    auto* fl = app.add_subcommand("flow", "RK4 gradient flow; writes trace.csv");
    common(fl);
    data_opts(fl);
    net_opts(fl);
    fl->add_option("--duration", c.duration, "flow time (default 0.5)");
    fl->add_option("--step", c.flow_step, "RK4 step (default 1e-4)");

    auto exp_opts = [&](CLI::App* s) {
        s->add_option("--traces", c.traces, "trace CSVs: none | first | all (default first seed)")
            ->check(CLI::IsMember({"none", "first", "all"}));
        s->add_flag("--svg", c.svg, "also render log-log SVGs of drift sweeps");
    };
    auto* ex = app.add_subcommand("experiment", "run one registered experiment (E1..E23)");
    ex->add_option("id", c.ids, "experiment id")->required()->expected(1);
    common(ex);
    exp_opts(ex);
    ex->add_option("--seeds", c.seeds, "comma-separated seeds (overrides the spec)");
    ex->add_option("--etas", c.etas, "eta grid lo:hi:n or comma list (overrides the spec)");
    ex->add_option("--steps", c.steps_override, "training steps (overrides the spec)");
    ex->add_option("--set", c.set, "JSON merge patch applied to the spec, e.g. '{\"hidden\":32}'");

    auto* su = app.add_subcommand("suite", "run several experiments; 'all' for the full registry");
    su->add_option("ids", c.ids, "experiment ids or 'all'")->expected(0, -1);
    common(su);
    exp_opts(su);

    auto* pr = app.add_subcommand("predict", "evaluate the crossover formula for a spectrum file");
    common(pr);
    pr->add_option("--spectrum", c.spectrum, "JSON {lambdas, coeffs, steps}")->required();
    pr->add_option("--eta-grid", c.eta_grid, "lo:hi:n log grid or comma list (default 1e-4:3e-1:12)");
    pr->add_option("--steps", c.steps_override, "training horizon T (overrides the file)");

    auto* rp = app.add_subcommand("report", "summarize the results under a run directory");
    rp->add_option("dir", c.dir, "run directory (default --out)");
    common(rp);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return {std::nullopt, app.exit(e, out, err)};
    } catch (const CLI::CallForAllHelp& e) {
        return {std::nullopt, app.exit(e, out, err)};
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return {std::nullopt, kUsage};
    }
    c.sub = app.get_subcommands().front()->get_name();
    for (auto* s : app.get_subcommands())
        if (s->count("--seed")) c.seed_given = true;
    if (c.sub == "report" && c.dir.empty()) c.dir = c.out;
    return {c, kOk};
}

// ---------------------------------------------------------------------------
// SVG: log-log scatter with an optional fitted line
// ---------------------------------------------------------------------------

struct SvgSeries {
    std::string label;
    Vector xs, ys;
};

inline void write_loglog_svg(std::ostream& os, const std::string& title, const std::vector<SvgSeries>& series,
                             const std::optional<FitResult>& fit) {
    constexpr double W = 640, H = 440, L = 70, R = 20, T = 40, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.xs.size(); ++i)
            if (s.xs[i] > 0 && s.ys[i] > 0) {
                x0 = std::min(x0, std::log10(s.xs[i]));
                x1 = std::max(x1, std::log10(s.xs[i]));
                y0 = std::min(y0, std::log10(s.ys[i]));
                y1 = std::max(y1, std::log10(s.ys[i]));
            }
    if (!(x1 > x0)) x0 -= 0.5, x1 += 0.5;
    if (!(y1 > y0)) y0 -= 0.5, y1 += 0.5;
    auto px = [&](double lx) { return L + (lx - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double ly) { return H - B - (ly - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
       << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << W - L - R << "\" height=\"" << H - T - B
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int e = static_cast<int>(std::ceil(x0)); e <= static_cast<int>(std::floor(x1)); ++e)
        os << "<text x=\"" << px(e) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">1e" << e
           << "</text>\n";
    for (int e = static_cast<int>(std::ceil(y0)); e <= static_cast<int>(std::floor(y1)); ++e)
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(e) + 4 << "\" text-anchor=\"end\" font-size=\"11\">1e" << e
           << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* col = colors[k % 6];
        for (std::size_t i = 0; i < series[k].xs.size(); ++i)
            if (series[k].xs[i] > 0 && series[k].ys[i] > 0)
                os << "<circle cx=\"" << px(std::log10(series[k].xs[i])) << "\" cy=\""
                   << py(std::log10(series[k].ys[i])) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
        os << "<text x=\"" << L + 8 << "\" y=\"" << T + 16 + 14 * static_cast<double>(k) << "\" font-size=\"11\" fill=\""
           << col << "\">" << series[k].label << "</text>\n";
    }
    if (fit) {
        // log10 y = slope log10 x + intercept / ln 10
        auto ly = [&](double lx) { return fit->slope * lx + fit->intercept / std::log(10.0); };
        os << "<line x1=\"" << px(x0) << "\" y1=\"" << py(ly(x0)) << "\" x2=\"" << px(x1) << "\" y2=\"" << py(ly(x1))
           << "\" stroke=\"black\" stroke-dasharray=\"5,3\"/>\n"
           << "<text x=\"" << W - R - 6 << "\" y=\"" << H - B - 8 << "\" text-anchor=\"end\" font-size=\"12\">slope "
           << detail::fmt(fit->slope) << ", R2 " << detail::fmt(fit->r2) << "</text>\n";
    }
    os << "</svg>\n";
}

// Renders every plots/drift_vs_eta_*.csv of an experiment directory.
inline void render_drift_svgs(const std::filesystem::path& exp_dir) {
    const auto plots = exp_dir / "plots";
    if (!std::filesystem::is_directory(plots)) return;
    for (const auto& entry : std::filesystem::directory_iterator(plots)) {
        const std::string stem = entry.path().stem().string();
        if (entry.path().extension() != ".csv" || stem.rfind("drift_vs_eta_", 0) != 0) continue;
        std::ifstream is(entry.path());
        std::string line;
        std::getline(is, line);  // seed,eta,drift,imbalance_sum,ok
        std::map<double, SvgSeries> by_seed;
        Vector all_x, all_y;
        while (std::getline(is, line)) {
            const Vector row = parse_list<double>(line, "csv");
            if (row.size() < 5 || row[4] == 0.0 || !(row[2] > 0.0)) continue;
            auto& s = by_seed[row[0]];
            s.label = "seed " + detail::fmt(row[0]);
            s.xs.push_back(row[1]);
            s.ys.push_back(row[2]);
            all_x.push_back(row[1]);
            all_y.push_back(row[2]);
        }
        std::vector<SvgSeries> series;
        for (auto& [seed, s] : by_seed) series.push_back(std::move(s));
        std::optional<FitResult> fit;
        if (all_x.size() >= 3) fit = fit_power_law(all_x, all_y);
        std::ofstream os(plots / (stem + ".svg"));
        write_loglog_svg(os, "drift vs eta (" + stem.substr(13) + ")", series, fit);
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

namespace detail_cli {

inline TrainConfig train_config(const Command& c) {
    TrainConfig cfg;
    cfg.widths = parse_list<std::size_t>(c.widths, "width");
    if (cfg.widths.size() < 3) throw InvalidInput("--widths needs at least input, hidden and output sizes");
    cfg.activation = Activation::parse(c.activation);
    cfg.loss = parse_loss(c.loss);
    cfg.optimizer = detail::parse_optimizer(c.optimizer);
    cfg.eta = c.eta;
    cfg.steps = c.steps;
    cfg.seed = c.seed;
    cfg.bias = c.bias;
    return cfg;
}

inline Dataset dataset(const Command& c, const TrainConfig& cfg) {
    return gen_gaussian_mixture(c.n, cfg.widths.front(), cfg.widths.back(), c.separation, c.seed);
}

inline std::filesystem::path prepare(const std::string& dir) {
    std::filesystem::create_directories(dir);
    return dir;
}

inline Json experiment_overrides(const Command& c) {
    Json o = Json::object();
    if (!c.set.empty()) {
        try {
            o = Json::parse(c.set);
        } catch (const Json::parse_error& e) {
            throw InvalidInput(std::string("--set: ") + e.what());
        }
    }
    if (!c.seeds.empty()) o["seeds"] = parse_list<std::uint64_t>(c.seeds, "seed");
    else if (c.seed_given) o["seeds"] = {c.seed};
    if (!c.etas.empty()) o["etas"] = parse_eta_grid(c.etas);
    if (c.steps_override) o["steps"] = c.steps_override;
    return o;
}

inline void print_result(std::ostream& out, const ExperimentResult& r) {
    out << r.id << " " << r.name << " (expected: " << r.key_result << ")\n";
    for (const auto& o : r.outcomes) {
        out << "  " << (o.pass ? "pass" : o.target.hard ? "FAIL" : "miss") << "  " << describe(o.target)
            << "  measured=" << (o.measured.is_null() ? "n/a" : o.measured.dump()) << '\n';
    }
    out << "  status=" << r.status << " wall=" << detail::fmt(r.wall_seconds) << "s\n";
}

inline int gen_data(const Command& c, std::ostream& out) {
    const Dataset ds = gen_gaussian_mixture(c.n, c.d, c.classes, c.separation, c.seed);
    const auto path = prepare(c.out) / "dataset.csv";
    std::ofstream os(path);
    write_dataset_csv(os, ds);
    out << "wrote " << path.string() << " (" << c.n << " x " << c.d << ", " << c.classes << " classes)\n";
    return kOk;
}

inline int train_cmd(const Command& c, std::ostream& out) {
    TrainConfig cfg = train_config(c);
    const Dataset ds = dataset(c, cfg);
    TrainTrace tr;
    if (c.sharpness_stride) {
        cfg.record.lambda_stride = c.sharpness_stride;
        tr = train_with_sharpness(cfg, ds);
    } else {
        tr = train(cfg, ds);
    }
    const auto dir = prepare(c.out);
    {
        std::ofstream os(dir / "trace.csv");
        write_trace_csv(os, tr);
    }
    const DriftReport rep = drift_report(tr);
    Json j = to_json(rep);
    j["status"] = to_string(tr.status);
    if (!tr.lambda_max.empty()) {
        j["lambda_max"] = Json::array();
        for (const auto& s : tr.lambda_max) j["lambda_max"].push_back({s.step, s.value});
        j["eos_dwell"] = eos_dwell_fraction(tr.lambda_max, cfg.eta);
    }
    std::ofstream(dir / "drift.json") << j.dump(2) << '\n';
    out << "status=" << to_string(tr.status) << " steps=" << tr.steps() << " final_loss=" << detail::fmt(tr.loss.back())
        << " mean_drift=" << detail::fmt(rep.mean_drift());
    if (rep.identity_applicable) out << " identity_residual=" << detail::fmt(rep.max_identity_residual());
    out << "\nwrote " << (dir / "trace.csv").string() << ", " << (dir / "drift.json").string() << '\n';
    return tr.status == RunStatus::Ok ? kOk : kRuntime;
}

inline int flow_cmd(const Command& c, std::ostream& out) {
    const TrainConfig cfg = train_config(c);
    const Dataset ds = dataset(c, cfg);
    const TrainTrace tr = integrate_flow(init_kaiming_balanced(cfg.widths, c.seed, false), ds, cfg.activation,
                                         cfg.loss, c.duration, c.flow_step);
    const auto dir = prepare(c.out);
    std::ofstream os(dir / "trace.csv");
    write_trace_csv(os, tr);
    out << "status=" << to_string(tr.status) << " duration=" << c.duration << " step=" << c.flow_step
        << " max_relative_drift=" << detail::fmt(max_relative_excursion(tr)) << '\n'
        << "wrote " << (dir / "trace.csv").string() << '\n';
    return tr.status == RunStatus::Ok ? kOk : kRuntime;
}

inline int experiment_cmd(const Command& c, std::ostream& out) {
    RunOptions opts{c.jobs, parse_trace_policy(c.traces)};
    const ExperimentResult r = run_experiment(c.ids.front(), experiment_overrides(c), c.out, opts);
    if (c.svg) render_drift_svgs(std::filesystem::path(c.out) / r.id);
    print_result(out, r);
    out << "wrote " << (std::filesystem::path(c.out) / r.id / "results.json").string() << '\n';
    return r.passed() ? kOk : kTargetFailure;
}

inline int suite_cmd(const Command& c, std::ostream& out) {
    std::vector<std::string> ids;
    for (const auto& id : c.ids) {
        if (id == "all") {
            const auto all = all_experiment_ids();
            ids.insert(ids.end(), all.begin(), all.end());
        } else {
            find_experiment(id);  // validate before running anything
            ids.push_back(id);
        }
    }
    Json overrides = Json::object();
    if (c.seed_given) overrides["seeds"] = {c.seed};
    RunOptions opts{c.jobs, parse_trace_policy(c.traces)};
    const SuiteSummary s = run_suite(
        ids, c.jobs, c.out, opts,
        [&](const SuiteRow& row) {
            out << row.id << ": " << (row.error.empty() ? (row.passed ? "pass" : "FAIL") : "error: " + row.error)
                << '\n'
                << std::flush;
            if (c.svg && row.error.empty()) render_drift_svgs(std::filesystem::path(c.out) / row.id);
        },
        overrides);
    out << '\n' << summary_markdown(s);
    return s.all_passed() ? kOk : kTargetFailure;
}

inline int predict_cmd(const Command& c, std::ostream& out) {
    std::ifstream is(c.spectrum);
    if (!is) throw InvalidInput("cannot open spectrum file '" + c.spectrum + "'");
    Json j;
    try {
        j = Json::parse(is);
    } catch (const Json::parse_error& e) {
        throw InvalidInput(std::string("spectrum file: ") + e.what());
    }
    SpectralModel m;
    m.lambdas = j.at("lambdas").get<Vector>();
    m.coeffs = j.contains("coeffs") ? j["coeffs"].get<Vector>() : Vector(m.lambdas.size(), 1.0);
    m.steps = c.steps_override ? c.steps_override : j.value("steps", std::size_t{2000});
    const Vector grid = parse_eta_grid(c.eta_grid);
    const Vector beta = grid.size() >= 3 ? local_exponent(m, grid) : Vector(grid.size(), std::nan(""));
    const auto dir = prepare(c.out);
    std::ofstream csv(dir / "predict.csv");
    csv << "eta,G,G_stable,local_beta,unstable_modes\n" << std::setprecision(17);
    out << std::setw(12) << "eta" << std::setw(14) << "G" << std::setw(14) << "G_stable" << std::setw(10) << "beta"
        << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) {
        m.eta = grid[i];
        const CrossoverResult r = crossover_sum(m);
        const auto unstable = std::count_if(r.modes.begin(), r.modes.end(), [](const auto& p) { return p.unstable; });
        csv << grid[i] << ',' << r.total << ',' << r.stable_total << ',' << beta[i] << ',' << unstable << '\n';
        out << std::setw(12) << detail::fmt(grid[i]) << std::setw(14) << detail::fmt(r.total) << std::setw(14)
            << detail::fmt(r.stable_total) << std::setw(10) << detail::fmt(beta[i]) << '\n';
    }
    out << "wrote " << (dir / "predict.csv").string() << '\n';
    return kOk;
}

inline int report_cmd(const Command& c, std::ostream& out) {
    const SuiteSummary s = load_report(c.dir);
    out << summary_markdown(s);
    return kOk;
}

}  // namespace detail_cli

inline int execute(const Command& c, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (c.sub == "gen-data") return detail_cli::gen_data(c, out);
        if (c.sub == "train") return detail_cli::train_cmd(c, out);
        if (c.sub == "flow") return detail_cli::flow_cmd(c, out);
        if (c.sub == "experiment") return detail_cli::experiment_cmd(c, out);
        if (c.sub == "suite") return detail_cli::suite_cmd(c, out);
        if (c.sub == "predict") return detail_cli::predict_cmd(c, out);
        if (c.sub == "report") return detail_cli::report_cmd(c, out);
        err << "error: unknown subcommand '" << c.sub << "'\n";
        return kUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kRuntime;
    }
}

inline int main(int argc, const char* const* argv) {
    const ParseOutcome p = parse(argc, argv);
    return p.command ? execute(*p.command) : p.exit_code;
}

}  // namespace conslab::cli
