// Acceptance run: one PASS/FAIL line per criterion, at fixed tolerances.
// Criteria share experiment runs where they can (8 reuses 9 and 10).

#include <chrono>
#include <iostream>

#include <CLI11.hpp>

#include "conslab/experiments.hpp"
#include "../tests/support/oracles.hpp"

using namespace conslab;

namespace {

struct Line {
    int id = 0;
    std::string title;
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
    double budget = 0.0;  // 0 = no runtime budget
};

std::string num(double v) { return detail::fmt(v); }

double metric(const ExperimentResult& r, const std::string& key) {
    const auto& m = r.metrics;
    return m.contains(key) && m[key].is_number() ? m[key].get<double>() : std::nan("");
}

bool target_ok(const ExperimentResult& r, const std::string& key) {
    for (const auto& o : r.outcomes)
        if (o.target.metric == key) return o.evaluated && o.pass;
    return false;
}

class Timer {
public:
    double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count(); }

private:
    std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

}  // namespace

int main(int argc, char** argv) {
    std::string out = "acceptance";
    std::size_t jobs = 1;
    std::vector<int> only;
    CLI::App app{"conslab acceptance criteria"};
    app.add_option("--out", out, "directory for experiment outputs (default ./acceptance)");
    app.add_option("--jobs", jobs, "concurrent cells per experiment (default 1)")->check(CLI::PositiveNumber);
    app.add_option("--only", only, "run only these criterion numbers")->delimiter(',');
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    const RunOptions opts{jobs, TracePolicy::None};
    std::vector<Line> lines;
    auto report = [&](Line l) {
        if (l.budget > 0.0 && l.seconds > l.budget) {
            l.pass = false;
            l.detail += "; over runtime budget";
        }
        std::cout << (l.pass ? "PASS" : "FAIL") << "  " << l.id << ". " << l.title << ": " << l.detail << " ["
                  << num(l.seconds) << " s" << (l.budget > 0.0 ? " / " + num(l.budget) + " s" : "") << "]\n"
                  << std::flush;
        lines.push_back(std::move(l));
    };
    auto run = [&](const std::string& id, const Json& overrides = Json::object()) {
        return run_experiment(id, overrides, out, opts);
    };

    if (wanted(1)) {
        Timer t;
        const auto r = run("E1");
        const double v = metric(r, "max_relative_drift");
        report({1, "Conservation under flow (E1)", v < 3e-5, "max relative drift " + num(v) + " (< 3e-05)",
                t.seconds(), 120});
    }

    if (wanted(2)) {
        // Five random bias-free GD runs (widths, depth, activation, loss, eta
        // all drawn), then the same networks with random biases.
        Timer t;
        Rng rng(20240601);
        double worst_plain = 0.0, worst_scaled = 0.0, best_bias = INFINITY;
        for (int k = 0; k < 5; ++k) {
            const std::size_t depth = 2 + rng.below(3);
            const std::size_t hidden = 16 + rng.below(49);
            const std::uint64_t seed = rng();
            TrainConfig cfg;
            cfg.widths = detail::layer_widths(20, hidden, depth, 5);
            cfg.activation = std::array{Activation::relu(), Activation::linear(), Activation::leaky(0.2)}[rng.below(3)];
            cfg.loss = rng.below(2) ? LossKind::CrossEntropy : LossKind::MSE;
            cfg.eta = std::exp(std::log(1e-3) + rng.uniform() * std::log(30.0));
            cfg.steps = 200;
            cfg.seed = seed;
            const Dataset ds = gen_gaussian_mixture(200, 20, 5, 2.0, seed);
            const auto plain = drift_report(train(cfg, ds));
            worst_plain = std::max(worst_plain, plain.max_identity_residual());
            worst_scaled = std::max(worst_scaled, plain.max_identity_residual_scaled());
            cfg.bias = true;
            MlpParams p = init_kaiming_balanced(cfg.widths, seed, true);
            for (auto& b : p.biases)
                for (double& v : b) v = 0.5 * rng.normal();
            best_bias = std::min(best_bias, drift_report(train_from(cfg, ds, p)).max_identity_residual());
        }
        const bool pass = worst_plain <= 1e-8 && best_bias > 1e-7;
        report({2, "Exact drift identity", pass,
                "bias-free max residual " + num(worst_plain) + " (<= 1e-08; scaled by eta^2 sum ||g||^2: " +
                    num(worst_scaled) + "); with biases min residual " + num(best_bias) + " (> 1e-07)",
                t.seconds(), 60});
    }

    if (wanted(3)) {
        Timer t;
        const auto r = run("E5");
        const double b = metric(r, "beta_mean"), q = metric(r, "r2_min"), dec = metric(r, "eta_decades");
        const bool pass = b >= 1.0 && b <= 1.35 && q > 0.97 && dec >= 3.0 && r.config["seeds"].size() == 5;
        report({3, "Drift scaling law (E5)", pass,
                "beta " + num(b) + " (in [1, 1.35]), min R2 " + num(q) + " (> 0.97), " + num(dec) +
                    " decades, 5 seeds; per-seed beta [" + num(metric(r, "beta_min")) + ", " +
                    num(metric(r, "beta_max")) + "]",
                t.seconds(), 600});
    }

    if (wanted(4)) {
        Timer t;
        const auto r = run("E9");
        const double gap = metric(r, "beta_gap");
        report({4, "Linear ~ ReLU exponent (E9)", gap <= 0.15,
                "beta linear " + num(r.metrics["beta_linear"].value("mean", NAN)) + ", ReLU " +
                    num(r.metrics["beta_relu"].value("mean", NAN)) + ", gap " + num(gap) + " (<= 0.15)",
                t.seconds(), 600});
    }

    if (wanted(5)) {
        Timer t;
        Rng rng(5);
        double worst = 0.0;
        for (int k = 0; k < 1000; ++k) {
            const std::size_t modes = 1 + rng.below(30);
            const std::size_t steps = 1 + rng.below(3000);
            Vector lam(modes), c(modes);
            double lmax = 0.0;
            for (std::size_t i = 0; i < modes; ++i) {
                lam[i] = std::exp(std::log(1e-3) + rng.uniform() * std::log(1e5));
                c[i] = rng.uniform();
                lmax = std::max(lmax, lam[i]);
            }
            // eta up to just below the stability edge of the stiffest mode
            const double eta = std::exp(std::log(1e-6) + rng.uniform() * (std::log(1.99 / lmax) - std::log(1e-6)));
            const double formula = crossover_sum({lam, c, eta, steps}).total;
            const double brute = oracle::brute_crossover(lam, c, eta, steps);
            worst = std::max(worst, std::abs(formula - brute) / std::abs(brute));
        }
        report({5, "Crossover formula exactness", worst <= 1e-12,
                "max relative error vs brute-force summation over 1000 models " + num(worst) + " (<= 1e-12)",
                t.seconds(), 10});
    }

    if (wanted(6)) {
        Timer t;
        const auto r = run("E8");
        const double lin = metric(r, "max_rel_error_linear"), relu = metric(r, "max_rel_error_relu");
        report({6, "Crossover formula vs measurement (E8)", lin <= 0.40 && relu <= 0.45,
                "max relative error linear " + num(lin) + " (<= 0.40), ReLU " + num(relu) + " (<= 0.45)",
                t.seconds(), 900});
    }

    if (wanted(7)) {
        Timer t;
        const auto lin = run("E20");
        const auto relu = run("E21");
        const double a = metric(lin, "r_min"), b = metric(relu, "r_min");
        std::string eos = "; ReLU EoS points:";
        for (const auto& c : relu.cells)
            if (c.value("eos_point", false)) eos += " R=" + num(c.value("r", NAN));
        report({7, "Mode coefficients (E20/E21)", a >= 0.7 && b >= 0.6,
                "min R linear " + num(a) + " (>= 0.7), min R ReLU over all eta " + num(b) + " (>= 0.6)" + eos,
                t.seconds(), 900});
    }

    double violations = 0.0, checkpoints = 0.0;
    bool compression_ran = false;
    if (wanted(9) || wanted(8)) {
        Timer t;
        const auto r = run("E18");
        violations += metric(r, "bound_violations");
        checkpoints += metric(r, "bound_checkpoints");
        compression_ran = true;
        const double ratio = metric(r, "ratio_reference_max"), spread = metric(r, "tau_spread");
        std::string taus;
        for (const auto& v : r.metrics["tau_by_n"]) taus += (taus.empty() ? "" : "/") + num(v.get<double>());
        if (wanted(9))
            report({9, "CE spectral compression (E18)", ratio <= 0.1 && spread <= 0.3,
                    "lambda ratio final/initial " + num(ratio) + " (<= 0.1); tau for n=100/200/400 " + taus +
                        ", spread " + num(spread) + " (<= 0.3)",
                    t.seconds(), 1200});
    }
    if (wanted(10) || wanted(8)) {
        Timer t;
        const auto r = run("E23");
        violations += metric(r, "bound_violations");
        checkpoints += metric(r, "bound_checkpoints");
        const double slope = metric(r, "tau_slope"), q = metric(r, "tau_r2");
        if (wanted(10))
            report({10, "Timescale law (E23)", q >= 0.9 && slope >= 1.33 / 2 && slope <= 1.33 * 2,
                    "tau = " + num(slope) + "/eta + " + num(metric(r, "tau_intercept")) + ", R2 " + num(q) +
                        " (slope in [0.665, 2.66], R2 >= 0.9)",
                    t.seconds(), 1200});
    }
    if (wanted(8) && compression_ran) {
        report({8, "Compression bound", violations == 0.0 && checkpoints > 0.0,
                num(violations) + " violations over " + num(checkpoints) + " CE checkpoints (E18, E23)", 0.0, 0});
    }

    if (wanted(11)) {
        Timer t;
        const auto r = run("E17");
        const bool pass = target_ok(r, "beta_ce_min") && target_ok(r, "beta_ce_max") &&
                          target_ok(r, "mse_minus_ce_widest") && target_ok(r, "mse_r2_decreasing");
        std::string ce, mse, r2;
        for (std::size_t w : {16, 64, 192}) {
            const auto& c = r.metrics["by_width_ce"][std::to_string(w)];
            const auto& m = r.metrics["by_width_mse"][std::to_string(w)];
            ce += (ce.empty() ? "" : "/") + num(c["beta"].value("mean", NAN));
            mse += (mse.empty() ? "" : "/") + num(m["beta"].value("mean", NAN));
            r2 += (r2.empty() ? "" : "/") + num(m["r2"].value("mean", NAN));
        }
        report({11, "CE clamping vs MSE divergence (E17)", pass,
                "CE beta w16/64/192 " + ce + " (in [0.85, 1.25]); MSE beta " + mse + ", MSE-CE at 192 " +
                    num(metric(r, "mse_minus_ce_widest")) + " (>= 0.3); MSE R2 " + r2 + " (decreasing)",
                t.seconds(), 1800});
    }

    if (wanted(12)) {
        Timer t;
        const auto r = run("E15");
        const double e = metric(r, "sub_eos_exponent"), ratio = metric(r, "eos_rate_ratio");
        report({12, "Switch-rate scaling (E15)", e >= -0.8 && e <= -0.2 && ratio < 2.0,
                "sub-EoS exponent " + num(e) + " (in [-0.8, -0.2]); EoS rate max/min over widths 32..256 " +
                    num(ratio) + " (< 2)",
                t.seconds(), 1200});
    }

    if (wanted(13)) {
        Timer t;
        Rng rng(13);
        double worst = 0.0;
        std::size_t compared = 0, skipped = 0;
        for (int k = 0; k < 20; ++k) {
            const auto rc = oracle::random_case(rng, 2 + static_cast<std::size_t>(k) % 7);
            const auto fd = oracle::fd_gradient_check(rc.params, rc.data, rc.act, rc.loss);
            worst = std::max(worst, fd.rel_error);
            compared += fd.compared;
            skipped += fd.skipped;
        }
        report({13, "Gradient correctness", worst <= 1e-6,
                "max relative error vs central differences over 20 configs (depth 2-8) " + num(worst) +
                    " (<= 1e-06); " + std::to_string(compared) + " coordinates, " + std::to_string(skipped) +
                    " skipped at kinks",
                t.seconds(), 60});
    }

    if (wanted(14)) {
        // Same spec twice, serial and with parallel cells; compare the
        // results.json text with the timing field removed.
        Timer t;
        const std::vector<std::pair<std::string, Json>> cases{
            {"E2", Json::object()},
            {"E7", {{"seeds", {42}}, {"steps", 300}}},
            {"E8", {{"seeds", {42}}, {"etas", {1e-3, 1e-2}}, {"steps", 300}}},
            {"E23", {{"seeds", {42}}, {"etas", {0.2, 0.4}}}},
        };
        std::string mismatched;
        for (const auto& [id, ov] : cases) {
            const auto a = run_experiment(id, ov, std::filesystem::path(out) / "determinism_a", {1, TracePolicy::None});
            const auto b = run_experiment(id, ov, std::filesystem::path(out) / "determinism_b", {2, TracePolicy::None});
            auto strip = [&](const std::string& dir) {
                std::ifstream is(std::filesystem::path(out) / dir / id / "results.json");
                Json j = Json::parse(is);
                j.erase("timing");
                return j.dump();
            };
            if (strip("determinism_a") != strip("determinism_b") || a.to_json(false) != b.to_json(false))
                mismatched += " " + id;
        }
        report({14, "Determinism", mismatched.empty(),
                mismatched.empty() ? "results.json identical (timing removed) for E2, E7, E8, E23 re-runs"
                                   : "differs:" + mismatched,
                t.seconds(), 0});
    }

    std::sort(lines.begin(), lines.end(), [](const Line& a, const Line& b) { return a.id < b.id; });
    std::size_t passed = 0;
    Json summary = Json::array();
    std::cout << "\nsummary\n";
    for (const auto& l : lines) {
        std::cout << (l.pass ? "PASS" : "FAIL") << "  " << l.id << ". " << l.title << '\n';
        passed += l.pass;
        summary.push_back({{"criterion", l.id}, {"title", l.title}, {"pass", l.pass}, {"detail", l.detail},
                           {"seconds", l.seconds}, {"budget_seconds", l.budget}});
    }
    std::cout << passed << "/" << lines.size() << " criteria passed\n";
    std::filesystem::create_directories(out);
    std::ofstream(std::filesystem::path(out) / "acceptance.json") << summary.dump(2) << '\n';
    return passed == lines.size() ? 0 : 3;
}
