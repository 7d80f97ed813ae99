#pragma once

// Losses with exact logit gradients, GD/Adam steppers, an RK4 gradient-flow
// integrator, and the per-step trajectory recorder.

#include <json.hpp>

#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include "conslab/conservation.hpp"
#include "conslab/data.hpp"
#include "conslab/model.hpp"

namespace conslab {

enum class LossKind { MSE, CrossEntropy };

inline std::string to_string(LossKind k) { return k == LossKind::MSE ? "mse" : "ce"; }

inline LossKind parse_loss(const std::string& s) {
    if (s == "mse") return LossKind::MSE;
    if (s == "ce" || s == "cross_entropy") return LossKind::CrossEntropy;
    throw InvalidInput("unknown loss '" + s + "'");
}

struct OptimizerKind {
    enum class Kind { GD, Adam };
    Kind kind = Kind::GD;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    static OptimizerKind gd() { return {}; }
    static OptimizerKind adam(double b1 = 0.9, double b2 = 0.999, double eps = 1e-8) {
        if (!(b1 >= 0.0 && b1 < 1.0 && b2 >= 0.0 && b2 < 1.0))
            throw InvalidInput("OptimizerKind::adam: betas must lie in [0, 1)");
        return {Kind::Adam, b1, b2, eps};
    }
    std::string name() const { return kind == Kind::GD ? "gd" : "adam"; }

    friend bool operator==(const OptimizerKind&, const OptimizerKind&) = default;
};

struct OptimizerState {
    std::size_t t = 0;
    std::vector<Matrix> m, v;
    std::vector<Vector> mb, vb;
};

struct RecordOptions {
    bool signs = false;             // activation sign switches (hidden layers)
    std::size_t sign_stride = 1;
    std::size_t lambda_stride = 0;  // 0 disables sharpness sampling
};

struct TrainConfig {
    std::vector<std::size_t> widths{20, 64, 5};
    Activation activation = Activation::relu();
    LossKind loss = LossKind::MSE;
    OptimizerKind optimizer = OptimizerKind::gd();
    double eta = 0.01;
    std::size_t steps = 1000;
    std::uint64_t seed = 42;
    bool bias = false;
    RecordOptions record;
};

enum class RunStatus { Ok, Diverged };

inline std::string to_string(RunStatus s) { return s == RunStatus::Ok ? "ok" : "diverged"; }

struct LambdaSample {
    std::size_t step = 0;
    double value = 0.0;
};

struct TrainTrace {
    double eta = 0.0;
    OptimizerKind optimizer;
    LossKind loss_kind = LossKind::MSE;
    RunStatus status = RunStatus::Ok;

    // Entry t describes the parameters before update t.
    std::vector<double> loss;
    std::vector<Vector> grad_sq;      // ||dL/dW_l||_F^2
    std::vector<Vector> cons;         // C_l(t)
    std::vector<Vector> cons_change;  // measured C_l(t+1) - C_l(t)
    std::vector<Vector> imbalance;    // delta_l(t)
    std::vector<double> q_min;        // CE only: min_i p_{i, y_i}

    // Sign-switch statistics between consecutive recorded steps.
    std::vector<std::size_t> switch_steps;
    std::vector<double> switch_counts;
    std::size_t switch_slots = 0;  // samples x hidden units
    std::size_t hidden_units = 0;
    bool switches_recorded = false;

    std::vector<LambdaSample> lambda_max;

    MlpParams initial;
    MlpParams final_params;
    Vector cons_final;

    std::size_t steps() const { return loss.size(); }
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Matrix softmax_rows(const Matrix& logits) {
    Matrix p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto z = logits.row(i);
        auto out = p.row(i);
        const double zmax = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (std::size_t k = 0; k < z.size(); ++k) s += (out[k] = std::exp(z[k] - zmax));
        for (double& v : out) v /= s;
    }
    return p;
}

struct LossValue {
    double loss = 0.0;
    Matrix dlogits;
};

// MSE: (1/n) sum_i 0.5 ||f_i - y_i||^2 against one-hot targets.
// CE: mean softmax cross-entropy against class indices.
inline LossValue loss_and_dlogits(const Matrix& logits, const Dataset& ds, LossKind kind) {
    if (logits.rows() != ds.n || logits.cols() != ds.c) throw InvalidInput("loss_and_dlogits: logits shape mismatch");
    const double inv_n = 1.0 / static_cast<double>(ds.n);
    LossValue out{0.0, Matrix(ds.n, ds.c)};
    if (kind == LossKind::MSE) {
        for (std::size_t k = 0; k < logits.size(); ++k) {
            const double r = logits.data()[k] - ds.onehot.data()[k];
            out.loss += 0.5 * r * r;
            out.dlogits.data()[k] = r * inv_n;
        }
        out.loss *= inv_n;
        return out;
    }
    for (std::size_t i = 0; i < ds.n; ++i) {
        auto z = logits.row(i);
        const double zmax = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - zmax);
        const double lse = zmax + std::log(s);
        out.loss += lse - z[ds.labels[i]];
        auto d = out.dlogits.row(i);
        for (std::size_t k = 0; k < z.size(); ++k) d[k] = std::exp(z[k] - lse) * inv_n;
        d[ds.labels[i]] -= inv_n;
    }
    out.loss *= inv_n;
    return out;
}

struct Evaluation {
    double loss = 0.0;
    LayerGrads grads;
    ForwardCache cache;
};

inline Evaluation evaluate(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind kind) {
    Evaluation e;
    e.cache = forward(p, ds.x, act);
    auto lv = loss_and_dlogits(e.cache.logits, ds, kind);
    e.loss = lv.loss;
    e.grads = backward(p, e.cache, lv.dlogits, act);
    return e;
}

// p += scale * g
inline void add_scaled(MlpParams& p, const LayerGrads& g, double scale) {
    for (std::size_t l = 0; l < p.layers(); ++l) p.weights[l].axpy(scale, g.weights[l]);
    if (p.has_bias())
        for (std::size_t l = 0; l < p.layers(); ++l)
            for (std::size_t j = 0; j < p.biases[l].size(); ++j) p.biases[l][j] += scale * g.biases[l][j];
}

inline bool params_finite(const MlpParams& p) {
    for (const auto& w : p.weights)
        if (!w.all_finite()) return false;
    for (const auto& b : p.biases)
        for (double v : b)
            if (!std::isfinite(v)) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Optimizer step
// ---------------------------------------------------------------------------

inline void step_in_place(MlpParams& p, const LayerGrads& g, const OptimizerKind& opt, double eta,
                          OptimizerState& state) {
    if (g.layers() != p.layers()) throw InvalidInput("step: gradient layer count mismatch");
    for (std::size_t l = 0; l < p.layers(); ++l)
        if (!g.weights[l].same_shape(p.weights[l])) throw InvalidInput("step: gradient shape mismatch");
    if (opt.kind == OptimizerKind::Kind::GD) {
        add_scaled(p, g, -eta);
        ++state.t;
        return;
    }
    if (state.m.empty()) {
        for (const auto& w : p.weights) {
            state.m.emplace_back(w.rows(), w.cols());
            state.v.emplace_back(w.rows(), w.cols());
        }
        for (const auto& b : p.biases) {
            state.mb.emplace_back(b.size(), 0.0);
            state.vb.emplace_back(b.size(), 0.0);
        }
    }
    ++state.t;
    const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.t));
    auto update = [&](double& w, double& m, double& v, double gi) {
        m = opt.beta1 * m + (1.0 - opt.beta1) * gi;
        v = opt.beta2 * v + (1.0 - opt.beta2) * gi * gi;
        w -= eta * (m / c1) / (std::sqrt(v / c2) + opt.eps);
    };
    for (std::size_t l = 0; l < p.layers(); ++l)
        for (std::size_t k = 0; k < p.weights[l].size(); ++k)
            update(p.weights[l].data()[k], state.m[l].data()[k], state.v[l].data()[k], g.weights[l].data()[k]);
    for (std::size_t l = 0; l < p.biases.size(); ++l)
        for (std::size_t k = 0; k < p.biases[l].size(); ++k)
            update(p.biases[l][k], state.mb[l][k], state.vb[l][k], g.biases[l][k]);
}

inline std::pair<MlpParams, OptimizerState> step(MlpParams p, const LayerGrads& g, const OptimizerKind& opt,
                                                 double eta, OptimizerState state) {
    step_in_place(p, g, opt, eta, state);
    return {std::move(p), std::move(state)};
}

// ---------------------------------------------------------------------------
// Recorder shared by GD training and flow integration
// ---------------------------------------------------------------------------

inline constexpr double kDivergenceLoss = 1e12;

namespace detail {

class SignTracker {
public:
    void capture(const ForwardCache& cache) {
        current_.clear();
        for (const auto& z : cache.preacts)
            for (double v : z.data()) current_.push_back(v >= 0.0);
    }
    std::size_t slots() const { return current_.size(); }
    // Switches relative to the previous capture; 0 on the first call.
    double commit() {
        double flips = 0.0;
        if (previous_.size() == current_.size())
            for (std::size_t k = 0; k < current_.size(); ++k) flips += previous_[k] != current_[k];
        previous_.swap(current_);
        return flips;
    }

private:
    std::vector<bool> previous_, current_;
};

inline double min_correct_probability(const Matrix& logits, const Dataset& ds) {
    const Matrix p = softmax_rows(logits);
    double q = 1.0;
    for (std::size_t i = 0; i < ds.n; ++i) q = std::min(q, p(i, ds.labels[i]));
    return q;
}

inline void check_config(const TrainConfig& cfg, const Dataset& ds) {
    if (cfg.widths.size() < 3) throw InvalidInput("train: need at least one hidden layer");
    if (cfg.widths.front() != ds.d || cfg.widths.back() != ds.c)
        throw InvalidInput("train: widths do not match dataset dimensions");
    if (!(cfg.eta >= 0.0)) throw InvalidInput("train: learning rate must be non-negative");
    if (cfg.record.sign_stride == 0) throw InvalidInput("train: sign stride must be >= 1");
}

}  // namespace detail

// Called after each update with (number of completed updates, parameters).
using StepObserver = std::function<void(std::size_t, const MlpParams&)>;

// Full-batch training from Kaiming-balanced initialization. Divergent runs
// (loss above 1e12 or non-finite) stop early with status Diverged.
inline TrainTrace train_from(const TrainConfig& cfg, const Dataset& ds, MlpParams params,
                             const StepObserver& observer = {}) {
    detail::check_config(cfg, ds);
    TrainTrace tr;
    tr.eta = cfg.eta;
    tr.optimizer = cfg.optimizer;
    tr.loss_kind = cfg.loss;
    tr.initial = params;
    tr.switches_recorded = cfg.record.signs;
    for (std::size_t l = 1; l + 1 < cfg.widths.size(); ++l) tr.hidden_units += cfg.widths[l];

    OptimizerState state;
    detail::SignTracker signs;
    if (observer) observer(0, params);
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        Evaluation ev = evaluate(params, ds, cfg.activation, cfg.loss);
        if (!std::isfinite(ev.loss) || ev.loss > kDivergenceLoss) {
            tr.status = RunStatus::Diverged;
            break;
        }
        MlpParams next = params;
        step_in_place(next, ev.grads, cfg.optimizer, cfg.eta, state);
        if (!params_finite(next)) {
            tr.status = RunStatus::Diverged;
            break;
        }

        const Vector gsq = grad_sq_norms(ev.grads);
        tr.loss.push_back(ev.loss);
        tr.cons.push_back(conservation_quantities(params).c);
        tr.cons_change.push_back(conservation_change(params, next));
        tr.imbalance.push_back(imbalance_terms(gsq));
        tr.grad_sq.push_back(gsq);
        if (cfg.loss == LossKind::CrossEntropy) tr.q_min.push_back(detail::min_correct_probability(ev.cache.logits, ds));
        if (cfg.record.signs && t % cfg.record.sign_stride == 0) {
            signs.capture(ev.cache);
            tr.switch_slots = signs.slots();
            const double flips = signs.commit();
            if (t > 0) {
                tr.switch_steps.push_back(t);
                tr.switch_counts.push_back(flips);
            }
        }
        params = std::move(next);
        if (observer) observer(t + 1, params);
    }
    tr.final_params = std::move(params);
    tr.cons_final = conservation_quantities(tr.final_params).c;
    return tr;
}

inline TrainTrace train(const TrainConfig& cfg, const Dataset& ds, const StepObserver& observer = {}) {
    detail::check_config(cfg, ds);
    return train_from(cfg, ds, init_kaiming_balanced(cfg.widths, cfg.seed, cfg.bias), observer);
}

// Classical RK4 integration of d(theta)/dt = -grad L(theta). Entry t of the
// returned trace describes the state at time t * step; `eta` holds the step.
inline TrainTrace integrate_flow(const MlpParams& p0, const Dataset& ds, const Activation& act, LossKind loss,
                                 double duration, double step = 1e-4) {
    if (!(step > 0.0)) throw InvalidInput("integrate_flow: step must be positive");
    if (!(duration >= 0.0)) throw InvalidInput("integrate_flow: duration must be non-negative");
    TrainTrace tr;
    tr.eta = step;
    tr.loss_kind = loss;
    tr.initial = p0;
    const auto steps = static_cast<std::size_t>(std::llround(duration / step));
    MlpParams params = p0;
    auto grad_at = [&](const MlpParams& q) { return evaluate(q, ds, act, loss); };
    for (std::size_t t = 0; t < steps; ++t) {
        Evaluation k1 = grad_at(params);
        if (!std::isfinite(k1.loss) || k1.loss > kDivergenceLoss) {
            tr.status = RunStatus::Diverged;
            break;
        }
        MlpParams tmp = params;
        add_scaled(tmp, k1.grads, -0.5 * step);
        LayerGrads k2 = grad_at(tmp).grads;
        tmp = params;
        add_scaled(tmp, k2, -0.5 * step);
        LayerGrads k3 = grad_at(tmp).grads;
        tmp = params;
        add_scaled(tmp, k3, -step);
        LayerGrads k4 = grad_at(tmp).grads;

        MlpParams next = params;
        add_scaled(next, k1.grads, -step / 6.0);
        add_scaled(next, k2, -step / 3.0);
        add_scaled(next, k3, -step / 3.0);
        add_scaled(next, k4, -step / 6.0);
        if (!params_finite(next)) {
            tr.status = RunStatus::Diverged;
            break;
        }
        const Vector gsq = grad_sq_norms(k1.grads);
        tr.loss.push_back(k1.loss);
        tr.cons.push_back(conservation_quantities(params).c);
        tr.cons_change.push_back(conservation_change(params, next));
        tr.imbalance.push_back(imbalance_terms(gsq));
        tr.grad_sq.push_back(gsq);
        if (loss == LossKind::CrossEntropy) tr.q_min.push_back(detail::min_correct_probability(k1.cache.logits, ds));
        params = std::move(next);
    }
    tr.final_params = std::move(params);
    tr.cons_final = conservation_quantities(tr.final_params).c;
    return tr;
}

// Largest relative excursion max_t |C_l(t) - C_l(0)| / (1 + |C_l(0)|) over
// all recorded states including the final one.
inline double max_relative_excursion(const TrainTrace& tr) {
    if (tr.cons.empty()) return 0.0;
    const Vector& c0 = tr.cons.front();
    double worst = 0.0;
    auto visit = [&](const Vector& c) {
        for (std::size_t l = 0; l < c.size(); ++l)
            worst = std::max(worst, std::abs(c[l] - c0[l]) / (1.0 + std::abs(c0[l])));
    };
    for (const auto& c : tr.cons) visit(c);
    visit(tr.cons_final);
    return worst;
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

// One row per recorded step: step, loss, then per-layer grad_sq_<l>, then per
// pair C_<l>, dC_<l>, delta_<l>, then q_min when present.
inline void write_trace_csv(std::ostream& os, const TrainTrace& tr) {
    const std::size_t layers = tr.grad_sq.empty() ? 0 : tr.grad_sq.front().size();
    const std::size_t pairs = layers ? layers - 1 : 0;
    const bool ce = !tr.q_min.empty();
    os << "step,loss";
    for (std::size_t l = 0; l < layers; ++l) os << ",grad_sq_" << l;
    for (std::size_t l = 0; l < pairs; ++l) os << ",C_" << l << ",dC_" << l << ",delta_" << l;
    if (ce) os << ",q_min";
    os << '\n' << std::setprecision(17);
    for (std::size_t t = 0; t < tr.steps(); ++t) {
        os << t << ',' << tr.loss[t];
        for (double v : tr.grad_sq[t]) os << ',' << v;
        for (std::size_t l = 0; l < pairs; ++l)
            os << ',' << tr.cons[t][l] << ',' << tr.cons_change[t][l] << ',' << tr.imbalance[t][l];
        if (ce) os << ',' << tr.q_min[t];
        os << '\n';
    }
}

}  // namespace conslab
