#pragma once

// Gauss-Newton curvature for MSE and softmax cross-entropy, sharpness
// tracking along training, the softmax compression bound, the compression
// timescale estimator and activation switch statistics.

#include <json.hpp>

#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>

#include "conslab/fitting.hpp"
#include "conslab/training.hpp"

namespace conslab {

// ---------------------------------------------------------------------------
// Softmax curvature blocks
// ---------------------------------------------------------------------------

struct SoftmaxBlock {
    Matrix s;  // diag(p) - p p^T
    double lambda_max = 0.0;
};

inline SoftmaxBlock softmax_block(std::span<const double> p) {
    if (p.empty()) throw InvalidInput("softmax_block: empty probability vector");
    double sum = 0.0;
    for (double v : p) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidInput("softmax_block: entries must be finite and >= 0");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-10) throw InvalidInput("softmax_block: entries must sum to 1");
    const std::size_t c = p.size();
    SoftmaxBlock b{Matrix(c, c), 0.0};
    for (std::size_t i = 0; i < c; ++i)
        for (std::size_t j = 0; j < c; ++j) b.s(i, j) = (i == j ? p[i] : 0.0) - p[i] * p[j];
    b.lambda_max = std::max(0.0, sym_eigvals(b.s).front());
    return b;
}

// Largest eigenvalue of each sample's softmax block.
inline Vector softmax_block_maxima(const Matrix& probs) {
    Vector out(probs.rows());
    for (std::size_t i = 0; i < probs.rows(); ++i) out[i] = softmax_block(probs.row(i)).lambda_max;
    return out;
}

// u_i <- S_i u_i for every row, with S_i = diag(p_i) - p_i p_i^T.
inline void apply_softmax_blocks(const Matrix& probs, Matrix& u) {
    for (std::size_t i = 0; i < u.rows(); ++i) {
        auto pi = probs.row(i);
        auto ui = u.row(i);
        const double pu = dot(pi, ui);
        for (std::size_t k = 0; k < ui.size(); ++k) ui[k] = pi[k] * (ui[k] - pu);
    }
}

// ---------------------------------------------------------------------------
// Dense Jacobian and Gauss-Newton matrix
// ---------------------------------------------------------------------------

inline constexpr double kMaxJacobianEntries = 5e7;

// Row i*C + k holds the gradient of logit k of sample i with respect to all
// weights, flattened as in flatten_weights. Biases are not included.
inline Matrix logit_jacobian(const MlpParams& p, const Dataset& ds, const Activation& act) {
    const std::size_t P = p.weight_count();
    const std::size_t C = ds.c;
    if (static_cast<double>(ds.n) * static_cast<double>(C) * static_cast<double>(P) > kMaxJacobianEntries)
        throw SizeLimit("logit_jacobian: Jacobian too large, use the matrix-free path");
    const ForwardCache cache = forward(p, ds.x, act);
    const std::size_t L = p.layers();
    std::vector<std::size_t> offset(L, 0);
    for (std::size_t l = 1; l < L; ++l) offset[l] = offset[l - 1] + p.weights[l - 1].size();

    Matrix jac(ds.n * C, P);
    for (std::size_t i = 0; i < ds.n; ++i) {
        for (std::size_t k = 0; k < C; ++k) {
            auto row = jac.row(i * C + k);
            Vector delta(C, 0.0);
            delta[k] = 1.0;
            for (std::size_t l = L; l-- > 0;) {
                std::span<const double> in = l == 0 ? cache.input.row(i) : cache.acts[l - 1].row(i);
                const Matrix& w = p.weights[l];
                for (std::size_t r = 0; r < w.rows(); ++r) {
                    if (delta[r] == 0.0) continue;
                    for (std::size_t c = 0; c < w.cols(); ++c) row[offset[l] + r * w.cols() + c] = delta[r] * in[c];
                }
                if (l == 0) break;
                Vector next(w.cols(), 0.0);
                for (std::size_t r = 0; r < w.rows(); ++r)
                    for (std::size_t c = 0; c < w.cols(); ++c) next[c] += w(r, c) * delta[r];
                auto z = cache.preacts[l - 1].row(i);
                for (std::size_t c = 0; c < next.size(); ++c) next[c] *= act.derivative(z[c]);
                delta = std::move(next);
            }
        }
    }
    return jac;
}

// (1/n) J^T S J with S the softmax blocks (CE) or the identity (MSE).
inline Matrix gauss_newton(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss) {
    const Matrix jac = logit_jacobian(p, ds, act);
    Matrix sj = jac;
    if (loss == LossKind::CrossEntropy) {
        const Matrix probs = softmax_rows(forward(p, ds.x, act).logits);
        const std::size_t C = ds.c, P = jac.cols();
        for (std::size_t i = 0; i < ds.n; ++i) {
            auto pi = probs.row(i);
            for (std::size_t col = 0; col < P; ++col) {
                double pu = 0.0;
                for (std::size_t k = 0; k < C; ++k) pu += pi[k] * jac(i * C + k, col);
                for (std::size_t k = 0; k < C; ++k) sj(i * C + k, col) = pi[k] * (jac(i * C + k, col) - pu);
            }
        }
    }
    Matrix h = matmul_tn(jac, sj);
    h *= 1.0 / static_cast<double>(ds.n);
    return detail::symmetrized(h);
}

// ---------------------------------------------------------------------------
// Matrix-free Gauss-Newton products
// ---------------------------------------------------------------------------

enum class CurvatureKind { LossGaussNewton, JacobianGram };

// v -> (1/n) J^T S J v where S follows the loss (LossGaussNewton) or is the
// identity (JacobianGram).
class GaussNewtonOperator {
public:
    GaussNewtonOperator(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss,
                        CurvatureKind kind = CurvatureKind::LossGaussNewton)
        : p_(p), act_(act), inv_n_(1.0 / static_cast<double>(ds.n)) {
        cache_ = forward(p_, ds.x, act_);
        softmax_ = loss == LossKind::CrossEntropy && kind == CurvatureKind::LossGaussNewton;
        if (softmax_) probs_ = softmax_rows(cache_.logits);
    }

    std::size_t dim() const { return p_.weight_count(); }

    Vector operator()(std::span<const double> v) const {
        Matrix u = logit_jvp(p_, cache_, unflatten_like(v, p_), act_);
        if (softmax_) apply_softmax_blocks(probs_, u);
        u *= inv_n_;
        LayerGrads g = backward(p_, cache_, u, act_);
        return flatten_weights(g.weights);
    }

private:
    MlpParams p_;
    Activation act_;
    double inv_n_;
    ForwardCache cache_;
    bool softmax_ = false;
    Matrix probs_;
};

struct SpectralOptions {
    std::size_t dense_max_params = 2000;  // dense eigensolve at or below this size
    PowerOptions power{1e-9, 20000};
};

inline double lambda_max_hvp(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss,
                             Rng& rng, PowerOptions opts = {1e-9, 20000},
                             CurvatureKind kind = CurvatureKind::LossGaussNewton) {
    GaussNewtonOperator op(p, ds, act, loss, kind);
    return power_iteration([&](std::span<const double> v) { return op(v); }, op.dim(), rng, opts);
}

inline double lambda_max_dense(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss,
                               CurvatureKind kind = CurvatureKind::LossGaussNewton) {
    const LossKind effective = kind == CurvatureKind::JacobianGram ? LossKind::MSE : loss;
    return std::max(0.0, sym_eigvals(gauss_newton(p, ds, act, effective)).front());
}

// Dense or matrix-free depending on the parameter count.
inline double gn_lambda_max(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss, Rng& rng,
                            const SpectralOptions& opts = {},
                            CurvatureKind kind = CurvatureKind::LossGaussNewton) {
    if (p.weight_count() <= opts.dense_max_params) return lambda_max_dense(p, ds, act, loss, kind);
    return lambda_max_hvp(p, ds, act, loss, rng, opts.power, kind);
}

// ---------------------------------------------------------------------------
// Compression bound
// ---------------------------------------------------------------------------

struct CompressionBound {
    double lhs = 0.0;            // lambda_max(H_CE)
    double rhs = 0.0;            // jtj_lambda_max * q_margin
    double jtj_lambda_max = 0.0;  // lambda_max(J^T J / n)
    double q_margin = 0.0;       // max_i lambda_max(S_i)
    double max_pk_one_minus_pk = 0.0;  // max_i max_k p_ik (1 - p_ik), for comparison
    double q_min = 0.0;          // min_i p_{i, y_i}

    bool holds(double slack = 1e-8) const { return lhs <= rhs + slack; }
};

inline CompressionBound compression_bound(const MlpParams& p, const Dataset& ds, const Activation& act, Rng& rng,
                                          const SpectralOptions& opts = {}) {
    CompressionBound b;
    const Matrix probs = softmax_rows(forward(p, ds.x, act).logits);
    b.q_min = 1.0;
    for (std::size_t i = 0; i < ds.n; ++i) {
        b.q_min = std::min(b.q_min, probs(i, ds.labels[i]));
        for (std::size_t k = 0; k < ds.c; ++k)
            b.max_pk_one_minus_pk = std::max(b.max_pk_one_minus_pk, probs(i, k) * (1.0 - probs(i, k)));
    }
    const Vector blocks = softmax_block_maxima(probs);
    b.q_margin = *std::max_element(blocks.begin(), blocks.end());
    b.lhs = gn_lambda_max(p, ds, act, LossKind::CrossEntropy, rng, opts);
    b.jtj_lambda_max = gn_lambda_max(p, ds, act, LossKind::CrossEntropy, rng, opts, CurvatureKind::JacobianGram);
    b.rhs = b.jtj_lambda_max * b.q_margin;
    return b;
}

// ---------------------------------------------------------------------------
// Sharpness tracking
// ---------------------------------------------------------------------------

struct HessianSnapshot {
    std::size_t step = 0;
    double lambda_max = 0.0;
    double q_margin = 0.0;
    double jtj_lambda_max = 0.0;
    double q_min = 0.0;
    double bound_rhs = 0.0;
    Vector spectrum;  // optional full spectrum, descending
};

struct TauFit {
    bool ok = false;
    double tau = 0.0;
    double r2 = 0.0;
    std::size_t window_begin = 0, window_end = 0;  // snapshot indices, inclusive
};

struct CompressionProfile {
    std::vector<HessianSnapshot> snapshots;
    TauFit tau;
    RunStatus status = RunStatus::Ok;
    bool bound_held = true;
};

// Fits ln lambda_max(t) over the window that starts where lambda_max first
// drops below 90% of its running maximum and ends where it first drops below
// 5% of it (or at the last snapshot). tau = -1 / slope, in steps.
inline TauFit estimate_tau(std::span<const double> steps, std::span<const double> lambdas) {
    TauFit fit;
    if (steps.size() != lambdas.size() || steps.size() < 5) return fit;
    double running = 0.0;
    std::optional<std::size_t> begin;
    std::size_t end = steps.size() - 1;
    for (std::size_t i = 0; i < steps.size(); ++i) {
        if (!(lambdas[i] > 0.0)) {
            end = i ? i - 1 : 0;
            break;
        }
        running = std::max(running, lambdas[i]);
        if (!begin && lambdas[i] < 0.9 * running) begin = i;
        if (begin && lambdas[i] < 0.05 * running) {
            end = i;
            break;
        }
    }
    if (!begin || end < *begin + 2) return fit;
    Vector xs, ys;
    for (std::size_t i = *begin; i <= end; ++i) {
        xs.push_back(steps[i]);
        ys.push_back(std::log(lambdas[i]));
    }
    const FitResult lin = fit_linear(xs, ys);
    if (!(lin.slope < 0.0)) return fit;
    fit.ok = true;
    fit.tau = -1.0 / lin.slope;
    fit.r2 = lin.r2;
    fit.window_begin = *begin;
    fit.window_end = end;
    return fit;
}

inline TauFit estimate_tau(const CompressionProfile& profile) {
    Vector steps, lambdas;
    for (const auto& s : profile.snapshots) {
        steps.push_back(static_cast<double>(s.step));
        lambdas.push_back(s.lambda_max);
    }
    return estimate_tau(steps, lambdas);
}

inline HessianSnapshot snapshot_ce(std::size_t step, const MlpParams& p, const Dataset& ds, const Activation& act,
                                   Rng& rng, const SpectralOptions& opts) {
    const CompressionBound b = compression_bound(p, ds, act, rng, opts);
    HessianSnapshot s;
    s.step = step;
    s.lambda_max = b.lhs;
    s.q_margin = b.q_margin;
    s.jtj_lambda_max = b.jtj_lambda_max;
    s.q_min = b.q_min;
    s.bound_rhs = b.rhs;
    return s;
}

// Trains a CE model and snapshots the curvature every `stride` updates
// (including step 0). A stride larger than the run yields one snapshot.
inline CompressionProfile track_compression(const TrainConfig& cfg, const Dataset& ds, std::size_t stride,
                                            const SpectralOptions& opts = {}) {
    if (cfg.loss != LossKind::CrossEntropy) throw InvalidInput("track_compression: requires cross-entropy loss");
    if (stride == 0) throw InvalidInput("track_compression: stride must be >= 1");
    CompressionProfile profile;
    Rng rng(cfg.seed, 0x74726163);  // "trac"
    auto observer = [&](std::size_t t, const MlpParams& p) {
        if (t % stride != 0) return;
        profile.snapshots.push_back(snapshot_ce(t, p, ds, cfg.activation, rng, opts));
        profile.bound_held = profile.bound_held && profile.snapshots.back().lambda_max <=
                                                       profile.snapshots.back().bound_rhs + 1e-8;
    };
    TrainConfig quiet = cfg;
    quiet.record = {};
    const TrainTrace tr = train(quiet, ds, observer);
    profile.status = tr.status;
    profile.tau = estimate_tau(profile);
    return profile;
}

inline void write_profile_csv(std::ostream& os, const CompressionProfile& profile) {
    os << "step,lambda_max,q_margin,jtj_lambda_max\n" << std::setprecision(17);
    for (const auto& s : profile.snapshots)
        os << s.step << ',' << s.lambda_max << ',' << s.q_margin << ',' << s.jtj_lambda_max << '\n';
}

// Trains while sampling the loss's Gauss-Newton lambda_max every
// cfg.record.lambda_stride updates into trace.lambda_max.
inline TrainTrace train_with_sharpness(const TrainConfig& cfg, const Dataset& ds, const SpectralOptions& opts = {}) {
    const std::size_t stride = cfg.record.lambda_stride;
    if (stride == 0) return train(cfg, ds);
    Rng rng(cfg.seed, 0x73686170);  // "shap"
    std::vector<LambdaSample> samples;
    auto observer = [&](std::size_t t, const MlpParams& p) {
        if (t % stride != 0 || t == cfg.steps) return;
        try {
            samples.push_back({t, gn_lambda_max(p, ds, cfg.activation, cfg.loss, rng, opts)});
        } catch (const NumericalFailure& e) {
            samples.push_back({t, e.last_estimate});
        }
    };
    TrainTrace tr = train(cfg, ds, observer);
    // Drop a sample taken at the divergence point.
    while (!samples.empty() && samples.back().step >= tr.steps() && tr.status == RunStatus::Diverged)
        samples.pop_back();
    tr.lambda_max = std::move(samples);
    return tr;
}

// ---------------------------------------------------------------------------
// Edge of stability and switch statistics
// ---------------------------------------------------------------------------

struct EosCriterion {
    double band = 0.25;  // |lambda_max * eta - 2| < band
    double dwell = 0.2;  // fraction of sampled steps inside the band
};

inline double eos_dwell_fraction(const std::vector<LambdaSample>& samples, double eta, double band = 0.25) {
    if (samples.empty()) return 0.0;
    std::size_t inside = 0;
    for (const auto& s : samples) inside += std::abs(s.value * eta - 2.0) < band;
    return static_cast<double>(inside) / static_cast<double>(samples.size());
}

inline bool at_eos(const TrainTrace& tr, const EosCriterion& crit = {}) {
    return tr.status == RunStatus::Ok && eos_dwell_fraction(tr.lambda_max, tr.eta, crit.band) >= crit.dwell;
}

struct SwitchRate {
    double per_neuron = 0.0;  // flips per (comparison, sample, hidden unit)
    double total = 0.0;       // per_neuron * hidden units
};

inline SwitchRate switch_rate(const TrainTrace& tr, const Activation& act) {
    if (!act.piecewise()) return {};
    if (!tr.switches_recorded) throw InvalidInput("switch_rate: trace has no sign-pattern record");
    if (tr.switch_counts.empty() || tr.switch_slots == 0) return {};
    double flips = 0.0;
    for (double c : tr.switch_counts) flips += c;
    SwitchRate r;
    r.per_neuron = flips / (static_cast<double>(tr.switch_slots) * static_cast<double>(tr.switch_counts.size()));
    r.total = r.per_neuron * static_cast<double>(tr.hidden_units);
    return r;
}

inline nlohmann::json to_json(const HessianSnapshot& s) {
    return {{"step", s.step},       {"lambda_max", s.lambda_max}, {"q_margin", s.q_margin},
            {"jtj_lambda_max", s.jtj_lambda_max}, {"q_min", s.q_min}, {"bound_rhs", s.bound_rhs}};
}

}  // namespace conslab
