#pragma once

// Closed-form predictions for the gradient imbalance sum: the spectral
// crossover formula, predicted mode coefficients, the scalar linear-mode
// oracle, and the extraction of empirical mode coefficients from training.

#include <json.hpp>

#include <cmath>
#include <iomanip>
#include <ostream>
#include <string>

#include "conslab/data.hpp"
#include "conslab/spectral.hpp"
#include "conslab/training.hpp"

namespace conslab {

struct SpectralModel {
    Vector lambdas;  // > 0
    Vector coeffs;   // >= 0
    double eta = 0.0;
    std::size_t steps = 0;
};

enum class ModeRegime { Converged, Unconverged, Mixed };

inline std::string to_string(ModeRegime r) {
    switch (r) {
        case ModeRegime::Converged: return "converged";
        case ModeRegime::Unconverged: return "unconverged";
        case ModeRegime::Mixed: return "mixed";
    }
    return "?";
}

struct ModePrediction {
    double lambda = 0.0;
    double coeff = 0.0;
    double contribution = 0.0;
    double eta_star = 0.0;  // 1 / (lambda T)
    ModeRegime regime = ModeRegime::Mixed;
    bool unstable = false;  // eta * lambda >= 2
};

struct CrossoverResult {
    double total = 0.0;
    double stable_total = 0.0;  // modes with eta * lambda < 2 only
    std::vector<ModePrediction> modes;
    bool any_unstable = false;
};

// sum_{t<T} rho^{2t} with rho = 1 - x, evaluated as
// (1 - (1 - a)^T) / a with a = x (2 - x) through expm1/log1p so that both
// x -> 0 and x -> 2 stay accurate.
inline double geometric_mode_sum(double x, std::size_t steps) {
    const double T = static_cast<double>(steps);
    const double a = x * (2.0 - x);
    if (a == 0.0) return T;
    if (a >= 1.0) return 1.0;  // rho = 0: only the t = 0 term survives
    return -std::expm1(T * std::log1p(-a)) / a;
}

inline CrossoverResult crossover_sum(const SpectralModel& m) {
    if (m.lambdas.size() != m.coeffs.size()) throw InvalidInput("crossover_sum: lambdas and coeffs differ in length");
    if (!(m.eta > 0.0)) throw InvalidInput("crossover_sum: eta must be positive");
    CrossoverResult out;
    const double T = static_cast<double>(m.steps);
    for (std::size_t k = 0; k < m.lambdas.size(); ++k) {
        const double lambda = m.lambdas[k];
        if (!(lambda > 0.0)) throw InvalidInput("crossover_sum: eigenvalues must be positive");
        ModePrediction mp;
        mp.lambda = lambda;
        mp.coeff = m.coeffs[k];
        const double x = m.eta * lambda;
        mp.unstable = x >= 2.0;
        mp.contribution = m.coeffs[k] * geometric_mode_sum(x, m.steps);
        mp.eta_star = 1.0 / (lambda * T);
        const double ratio = m.eta / mp.eta_star;
        mp.regime = ratio > 3.0 ? ModeRegime::Converged : ratio < 1.0 / 3.0 ? ModeRegime::Unconverged : ModeRegime::Mixed;
        out.any_unstable = out.any_unstable || mp.unstable;
        out.total += mp.contribution;
        if (!mp.unstable) out.stable_total += mp.contribution;
        out.modes.push_back(mp);
    }
    return out;
}

// beta(eta) = 2 + d ln G / d ln eta from a centred difference of the formula.
inline Vector local_exponent(const SpectralModel& m, std::span<const double> eta_grid) {
    if (eta_grid.size() < 3) throw InvalidInput("local_exponent: need at least 3 grid points");
    constexpr double h = 1e-4;
    Vector out;
    for (double eta : eta_grid) {
        SpectralModel lo = m, hi = m;
        lo.eta = eta * std::exp(-h);
        hi.eta = eta * std::exp(h);
        const double glo = crossover_sum(lo).total;
        const double ghi = crossover_sum(hi).total;
        out.push_back(2.0 + (std::log(ghi) - std::log(glo)) / (2.0 * h));
    }
    return out;
}

// c_k = e_k(0)^2 lambda_{x,k}^2, normalised to unit sum.
inline Vector predict_ck(std::span<const double> e0, std::span<const double> lambda_x) {
    if (e0.size() != lambda_x.size()) throw InvalidInput("predict_ck: lengths differ");
    Vector c(e0.size());
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) s += (c[k] = e0[k] * e0[k] * lambda_x[k] * lambda_x[k]);
    if (!(s > 0.0)) throw InvalidInput("predict_ck: all mode coefficients vanish");
    for (double& v : c) v /= s;
    return c;
}

struct ModeTrajectory {
    Vector error;  // e(0), ..., e(T)
    double lambda = 0.0;
    double rho = 0.0;
    bool expanding = false;  // |rho| >= 1
};

// Scalar two-layer mode with composite scale sigma0^2 and target sigma*:
// e(t) = e(0) rho^t, rho = 1 - eta lambda, lambda = 2 lambda_x sigma0^2.
inline ModeTrajectory linear_mode_oracle(double sigma0, double sigma_star, double lambda_x, double eta,
                                         std::size_t steps) {
    ModeTrajectory tr;
    tr.lambda = 2.0 * lambda_x * sigma0 * sigma0;
    tr.rho = 1.0 - eta * tr.lambda;
    tr.expanding = std::abs(tr.rho) >= 1.0 && eta > 0.0;
    tr.error.resize(steps + 1);
    tr.error[0] = sigma0 * sigma0 - sigma_star;
    for (std::size_t t = 1; t <= steps; ++t) tr.error[t] = tr.error[t - 1] * tr.rho;
    return tr;
}

// ---------------------------------------------------------------------------
// Mode decomposition for two-layer networks
// ---------------------------------------------------------------------------

namespace detail {

inline void require_two_layer(const MlpParams& p, const char* who) {
    if (p.layers() != 2) throw InvalidInput(std::string(who) + ": unsupported configuration, needs a 2-layer network");
}

// E = (1/n) (F - Y)^T X, the C x d residual/data correlation with F the
// network output at p (softmax probabilities for CE).
inline Matrix residual_correlation(const MlpParams& p, const Dataset& ds, const Activation& act,
                                   LossKind loss = LossKind::MSE) {
    Matrix r = forward(p, ds.x, act).logits;
    if (loss == LossKind::CrossEntropy) r = softmax_rows(r);
    r -= ds.onehot;
    Matrix e = matmul_tn(r, ds.x);
    e *= 1.0 / static_cast<double>(ds.n);
    return e;
}

}  // namespace detail

// e_k(0) = ||E(0) u_k|| / lambda_{x,k}: for a linear network this is the norm
// of (W2 W1 - M*) u_k with M* the least-squares map. Modes with a vanishing
// data eigenvalue get 0.
inline Vector initial_mode_errors(const MlpParams& p0, const Dataset& ds, const DataSpectrum& spec,
                                  const Activation& act, LossKind loss = LossKind::MSE) {
    const Matrix e = detail::residual_correlation(p0, ds, act, loss);
    const Matrix proj = matmul(e, spec.basis);  // C x d, column k = E u_k
    const double floor = 1e-12 * std::max(1.0, spec.eigenvalues.front());
    Vector out(spec.eigenvalues.size(), 0.0);
    for (std::size_t k = 0; k < out.size(); ++k) {
        if (spec.eigenvalues[k] <= floor) continue;
        double s = 0.0;
        for (std::size_t c = 0; c < proj.rows(); ++c) s += proj(c, k) * proj(c, k);
        out[k] = std::sqrt(s) / spec.eigenvalues[k];
    }
    return out;
}

// Per-mode gradient imbalance of a two-layer network at one parameter point.
// Layer-1 gradients split exactly along the data eigenbasis (g1 u_k). The
// hidden activations split as A1 = sum_k A1^(k) with row i of A1^(k) equal to
// (x_i . u_k) D_i W1 u_k, where D_i is the activation's local slope pattern,
// so g2 = sum_k dZ2^T A1^(k). delta_k = ||dZ2^T A1^(k)||^2 - ||g1 u_k||^2.
inline Vector mode_imbalance(const MlpParams& p, const Dataset& ds, const DataSpectrum& spec, const Activation& act,
                             LossKind loss) {
    detail::require_two_layer(p, "mode_imbalance");
    const ForwardCache cache = forward(p, ds.x, act);
    const Matrix dlogits = loss_and_dlogits(cache.logits, ds, loss).dlogits;
    const LayerGrads g = backward(p, cache, dlogits, act);
    const std::size_t d = ds.d, h = p.widths[1];

    const Matrix g1u = matmul(g.weights[0], spec.basis);        // h x d
    const Matrix xu = matmul(ds.x, spec.basis);                 // n x d
    const Matrix w1u = matmul(p.weights[0], spec.basis);        // h x d
    Matrix slopes(ds.n, h);
    for (std::size_t k = 0; k < slopes.size(); ++k) slopes.data()[k] = act.derivative(cache.preacts[0].data()[k]);

    Vector out(d, 0.0);
    Matrix a1k(ds.n, h);
    for (std::size_t k = 0; k < d; ++k) {
        for (std::size_t i = 0; i < ds.n; ++i)
            for (std::size_t j = 0; j < h; ++j) a1k(i, j) = xu(i, k) * slopes(i, j) * w1u(j, k);
        const Matrix g2k = matmul_tn(dlogits, a1k);  // C x h
        double g1k = 0.0;
        for (std::size_t j = 0; j < h; ++j) g1k += g1u(j, k) * g1u(j, k);
        out[k] = g2k.frobenius_sq() - g1k;
    }
    return out;
}

// Top-d eigenvalues of the Gauss-Newton matrix, descending.
inline Vector effective_spectrum_gn(const MlpParams& p0, const Dataset& ds, const Activation& act, LossKind loss) {
    Vector ev = sym_eigvals(gauss_newton(p0, ds, act, loss));
    ev.resize(std::min(ev.size(), ds.d));
    return ev;
}

// Effective per-mode eigenvalues of a two-layer network at initialisation,
// descending. Linear activation: lambda_k = lambda_{x,k} (s1_k + s2) with
// s1_k = ||W1 u_k||^2 and s2 = ||W2||_F^2 / C; for balanced scalar modes this
// is 2 lambda_{x,k} sigma_{k,0}^2. Other activations: the top-d eigenvalues of
// the loss's Gauss-Newton matrix.
inline Vector effective_spectrum(const MlpParams& p0, const Dataset& ds, const Activation& act, LossKind loss,
                                 const DataSpectrum* spectrum = nullptr) {
    detail::require_two_layer(p0, "effective_spectrum");
    if (act.kind == Activation::Kind::Linear) {
        DataSpectrum local;
        if (!spectrum) {
            local = data_cov_spectrum(ds);
            spectrum = &local;
        }
        const Matrix w1u = matmul(p0.weights[0], spectrum->basis);
        const double s2 = p0.weights[1].frobenius_sq() / static_cast<double>(p0.widths.back());
        Vector out(ds.d);
        for (std::size_t k = 0; k < ds.d; ++k) {
            double s1 = 0.0;
            for (std::size_t j = 0; j < w1u.rows(); ++j) s1 += w1u(j, k) * w1u(j, k);
            out[k] = spectrum->eigenvalues[k] * (s1 + s2);
        }
        std::sort(out.begin(), out.end(), std::greater<>());
        return out;
    }
    return effective_spectrum_gn(p0, ds, act, loss);
}

struct EmpiricalModes {
    Vector raw;     // sum_t delta_k(t)
    Vector ck;      // raw / geometric normalisation, unit-sum when possible
    Vector lambdas;  // eigenvalues paired with each data mode
    std::vector<bool> excluded;  // eta * lambda_k >= 2
};

// Replays the GD run recorded in `trace` from its initial parameters and
// accumulates per-mode imbalances. Mode k (data modes in descending
// eigenvalue order) is paired with lambdas[k]; the time sum is divided by
// sum_{t<T} (1 - eta lambda_k)^{2t}.
inline EmpiricalModes empirical_ck(const TrainTrace& trace, const DataSpectrum& spec, const Dataset& ds,
                                   const Activation& act, std::span<const double> lambdas) {
    detail::require_two_layer(trace.initial, "empirical_ck");
    if (trace.optimizer.kind != OptimizerKind::Kind::GD) throw InvalidInput("empirical_ck: needs a GD trace");
    if (lambdas.size() != ds.d) throw InvalidInput("empirical_ck: need one eigenvalue per data mode");
    EmpiricalModes out;
    out.raw.assign(ds.d, 0.0);
    MlpParams p = trace.initial;
    OptimizerState state;
    for (std::size_t t = 0; t < trace.steps(); ++t) {
        const Vector dk = mode_imbalance(p, ds, spec, act, trace.loss_kind);
        for (std::size_t k = 0; k < ds.d; ++k) out.raw[k] += dk[k];
        const Evaluation ev = evaluate(p, ds, act, trace.loss_kind);
        step_in_place(p, ev.grads, trace.optimizer, trace.eta, state);
    }
    out.lambdas.assign(lambdas.begin(), lambdas.end());
    out.ck.assign(ds.d, 0.0);
    out.excluded.assign(ds.d, false);
    double sum = 0.0;
    for (std::size_t k = 0; k < ds.d; ++k) {
        const double x = trace.eta * lambdas[k];
        if (x >= 2.0) {
            out.excluded[k] = true;
            continue;
        }
        out.ck[k] = out.raw[k] / geometric_mode_sum(x, trace.steps());
        sum += out.ck[k];
    }
    if (sum > 0.0)
        for (double& v : out.ck) v /= sum;
    return out;
}

struct CkComparison {
    Vector predicted;
    Vector empirical;
    double r = 0.0;
};

inline CkComparison compare_ck(const Vector& predicted, const EmpiricalModes& emp) {
    CkComparison c;
    for (std::size_t k = 0; k < predicted.size(); ++k) {
        if (emp.excluded[k]) continue;
        c.predicted.push_back(predicted[k]);
        c.empirical.push_back(emp.ck[k]);
    }
    c.r = c.predicted.size() >= 2 ? pearson(c.predicted, c.empirical) : 0.0;
    return c;
}

// Single scalar s minimising sum_i (s p_i / m_i - 1)^2.
inline double relative_scale_fit(std::span<const double> predicted, std::span<const double> measured) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double r = predicted[i] / measured[i];
        num += r;
        den += r * r;
    }
    return den > 0.0 ? num / den : 0.0;
}

// mode, lambda, c_predicted, c_empirical, contribution
inline void write_prediction_csv(std::ostream& os, const CrossoverResult& pred, const Vector& c_pred,
                                 const Vector& c_emp) {
    os << "mode,lambda,c_predicted,c_empirical,contribution\n" << std::setprecision(17);
    for (std::size_t k = 0; k < pred.modes.size(); ++k)
        os << k << ',' << pred.modes[k].lambda << ',' << (k < c_pred.size() ? c_pred[k] : 0.0) << ','
           << (k < c_emp.size() ? c_emp[k] : 0.0) << ',' << pred.modes[k].contribution << '\n';
}

}  // namespace conslab
