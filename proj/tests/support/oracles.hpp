#pragma once

// Reference computations that share no code path with the library routines
// they check: finite differences, brute-force sums, direct definitions.

#include <cmath>
#include <vector>

#include "conslab/training.hpp"

namespace conslab::oracle {

// Central-difference gradient of the loss with respect to every weight and
// bias. Coordinates whose +-h stencil flips any pre-activation sign are
// skipped (the loss is not smooth there); `skipped` counts them.
struct FdComparison {
    double rel_error = 0.0;  // ||g_fd - g|| / ||g|| over compared coordinates
    std::size_t compared = 0, skipped = 0;
};

inline std::vector<bool> sign_pattern(const MlpParams& p, const Dataset& ds, const Activation& act) {
    const ForwardCache c = forward(p, ds.x, act);
    std::vector<bool> s;
    for (const auto& z : c.preacts)
        for (double v : z.data()) s.push_back(v > 0.0);
    return s;
}

inline double loss_at(const MlpParams& p, const Dataset& ds, const Activation& act, LossKind loss) {
    return loss_and_dlogits(forward(p, ds.x, act).logits, ds, loss).loss;
}

inline FdComparison fd_gradient_check(const MlpParams& p0, const Dataset& ds, const Activation& act, LossKind loss,
                                      double h = 1e-5) {
    const Evaluation ev = evaluate(p0, ds, act, loss);
    const bool kinked = act.kind != Activation::Kind::Linear;
    const auto base = kinked ? sign_pattern(p0, ds, act) : std::vector<bool>{};
    FdComparison out;
    long double err2 = 0.0L, ref2 = 0.0L;
    auto probe = [&](double& slot, double analytic, MlpParams& p) {
        const double keep = slot;
        slot = keep + h;
        const double fp = loss_at(p, ds, act, loss);
        const bool smooth_p = !kinked || sign_pattern(p, ds, act) == base;
        slot = keep - h;
        const double fm = loss_at(p, ds, act, loss);
        const bool smooth_m = !kinked || sign_pattern(p, ds, act) == base;
        slot = keep;
        if (!(smooth_p && smooth_m)) {
            ++out.skipped;
            return;
        }
        const double fd = (fp - fm) / (2.0 * h);
        err2 += static_cast<long double>((fd - analytic) * (fd - analytic));
        ref2 += static_cast<long double>(analytic * analytic);
        ++out.compared;
    };
    MlpParams p = p0;
    for (std::size_t l = 0; l < p.layers(); ++l) {
        for (std::size_t k = 0; k < p.weights[l].size(); ++k)
            probe(p.weights[l].data()[k], ev.grads.weights[l].data()[k], p);
        if (p.has_bias())
            for (std::size_t k = 0; k < p.biases[l].size(); ++k) probe(p.biases[l][k], ev.grads.biases[l][k], p);
    }
    out.rel_error = ref2 > 0.0L ? static_cast<double>(std::sqrt(err2 / ref2)) : static_cast<double>(std::sqrt(err2));
    return out;
}

// sum_{t<T} c rho^{2t}, term by term in extended precision.
inline double brute_mode_sum(double lambda, double coeff, double eta, std::size_t steps) {
    const long double rho = 1.0L - static_cast<long double>(eta) * lambda;
    const long double rho2 = rho * rho;
    long double term = 1.0L, s = 0.0L;
    for (std::size_t t = 0; t < steps; ++t) {
        s += term;
        term *= rho2;
    }
    return static_cast<double>(s * coeff);
}

inline double brute_crossover(const Vector& lambdas, const Vector& coeffs, double eta, std::size_t steps) {
    long double s = 0.0L;
    for (std::size_t k = 0; k < lambdas.size(); ++k) s += brute_mode_sum(lambdas[k], coeffs[k], eta, steps);
    return static_cast<double>(s);
}

// Random network + dataset for property checks.
struct RandomCase {
    MlpParams params;
    Dataset data;
    Activation act;
    LossKind loss = LossKind::MSE;
};

inline RandomCase random_case(Rng& rng, std::size_t layers, bool allow_bias = true) {
    RandomCase rc;
    const std::size_t d = 3 + rng.below(5);
    const std::size_t c = 2 + rng.below(3);
    std::vector<std::size_t> widths{d};
    for (std::size_t l = 1; l < layers; ++l) widths.push_back(3 + rng.below(8));
    widths.push_back(c);
    const std::size_t kind = rng.below(3);
    rc.act = kind == 0 ? Activation::relu() : kind == 1 ? Activation::leaky(0.1) : Activation::linear();
    rc.loss = rng.below(2) ? LossKind::CrossEntropy : LossKind::MSE;
    const std::uint64_t init_seed = rng();
    const bool bias = allow_bias && rng.below(2) == 1;
    rc.params = init_kaiming_balanced(widths, init_seed, bias);
    for (auto& b : rc.params.biases)
        for (double& v : b) v = 0.3 * rng.normal();
    rc.data = gen_gaussian_mixture(std::max<std::size_t>(6, c), d, c, 2.0, rng());
    return rc;
}

}  // namespace conslab::oracle
