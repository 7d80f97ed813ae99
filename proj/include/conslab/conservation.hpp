#pragma once

// Layer-balance quantities C_l = ||W_{l+1}||_F^2 - ||W_l||_F^2 and the
// per-step drift identity under gradient descent.

#include <vector>

#include "conslab/model.hpp"

namespace conslab {

struct ConservationState {
    Vector c;  // L-1 entries
};

inline ConservationState conservation_quantities(const MlpParams& p) {
    if (p.layers() < 2) throw InvalidInput("conservation_quantities: need at least two layers");
    ConservationState s;
    s.c.resize(p.layers() - 1);
    for (std::size_t l = 0; l + 1 < p.layers(); ++l)
        s.c[l] = p.weights[l + 1].frobenius_sq() - p.weights[l].frobenius_sq();
    return s;
}

// ||after||^2 - ||before||^2 evaluated as sum (a - b)(a + b), which avoids
// cancelling two large norms against each other.
inline double norm_sq_change(const Matrix& before, const Matrix& after) {
    if (!before.same_shape(after)) throw InvalidInput("norm_sq_change: shape mismatch");
    double s = 0.0;
    const auto& b = before.data();
    const auto& a = after.data();
    for (std::size_t i = 0; i < b.size(); ++i) s += (a[i] - b[i]) * (a[i] + b[i]);
    return s;
}

// Measured Delta C_l between two parameter points, one entry per layer pair.
inline Vector conservation_change(const MlpParams& before, const MlpParams& after) {
    if (before.layers() != after.layers() || before.layers() < 2)
        throw InvalidInput("conservation_change: layer count mismatch");
    Vector per_layer(before.layers());
    for (std::size_t l = 0; l < before.layers(); ++l)
        per_layer[l] = norm_sq_change(before.weights[l], after.weights[l]);
    Vector out(before.layers() - 1);
    for (std::size_t l = 0; l + 1 < before.layers(); ++l) out[l] = per_layer[l + 1] - per_layer[l];
    return out;
}

// delta_l = ||g_{l+1}||^2 - ||g_l||^2 from per-layer squared gradient norms.
inline Vector imbalance_terms(std::span<const double> grad_sq) {
    if (grad_sq.size() < 2) return {};
    Vector out(grad_sq.size() - 1);
    for (std::size_t l = 0; l + 1 < grad_sq.size(); ++l) out[l] = grad_sq[l + 1] - grad_sq[l];
    return out;
}

struct StepDrift {
    double measured = 0.0;
    double predicted = 0.0;
};

// Compares the measured change of each C_l across one GD step with
// eta^2 * delta_l computed from the gradients.
inline std::vector<StepDrift> step_drift_check(const MlpParams& before, const MlpParams& after,
                                               const LayerGrads& g, double eta) {
    if (g.layers() != before.layers()) throw InvalidInput("step_drift_check: gradient layer count mismatch");
    for (std::size_t l = 0; l < g.layers(); ++l)
        if (!g.weights[l].same_shape(before.weights[l]))
            throw InvalidInput("step_drift_check: gradient shape mismatch");
    const Vector measured = conservation_change(before, after);
    const Vector delta = imbalance_terms(grad_sq_norms(g));
    std::vector<StepDrift> out(measured.size());
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = {measured[l], eta * eta * delta[l]};
    return out;
}

inline double relative_gap(double measured, double predicted, double floor = 1e-30) {
    return std::abs(measured - predicted) / (std::abs(measured) + floor);
}

}  // namespace conslab
