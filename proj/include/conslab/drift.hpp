#pragma once

// Trace-level drift analysis: the gradient imbalance sum and a per-pair
// drift report.

#include <json.hpp>

#include "conslab/training.hpp"

namespace conslab {

// G_l = sum_t delta_l(t) over every recorded step.
inline Vector imbalance_sum(const TrainTrace& tr) {
    if (tr.imbalance.empty() || tr.imbalance.size() != tr.grad_sq.size())
        throw InvalidInput("imbalance_sum: trace lacks per-step gradient norms");
    Vector g(tr.imbalance.front().size(), 0.0);
    for (const auto& d : tr.imbalance)
        for (std::size_t l = 0; l < g.size(); ++l) g[l] += d[l];
    return g;
}

struct PairDrift {
    double c_initial = 0.0;
    double c_final = 0.0;
    double drift = 0.0;          // |sum_t measured Delta C_l(t)|
    double drift_direct = 0.0;   // |C_l(T) - C_l(0)| from the endpoint norms
    double imbalance_sum = 0.0;  // G_l
    double predicted_drift = 0.0;  // eta^2 |G_l|
    double identity_residual = 0.0;  // max_t |dC - eta^2 delta| / (|dC| + 1e-30)
    // Same gap measured against the size of the cancelling terms,
    // eta^2 (||g_{l+1}||^2 + ||g_l||^2); insensitive to sign crossings of delta.
    double identity_residual_scaled = 0.0;
};

struct DriftReport {
    double eta = 0.0;
    std::size_t steps = 0;
    RunStatus status = RunStatus::Ok;
    bool identity_applicable = true;  // false for Adam
    std::vector<PairDrift> pairs;

    double mean_drift() const {
        double s = 0.0;
        for (const auto& p : pairs) s += p.drift;
        return pairs.empty() ? 0.0 : s / static_cast<double>(pairs.size());
    }
    double max_identity_residual() const {
        double m = 0.0;
        for (const auto& p : pairs) m = std::max(m, p.identity_residual);
        return m;
    }
    double max_identity_residual_scaled() const {
        double m = 0.0;
        for (const auto& p : pairs) m = std::max(m, p.identity_residual_scaled);
        return m;
    }
};

inline DriftReport drift_report(const TrainTrace& tr) {
    DriftReport r;
    r.eta = tr.eta;
    r.steps = tr.steps();
    r.status = tr.status;
    r.identity_applicable = tr.optimizer.kind == OptimizerKind::Kind::GD;
    const Vector g = imbalance_sum(tr);
    const double eta2 = tr.eta * tr.eta;
    r.pairs.resize(g.size());
    for (std::size_t l = 0; l < g.size(); ++l) {
        PairDrift& p = r.pairs[l];
        double total = 0.0;
        for (std::size_t t = 0; t < tr.steps(); ++t) {
            const double measured = tr.cons_change[t][l];
            total += measured;
            const double predicted = eta2 * tr.imbalance[t][l];
            p.identity_residual = std::max(p.identity_residual, relative_gap(measured, predicted));
            const double scale = eta2 * (tr.grad_sq[t][l + 1] + tr.grad_sq[t][l]);
            if (scale > 0.0)
                p.identity_residual_scaled = std::max(p.identity_residual_scaled, std::abs(measured - predicted) / scale);
        }
        p.c_initial = tr.cons.front()[l];
        p.c_final = tr.cons_final[l];
        p.drift = std::abs(total);
        p.drift_direct = std::abs(p.c_final - p.c_initial);
        p.imbalance_sum = g[l];
        p.predicted_drift = eta2 * std::abs(g[l]);
    }
    return r;
}

inline nlohmann::json to_json(const DriftReport& r) {
    nlohmann::json j;
    j["eta"] = r.eta;
    j["steps"] = r.steps;
    j["status"] = to_string(r.status);
    j["identity_applicable"] = r.identity_applicable;
    j["pairs"] = nlohmann::json::array();
    for (const auto& p : r.pairs) {
        nlohmann::json jp{{"c_initial", p.c_initial},           {"c_final", p.c_final},
                          {"drift", p.drift},                   {"drift_direct", p.drift_direct},
                          {"imbalance_sum", p.imbalance_sum},   {"predicted_drift", p.predicted_drift}};
        if (r.identity_applicable) {
            jp["identity_residual"] = p.identity_residual;
            jp["identity_residual_scaled"] = p.identity_residual_scaled;
        } else {
            jp["identity_residual"] = nullptr;
            jp["identity_residual_scaled"] = nullptr;
        }
        j["pairs"].push_back(std::move(jp));
    }
    return j;
}

// Final values and aggregates of a trace.
inline nlohmann::json trace_summary(const TrainTrace& tr) {
    nlohmann::json j;
    j["status"] = to_string(tr.status);
    j["steps"] = tr.steps();
    j["eta"] = tr.eta;
    j["optimizer"] = tr.optimizer.name();
    j["loss"] = to_string(tr.loss_kind);
    if (!tr.loss.empty()) {
        j["loss_initial"] = tr.loss.front();
        j["loss_final"] = tr.loss.back();
    }
    if (!tr.q_min.empty()) {
        j["q_min_initial"] = tr.q_min.front();
        j["q_min_final"] = tr.q_min.back();
    }
    j["max_relative_excursion"] = max_relative_excursion(tr);
    if (!tr.imbalance.empty()) j["drift"] = to_json(drift_report(tr));
    return j;
}

}  // namespace conslab
