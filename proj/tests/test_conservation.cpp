#include <gtest/gtest.h>
#include <limits>

#include "support/oracles.hpp"

using namespace conslab;

namespace {

double direct_norm_sq(const Matrix& m) {
    long double s = 0.0L;
    for (double v : m.data()) s += static_cast<long double>(v) * v;
    return static_cast<double>(s);
}

}  // namespace

TEST(ConservationQuantities, Definition) {
    const MlpParams p = init_kaiming_balanced({4, 6, 5, 3}, 2);
    const Vector c = conservation_quantities(p).c;
    ASSERT_EQ(c.size(), 2u);
    EXPECT_NEAR(c[0], direct_norm_sq(p.weights[1]) - direct_norm_sq(p.weights[0]), 1e-12);
    EXPECT_NEAR(c[1], direct_norm_sq(p.weights[2]) - direct_norm_sq(p.weights[1]), 1e-12);
}

TEST(ConservationChange, StableDifferenceOfNorms) {
    // A tiny update on large weights: the naive difference of norms loses
    // digits; the product form keeps them.
    Matrix before(1, 2), after(1, 2);
    before.data() = {1e4, -3e4};
    after.data() = {1e4 + 1e-9, -3e4 - 2e-9};
    long double exact = 0.0L;
    for (std::size_t i = 0; i < 2; ++i) {
        const long double a = after.data()[i], b = before.data()[i];
        exact += a * a - b * b;
    }
    EXPECT_NEAR(norm_sq_change(before, after), static_cast<double>(exact), 1e-12 * std::abs(static_cast<double>(exact)));
}

TEST(StepIdentity, OneGdStepEqualsEtaSquaredDelta) {
    Rng rng(31);
    for (int k = 0; k < 25; ++k) {
        auto rc = oracle::random_case(rng, 2 + static_cast<std::size_t>(k) % 6, false);
        const double eta = 0.05 * rng.uniform();
        const Evaluation ev = evaluate(rc.params, rc.data, rc.act, rc.loss);
        MlpParams next = rc.params;
        add_scaled(next, ev.grads, -eta);
        // oracle: ||W - eta g||^2 - ||W||^2 = -2 eta <W, g> + eta^2 ||g||^2, and the
        // <W_l, g_l> terms are equal across layers.
        const auto checks = step_drift_check(rc.params, next, ev.grads, eta);
        for (std::size_t l = 0; l < checks.size(); ++l) {
            const double g_next = direct_norm_sq(ev.grads.weights[l + 1]), g_this = direct_norm_sq(ev.grads.weights[l]);
            const double scale = eta * eta * (g_next + g_this);
            // rounding W - eta g to doubles perturbs each ||W||^2 by about eps ||W||^2
            const double floor = 4 * std::numeric_limits<double>::epsilon() *
                                 (direct_norm_sq(rc.params.weights[l]) + direct_norm_sq(rc.params.weights[l + 1]));
            EXPECT_NEAR(checks[l].predicted, eta * eta * (g_next - g_this), 1e-14 * scale + 1e-300);
            EXPECT_LE(std::abs(checks[l].measured - checks[l].predicted), 1e-9 * scale + floor)
                << "case " << k << " pair " << l;
        }
    }
}

TEST(StepIdentity, BiasesBreakIt) {
    Rng rng(32);
    MlpParams p = init_kaiming_balanced({5, 8, 3}, 3, true);
    for (auto& b : p.biases)
        for (double& v : b) v = rng.normal();
    const Dataset ds = gen_gaussian_mixture(20, 5, 3, 2.0, 4);
    const Evaluation ev = evaluate(p, ds, Activation::relu(), LossKind::MSE);
    MlpParams next = p;
    add_scaled(next, ev.grads, -0.01);
    const auto checks = step_drift_check(p, next, ev.grads, 0.01);
    EXPECT_GT(relative_gap(checks[0].measured, checks[0].predicted), 1e-3);
}

TEST(ImbalanceTerms, Differences) {
    const Vector d = imbalance_terms(Vector{1.0, 4.0, 2.5});
    ASSERT_EQ(d.size(), 2u);
    EXPECT_DOUBLE_EQ(d[0], 3.0);
    EXPECT_DOUBLE_EQ(d[1], -1.5);
    EXPECT_TRUE(imbalance_terms(Vector{1.0}).empty());
}
