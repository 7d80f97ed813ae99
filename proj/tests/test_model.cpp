#include <gtest/gtest.h>

#include "support/oracles.hpp"

using namespace conslab;

TEST(Backward, MatchesFiniteDifferencesAcrossDepths) {
    Rng rng(13);
    for (int k = 0; k < 20; ++k) {
        const std::size_t depth = 2 + static_cast<std::size_t>(k) % 7;
        const auto rc = oracle::random_case(rng, depth);
        const auto fd = oracle::fd_gradient_check(rc.params, rc.data, rc.act, rc.loss);
        EXPECT_LE(fd.rel_error, 1e-6) << "case " << k << " depth " << depth;
        EXPECT_GT(fd.compared, fd.skipped);
    }
}

TEST(Forward, TwoLayerByHand) {
    MlpParams p;
    p.widths = {2, 2, 1};
    p.weights = {Matrix{{1.0, -1.0}, {0.5, 2.0}}, Matrix{{3.0, -2.0}}};
    const Matrix x{{1.0, 2.0}};
    // z1 = (-1, 4.5) -> relu (0, 4.5) -> 3*0 - 2*4.5 = -9
    EXPECT_DOUBLE_EQ(forward(p, x, Activation::relu()).logits(0, 0), -9.0);
    // leaky 0.1: (-0.1, 4.5) -> -0.3 - 9 = -9.3
    EXPECT_NEAR(forward(p, x, Activation::leaky(0.1)).logits(0, 0), -9.3, 1e-14);
    EXPECT_DOUBLE_EQ(forward(p, x, Activation::linear()).logits(0, 0), -3.0 - 9.0);
}

TEST(Init, KaimingScale) {
    const MlpParams p = init_kaiming_balanced({50, 400, 400, 5}, 1);
    // E ||W_l||^2 = h_out * h_in * 2 / h_in = 2 h_out
    EXPECT_NEAR(p.weights[0].frobenius_sq() / (2.0 * 400), 1.0, 0.02);
    EXPECT_NEAR(p.weights[1].frobenius_sq() / (2.0 * 400), 1.0, 0.02);
    EXPECT_FALSE(p.has_bias());
    EXPECT_TRUE(init_kaiming_balanced({3, 4, 2}, 1, true).has_bias());
    EXPECT_THROW(init_kaiming_balanced({3, 2}, 1), InvalidInput);
}

TEST(TracePairing, EqualAcrossLayersWithoutBias) {
    // <W_l, g_l> is the same for every layer of a bias-free homogeneous net:
    // the reason C_l is conserved under gradient flow.
    Rng rng(21);
    for (int k = 0; k < 10; ++k) {
        auto rc = oracle::random_case(rng, 2 + static_cast<std::size_t>(k) % 5, false);
        const Evaluation ev = evaluate(rc.params, rc.data, rc.act, rc.loss);
        const Vector tp = trace_pairing(rc.params, ev.grads);
        for (std::size_t l = 1; l < tp.size(); ++l) EXPECT_NEAR(tp[l], tp[0], 1e-10 * (1.0 + std::abs(tp[0])));
    }
}

TEST(LogitJvp, MatchesFiniteDifferenceOfLogits) {
    Rng rng(5);
    const auto rc = oracle::random_case(rng, 3, false);
    const MlpParams& p = rc.params;
    std::vector<Matrix> dir;
    for (const auto& w : p.weights) dir.push_back(gaussian_matrix(rng, w.rows(), w.cols(), 1.0));
    const ForwardCache cache = forward(p, rc.data.x, rc.act);
    const Matrix jvp = logit_jvp(p, cache, dir, rc.act);
    const double h = 1e-6;
    MlpParams plus = p, minus = p;
    for (std::size_t l = 0; l < p.layers(); ++l) {
        plus.weights[l].axpy(h, dir[l]);
        minus.weights[l].axpy(-h, dir[l]);
    }
    const Matrix fp = forward(plus, rc.data.x, rc.act).logits, fm = forward(minus, rc.data.x, rc.act).logits;
    for (std::size_t k = 0; k < jvp.size(); ++k)
        EXPECT_NEAR(jvp.data()[k], (fp.data()[k] - fm.data()[k]) / (2 * h), 1e-6 * (1.0 + std::abs(jvp.data()[k])));
}

TEST(Activation, ParseAndDerivative) {
    EXPECT_EQ(Activation::parse("relu"), Activation::relu());
    EXPECT_EQ(Activation::parse("linear"), Activation::linear());
    EXPECT_EQ(Activation::parse("leaky:0.25"), Activation::leaky(0.25));
    EXPECT_THROW(Activation::parse("tanh"), InvalidInput);
    EXPECT_DOUBLE_EQ(Activation::leaky(0.25).derivative(-1.0), 0.25);
    EXPECT_DOUBLE_EQ(Activation::relu().derivative(2.0), 1.0);
}

TEST(Flatten, RoundTrip) {
    const MlpParams p = init_kaiming_balanced({3, 4, 2}, 3);
    const Vector flat = flatten_weights(p.weights);
    EXPECT_EQ(flat.size(), p.weight_count());
    const auto back = unflatten_like(flat, p);
    for (std::size_t l = 0; l < back.size(); ++l) EXPECT_EQ(back[l].data(), p.weights[l].data());
    EXPECT_THROW(unflatten_like(Vector(3), p), InvalidInput);
}
