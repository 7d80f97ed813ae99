#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "conslab/theory.hpp"

using namespace conslab;

TEST(Crossover, MatchesBruteForceSummation) {
    Rng rng(99);
    for (int k = 0; k < 300; ++k) {
        const std::size_t modes = 1 + rng.below(20);
        const std::size_t steps = 1 + rng.below(2000);
        Vector lam(modes), c(modes);
        double lmax = 0.0;
        for (std::size_t i = 0; i < modes; ++i) {
            lam[i] = std::exp(std::log(1e-3) + rng.uniform() * std::log(1e5));
            c[i] = rng.uniform();
            lmax = std::max(lmax, lam[i]);
        }
        const double eta = std::exp(std::log(1e-6) + rng.uniform() * (std::log(1.99 / lmax) - std::log(1e-6)));
        const double brute = oracle::brute_crossover(lam, c, eta, steps);
        const CrossoverResult r = crossover_sum({lam, c, eta, steps});
        EXPECT_NEAR(r.total, brute, 1e-12 * brute);
        EXPECT_EQ(r.total, r.stable_total);
        EXPECT_FALSE(r.any_unstable);
    }
}

TEST(Crossover, Limits) {
    // eta lambda T << 1: every step contributes c, G = c T
    EXPECT_NEAR(geometric_mode_sum(1e-12, 1000), 1000.0, 1e-6);
    // converged: sum -> 1 / (eta lambda (2 - eta lambda))
    EXPECT_NEAR(geometric_mode_sum(0.1, 100000), 1.0 / (0.1 * 1.9), 1e-12);
    EXPECT_DOUBLE_EQ(geometric_mode_sum(1.0, 50), 1.0);
    EXPECT_DOUBLE_EQ(geometric_mode_sum(0.0, 50), 50.0);
}

TEST(Crossover, UnstableModesSeparated) {
    const CrossoverResult r = crossover_sum({Vector{1.0, 100.0}, Vector{1.0, 1.0}, 0.05, 100});
    EXPECT_TRUE(r.any_unstable);
    EXPECT_TRUE(r.modes[1].unstable);
    EXPECT_NEAR(r.stable_total, oracle::brute_mode_sum(1.0, 1.0, 0.05, 100), 1e-12);
    EXPECT_GT(r.total, r.stable_total);
}

TEST(Crossover, RegimesAndInputValidation) {
    const CrossoverResult r = crossover_sum({Vector{1e-4, 1.0}, Vector{1.0, 1.0}, 1e-2, 1000});
    EXPECT_EQ(r.modes[0].regime, ModeRegime::Unconverged);  // eta* = 10
    EXPECT_EQ(r.modes[1].regime, ModeRegime::Converged);    // eta* = 1e-3
    EXPECT_NEAR(r.modes[1].eta_star, 1e-3, 1e-18);
    EXPECT_THROW(crossover_sum({Vector{1.0}, Vector{1.0, 2.0}, 0.1, 10}), InvalidInput);
    EXPECT_THROW(crossover_sum({Vector{-1.0}, Vector{1.0}, 0.1, 10}), InvalidInput);
    EXPECT_THROW(crossover_sum({Vector{1.0}, Vector{1.0}, 0.0, 10}), InvalidInput);
}

TEST(LocalExponent, TwoBelowCrossoverOneAbove) {
    const SpectralModel m{Vector{1.0}, Vector{1.0}, 0.0, 1000};
    const Vector beta = local_exponent(m, Vector{1e-7, 1e-6, 1e-1, 5e-1});
    EXPECT_NEAR(beta[0], 2.0, 1e-3);
    EXPECT_NEAR(beta[2], 1.0, 0.06);  // 1 / (eta (2 - eta)) has a small correction
    EXPECT_THROW(local_exponent(m, Vector{1e-3, 1e-2}), InvalidInput);
}

TEST(ModeCoefficients, PredictionNormalised) {
    const Vector c = predict_ck(Vector{1.0, 2.0, 0.0}, Vector{3.0, 1.0, 5.0});
    // raw: 9, 4, 0
    EXPECT_NEAR(c[0], 9.0 / 13.0, 1e-15);
    EXPECT_NEAR(c[1], 4.0 / 13.0, 1e-15);
    EXPECT_EQ(c[2], 0.0);
    EXPECT_THROW(predict_ck(Vector{0.0}, Vector{1.0}), InvalidInput);
}

TEST(LinearModeOracle, GeometricDecay) {
    const ModeTrajectory tr = linear_mode_oracle(1.0, 0.25, 2.0, 0.1, 10);
    EXPECT_NEAR(tr.lambda, 4.0, 1e-15);
    EXPECT_NEAR(tr.rho, 0.6, 1e-15);
    EXPECT_NEAR(tr.error[10], 0.75 * std::pow(0.6, 10), 1e-15);
    EXPECT_FALSE(tr.expanding);
    EXPECT_TRUE(linear_mode_oracle(1.0, 0.0, 2.0, 0.6, 3).expanding);
}

TEST(EffectiveSpectrum, LinearClosedFormFromDefinition) {
    const Dataset ds = gen_gaussian_mixture(60, 4, 3, 2.0, 1);
    const MlpParams p = init_kaiming_balanced({4, 7, 3}, 2);
    const DataSpectrum s = data_cov_spectrum(ds);
    const Vector lam = effective_spectrum(p, ds, Activation::linear(), LossKind::MSE, &s);
    Vector expect;
    const double s2 = p.weights[1].frobenius_sq() / 3.0;
    for (std::size_t k = 0; k < 4; ++k) {
        double s1 = 0.0;
        for (std::size_t j = 0; j < 7; ++j) {
            double wu = 0.0;
            for (std::size_t i = 0; i < 4; ++i) wu += p.weights[0](j, i) * s.basis(i, k);
            s1 += wu * wu;
        }
        expect.push_back(s.eigenvalues[k] * (s1 + s2));
    }
    std::sort(expect.begin(), expect.end(), std::greater<>());
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(lam[k], expect[k], 1e-12 * expect[k]);
    // GN route for a nonlinear activation returns d eigenvalues, descending
    const Vector gn = effective_spectrum(p, ds, Activation::relu(), LossKind::MSE);
    EXPECT_EQ(gn.size(), 4u);
    EXPECT_TRUE(std::is_sorted(gn.rbegin(), gn.rend()));
    EXPECT_THROW(effective_spectrum(init_kaiming_balanced({4, 5, 5, 3}, 1), ds, Activation::linear(), LossKind::MSE),
                 InvalidInput);
}

TEST(ModeImbalance, LinearClosedForm) {
    // Linear net: with r_k = dZ^T X u_k, the layer-2 mode gradient is the
    // rank-one r_k (W1 u_k)^T and the layer-1 projection is W2^T r_k.
    const Dataset ds = gen_gaussian_mixture(40, 5, 3, 2.0, 3);
    const MlpParams p = init_kaiming_balanced({5, 6, 3}, 4);
    const DataSpectrum s = data_cov_spectrum(ds);
    const Vector dk = mode_imbalance(p, ds, s, Activation::linear(), LossKind::MSE);
    const Matrix dz = loss_and_dlogits(forward(p, ds.x, Activation::linear()).logits, ds, LossKind::MSE).dlogits;
    const Matrix r = matmul(matmul_tn(dz, ds.x), s.basis);     // C x d
    const Matrix w1u = matmul(p.weights[0], s.basis);          // h x d
    const Matrix w2r = matmul_tn(p.weights[1], r);             // h x d
    ASSERT_EQ(dk.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) {
        double rr = 0.0, ww = 0.0, g1 = 0.0;
        for (std::size_t c = 0; c < 3; ++c) rr += r(c, k) * r(c, k);
        for (std::size_t j = 0; j < 6; ++j) ww += w1u(j, k) * w1u(j, k), g1 += w2r(j, k) * w2r(j, k);
        EXPECT_NEAR(dk[k], rr * ww - g1, 1e-10 * (rr * ww + g1));
    }
}

TEST(EmpiricalCk, LinearRunCorrelatesWithPrediction) {
    TrainConfig cfg;
    cfg.widths = {5, 16, 3};
    cfg.activation = Activation::linear();
    cfg.eta = 3e-3;
    cfg.steps = 300;
    cfg.seed = 42;
    const Dataset ds = gen_gaussian_mixture(100, 5, 3, 2.0, 42);
    const TrainTrace tr = train(cfg, ds);
    const DataSpectrum s = data_cov_spectrum(ds);
    const Vector lam = effective_spectrum(tr.initial, ds, cfg.activation, cfg.loss, &s);
    const EmpiricalModes emp = empirical_ck(tr, s, ds, cfg.activation, lam);
    ASSERT_EQ(emp.ck.size(), 5u);
    double sum = 0.0;
    for (double v : emp.ck) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    const Vector pred = predict_ck(initial_mode_errors(tr.initial, ds, s, cfg.activation), s.eigenvalues);
    EXPECT_GT(compare_ck(pred, emp).r, 0.5);
}

TEST(ScaleFit, ExactForProportionalData) {
    const Vector pred{1.0, 2.0, 4.0}, meas{3.0, 6.0, 12.0};
    EXPECT_NEAR(relative_scale_fit(pred, meas), 3.0, 1e-15);
}
