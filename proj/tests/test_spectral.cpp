#include <gtest/gtest.h>

#include "support/oracles.hpp"
#include "conslab/spectral.hpp"

using namespace conslab;

namespace {

// Jacobian of the flattened logits (row i*C + k) by central differences.
Matrix fd_jacobian(const MlpParams& p, const Dataset& ds, const Activation& act) {
    const std::size_t P = p.weight_count(), C = ds.c;
    Matrix jac(ds.n * C, P);
    const double h = 1e-6;
    Vector flat = flatten_weights(p.weights);
    for (std::size_t j = 0; j < P; ++j) {
        MlpParams a = p, b = p;
        Vector fa = flat, fb = flat;
        fa[j] += h;
        fb[j] -= h;
        a.weights = unflatten_like(fa, p);
        b.weights = unflatten_like(fb, p);
        const Matrix za = forward(a, ds.x, act).logits, zb = forward(b, ds.x, act).logits;
        for (std::size_t r = 0; r < ds.n * C; ++r) jac(r, j) = (za.data()[r] - zb.data()[r]) / (2 * h);
    }
    return jac;
}

}  // namespace

TEST(SoftmaxBlock, ExplicitFormAndEigenvalueRange) {
    const Vector p{0.7, 0.2, 0.1};
    const SoftmaxBlock b = softmax_block(p);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(b.s(i, j), (i == j ? p[i] : 0.0) - p[i] * p[j], 1e-16);
    // S 1 = 0, and lambda_max <= max_k p_k <= 1
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(b.s(i, 0) + b.s(i, 1) + b.s(i, 2), 0.0, 1e-16);
    EXPECT_GT(b.lambda_max, 0.0);
    EXPECT_LE(b.lambda_max, 0.7);
    // two classes: eigenvalues {0, 2 p (1 - p)}
    EXPECT_NEAR(softmax_block(Vector{0.3, 0.7}).lambda_max, 2 * 0.3 * 0.7, 1e-15);
    EXPECT_THROW(softmax_block(Vector{0.5, 0.6}), InvalidInput);
}

TEST(SoftmaxBlock, ApplyMatchesExplicitMatrix) {
    Rng rng(4);
    Matrix probs = softmax_rows(gaussian_matrix(rng, 5, 4, 1.0));
    Matrix u = gaussian_matrix(rng, 5, 4, 1.0), applied = u;
    apply_softmax_blocks(probs, applied);
    for (std::size_t i = 0; i < 5; ++i) {
        const SoftmaxBlock b = softmax_block(probs.row(i));
        for (std::size_t k = 0; k < 4; ++k) {
            double s = 0.0;
            for (std::size_t m = 0; m < 4; ++m) s += b.s(k, m) * u(i, m);
            EXPECT_NEAR(applied(i, k), s, 1e-14);
        }
    }
}

TEST(Jacobian, MatchesFiniteDifferences) {
    const Dataset ds = gen_gaussian_mixture(6, 3, 2, 2.0, 1);
    const MlpParams p = init_kaiming_balanced({3, 5, 4, 2}, 2);
    const Matrix analytic = logit_jacobian(p, ds, Activation::leaky(0.3));
    const Matrix fd = fd_jacobian(p, ds, Activation::leaky(0.3));
    for (std::size_t k = 0; k < fd.size(); ++k) EXPECT_NEAR(analytic.data()[k], fd.data()[k], 1e-6);
}

TEST(GaussNewton, DenseEqualsJtSJ) {
    const Dataset ds = gen_gaussian_mixture(8, 3, 3, 2.0, 3);
    const MlpParams p = init_kaiming_balanced({3, 4, 3}, 4);
    const Matrix jac = fd_jacobian(p, ds, Activation::relu());
    const Matrix probs = softmax_rows(forward(p, ds.x, Activation::relu()).logits);
    for (LossKind loss : {LossKind::MSE, LossKind::CrossEntropy}) {
        const Matrix gn = gauss_newton(p, ds, Activation::relu(), loss);
        const std::size_t P = jac.cols();
        for (std::size_t a = 0; a < P; ++a)
            for (std::size_t b = 0; b < P; ++b) {
                double s = 0.0;
                for (std::size_t i = 0; i < ds.n; ++i) {
                    const SoftmaxBlock blk = softmax_block(probs.row(i));
                    for (std::size_t k = 0; k < 3; ++k)
                        for (std::size_t m = 0; m < 3; ++m) {
                            const double sk = loss == LossKind::MSE ? (k == m) : blk.s(k, m);
                            s += jac(i * 3 + k, a) * sk * jac(i * 3 + m, b);
                        }
                }
                EXPECT_NEAR(gn(a, b), s / ds.n, 1e-6);
            }
    }
}

TEST(GaussNewton, MatrixFreeAgreesWithDense) {
    const Dataset ds = gen_gaussian_mixture(30, 5, 3, 2.0, 5);
    const MlpParams p = init_kaiming_balanced({5, 12, 3}, 6);
    Rng rng(7);
    for (LossKind loss : {LossKind::MSE, LossKind::CrossEntropy}) {
        const double dense = lambda_max_dense(p, ds, Activation::relu(), loss);
        const double hvp = lambda_max_hvp(p, ds, Activation::relu(), loss, rng, {1e-12, 200000});
        EXPECT_NEAR(hvp, dense, 1e-6 * dense);
        // operator applied to a vector equals the dense product
        const Matrix gn = gauss_newton(p, ds, Activation::relu(), loss);
        GaussNewtonOperator op(p, ds, Activation::relu(), loss);
        Vector v(op.dim());
        for (double& x : v) x = rng.normal();
        const Vector a = op(v), b = matvec(gn, v);
        for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10 * (1 + std::abs(b[i])));
    }
}

TEST(CompressionBound, HoldsOnRandomNetworksAndTrajectories) {
    Rng rng(8);
    for (int k = 0; k < 12; ++k) {
        const std::size_t c = 2 + rng.below(4);
        const Dataset ds = gen_gaussian_mixture(20, 4, c, 1.0 + 3 * rng.uniform(), rng());
        MlpParams p = init_kaiming_balanced({4, 6 + rng.below(6), c}, rng());
        for (auto& w : p.weights) w *= 0.5 + 2.5 * rng.uniform();
        const CompressionBound b = compression_bound(p, ds, Activation::relu(), rng);
        EXPECT_TRUE(b.holds()) << b.lhs << " > " << b.rhs;
        EXPECT_LE(b.q_margin, 1.0);
        EXPECT_GE(b.q_margin, b.max_pk_one_minus_pk - 1e-15);
    }
    TrainConfig cfg;
    cfg.widths = {6, 10, 3};
    cfg.loss = LossKind::CrossEntropy;
    cfg.eta = 0.2;
    cfg.steps = 400;
    const CompressionProfile prof = track_compression(cfg, gen_gaussian_mixture(40, 6, 3, 2.0, 9), 40);
    EXPECT_EQ(prof.snapshots.size(), 11u);  // steps 0, 40, ..., 400
    EXPECT_TRUE(prof.bound_held);
    EXPECT_LT(prof.snapshots.back().lambda_max, prof.snapshots.front().lambda_max);
    EXPECT_GT(prof.snapshots.back().q_min, prof.snapshots.front().q_min);
}

TEST(EstimateTau, RecoversSyntheticTimescale) {
    Vector steps, lam;
    for (int t = 0; t <= 2000; t += 50) {
        steps.push_back(t);
        lam.push_back(t < 100 ? 7.0 : 7.0 * std::exp(-(t - 100) / 300.0));
    }
    const TauFit f = estimate_tau(steps, lam);
    ASSERT_TRUE(f.ok);
    EXPECT_NEAR(f.tau, 300.0, 1e-6);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    // 2% multiplicative noise
    Rng rng(3);
    Vector noisy = lam;
    for (double& v : noisy) v *= std::exp(0.02 * rng.normal());
    const TauFit g = estimate_tau(steps, noisy);
    ASSERT_TRUE(g.ok);
    EXPECT_NEAR(g.tau, 300.0, 15.0);
    // flat profile: no window
    EXPECT_FALSE(estimate_tau(steps, Vector(steps.size(), 1.0)).ok);
}

TEST(Eos, DwellFraction) {
    std::vector<LambdaSample> s;
    for (int i = 0; i < 10; ++i) s.push_back({static_cast<std::size_t>(i), i < 3 ? 19.0 : 10.0});
    // eta = 0.1: 2/eta = 20; 19 * 0.1 = 1.9 is inside the band
    EXPECT_DOUBLE_EQ(eos_dwell_fraction(s, 0.1), 0.3);
    TrainTrace tr;
    tr.eta = 0.1;
    tr.lambda_max = s;
    EXPECT_TRUE(at_eos(tr));
    EXPECT_FALSE(at_eos(tr, {0.25, 0.5}));
    EXPECT_DOUBLE_EQ(eos_dwell_fraction({}, 0.1), 0.0);
}

TEST(SharpnessTracking, SamplesAtStride) {
    TrainConfig cfg;
    cfg.widths = {5, 8, 3};
    cfg.steps = 100;
    cfg.record.lambda_stride = 25;
    const TrainTrace tr = train_with_sharpness(cfg, gen_gaussian_mixture(30, 5, 3, 2.0, 1));
    ASSERT_EQ(tr.lambda_max.size(), 4u);
    EXPECT_EQ(tr.lambda_max[1].step, 25u);
    const double direct = lambda_max_dense(tr.initial, gen_gaussian_mixture(30, 5, 3, 2.0, 1), cfg.activation, cfg.loss);
    EXPECT_NEAR(tr.lambda_max[0].value, direct, 1e-9 * direct);
}

TEST(SwitchRate, CountsSignFlips) {
    TrainConfig cfg;
    cfg.widths = {5, 8, 3};
    cfg.steps = 60;
    cfg.eta = 0.5;
    cfg.record.signs = true;
    const TrainTrace tr = train(cfg, gen_gaussian_mixture(30, 5, 3, 2.0, 1));
    const SwitchRate r = switch_rate(tr, cfg.activation);
    EXPECT_GT(r.per_neuron, 0.0);
    EXPECT_LT(r.per_neuron, 1.0);
    EXPECT_NEAR(r.total, r.per_neuron * 8, 1e-15);
    EXPECT_DOUBLE_EQ(switch_rate(tr, Activation::linear()).per_neuron, 0.0);
    TrainConfig quiet = cfg;
    quiet.record.signs = false;
    EXPECT_THROW(switch_rate(train(quiet, gen_gaussian_mixture(30, 5, 3, 2.0, 1)), cfg.activation), InvalidInput);
}
