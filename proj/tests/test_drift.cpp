#include <gtest/gtest.h>

#include "conslab/drift.hpp"

using namespace conslab;

namespace {

TrainTrace run(OptimizerKind opt, double eta, std::size_t depth = 3) {
    TrainConfig cfg;
    cfg.widths = {8};
    for (std::size_t l = 1; l < depth; ++l) cfg.widths.push_back(16);
    cfg.widths.push_back(3);
    cfg.optimizer = opt;
    cfg.eta = eta;
    cfg.steps = 300;
    cfg.seed = 11;
    return train(cfg, gen_gaussian_mixture(60, 8, 3, 2.0, 11));
}

}  // namespace

TEST(DriftReport, TotalDriftEqualsEtaSquaredImbalanceSum) {
    const TrainTrace tr = run(OptimizerKind::gd(), 0.02);
    const DriftReport r = drift_report(tr);
    ASSERT_EQ(r.pairs.size(), 2u);
    const Vector g = imbalance_sum(tr);
    for (std::size_t l = 0; l < 2; ++l) {
        const auto& p = r.pairs[l];
        double direct = 0.0;
        for (const auto& d : tr.imbalance) direct += d[l];
        EXPECT_NEAR(p.imbalance_sum, direct, 1e-12 * (1 + std::abs(direct)));
        EXPECT_NEAR(g[l], direct, 1e-12 * (1 + std::abs(direct)));
        EXPECT_NEAR(p.drift, 0.02 * 0.02 * std::abs(direct), 1e-8 * p.drift + 1e-16);
        EXPECT_NEAR(p.drift_direct, std::abs(p.c_final - p.c_initial), 1e-14);
        EXPECT_NEAR(p.drift, p.drift_direct, 1e-9 * (1 + std::abs(p.c_initial)));
        EXPECT_LT(p.identity_residual_scaled, 1e-8);
    }
    EXPECT_TRUE(r.identity_applicable);
}

TEST(DriftReport, AdamHasNoIdentity) {
    const DriftReport r = drift_report(run(OptimizerKind::adam(), 1e-3));
    EXPECT_FALSE(r.identity_applicable);
    const auto j = to_json(r);
    EXPECT_TRUE(j["pairs"][0]["identity_residual"].is_null());
    EXPECT_GT(r.pairs[0].drift_direct, 0.0);
}

TEST(DriftReport, DriftGrowsWithEta) {
    const double a = drift_report(run(OptimizerKind::gd(), 1e-3)).mean_drift();
    const double b = drift_report(run(OptimizerKind::gd(), 1e-2)).mean_drift();
    EXPECT_GT(b, 5.0 * a);
}

TEST(DriftReport, JsonShape) {
    const auto j = to_json(drift_report(run(OptimizerKind::gd(), 0.01, 2)));
    EXPECT_EQ(j["pairs"].size(), 1u);
    for (const char* key : {"drift", "drift_direct", "imbalance_sum", "identity_residual", "identity_residual_scaled"})
        EXPECT_TRUE(j["pairs"][0].contains(key)) << key;
}
