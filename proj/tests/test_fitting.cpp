#include <gtest/gtest.h>

#include "conslab/fitting.hpp"

using namespace conslab;

TEST(FitLinear, ExactLine) {
    const Vector x{0, 1, 2, 3}, y{1, 3, 5, 7};
    const FitResult f = fit_linear(x, y);
    EXPECT_NEAR(f.slope, 2.0, 1e-14);
    EXPECT_NEAR(f.intercept, 1.0, 1e-14);
    EXPECT_NEAR(f.r2, 1.0, 1e-14);
    EXPECT_NEAR(f.stderr_slope, 0.0, 1e-14);
}

TEST(FitLinear, TwoPointsInterpolate) {
    const FitResult f = fit_linear(Vector{1, 3}, Vector{2, 8});
    EXPECT_NEAR(f.slope, 3.0, 1e-14);
    EXPECT_NEAR(f.intercept, -1.0, 1e-14);
    EXPECT_DOUBLE_EQ(f.r2, 1.0);
}

TEST(FitLinear, Errors) {
    EXPECT_THROW(fit_linear(Vector{1}, Vector{1}), InvalidInput);
    EXPECT_THROW(fit_linear(Vector{1, 1, 1}, Vector{1, 2, 3}), InvalidInput);
    EXPECT_THROW(fit_linear(Vector{1, 2}, Vector{1}), InvalidInput);
}

TEST(FitLinear, NoisyLineAgreesWithClosedFormStats) {
    const Vector x{1, 2, 3, 4, 5}, y{2.1, 3.9, 6.2, 7.8, 10.1};
    const FitResult f = fit_linear(x, y);
    // slope = Sxy / Sxx with Sxx = 10, Sxy = 19.9
    EXPECT_NEAR(f.slope, 1.99, 1e-12);
    EXPECT_NEAR(f.intercept, 6.02 - 1.99 * 3, 1e-12);
    EXPECT_GT(f.r2, 0.99);
    EXPECT_LT(f.r2, 1.0);
}

TEST(FitPowerLaw, RecoversExponentAndIsScaleEquivariant) {
    Vector x, y;
    for (double v = 1e-4; v < 1.0; v *= 3.0) {
        x.push_back(v);
        y.push_back(2.5 * std::pow(v, 1.16));
    }
    const FitResult f = fit_power_law(x, y);
    EXPECT_NEAR(f.slope, 1.16, 1e-12);
    EXPECT_NEAR(std::exp(f.intercept), 2.5, 1e-10);
    EXPECT_NEAR(f.loglog_curvature, 0.0, 1e-10);
    Vector xs = x;
    for (double& v : xs) v *= 7.0;
    const FitResult g = fit_power_law(xs, y);
    EXPECT_NEAR(g.slope, f.slope, 1e-12);
    EXPECT_NEAR(g.intercept, f.intercept - f.slope * std::log(7.0), 1e-10);
}

TEST(FitPowerLaw, CurvatureGrowsWithDistortion) {
    Vector x;
    for (double v = 1e-3; v < 1.0; v *= 2.0) x.push_back(v);
    double last = -1.0;
    for (double a : {0.0, 0.05, 0.1, 0.2, 0.4}) {
        Vector y;
        for (double v : x) y.push_back(std::exp(1.2 * std::log(v) + a * std::log(v) * std::log(v)));
        const double c = fit_power_law(x, y).loglog_curvature;
        EXPECT_NEAR(c, a, 1e-10);
        EXPECT_GT(c, last);
        last = c;
    }
}

TEST(FitPowerLaw, RejectsNonPositive) {
    EXPECT_THROW(fit_power_law(Vector{1, 2, 3}, Vector{1, 0, 2}), InvalidInput);
    EXPECT_THROW(fit_power_law(Vector{1, 2}, Vector{1, 2}), InvalidInput);
}
