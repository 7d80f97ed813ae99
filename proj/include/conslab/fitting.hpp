#pragma once

#include <array>
#include <cmath>
#include <span>

#include "conslab/numerics.hpp"

namespace conslab {

struct FitResult {
    double slope = 0.0;  // exponent for power-law fits
    double intercept = 0.0;
    double r2 = 0.0;
    double stderr_slope = 0.0;
    double loglog_curvature = 0.0;  // quadratic coefficient; power-law fits only
    std::size_t points = 0;
};

inline FitResult fit_linear(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidInput("fit_linear: xs and ys differ in length");
    if (xs.size() < 2) throw InvalidInput("fit_linear: need at least 2 points");
    const std::size_t n = xs.size();
    const double mx = mean(xs), my = mean(ys);
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw InvalidInput("fit_linear: xs have zero variance");
    FitResult f;
    f.points = n;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ssr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = ys[i] - (f.intercept + f.slope * xs[i]);
        ssr += r * r;
    }
    f.r2 = syy > 0.0 ? std::clamp(1.0 - ssr / syy, 0.0, 1.0) : 1.0;
    f.stderr_slope = n > 2 ? std::sqrt(ssr / static_cast<double>(n - 2) / sxx) : 0.0;
    return f;
}

// Coefficient of u^2 in the least-squares fit y = a + b u + c u^2.
inline double quadratic_coefficient(std::span<const double> u, std::span<const double> y) {
    if (u.size() < 3) return 0.0;
    const double mu = mean(u);
    // Normal equations in the centred variable v = u - mu.
    std::array<double, 5> s{};  // sum v^k, k = 0..4
    std::array<double, 3> t{};  // sum y v^k, k = 0..2
    for (std::size_t i = 0; i < u.size(); ++i) {
        const double v = u[i] - mu;
        double p = 1.0;
        for (std::size_t k = 0; k < 5; ++k) {
            s[k] += p;
            if (k < 3) t[k] += y[i] * p;
            p *= v;
        }
    }
    // Cramer's rule on [[s0 s1 s2][s1 s2 s3][s2 s3 s4]] x = t.
    auto det3 = [](double a, double b, double c, double d, double e, double f, double g, double h, double i) {
        return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    };
    const double det = det3(s[0], s[1], s[2], s[1], s[2], s[3], s[2], s[3], s[4]);
    if (std::abs(det) < 1e-300) return 0.0;
    return det3(s[0], s[1], t[0], s[1], s[2], t[1], s[2], s[3], t[2]) / det;
}

// Ordinary least squares on (ln x, ln y); R^2 is reported on the log scale.
inline FitResult fit_power_law(std::span<const double> xs, std::span<const double> ys) {
    if (xs.size() != ys.size()) throw InvalidInput("fit_power_law: xs and ys differ in length");
    if (xs.size() < 3) throw InvalidInput("fit_power_law: need at least 3 points");
    Vector lx(xs.size()), ly(ys.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!(xs[i] > 0.0) || !(ys[i] > 0.0)) throw InvalidInput("fit_power_law: values must be positive");
        lx[i] = std::log(xs[i]);
        ly[i] = std::log(ys[i]);
    }
    FitResult f = fit_linear(lx, ly);
    f.loglog_curvature = quadratic_coefficient(lx, ly);
    return f;
}

}  // namespace conslab
