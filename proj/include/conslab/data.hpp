#pragma once

// Gaussian-mixture classification data and its second-moment spectrum.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <vector>

#include "conslab/numerics.hpp"

namespace conslab {

struct Dataset {
    Matrix x;                         // n x d
    std::vector<std::size_t> labels;  // n entries in [0, c)
    Matrix onehot;                    // n x c
    std::size_t n = 0, d = 0, c = 0;
    double separation = 0.0;
    std::uint64_t seed = 0;
};

struct DataSpectrum {
    Vector eigenvalues;  // descending
    Matrix basis;        // d x d, columns are eigenvectors
};

// Class means are standard normal draws rescaled so that the average pairwise
// distance between means is separation * sqrt(2). Each sample is its class
// mean plus unit-variance isotropic noise. Labels are assigned round-robin and
// the sample order is shuffled.
inline Dataset gen_gaussian_mixture(std::size_t n, std::size_t d, std::size_t c, double separation,
                                    std::uint64_t seed) {
    if (c < 2) throw InvalidInput("gen_gaussian_mixture: need at least 2 classes");
    if (n < c) throw InvalidInput("gen_gaussian_mixture: n must be >= number of classes");
    if (d < 1) throw InvalidInput("gen_gaussian_mixture: d must be >= 1");
    if (!(separation >= 0.0)) throw InvalidInput("gen_gaussian_mixture: separation must be >= 0");

    Rng rng(seed, 0x6d697874);  // "mixt"
    Matrix means(c, d);
    for (double& v : means.data()) v = rng.normal();
    double mean_dist = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = a + 1; b < c; ++b) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (means(a, j) - means(b, j)) * (means(a, j) - means(b, j));
            mean_dist += std::sqrt(s);
            ++pairs;
        }
    mean_dist /= static_cast<double>(pairs);
    const double target = separation * std::sqrt(2.0);
    means *= mean_dist > 0.0 ? target / mean_dist : 0.0;

    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = i % c;
    shuffle(labels, rng);

    Dataset ds;
    ds.n = n;
    ds.d = d;
    ds.c = c;
    ds.separation = separation;
    ds.seed = seed;
    ds.x = Matrix(n, d);
    ds.onehot = Matrix(n, c);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) ds.x(i, j) = means(labels[i], j) + rng.normal();
        ds.onehot(i, labels[i]) = 1.0;
    }
    ds.labels = std::move(labels);
    return ds;
}

// Builds a dataset from explicit features and labels.
inline Dataset make_dataset(Matrix x, std::vector<std::size_t> labels, std::size_t c) {
    if (labels.size() != x.rows()) throw InvalidInput("make_dataset: label count mismatch");
    Dataset ds;
    ds.n = x.rows();
    ds.d = x.cols();
    ds.c = c;
    ds.onehot = Matrix(ds.n, c);
    for (std::size_t i = 0; i < ds.n; ++i) {
        if (labels[i] >= c) throw InvalidInput("make_dataset: label out of range");
        ds.onehot(i, labels[i]) = 1.0;
    }
    ds.x = std::move(x);
    ds.labels = std::move(labels);
    return ds;
}

// Uncentered second moment X^T X / n.
inline Matrix data_second_moment(const Dataset& ds) {
    Matrix s = matmul_tn(ds.x, ds.x);
    s *= 1.0 / static_cast<double>(ds.n);
    return s;
}

inline DataSpectrum data_cov_spectrum(const Dataset& ds) {
    if (ds.n < 2) throw InvalidInput("data_cov_spectrum: need n >= 2");
    auto eig = sym_eig(data_second_moment(ds));
    return {std::move(eig.eigenvalues), std::move(eig.eigenvectors)};
}

// Header f0,...,f{d-1},label then one row per sample, 17 significant digits.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    for (std::size_t j = 0; j < ds.d; ++j) os << 'f' << j << ',';
    os << "label\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < ds.n; ++i) {
        for (std::size_t j = 0; j < ds.d; ++j) os << ds.x(i, j) << ',';
        os << ds.labels[i] << '\n';
    }
}

}  // namespace conslab
