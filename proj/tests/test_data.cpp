#include <gtest/gtest.h>

#include "conslab/data.hpp"

using namespace conslab;

TEST(GaussianMixture, ShapesAndBalancedLabels) {
    const Dataset ds = gen_gaussian_mixture(200, 20, 5, 2.0, 42);
    EXPECT_EQ(ds.x.rows(), 200u);
    EXPECT_EQ(ds.x.cols(), 20u);
    EXPECT_EQ(ds.onehot.cols(), 5u);
    std::vector<int> counts(5, 0);
    for (std::size_t i = 0; i < ds.n; ++i) {
        ++counts[ds.labels[i]];
        double row = 0.0;
        for (std::size_t k = 0; k < 5; ++k) row += ds.onehot(i, k);
        EXPECT_EQ(row, 1.0);
        EXPECT_EQ(ds.onehot(i, ds.labels[i]), 1.0);
    }
    for (int c : counts) EXPECT_EQ(c, 40);
}

TEST(GaussianMixture, Deterministic) {
    const Dataset a = gen_gaussian_mixture(50, 4, 3, 2.0, 9), b = gen_gaussian_mixture(50, 4, 3, 2.0, 9);
    EXPECT_EQ(a.x.data(), b.x.data());
    EXPECT_EQ(a.labels, b.labels);
    const Dataset c = gen_gaussian_mixture(50, 4, 3, 2.0, 10);
    EXPECT_NE(a.x.data(), c.x.data());
}

TEST(GaussianMixture, ClassMeansSeparated) {
    // Empirical class means: average pairwise distance ~ separation * sqrt(2).
    const std::size_t n = 20000, d = 10, c = 4;
    const Dataset ds = gen_gaussian_mixture(n, d, c, 3.0, 5);
    Matrix means(c, d);
    std::vector<double> cnt(c, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        cnt[ds.labels[i]] += 1.0;
        for (std::size_t j = 0; j < d; ++j) means(ds.labels[i], j) += ds.x(i, j);
    }
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t j = 0; j < d; ++j) means(a, j) /= cnt[a];
    double dist = 0.0;
    int pairs = 0;
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = a + 1; b < c; ++b, ++pairs) {
            double s = 0.0;
            for (std::size_t j = 0; j < d; ++j) s += (means(a, j) - means(b, j)) * (means(a, j) - means(b, j));
            dist += std::sqrt(s);
        }
    EXPECT_NEAR(dist / pairs, 3.0 * std::sqrt(2.0), 0.1);
}

TEST(GaussianMixture, InvalidArguments) {
    EXPECT_THROW(gen_gaussian_mixture(10, 2, 1, 2.0, 0), InvalidInput);
    EXPECT_THROW(gen_gaussian_mixture(2, 2, 3, 2.0, 0), InvalidInput);
    EXPECT_THROW(gen_gaussian_mixture(10, 0, 2, 2.0, 0), InvalidInput);
    EXPECT_THROW(gen_gaussian_mixture(10, 2, 2, -1.0, 0), InvalidInput);
}

TEST(DataSpectrum, EigenpairsOfSecondMoment) {
    const Dataset ds = gen_gaussian_mixture(100, 6, 3, 2.0, 3);
    const DataSpectrum s = data_cov_spectrum(ds);
    // Direct X^T X / n, then check S u_k = lambda_k u_k.
    Matrix m(6, 6);
    for (std::size_t i = 0; i < ds.n; ++i)
        for (std::size_t a = 0; a < 6; ++a)
            for (std::size_t b = 0; b < 6; ++b) m(a, b) += ds.x(i, a) * ds.x(i, b) / 100.0;
    for (std::size_t k = 0; k < 6; ++k) {
        for (std::size_t a = 0; a < 6; ++a) {
            double mu = 0.0;
            for (std::size_t b = 0; b < 6; ++b) mu += m(a, b) * s.basis(b, k);
            EXPECT_NEAR(mu, s.eigenvalues[k] * s.basis(a, k), 1e-10);
        }
    }
    EXPECT_TRUE(std::is_sorted(s.eigenvalues.rbegin(), s.eigenvalues.rend()));
}

TEST(MakeDataset, ValidatesLabels) {
    EXPECT_THROW(make_dataset(Matrix(2, 2), {0, 5}, 3), InvalidInput);
    EXPECT_THROW(make_dataset(Matrix(2, 2), {0}, 3), InvalidInput);
    const Dataset ds = make_dataset(Matrix{{1, 2}, {3, 4}}, {0, 2}, 3);
    EXPECT_EQ(ds.onehot(1, 2), 1.0);
}

TEST(DatasetCsv, HeaderAndRows) {
    const Dataset ds = gen_gaussian_mixture(6, 2, 2, 1.0, 1);
    std::ostringstream os;
    write_dataset_csv(os, ds);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "f0,f1,label");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 6);
}
