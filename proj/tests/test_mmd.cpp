#include <gtest/gtest.h>

#include <cmath>

#include "dapol/kernel_mmd.hpp"
#include "support/oracles.hpp"

using namespace dapol;
using mmd::KernelBank;
using mmd::SampleSet;

namespace {

std::vector<double> v(std::initializer_list<double> xs) { return xs; }

SampleSet set(const oracle::Rows& r) { return SampleSet::from_rows(r); }

}  // namespace

TEST(GaussianKernel, Examples) {
    EXPECT_EQ(mmd::gaussian_kernel(v({3.1, -2}), v({3.1, -2}), 1.0), 1.0);
    EXPECT_NEAR(mmd::gaussian_kernel(v({0, 0}), v({2, 0}), std::sqrt(2.0)), std::exp(-1.0), 1e-15);
    EXPECT_NEAR(mmd::gaussian_kernel(v({0}), v({1}), 1e6), 1.0, 1e-9);
}

TEST(GaussianKernel, Errors) {
    EXPECT_THROW(mmd::gaussian_kernel(v({0, 0}), v({0}), 1.0), invalid_argument);
    EXPECT_THROW(mmd::gaussian_kernel(v({0}), v({0}), 0.0), invalid_argument);
    EXPECT_THROW(mmd::gaussian_kernel(v({0}), v({0}), -1.0), invalid_argument);
}

TEST(GaussianKernel, RangeAndSymmetry) {
    Rng rng(11);
    for (int t = 0; t < 500; ++t) {
        const auto x = oracle::random_rows(rng, 1, 4)[0];
        const auto y = oracle::random_rows(rng, 1, 4)[0];
        const double s = rng.uniform(0.5, 5.0);
        const double k = mmd::gaussian_kernel(x, y, s);
        EXPECT_GT(k, 0.0);
        EXPECT_LE(k, 1.0);
        EXPECT_EQ(k, mmd::gaussian_kernel(y, x, s));
        EXPECT_EQ(mmd::gaussian_kernel(x, x, s), 1.0);
    }
}

TEST(MultiKernel, Examples) {
    const KernelBank two({1.0, 2.0}, {0.5, 0.5});
    EXPECT_NEAR(mmd::multi_kernel(v({4, 1}), v({4, 1}), two), 1.0, 1e-15);
    EXPECT_NEAR(mmd::multi_kernel(v({0}), v({2}), two), 0.5 * std::exp(-2.0) + 0.5 * std::exp(-0.5), 1e-15);
    EXPECT_NEAR(mmd::multi_kernel(v({0}), v({2}), two), 0.370933, 1e-6);
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
        const auto x = oracle::random_rows(rng, 1, 3)[0];
        const auto y = oracle::random_rows(rng, 1, 3)[0];
        EXPECT_NEAR(mmd::multi_kernel(x, y, KernelBank::single(1.7)), mmd::gaussian_kernel(x, y, 1.7), 1e-15);
    }
}

TEST(KernelBank, Invariants) {
    EXPECT_THROW(KernelBank({}, {}), invalid_argument);
    EXPECT_THROW(KernelBank({1.0}, {0.5, 0.5}), invalid_argument);
    EXPECT_THROW(KernelBank({2.0, 1.0}, {0.5, 0.5}), invalid_argument);
    EXPECT_THROW(KernelBank({1.0, 1.0}, {0.5, 0.5}), invalid_argument);
    EXPECT_THROW(KernelBank({0.0, 1.0}, {0.5, 0.5}), invalid_argument);
    EXPECT_THROW(KernelBank({1.0, 2.0}, {-0.5, 1.5}), invalid_argument);
    EXPECT_THROW(KernelBank({1.0, 2.0}, {0.5, 0.6}), invalid_argument);
    EXPECT_NO_THROW(KernelBank({1.0, 2.0}, {0.25, 0.75}));
}

TEST(MedianHeuristic, Examples) {
    EXPECT_EQ(mmd::median_heuristic(set({{0}, {1}, {3}})), 2.0);
    EXPECT_EQ(mmd::median_heuristic(set({{0}, {1}})), 1.0);
    EXPECT_THROW(mmd::median_heuristic(set({{5, 1}, {5, 1}, {5, 1}})), degenerate_sample_error);
    EXPECT_THROW(mmd::median_heuristic(set({{5}})), insufficient_samples_error);
}

TEST(DefaultBank, Examples) {
    // Rows {0, 1, 2, 4}: distances {1, 1, 2, 2, 3, 4}, median 2.
    const auto b = mmd::default_bank(set({{0}, {1}, {2}, {4}}));
    EXPECT_EQ(b.bandwidths(), (std::vector<double>{0.5, 1, 2, 4, 8}));
    for (double w : b.weights()) EXPECT_EQ(w, 0.2);
    const auto one = mmd::default_bank(set({{0, 0}, {1, 0}}));
    EXPECT_EQ(one.bandwidths(), (std::vector<double>{0.25, 0.5, 1, 2, 4}));
    double sum = 0.0;
    for (double w : one.weights()) sum += w;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_THROW(mmd::default_bank(set({{1}, {1}})), degenerate_sample_error);
}

TEST(Mmd2Biased, Examples) {
    Rng rng(5);
    const auto x = oracle::random_rows(rng, 7, 3);
    const auto bank = KernelBank::uniform({0.5, 1.0, 2.0});
    EXPECT_EQ(mmd::mmd2_biased(set(x), set(x), bank), 0.0);
    EXPECT_NEAR(mmd::mmd2_biased(set({{0}}), set({{2}}), KernelBank::single(std::sqrt(2.0))), 2.0 - 2.0 * std::exp(-1.0), 1e-15);
    EXPECT_NEAR(mmd::mmd2_biased(set({{0}}), set({{2}}), KernelBank::single(std::sqrt(2.0))), 1.264241, 1e-6);
    const auto a = oracle::random_rows(rng, 10, 3), b = oracle::random_rows(rng, 10, 3, 0.4);
    EXPECT_NEAR(mmd::mmd2_biased(set(a), set(b), bank),
                oracle::mmd2_double_sum(a, b, bank.bandwidths(), bank.weights(), false), 1e-12);
    EXPECT_THROW(mmd::mmd2_biased(set({{0, 0}}), set({{0}}), bank), invalid_argument);
}

TEST(Mmd2Biased, NonNegativeAndIdentityOnRandomInputs) {
    Rng rng(8);
    for (int t = 0; t < 100; ++t) {
        const auto a = oracle::random_rows(rng, 1 + rng.below(12), 2);
        const auto b = oracle::random_rows(rng, 1 + rng.below(12), 2, rng.uniform(0.0, 0.2));
        const auto bank = KernelBank::uniform({0.3, 1.0, 3.0});
        EXPECT_GE(mmd::mmd2_biased(set(a), set(b), bank), 0.0);
        EXPECT_EQ(mmd::mmd2_biased(set(a), set(a), bank), 0.0);
    }
}

TEST(Mmd2Unbiased, Examples) {
    const oracle::Rows ab{{0.0, 1.0}, {0.5, -0.2}};
    const auto bank = KernelBank::single(0.9);
    const double k = mmd::multi_kernel(ab[0], ab[1], bank);
    EXPECT_NEAR(mmd::mmd2_unbiased(set(ab), set(ab), bank), k - 1.0, 1e-15);
    EXPECT_LE(mmd::mmd2_unbiased(set(ab), set(ab), bank), 0.0);
    EXPECT_THROW(mmd::mmd2_unbiased(set({{1}}), set({{1}, {2}}), bank), insufficient_samples_error);
    EXPECT_THROW(mmd::mmd2_unbiased(set({{1}, {2}}), set({{1}}), bank), insufficient_samples_error);
}

TEST(Mmd2Unbiased, ZeroMeanUnderNull) {
    Rng rng(2024);
    const auto bank = KernelBank::uniform({0.5, 1.0, 2.0});
    constexpr int kTrials = 1000;
    double sum = 0.0, sum2 = 0.0;
    for (int t = 0; t < kTrials; ++t) {
        const double u = mmd::mmd2_unbiased(set(oracle::random_rows(rng, 50, 2)), set(oracle::random_rows(rng, 50, 2)), bank);
        sum += u;
        sum2 += u * u;
    }
    const double mean = sum / kTrials;
    const double se = std::sqrt((sum2 / kTrials - mean * mean) / kTrials);
    EXPECT_LT(std::abs(mean), 3.0 * se);
}

TEST(Mmd2Linear, Examples) {
    const auto bank = KernelBank::single(1.3);
    const std::vector<double> a{0.2, -1.0}, b{1.0, 0.5};
    EXPECT_NEAR(mmd::mmd2_linear(set({a, a}), set({b, b}), bank), 2.0 - 2.0 * mmd::multi_kernel(a, b, bank), 1e-15);
    Rng rng(4);
    const auto x = oracle::random_rows(rng, 6, 2);
    EXPECT_EQ(mmd::mmd2_linear(set(x), set(x), bank), 0.0);

    const oracle::Rows xs{{0}, {1}, {3}, {4}}, xt{{0.5}, {2}, {2.5}, {6}};
    auto k = [&](double p, double q) { return std::exp(-(p - q) * (p - q) / (2.0 * 1.3 * 1.3)); };
    const double h1 = k(0, 1) + k(0.5, 2) - k(0, 2) - k(1, 0.5);
    const double h2 = k(3, 4) + k(2.5, 6) - k(3, 6) - k(4, 2.5);
    EXPECT_NEAR(mmd::mmd2_linear(set(xs), set(xt), bank), 0.5 * (h1 + h2), 1e-15);
    EXPECT_THROW(mmd::mmd2_linear(set({{1}}), set({{1}, {2}}), bank), insufficient_samples_error);
}

TEST(MmdEstimators, LinearInKernelWeights) {
    Rng rng(12);
    const std::vector<double> sig{0.4, 1.0, 2.5};
    const std::vector<double> beta{0.2, 0.5, 0.3};
    const KernelBank bank(sig, beta);
    for (int t = 0; t < 20; ++t) {
        const auto a = set(oracle::random_rows(rng, 9, 3)), b = set(oracle::random_rows(rng, 11, 3, 0.3));
        double vb = 0.0, vu = 0.0, vl = 0.0;
        for (std::size_t u = 0; u < sig.size(); ++u) {
            const auto s = KernelBank::single(sig[u]);
            vb += beta[u] * mmd::mmd2_biased(a, b, s);
            vu += beta[u] * mmd::mmd2_unbiased(a, b, s);
            vl += beta[u] * mmd::mmd2_linear(a, b, s);
        }
        EXPECT_NEAR(mmd::mmd2_biased(a, b, bank), vb, 1e-12);
        EXPECT_NEAR(mmd::mmd2_unbiased(a, b, bank), vu, 1e-12);
        EXPECT_NEAR(mmd::mmd2_linear(a, b, bank), vl, 1e-12);
    }
}

TEST(MmdEstimators, RowPermutationInvariantBitForBit) {
    Rng rng(13);
    const auto bank = KernelBank::uniform({0.5, 1.0, 2.0});
    for (int t = 0; t < 20; ++t) {
        auto a = oracle::random_rows(rng, 10, 3);
        auto b = oracle::random_rows(rng, 8, 3, 0.5);
        const double vb = mmd::mmd2_biased(set(a), set(b), bank);
        const double vu = mmd::mmd2_unbiased(set(a), set(b), bank);
        rng.shuffle(a);
        rng.shuffle(b);
        EXPECT_EQ(mmd::mmd2_biased(set(a), set(b), bank), vb);
        EXPECT_EQ(mmd::mmd2_unbiased(set(a), set(b), bank), vu);
    }
}

TEST(Mmd2BiasedGrad, Examples) {
    const auto g = mmd::mmd2_biased_grad(set({{0}}), set({{2}}), KernelBank::single(std::sqrt(2.0)));
    EXPECT_NEAR(g.source(0, 0), -2.0 * std::exp(-1.0), 1e-15);
    EXPECT_NEAR(g.source(0, 0), -0.735759, 1e-6);
    EXPECT_NEAR(g.target(0, 0), 2.0 * std::exp(-1.0), 1e-15);

    Rng rng(21);
    const auto x = oracle::random_rows(rng, 6, 3);
    const auto same = mmd::mmd2_biased_grad(set(x), set(x), KernelBank::uniform({0.5, 1.0}));
    for (std::size_t i = 0; i < 6; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(same.source(i, j) + same.target(i, j), 0.0, 1e-15);
}

TEST(Mmd2BiasedGrad, MatchesCentralDifferences) {
    Rng rng(22);
    const auto bank = KernelBank::uniform({0.5, 1.0, 2.0, 4.0});
    auto a = oracle::random_rows(rng, 8, 3), b = oracle::random_rows(rng, 8, 3, 0.7);
    const auto g = mmd::mmd2_biased_grad(set(a), set(b), bank);
    std::vector<double> flat;
    for (auto& r : a) flat.insert(flat.end(), r.begin(), r.end());
    for (auto& r : b) flat.insert(flat.end(), r.begin(), r.end());
    auto rebuild = [&]() {
        oracle::Rows aa(8, std::vector<double>(3)), bb(8, std::vector<double>(3));
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 3; ++j) {
                aa[i][j] = flat[i * 3 + j];
                bb[i][j] = flat[24 + i * 3 + j];
            }
        return oracle::mmd2_double_sum(aa, bb, bank.bandwidths(), bank.weights(), false);
    };
    const auto fd = oracle::central_diff(flat, rebuild);
    std::vector<double> an(g.source.data().begin(), g.source.data().end());
    an.insert(an.end(), g.target.data().begin(), g.target.data().end());
    EXPECT_LT(oracle::max_rel_error(an, fd), 1e-4);
}

TEST(PermutationTest, GrossShiftRejects) {
    Rng rng(31);
    const auto xs = oracle::random_rows(rng, 100, 1);
    auto xt = xs;
    for (auto& r : xt) r[0] += 2.0;
    const auto a = set(xs), b = set(xt);
    const auto bank = mmd::default_bank(mmd::pool(a, b));
    EXPECT_LE(mmd::permutation_test(a, b, bank, 199, 7), 0.01);
}

TEST(PermutationTest, DeterministicAndBounded) {
    Rng rng(32);
    const auto a = set(oracle::random_rows(rng, 15, 2)), b = set(oracle::random_rows(rng, 15, 2));
    const auto bank = KernelBank::single(1.0);
    const double p = mmd::permutation_test(a, b, bank, 99, 123);
    EXPECT_EQ(p, mmd::permutation_test(a, b, bank, 99, 123));
    EXPECT_GE(p, 1.0 / 100.0);
    EXPECT_LE(p, 1.0);
    EXPECT_THROW(mmd::permutation_test(a, b, bank, 10, 1), invalid_argument);
    EXPECT_THROW(mmd::permutation_test(set({{1, 1}}), b, bank, 99, 1), insufficient_samples_error);
}

TEST(HeuristicKernelWeights, Branches) {
    EXPECT_EQ(mmd::weights_from_discrepancies({-0.1, 0.0, -2.0}), (std::vector<double>(3, 1.0 / 3.0)));
    EXPECT_EQ(mmd::weights_from_discrepancies({0.0, 0.3, 0.0}), (std::vector<double>{0.0, 1.0, 0.0}));

    // Identical samples: every per-kernel unbiased MMD^2 is negative, so uniform weights.
    const auto x = set({{0.0}, {1.0}, {2.5}});
    const auto uni = mmd::heuristic_kernel_weights(x, x, {0.5, 1.0, 2.0});
    EXPECT_EQ(uni.weights(), (std::vector<double>(3, 1.0 / 3.0)));
}

TEST(HeuristicKernelWeights, NoWorseThanUniformOnShiftedSets) {
    Rng rng(33);
    const std::vector<double> sig{0.25, 0.5, 1.0, 2.0, 4.0};
    for (int t = 0; t < 10; ++t) {
        const auto a = set(oracle::random_rows(rng, 30, 3)), b = set(oracle::random_rows(rng, 30, 3, 0.5));
        const auto bank = mmd::heuristic_kernel_weights(a, b, sig);
        EXPECT_EQ(bank.bandwidths(), sig);
        double sum = 0.0, weighted = 0.0, uniform = 0.0;
        for (std::size_t u = 0; u < sig.size(); ++u) {
            const double d = mmd::mmd2_unbiased(a, b, KernelBank::single(sig[u]));
            sum += bank.weights()[u];
            weighted += bank.weights()[u] * d;
            uniform += d / static_cast<double>(sig.size());
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
        EXPECT_GE(weighted, uniform);
    }
}
