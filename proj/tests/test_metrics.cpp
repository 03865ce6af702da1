#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "cehr/folds.hpp"
#include "cehr/metrics.hpp"
#include "metric_oracles.hpp"

using namespace cehr;
using namespace cehr::testing;

namespace {

// Scores drawn from a small grid so that ties are common.
std::pair<std::vector<double>, std::vector<int>> random_instance(std::mt19937_64& rng, std::size_t n, bool coarse) {
    std::uniform_int_distribution<int> grid(0, 9);
    std::normal_distribution<double> normal(0, 1);
    std::vector<double> s(n);
    std::vector<int> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = static_cast<int>(rng() % 2);
        s[i] = coarse ? grid(rng) / 10.0 : normal(rng) + 0.7 * y[i];
    }
    y[0] = 1;
    y[1] = 0;
    return {s, y};
}

}  // namespace

TEST(RocAuc, SpecExamples) {
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}), 0.75);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{1, 2, 3, 4}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(std::vector<double>{0.3, 0.3, 0.3}, std::vector<int>{0, 1, 1}), 0.5);
    EXPECT_THROW(roc_auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(RocAuc, MatchesBruteForceOnRandomInstances) {
    std::mt19937_64 rng(1);
    for (int k = 0; k < 500; ++k) {
        const auto [s, y] = random_instance(rng, 2 + rng() % 199, k % 2 == 0);
        ASSERT_NEAR(roc_auc(s, y), brute_force_auc(s, y), 1e-12) << k;
    }
}

TEST(PrAuc, SpecExamples) {
    EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    // all tied -> prevalence
    EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>(10, 0.5), std::vector<int>{1, 0, 0, 1, 0, 0, 0, 1, 0, 0}), 0.3);
    EXPECT_THROW(pr_auc(std::vector<double>{1, 2}, std::vector<int>{0, 0}), std::invalid_argument);
}

TEST(PrAuc, SixPointFixture) {
    // Descending: .9(1) .8(0) .7(1) .6(1) .5(0) .4(0)
    // recall steps 1/3 at precision 1, 2/3, 3/4 -> (1 + 2/3 + 3/4) / 3
    const std::vector<double> s{0.4, 0.7, 0.9, 0.5, 0.6, 0.8};
    const std::vector<int> y{0, 1, 1, 0, 1, 0};
    EXPECT_NEAR(pr_auc(s, y), (1.0 + 2.0 / 3.0 + 0.75) / 3.0, 1e-15);
    EXPECT_NEAR(pr_auc(s, y), threshold_enumeration_pr_auc(s, y), 1e-15);
}

TEST(PrAuc, MatchesThresholdEnumerationOnRandomInstances) {
    std::mt19937_64 rng(2);
    for (int k = 0; k < 500; ++k) {
        const auto [s, y] = random_instance(rng, 2 + rng() % 199, k % 2 == 0);
        ASSERT_NEAR(pr_auc(s, y), threshold_enumeration_pr_auc(s, y), 1e-12) << k;
    }
}

TEST(Pca, AntipodalPoints) {
    const auto p = pca_2d(std::vector<double>{3, 4, -3, -4}, 2, 2);
    EXPECT_NEAR(std::abs(p.coords[0]), 5.0, 1e-12);
    EXPECT_NEAR(p.coords[0], -p.coords[2], 1e-12);
    EXPECT_NEAR(p.coords[1], 0.0, 1e-12);
    EXPECT_NEAR(p.coords[3], 0.0, 1e-12);
}

TEST(Pca, CollinearPointsHaveNoSecondCoordinate) {
    std::vector<double> rows;
    for (int i = 0; i < 7; ++i) {
        const double t = i * 0.37 - 1.0;
        rows.insert(rows.end(), {1 + 2 * t, -t, 0.5 + 3 * t});
    }
    const auto p = pca_2d(rows, 7, 3);
    for (int i = 0; i < 7; ++i) EXPECT_LE(std::abs(p.coords[2 * i + 1]), 1e-8);
}

TEST(Pca, MatchesJacobiOnFiveByThreeFixture) {
    const std::vector<double> rows{2.0, 0.5, -1.0, 1.0, 1.5, 0.0, -0.5, -1.0, 2.0, 3.0, 0.0, 1.0, -1.5, 2.5, -0.5};
    const auto p = pca_2d(rows, 5, 3);
    const auto [values, vectors] = jacobi_eigen(covariance(rows, 5, 3), 3);
    for (std::size_t k = 0; k < 2; ++k) {
        EXPECT_NEAR(p.eigenvalues[k], values[k], 1e-10);
        for (std::size_t r = 0; r < 5; ++r) {
            double expected = 0;
            for (std::size_t c = 0; c < 3; ++c) {
                double mean = 0;
                for (std::size_t q = 0; q < 5; ++q) mean += rows[q * 3 + c] / 5.0;
                expected += (rows[r * 3 + c] - mean) * vectors[k][c];
            }
            EXPECT_NEAR(std::abs(p.coords[r * 2 + k]), std::abs(expected), 1e-8);
        }
    }
}

TEST(Pca, SignConventionAndPermutationInvariance) {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0, 1);
    const std::size_t n = 20, d = 6;
    std::vector<double> rows(n * d);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = g(rng) * static_cast<double>(1 + i % d);
    const auto a = pca_2d(rows, n, d);
    for (const auto& comp : a.components) {
        const auto first = std::find_if(comp.begin(), comp.end(), [](double x) { return std::abs(x) > 1e-10; });
        EXPECT_GT(*first, 0.0);
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = (i * 7) % n;
    std::vector<double> shuffled;
    for (auto r : perm) shuffled.insert(shuffled.end(), rows.begin() + r * d, rows.begin() + (r + 1) * d);
    const auto b = pca_2d(shuffled, n, d);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < 2; ++k) EXPECT_NEAR(b.coords[i * 2 + k], a.coords[perm[i] * 2 + k], 1e-8);
    EXPECT_THROW(pca_2d(std::vector<double>{1, 2}, 1, 2), std::invalid_argument);
}

TEST(MeanStd, Population) {
    const auto m = mean_std(std::vector<double>{1, 2, 3, 4});
    EXPECT_DOUBLE_EQ(m.mean, 2.5);
    EXPECT_DOUBLE_EQ(m.std, std::sqrt(1.25));
}

// ---- folds ----------------------------------------------------------------------

TEST(Folds, HundredExamplesSplit751015) {
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i) y[i] = i % 3 == 0;
    const auto plan = make_folds(y, 5);
    ASSERT_EQ(plan.folds.size(), 4u);
    for (const auto& f : plan.folds) {
        EXPECT_EQ(f.train.size(), 75u);
        EXPECT_EQ(f.val.size(), 10u);
        EXPECT_EQ(f.test.size(), 15u);
    }
}

TEST(Folds, PartitionAndStratifyAcrossSizes) {
    std::mt19937_64 rng(4);
    for (std::size_t n : {20u, 37u, 100u, 211u, 999u}) {
        for (double prevalence : {0.1, 0.3, 0.5}) {
            std::vector<int> y(n);
            for (auto& v : y) v = std::uniform_real_distribution<double>(0, 1)(rng) < prevalence;
            y[0] = y[1] = y[2] = 1;
            y[3] = y[4] = y[5] = 0;
            const double pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
            FoldPlan plan;
            try {
                plan = make_folds(y, n);
            } catch (const std::invalid_argument&) {
                continue;  // too few of a class for this size; covered below
            }
            for (const auto& f : plan.folds) {
                std::vector<int> seen(n, 0);
                for (const auto* s : {&f.train, &f.val, &f.test})
                    for (auto i : *s) ++seen[i];
                EXPECT_TRUE(std::all_of(seen.begin(), seen.end(), [](int c) { return c == 1; }));
                EXPECT_NEAR(static_cast<double>(f.test.size()), 0.15 * n, 1.0);
                EXPECT_NEAR(static_cast<double>(f.val.size()), 0.10 * n, 1.0);
                for (const auto* s : {&f.train, &f.val, &f.test}) {
                    double p = 0;
                    for (auto i : *s) p += y[i];
                    EXPECT_GE(p, 1.0);
                    EXPECT_LT(p, static_cast<double>(s->size()));
                    const double exact = pos / n * static_cast<double>(s->size());
                    if (exact >= 1.0 && exact <= static_cast<double>(s->size()) - 1.0) EXPECT_NEAR(p, exact, 1.0);
                }
            }
        }
    }
}

TEST(Folds, DeterministicAndSeedSensitive) {
    std::vector<int> y(60);
    for (int i = 0; i < 60; ++i) y[i] = i % 4 == 0;
    EXPECT_EQ(make_folds(y, 1).folds[2].test, make_folds(y, 1).folds[2].test);
    EXPECT_NE(make_folds(y, 1).folds[0].test, make_folds(y, 2).folds[0].test);
    EXPECT_NE(make_folds(y, 1).folds[0].test, make_folds(y, 1).folds[1].test);
}

TEST(Folds, Errors) {
    EXPECT_THROW(make_folds(std::vector<int>(19, 1), 1), std::invalid_argument);
    std::vector<int> y(40, 0);
    y[0] = y[1] = 1;
    EXPECT_THROW(make_folds(y, 1), std::invalid_argument);
}

TEST(FewShot, SizesRoundHalfUpWithBothClasses) {
    std::vector<int> y(100);
    for (int i = 0; i < 100; ++i) y[i] = i % 5 == 0;
    const auto fold = make_folds(y, 3).folds[0];
    const auto plan = few_shot_plan(fold, y, kFewShotFractions, 9);
    EXPECT_EQ(plan.at(0.05).size(), 4u);  // 0.05 * 75 = 3.75
    EXPECT_EQ(plan.at(0.10).size(), 8u);  // 7.5
    EXPECT_EQ(plan.at(0.20).size(), 15u);
    EXPECT_EQ(plan.at(0.40).size(), 30u);
    EXPECT_EQ(plan.at(0.80).size(), 60u);
    for (const auto& [f, subset] : plan) {
        int pos = 0;
        for (auto i : subset) pos += y[i];
        EXPECT_GE(pos, 1);
        EXPECT_LT(pos, static_cast<int>(subset.size()));
        for (auto i : subset) EXPECT_TRUE(std::binary_search(fold.train.begin(), fold.train.end(), i));
    }
    EXPECT_EQ(round_half_up(2.5), 3u);
    EXPECT_EQ(round_half_up(2.4999), 2u);
}

TEST(FewShot, NestedSubsets) {
    std::mt19937_64 rng(8);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> y(50 + rng() % 400);
        for (auto& v : y) v = rng() % 7 == 0;
        y[0] = y[1] = y[2] = y[3] = 1;
        const auto fold = make_folds(y, trial).folds[1];
        const auto plan = few_shot_plan(fold, y, kFewShotFractions, trial);
        const std::vector<std::size_t>* prev = nullptr;
        for (const auto& [f, subset] : plan) {
            if (prev) EXPECT_TRUE(std::includes(subset.begin(), subset.end(), prev->begin(), prev->end())) << f;
            prev = &subset;
        }
    }
}

TEST(FewShot, IndependentFlagBreaksNesting) {
    std::vector<int> y(400);
    for (int i = 0; i < 400; ++i) y[i] = i % 2;
    const auto fold = make_folds(y, 1).folds[0];
    const auto a = few_shot_plan(fold, y, kFewShotFractions, 3, false);
    EXPECT_FALSE(std::includes(a.at(0.10).begin(), a.at(0.10).end(), a.at(0.05).begin(), a.at(0.05).end()));
    EXPECT_EQ(a.at(0.05).size(), 15u);
    EXPECT_EQ(a, few_shot_plan(fold, y, kFewShotFractions, 3, false));
}
