/*
 * Copyright 2026 The patprune Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#include <gtest/gtest.h>

#include "pat/rng.hpp"
#include "pat/stability.hpp"

namespace pat {
namespace {

StructureVector sv(std::vector<int> counts, int epoch = 0) {
    StructureVector s;
    s.counts = std::move(counts);
    s.epoch = epoch;
    for (int c : s.counts) s.k += c;
    return s;
}

TEST(TopK, HandCases) {
    const ScoreMap s = {{{0, 0}, 0.9}, {{0, 1}, 0.1}, {{1, 0}, 0.5}, {{1, 1}, 0.4}};
    const std::vector<int> w = {2, 2};
    EXPECT_EQ(top_k_structure(s, 2, w).counts, (std::vector<int>{1, 1}));
    EXPECT_EQ(top_k_structure(s, 4, w).counts, w);
    EXPECT_EQ(top_k_structure(s, 0, w).counts, (std::vector<int>{0, 0}));
    EXPECT_THROW(top_k_structure(s, 5, w), UsageError);
}

TEST(TopK, TiesGoToTheSmallerNeuronId) {
    const ScoreMap s = {{{0, 0}, 0.5}, {{1, 0}, 0.5}, {{1, 1}, 0.5}};
    EXPECT_EQ(top_k_structure(s, 1, {1, 2}).counts, (std::vector<int>{1, 0}));
    EXPECT_EQ(top_k_structure(s, 2, {1, 2}).counts, (std::vector<int>{1, 1}));
}

TEST(LayerDistance, HandValues) {
    EXPECT_EQ(layer_distance(10, 10), 0.0);
    EXPECT_EQ(layer_distance(10, 30), 0.5);
    EXPECT_EQ(layer_distance(0, 8), 1.0);
    EXPECT_EQ(layer_distance(0, 0), 0.0);
    EXPECT_THROW(layer_distance(-1, 2), UsageError);
}

TEST(LayerDistance, BoundedAndSymmetric) {
    for (int a = 0; a < 40; ++a)
        for (int b = 0; b < 40; ++b) {
            const double d = layer_distance(a, b);
            EXPECT_GE(d, 0.0);
            EXPECT_LE(d, 1.0);
            EXPECT_EQ(d, layer_distance(b, a));
        }
}

TEST(Similarity, HandValues) {
    EXPECT_EQ(structure_similarity(sv({10, 30}), sv({10, 30})), 1.0);
    EXPECT_EQ(structure_similarity(sv({10, 30}), sv({30, 10})), 0.5);
    EXPECT_EQ(structure_similarity(sv({8, 0}), sv({0, 8})), 0.0);
    EXPECT_THROW(structure_similarity(sv({1, 2}), sv({1, 2, 3})), UsageError);
}

TEST(Similarity, RandomizedBoundsAndSymmetry) {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t L = 1 + uniform_index(rng, 6);
        std::vector<int> a(L), b(L);
        for (std::size_t l = 0; l < L; ++l) {
            a[l] = static_cast<int>(uniform_index(rng, 20));
            b[l] = static_cast<int>(uniform_index(rng, 20));
        }
        const double ab = structure_similarity(sv(a), sv(b));
        EXPECT_GE(ab, 0.0);
        EXPECT_LE(ab, 1.0);
        EXPECT_EQ(ab, structure_similarity(sv(b), sv(a)));
        EXPECT_EQ(structure_similarity(sv(a), sv(a)), 1.0);
    }
}

TEST(Epi, ConstantHistoryGivesOne) {
    StabilityHistory h(5);
    h.record(sv({4, 6}, 0));
    for (int t = 1; t < 12; ++t) EXPECT_EQ(epi(h, sv({4, 6}, t)).value, 1.0);
}

TEST(Epi, MeanOverTheWindow) {
    // d(9, 11) = 0.1 and d(9, 6) = 0.2, so Psi is 0.9 and 0.8.
    StabilityHistory h(2);
    h.record(sv({6}, 0));
    h.record(sv({11}, 1));
    const auto r = epi(h, sv({9}, 2));
    ASSERT_EQ(r.psi.size(), 2u);
    EXPECT_NEAR(r.psi[0], 0.9, 1e-15);
    EXPECT_NEAR(r.psi[1], 0.8, 1e-15);
    EXPECT_NEAR(r.value, 0.85, 1e-15);
    EXPECT_FALSE(r.partial_window);
    EXPECT_EQ(h.epi_at(2), r.value);
}

TEST(Epi, PartialWindowIsFlagged) {
    StabilityHistory h(5);
    h.record(sv({1, 3}, 0));
    h.record(sv({2, 2}, 1));
    h.record(sv({3, 1}, 2));
    const auto r = epi(h, sv({2, 2}, 3));
    EXPECT_TRUE(r.partial_window);
    EXPECT_EQ(r.psi.size(), 3u);
    const double expect = (1.0 + 2.0 * (1.0 - (1.0 / 5 + 1.0 / 3) / 2)) / 3;
    EXPECT_NEAR(r.value, expect, 1e-15);
    EXPECT_THROW(epi(h, sv({2, 2}, 3)), UsageError);  // epochs must increase
}

TEST(Epi, UndefinedWithoutHistory) {
    StabilityHistory h(3);
    EXPECT_THROW(epi(h, sv({1})), UsageError);
}

StabilityHistory with_epis(const std::vector<double>& values, int r, int w_mono, double tau) {
    StabilityHistory h(r, w_mono, tau);
    for (std::size_t i = 0; i < values.size(); ++i) h.record_epi(static_cast<int>(i) + 1, EpiResult{values[i], {}, false, false});
    return h;
}

TEST(ShouldPrune, ThresholdAndMonotoneHistory) {
    const auto h = with_epis({0.90, 0.93, 0.95, 0.96, 0.97, 0.985}, 1, 5, 0.983);
    EXPECT_TRUE(should_prune(h, 6));
    EXPECT_FALSE(should_prune(h, 5));  // below tau
    const auto dip = with_epis({0.90, 0.93, 0.95, 0.995, 0.97, 0.99}, 1, 5, 0.983);
    EXPECT_FALSE(should_prune(dip, 6));  // EPI_{t-2} = 0.995 > EPI_t
    const auto grad = with_epis({0.90, 0.91, 0.92, 0.93, 0.94, 0.95}, 1, 5, 0.944);
    EXPECT_TRUE(should_prune(grad, 6));
}

TEST(ShouldPrune, NeedsFullWindows) {
    const auto h = with_epis(std::vector<double>(20, 1.0), 5, 5, 0.0);
    for (int t = 1; t < 10; ++t) EXPECT_FALSE(should_prune(h, t)) << t;
    EXPECT_TRUE(should_prune(h, 10));
}

TEST(Rank, IdenticalAndReversed) {
    const ScoreMap a = {{{0, 0}, 1}, {{0, 1}, 2}, {{0, 2}, 3}, {{0, 3}, 4}};
    ScoreMap rev = a;
    for (auto& [n, s] : rev) s = -s;
    for (auto m : {RankMethod::spearman, RankMethod::kendall}) {
        EXPECT_NEAR(rank_correlation(a, a, m), 1.0, 1e-15);
        EXPECT_NEAR(rank_correlation(a, rev, m), -1.0, 1e-15);
    }
}

ScoreMap map_of(const std::vector<double>& v) {
    ScoreMap m;
    for (std::size_t i = 0; i < v.size(); ++i) m[{0, static_cast<int>(i)}] = v[i];
    return m;
}

// Reference values from scipy.stats.spearmanr / kendalltau (tau-b).
TEST(Rank, ReferenceValuesWithTies) {
    struct Case {
        std::vector<double> a, b;
        double spearman, kendall;
    };
    const Case cases[] = {
        {{1, 2, 3, 4}, {1, 3, 2, 4}, 0.8, 4.0 / 6.0},
        {{1, 2, 2, 3, 5}, {2, 1, 4, 4, 6}, 0.7631578947368421, 0.6666666666666666},
        {{0.3, 0.1, 0.1, 0.9, 0.5, 0.5}, {1, 1, 2, 3, 2, 0}, 0.3181818181818181, 0.23076923076923078},
    };
    for (const auto& c : cases) {
        EXPECT_NEAR(rank_correlation(map_of(c.a), map_of(c.b), RankMethod::spearman), c.spearman, 1e-12);
        EXPECT_NEAR(rank_correlation(map_of(c.a), map_of(c.b), RankMethod::kendall), c.kendall, 1e-12);
    }
}

TEST(Rank, DegenerateAndMismatched) {
    EXPECT_EQ(rank_correlation(map_of({1, 1, 1}), map_of({1, 2, 3}), RankMethod::spearman), 0.0);
    EXPECT_EQ(rank_correlation(map_of({1, 1, 1}), map_of({1, 2, 3}), RankMethod::kendall), 0.0);
    EXPECT_THROW(rank_correlation(map_of({1, 2}), map_of({1, 2, 3}), RankMethod::kendall), UsageError);
    ScoreMap other = {{{1, 0}, 1}, {{1, 1}, 2}};
    EXPECT_THROW(rank_correlation(map_of({1, 2}), other, RankMethod::spearman), UsageError);
}

}  // namespace
}  // namespace pat
