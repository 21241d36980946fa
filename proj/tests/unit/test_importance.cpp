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

#include <cmath>
#include <vector>

#include "fixtures.hpp"
#include "pat/importance.hpp"

namespace pat {
namespace {

using L = LayerSpec;

TEST(Magnitude, HandValues) {
    const std::vector<double> zeros(7, 0.0);
    EXPECT_EQ(magnitude_score(std::span<const double>(zeros)), 0.0);
    const std::vector<double> w = {3.0, 4.0};
    EXPECT_NEAR(magnitude_score(std::span<const double>(w)), 5.0 / std::sqrt(2.0), 1e-12);
}

TEST(Magnitude, UniformTensorScoresItsEntry) {
    for (int P : {1, 4, 9, 100})
        for (double c : {-2.5, 0.3, 7.0}) {
            const std::vector<double> w(static_cast<std::size_t>(P), c);
            EXPECT_NEAR(magnitude_score(std::span<const double>(w)), std::abs(c), 1e-12);
        }
}

TEST(Magnitude, ScalesLinearlyAndIgnoresSign) {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> w(12);
        for (auto& v : w) v = uniform(rng, -1.0, 1.0);
        const double base = magnitude_score(std::span<const double>(w));
        std::vector<double> scaled = w, flipped = w;
        for (auto& v : scaled) v *= 3.0;
        for (auto& v : flipped) v = -v;
        EXPECT_NEAR(magnitude_score(std::span<const double>(scaled)), 3.0 * base, 1e-12);
        EXPECT_NEAR(magnitude_score(std::span<const double>(flipped)), base, 1e-12);
        // Duplicating the tensor leaves the normalized score unchanged.
        std::vector<double> twice = w;
        twice.insert(twice.end(), w.begin(), w.end());
        EXPECT_NEAR(magnitude_score(std::span<const double>(twice)), base, 1e-12);
    }
}

TEST(Taylor, HandValues) {
    const std::vector<double> zero = {0.0, 0.0};
    const std::vector<double> w1 = {1.0, 2.0}, g1 = {0.5, -0.25};
    const std::vector<double> w2 = {1.0, 1.0}, g2 = {1.0, 1.0};
    EXPECT_EQ(taylor_score(std::span<const double>(w1), std::span<const double>(zero)), 0.0);
    EXPECT_EQ(taylor_score(std::span<const double>(w1), std::span<const double>(g1)), 0.0);
    EXPECT_EQ(taylor_score(std::span<const double>(w2), std::span<const double>(g2)), 2.0);
    EXPECT_THROW(taylor_score(std::span<const double>(w1), std::span<const double>()), UsageError);
}

TEST(BatchnormTaylor, HandValues) {
    EXPECT_EQ(bn_taylor_score(1.0, 0.0, 0.0, 0.0), 0.0);
    EXPECT_EQ(bn_taylor_score(2.0, 1.0, 0.5, -1.0), 0.0);
    EXPECT_EQ(bn_taylor_score(1.0, 0.5, 1.0, 2.0), 2.0);
}

TEST(BatchnormTaylor, RequiresAFollowingBatchnorm) {
    const auto net = build_network({L::dense(4, 3), L::relu(), L::dense(3, 2)}, {4, 1, 1}, 1);
    EXPECT_THROW(bn_taylor_score(net, {0, 0}), UsageError);
}

// Dot product over the raw buffers, written without the library's span
// helpers, as an independent oracle for the network-level Taylor score.
TEST(Taylor, NetworkScoreMatchesRawDotProduct) {
    auto net = build_network<double>({L::conv2d(2, 3, 3, 1, 1), L::relu(), L::conv2d(3, 4, 3, 2, 1),
                                      L::relu(), L::avgpool_global(), L::dense(4, 3)},
                                     {2, 5, 5}, 4);
    const auto pass = forward(net, testing::random_batch<double>(5, {2, 5, 5}, 4));
    backward(net, pass, testing::random_labels(5, 3, 4));
    for (int u = 0; u < net.unit_count(); ++u) {
        const auto& layer = net.layers()[static_cast<std::size_t>(net.unit(u).layer)];
        const auto& s = layer.spec;
        const int P = s.in_channels * s.kernel * s.kernel;
        for (int c = 0; c < s.out_channels; ++c) {
            double dot = 0.0;
            for (int i = 0; i < P; ++i) {
                const auto k = static_cast<std::size_t>(c * P + i);
                dot += layer.weight.value[k] * layer.weight.grad[k];
            }
            dot += layer.bias.value[static_cast<std::size_t>(c)] * layer.bias.grad[static_cast<std::size_t>(c)];
            EXPECT_NEAR(neuron_score(net, {u, c}, ScoreKind::taylor), std::abs(dot), 1e-12);
        }
    }
}

// The Taylor score is the slope of the loss along the path that shrinks a
// neuron to zero: |dL/ds| at s=1 for w -> s*w.
TEST(Taylor, EqualsDirectionalDerivativeOfShrinkingANeuron) {
    auto net = build_network<double>({L::dense(6, 5), L::relu(), L::dense(5, 3)}, {6, 1, 1}, 8);
    const auto x = testing::random_batch<double>(6, {6, 1, 1}, 8);
    const auto y = testing::random_labels(6, 3, 8);
    const auto pass = forward(net, x);
    backward(net, pass, y);
    ScoreMap analytic;
    for (int c = 0; c < 5; ++c) analytic[{0, c}] = neuron_score(net, {0, c}, ScoreKind::taylor);

    auto loss_scaled = [&](int c, double s) {
        auto copy = net;
        auto& l = copy.layers()[0];
        for (int i = 0; i < 6; ++i) l.weight.value[static_cast<std::size_t>(c * 6 + i)] *= s;
        l.bias.value[static_cast<std::size_t>(c)] *= s;
        copy.bump_version();
        return cross_entropy(forward(copy, x).logits(), std::span<const int>(y));
    };
    const double h = 1e-6;
    for (int c = 0; c < 5; ++c) {
        const double slope = (loss_scaled(c, 1 + h) - loss_scaled(c, 1 - h)) / (2 * h);
        EXPECT_NEAR(analytic.at(NeuronId{0, c}), std::abs(slope), 1e-6);
    }
}

TEST(ImportanceTable, AveragesBatches) {
    auto net = build_network({L::dense(4, 3), L::relu(), L::dense(3, 2)}, {4, 1, 1}, 1);
    ImportanceTable t(Criterion::magnitude);
    auto& w = net.layers()[0].weight.value;
    std::fill(w.begin(), w.end(), 1.0f);
    t.accumulate(net);
    EXPECT_EQ(t.average().at({0, 0}), 1.0);
    std::fill(w.begin(), w.end(), 3.0f);
    t.accumulate(net);
    EXPECT_EQ(t.average().at({0, 1}), 2.0);
    EXPECT_EQ(t.batches(), 2);
    t.reset();
    EXPECT_THROW(t.average(), UsageError);
}

TEST(ImportanceTable, OnlyRemainingNeuronsAreScored) {
    auto net = build_network({L::dense(4, 5), L::relu(), L::dense(5, 2)}, {4, 1, 1}, 1);
    net.set_active({0, 1}, false);
    net.set_active({0, 3}, false);
    ImportanceTable t(Criterion::gradient);
    const auto pass = forward(net, testing::random_batch<float>(3, {4, 1, 1}, 1));
    backward(net, pass, testing::random_labels(3, 2, 1));
    t.accumulate(net);
    std::vector<NeuronId> keys;
    for (const auto& [n, s] : t.average()) keys.push_back(n);
    EXPECT_EQ(keys, (std::vector<NeuronId>{{0, 0}, {0, 2}, {0, 4}}));
}

TEST(ImportanceTable, BatchnormUnitsUseTheBatchnormScore) {
    auto net = build_network({L::dense(4, 3), L::batchnorm(3), L::relu(), L::dense(3, 2)},
                             {4, 1, 1}, 2);
    EXPECT_EQ(score_kind(net, 0, Criterion::gradient), ScoreKind::bn_taylor);
    EXPECT_EQ(score_kind(net, 0, Criterion::magnitude), ScoreKind::magnitude);
    const auto pass = forward(net, testing::random_batch<float>(4, {4, 1, 1}, 2));
    backward(net, pass, testing::random_labels(4, 2, 2));
    ImportanceTable t(Criterion::gradient);
    t.accumulate(net);
    const auto& bn = net.layers()[1];
    for (int c = 0; c < 3; ++c) {
        const auto i = static_cast<std::size_t>(c);
        EXPECT_NEAR(t.average().at({0, c}),
                    std::abs(double(bn.gamma.grad[i]) * bn.gamma.value[i] +
                             double(bn.beta.grad[i]) * bn.beta.value[i]),
                    1e-9);
    }
}

TEST(CostPenalty, SubtractsWeightedCost) {
    CostTable ct;
    ct.cost[{0, 0}] = 0.5;
    ct.cost[{0, 1}] = 0.2;
    ct.lambda = 1.0;
    const ImportanceTable t(Criterion::gradient, ct);
    EXPECT_DOUBLE_EQ(cost_penalized_score(1.0, {0, 0}, t), 0.5);
    // Equal base scores: the costlier neuron ranks lower.
    EXPECT_LT(cost_penalized_score(1.0, {0, 0}, t), cost_penalized_score(1.0, {0, 1}, t));
    EXPECT_THROW(cost_penalized_score(1.0, {1, 0}, t), UsageError);

    ct.lambda = 0.0;
    const ImportanceTable zero(Criterion::gradient, ct);
    EXPECT_EQ(cost_penalized_score(0.731, {0, 0}, zero), 0.731);
    const ImportanceTable none(Criterion::gradient);
    EXPECT_EQ(cost_penalized_score(0.731, {9, 9}, none), 0.731);
    ct.lambda = -1.0;
    EXPECT_THROW(ImportanceTable(Criterion::gradient, ct), ConfigError);
}

TEST(Criterion, ParsesNames) {
    EXPECT_EQ(criterion_from_string("magnitude"), Criterion::magnitude);
    EXPECT_EQ(criterion_from_string("gradient"), Criterion::gradient);
    EXPECT_THROW(criterion_from_string("hessian"), ConfigError);
}

}  // namespace
}  // namespace pat
