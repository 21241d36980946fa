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
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>

#include "pat/errors.hpp"
#include "pat/network.hpp"

namespace pat {

/// User-facing ranking criterion. `gradient` resolves per layer to the
/// weight Taylor score, or to the batchnorm Taylor score when a batchnorm
/// follows the layer.
enum class Criterion { magnitude, gradient };

enum class ScoreKind { magnitude, taylor, bn_taylor };

constexpr std::string_view to_string(Criterion c) noexcept {
    return c == Criterion::magnitude ? "magnitude" : "gradient";
}
constexpr std::string_view to_string(ScoreKind k) noexcept {
    switch (k) {
        case ScoreKind::magnitude: return "magnitude";
        case ScoreKind::taylor: return "taylor";
        case ScoreKind::bn_taylor: return "bn_taylor";
    }
    return "?";
}
inline Criterion criterion_from_string(std::string_view s) {
    if (s == "magnitude") return Criterion::magnitude;
    if (s == "gradient" || s == "taylor") return Criterion::gradient;
    throw ConfigError("unknown criterion '" + std::string(s) + "' (expected magnitude|gradient)");
}

using ScoreMap = std::map<NeuronId, double>;

/// ||w||_2 / sqrt(P), P being the number of parameters of the neuron.
template <typename T>
double magnitude_score(std::span<const T> weights) {
    if (weights.empty()) throw UsageError("magnitude_score: empty weight vector");
    double sq = 0.0;
    for (T w : weights) sq += static_cast<double>(w) * static_cast<double>(w);
    return std::sqrt(sq / static_cast<double>(weights.size()));
}

/// |sum_w g_w * w| over the neuron's parameters.
template <typename T>
double taylor_score(std::span<const T> weights, std::span<const T> grads) {
    if (grads.empty() || grads.size() != weights.size())
        throw UsageError("taylor_score: gradient buffer missing or mis-sized");
    double dot = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i)
        dot += static_cast<double>(grads[i]) * static_cast<double>(weights[i]);
    return std::abs(dot);
}

/// |g_gamma * gamma + g_beta * beta| for one batchnorm channel.
inline double bn_taylor_score(double gamma, double beta, double g_gamma, double g_beta) {
    return std::abs(g_gamma * gamma + g_beta * beta);
}

template <std::floating_point T>
ScoreKind score_kind(const BasicNetwork<T>& net, int unit, Criterion c) {
    if (c == Criterion::magnitude) return ScoreKind::magnitude;
    return net.unit(unit).batchnorm ? ScoreKind::bn_taylor : ScoreKind::taylor;
}

/// Batchnorm Taylor score of a channel read from the network buffers.
template <std::floating_point T>
double bn_taylor_score(const BasicNetwork<T>& net, NeuronId n) {
    const auto& u = net.unit(n.layer);
    if (!u.batchnorm)
        throw UsageError("bn_taylor_score: prunable layer " + std::to_string(n.layer) +
                         " is not followed by a batchnorm layer");
    const auto& bn = net.layers()[static_cast<std::size_t>(*u.batchnorm)];
    const auto c = static_cast<std::size_t>(n.channel);
    return bn_taylor_score(bn.gamma.value[c], bn.beta.value[c], bn.gamma.grad[c], bn.beta.grad[c]);
}

/// Current score of one neuron under `kind`. The weight Taylor score also
/// folds in the neuron's bias, so it is the first-order loss change of
/// zeroing the neuron's pre-activation.
template <std::floating_point T>
double neuron_score(const BasicNetwork<T>& net, NeuronId n, ScoreKind kind) {
    switch (kind) {
        case ScoreKind::magnitude:
            return magnitude_score(net.neuron_weights(n));
        case ScoreKind::taylor: {
            const auto w = net.neuron_weights(n);
            const auto g = net.neuron_weight_grads(n);
            if (g.size() != w.size()) throw UsageError("taylor_score: gradient buffer missing");
            double dot = 0.0;
            for (std::size_t i = 0; i < w.size(); ++i)
                dot += static_cast<double>(g[i]) * static_cast<double>(w[i]);
            const auto& layer = net.layers()[static_cast<std::size_t>(net.unit(n.layer).layer)];
            if (!layer.bias.empty()) {
                const auto c = static_cast<std::size_t>(n.channel);
                dot += static_cast<double>(layer.bias.grad[c]) * layer.bias.value[c];
            }
            return std::abs(dot);
        }
        case ScoreKind::bn_taylor:
            return bn_taylor_score(net, n);
    }
    return 0.0;
}

/// Relative per-neuron costs for latency-aware ranking, c_n in [0, 1].
struct CostTable {
    std::map<NeuronId, double> cost;
    double lambda = 0.0;
};

/// Running per-neuron score sums since the last reset.
class ImportanceTable {
public:
    struct Entry {
        double sum = 0.0;
        long count = 0;
    };

    explicit ImportanceTable(Criterion criterion = Criterion::gradient,
                             std::optional<CostTable> costs = std::nullopt)
        : criterion_(criterion), costs_(std::move(costs)) {
        if (costs_ && !(costs_->lambda >= 0.0))
            throw ConfigError("cost penalty weight must be >= 0");
    }

    Criterion criterion() const noexcept { return criterion_; }
    const std::optional<CostTable>& costs() const noexcept { return costs_; }
    const std::map<NeuronId, Entry>& entries() const noexcept { return entries_; }
    long batches() const noexcept { return batches_; }

    /// Add this batch's score for every unpruned neuron.
    template <std::floating_point T>
    void accumulate(const BasicNetwork<T>& net) {
        for (int u = 0; u < net.unit_count(); ++u) {
            const ScoreKind kind = score_kind(net, u, criterion_);
            for (int c = 0; c < net.unit(u).channels; ++c) {
                const NeuronId n{u, c};
                if (!net.is_active(n)) continue;
                const double s = neuron_score(net, n, kind);
                if (!std::isfinite(s))
                    throw DivergenceError("non-finite importance score at (" + std::to_string(u) +
                                          ", " + std::to_string(c) + ")");
                auto& e = entries_[n];
                e.sum += s;
                ++e.count;
            }
        }
        ++batches_;
    }

    /// Per-neuron mean over the accumulated batches. Does not reset.
    ScoreMap average() const {
        if (entries_.empty()) throw UsageError("importance average requested before any batch");
        ScoreMap out;
        for (const auto& [n, e] : entries_) {
            if (e.count <= 0)
                throw UsageError("importance average with zero batch count for neuron (" +
                                 std::to_string(n.layer) + ", " + std::to_string(n.channel) + ")");
            out.emplace_hint(out.end(), n, e.sum / static_cast<double>(e.count));
        }
        return out;
    }

    void reset() {
        entries_.clear();
        batches_ = 0;
    }

private:
    Criterion criterion_;
    std::optional<CostTable> costs_;
    std::map<NeuronId, Entry> entries_;
    long batches_ = 0;
};

template <std::floating_point T>
void accumulate(ImportanceTable& table, const BasicNetwork<T>& net) {
    table.accumulate(net);
}

inline ScoreMap average(const ImportanceTable& table) { return table.average(); }

/// base - lambda * c_n. Identity when the table carries no cost penalty.
inline double cost_penalized_score(double base, NeuronId n, const ImportanceTable& table) {
    if (!table.costs()) return base;
    const auto& ct = *table.costs();
    const auto it = ct.cost.find(n);
    if (it == ct.cost.end())
        throw UsageError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(n.channel) +
                         ") missing from cost table");
    return base - ct.lambda * it->second;
}

/// Averaged scores with the cost penalty applied, ready for ranking.
inline ScoreMap ranking_scores(const ImportanceTable& table) {
    ScoreMap avg = table.average();
    if (table.costs())
        for (auto& [n, s] : avg) s = cost_penalized_score(s, n, table);
    return avg;
}

}  // namespace pat
