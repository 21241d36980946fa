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

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "pat/errors.hpp"
#include "pat/importance.hpp"
#include "pat/network.hpp"
#include "pat/trainer.hpp"

namespace pat {

/// ceil(alpha * |F|), robust to alpha*|F| landing a hair above an integer.
inline int prune_target(int total_neurons, double alpha) {
    const double x = alpha * static_cast<double>(total_neurons);
    const double r = std::round(x);
    if (std::abs(x - r) < 1e-9) return static_cast<int>(r);
    return static_cast<int>(std::ceil(x));
}

/// Number of neurons a sub-network keeps at prune ratio alpha: |F| - ceil(alpha|F|).
inline int keep_count(int total_neurons, double alpha) {
    return total_neurons - prune_target(total_neurons, alpha);
}

struct PruneSchedule {
    int steps = 0;
    std::vector<int> counts;  // m_i, front-loaded
    int target = 0;           // ceil(alpha |F|)
};

/// Per-step prune counts that shrink the network geometrically from |F| to
/// k = |F| - ceil(alpha|F|) over S steps.
///
/// The ideal decrements d_i = g_{i-1} - g_i of g_i = |F|^(1-i/S) k^(i/S) are
/// strictly decreasing and sum to the target. They are apportioned to
/// integers by largest remainder (ties to the earlier step), which keeps the
/// counts non-increasing and their sum exact.
inline PruneSchedule exponential_schedule(int total_neurons, double alpha, int steps) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("prune ratio must lie in (0, 1)");
    if (steps < 1) throw ConfigError("prune steps must be >= 1");
    if (total_neurons < 1) throw ConfigError("network has no prunable neurons");
    const int target = prune_target(total_neurons, alpha);
    const int keep = total_neurons - target;
    if (keep < 1)
        throw PruneError("prune ratio " + std::to_string(alpha) + " would remove all " +
                         std::to_string(total_neurons) + " neurons");

    PruneSchedule sched;
    sched.steps = steps;
    sched.target = target;
    const auto S = static_cast<std::size_t>(steps);
    const double ratio = std::pow(static_cast<double>(keep) / total_neurons, 1.0 / steps);
    std::vector<double> ideal(S);
    double level = total_neurons;
    for (std::size_t i = 0; i < S; ++i) {
        const double next = i + 1 == S ? static_cast<double>(keep) : level * ratio;
        ideal[i] = level - next;
        level = next;
    }
    // Enforce the monotone shape against rounding noise in the last element.
    for (std::size_t i = 1; i < S; ++i) ideal[i] = std::min(ideal[i], ideal[i - 1]);

    sched.counts.resize(S);
    int assigned = 0;
    for (std::size_t i = 0; i < S; ++i) {
        sched.counts[i] = static_cast<int>(std::floor(ideal[i]));
        assigned += sched.counts[i];
    }
    int residue = target - assigned;
    std::vector<std::size_t> order(S);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ideal[a] - std::floor(ideal[a]) > ideal[b] - std::floor(ideal[b]);
    });
    // A step may only gain a unit if that keeps the sequence non-increasing.
    while (residue > 0) {
        bool placed = false;
        for (std::size_t i : order) {
            if (residue == 0) break;
            if (i == 0 || sched.counts[i - 1] > sched.counts[i]) {
                ++sched.counts[i];
                --residue;
                placed = true;
            }
        }
        if (!placed) {
            ++sched.counts[0];
            --residue;
        }
    }
    while (residue < 0) {
        for (std::size_t i = S; i-- > 0;) {
            if (sched.counts[i] > 0 && (i + 1 == S || sched.counts[i] > sched.counts[i + 1])) {
                --sched.counts[i];
                ++residue;
                break;
            }
        }
    }
    return sched;
}

/// Lowest-scored k neurons under the total order (score, layer, channel),
/// never taking a layer below `floor` remaining neurons. `remaining` gives
/// the current live count per layer; when empty it is derived from the keys
/// of `scores`.
inline std::set<NeuronId> global_bottom_k(const ScoreMap& scores, int k, int floor,
                                          std::map<int, int> remaining = {}) {
    if (k < 0) throw UsageError("global_bottom_k: k must be >= 0");
    if (floor < 0) throw UsageError("global_bottom_k: floor must be >= 0");
    if (static_cast<std::size_t>(k) > scores.size())
        throw PruneError("asked for " + std::to_string(k) + " neurons but only " +
                         std::to_string(scores.size()) + " are scored");
    if (remaining.empty())
        for (const auto& [n, s] : scores) ++remaining[n.layer];

    std::vector<std::pair<double, NeuronId>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [n, s] : scores) {
        if (std::isnan(s)) throw PruneError("NaN importance score");
        ranked.emplace_back(s, n);
    }
    std::sort(ranked.begin(), ranked.end());

    std::set<NeuronId> out;
    std::map<int, int> taken;
    for (const auto& [s, n] : ranked) {
        if (static_cast<int>(out.size()) == k) break;
        if (remaining[n.layer] - taken[n.layer] - 1 < floor) continue;
        ++taken[n.layer];
        out.insert(n);
    }
    if (static_cast<int>(out.size()) < k) {
        std::string binding;
        for (const auto& [layer, count] : remaining)
            if (count - taken[layer] <= floor)
                binding += (binding.empty() ? "" : ", ") + std::to_string(layer);
        throw PruneError("only " + std::to_string(out.size()) + " of " + std::to_string(k) +
                         " neurons can be pruned under floor " + std::to_string(floor) +
                         "; layers at the floor: " + binding);
    }
    return out;
}

/// Partition of the neuron set F into pruned P and remaining R.
class PruneState {
public:
    PruneState() = default;

    /// State matching the current masks of `net`.
    template <std::floating_point T>
    static PruneState from_network(const BasicNetwork<T>& net) {
        PruneState s;
        for (const auto& n : net.all_neurons()) {
            s.full_.insert(n);
            (net.is_active(n) ? s.remaining_ : s.pruned_).insert(n);
        }
        return s;
    }

    const std::set<NeuronId>& full() const noexcept { return full_; }
    const std::set<NeuronId>& pruned() const noexcept { return pruned_; }
    const std::set<NeuronId>& remaining() const noexcept { return remaining_; }
    int step() const noexcept { return step_; }
    void advance_step() noexcept { ++step_; }
    void set_step(int step) noexcept { step_ = step; }

    /// Upper bound on |P|; 0 disables the check.
    int limit() const noexcept { return limit_; }
    void set_limit(int limit) noexcept { limit_ = limit; }

    void move_to_pruned(NeuronId n) {
        if (pruned_.count(n))
            throw PruneError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(n.channel) +
                             ") is already pruned");
        if (!remaining_.erase(n))
            throw PruneError("neuron (" + std::to_string(n.layer) + ", " + std::to_string(n.channel) +
                             ") is not part of the network");
        pruned_.insert(n);
    }

    std::map<int, int> remaining_per_layer() const {
        std::map<int, int> out;
        for (const auto& n : full_) out[n.layer] += 0;
        for (const auto& n : remaining_) ++out[n.layer];
        return out;
    }

private:
    std::set<NeuronId> full_;
    std::set<NeuronId> pruned_;
    std::set<NeuronId> remaining_;
    int step_ = 0;
    int limit_ = 0;
};

/// Remove `victims` from R: masks off, their parameters zeroed.
template <std::floating_point T>
void prune_step(BasicNetwork<T>& net, PruneState& state, const std::set<NeuronId>& victims) {
    for (const auto& n : victims) {
        if (state.pruned().count(n))
            throw PruneError("double prune of neuron (" + std::to_string(n.layer) + ", " +
                             std::to_string(n.channel) + ")");
        if (!state.remaining().count(n))
            throw PruneError("neuron (" + std::to_string(n.layer) + ", " +
                             std::to_string(n.channel) + ") is not in the remaining set");
    }
    if (state.limit() > 0 &&
        state.pruned().size() + victims.size() > static_cast<std::size_t>(state.limit()))
        throw PruneError("prune step would exceed the target of " + std::to_string(state.limit()));
    if (victims.empty()) return;
    auto masks = net.masks();
    for (const auto& n : victims) {
        masks[static_cast<std::size_t>(n.layer)][static_cast<std::size_t>(n.channel)] = 0;
        state.move_to_pruned(n);
    }
    net.set_masks(masks);
}

struct PruneOptions {
    int floor = 1;
    int min_batches_per_step = 50;
};

struct PruneStepRecord {
    int step = 0;
    long after_batch = 0;  // 0-based index of the batch the step followed
    std::set<NeuronId> victims;
    ScoreMap scores;       // ranking scores the step used
};

struct PruneEpochResult {
    EpochStats train;
    std::vector<PruneStepRecord> steps;
};

/// Iterative pruning inside one training epoch: training continues on every
/// batch, scores accumulate in `table`, and after each block of batches the
/// m_i lowest-ranked neurons are removed and the table is reset.
template <std::floating_point T>
PruneEpochResult iterative_prune_epoch(BasicNetwork<T>& net, ImportanceTable& table,
                                       const PruneSchedule& schedule, PruneState& state,
                                       const Dataset& ds, const TrainConfig& cfg, int epoch,
                                       const PruneOptions& opt = {}) {
    const auto range = batches<T>(ds, cfg.batch_size, epoch_seed(cfg.seed, epoch));
    const long total = static_cast<long>(range.batch_count());
    const long needed = static_cast<long>(schedule.steps) * opt.min_batches_per_step;
    if (needed > total || schedule.steps > total)
        throw PruneError("prune epoch has " + std::to_string(total) + " batches but " +
                         std::to_string(schedule.steps) + " steps x " +
                         std::to_string(opt.min_batches_per_step) +
                         " batches are required; use fewer steps or more data");
    if (state.limit() == 0) state.set_limit(static_cast<int>(state.pruned().size()) + schedule.target);

    const long interval = total / schedule.steps;
    const double lr = lr_at_epoch(epoch, cfg);
    PruneEpochResult result;
    EpochMeter meter;
    int step = 0;
    for (long b = 0; b < total; ++b) {
        auto batch = range[static_cast<std::size_t>(b)];
        const std::size_t n = batch.labels.size();
        meter.add(train_step(net, std::move(batch), lr, cfg, &table), n);
        if (step < schedule.steps && b == (step + 1) * interval - 1) {
            PruneStepRecord rec;
            rec.step = step;
            rec.after_batch = b;
            rec.scores = ranking_scores(table);
            // Neurons pruned by an earlier step cannot linger in a warm-started table.
            for (const auto& p : state.pruned()) rec.scores.erase(p);
            rec.victims = global_bottom_k(rec.scores, schedule.counts[static_cast<std::size_t>(step)],
                                          opt.floor, state.remaining_per_layer());
            prune_step(net, state, rec.victims);
            state.advance_step();
            table.reset();
            result.steps.push_back(std::move(rec));
            ++step;
        }
    }
    net.epoch() = static_cast<std::uint64_t>(epoch + 1);
    result.train = meter.stats();
    return result;
}

}  // namespace pat
