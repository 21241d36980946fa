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

#include <chrono>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pat/checkpoint.hpp"
#include "pat/data.hpp"
#include "pat/importance.hpp"
#include "pat/optimizer.hpp"
#include "pat/prune.hpp"
#include "pat/stability.hpp"
#include "pat/trainer.hpp"

namespace pat {

enum class EpochStatus { dense, prune, sparse };

constexpr std::string_view to_string(EpochStatus s) noexcept {
    switch (s) {
        case EpochStatus::dense: return "dense";
        case EpochStatus::prune: return "prune";
        case EpochStatus::sparse: return "sparse";
    }
    return "?";
}

/// dense --trigger--> prune --> sparse (absorbing).
constexpr EpochStatus advance_epoch(EpochStatus status, bool trigger) noexcept {
    switch (status) {
        case EpochStatus::dense: return trigger ? EpochStatus::prune : EpochStatus::dense;
        case EpochStatus::prune: return EpochStatus::sparse;
        case EpochStatus::sparse: return EpochStatus::sparse;
    }
    return status;
}

struct PatConfig {
    double alpha = 0.5;
    Criterion criterion = Criterion::gradient;
    double tau = 0.944;
    int window = 5;           // r
    int monotone_window = 5;  // w_mono
    int steps = 30;           // S
    int floor = 1;
    int min_batches_per_prune_step = 50;
    TrainConfig train;
    int max_dense_epochs = -1;               // < 0: T / 3
    std::optional<int> fixed_prune_epoch;    // ignore EPI and prune in this epoch
    bool warm_start_prune_importance = false;
    std::optional<CostTable> costs;

    int effective_max_dense() const noexcept {
        return max_dense_epochs >= 0 ? max_dense_epochs : train.epochs / 3;
    }

    void validate() const {
        train.validate();
        if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("prune ratio must lie in (0, 1)");
        if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
        if (window < 1) throw ConfigError("EPI window r must be >= 1");
        if (monotone_window < 0) throw ConfigError("monotone window must be >= 0");
        if (steps < 1) throw ConfigError("prune steps must be >= 1");
        if (floor < 0) throw ConfigError("layer floor must be >= 0");
        if (min_batches_per_prune_step < 1)
            throw ConfigError("min_batches_per_prune_step must be >= 1");
        if (effective_max_dense() >= train.epochs)
            throw ConfigError("max_dense_epochs must be below the total epoch count");
        if (fixed_prune_epoch && (*fixed_prune_epoch < 0 || *fixed_prune_epoch >= train.epochs))
            throw ConfigError("fixed prune epoch must lie in [0, epochs)");
    }
};

struct EpochRecord {
    int epoch = 0;
    EpochStatus status = EpochStatus::dense;
    double lr = 0.0;
    double train_loss = 0.0;
    double train_acc = 0.0;
    double eval_loss = 0.0;
    double eval_acc = 0.0;
    std::optional<double> epi;
    bool epi_partial = false;
    double flops = 0.0;
    int remaining = 0;
};

/// One row of the stability log.
struct StabilityRecord {
    int epoch = 0;
    int k = 0;
    double alpha = 0.0;
    Criterion criterion = Criterion::gradient;
    std::optional<double> epi;
    std::vector<double> psi;
    bool partial = false;
    std::optional<double> spearman;  // against the previous epoch's scores
    std::optional<double> kendall;
    StructureVector structure;
};

/// Per-epoch averaged scores, kept for offline analysis.
struct ScoreTraceEntry {
    int epoch = 0;
    ScoreMap scores;
};

struct RunReport {
    std::uint64_t seed = 0;
    int total_epochs = 0;
    double alpha = 0.0;
    Criterion criterion = Criterion::gradient;
    double tau = 0.0;
    std::vector<EpochRecord> epochs;
    std::vector<StabilityRecord> stability;
    std::vector<ScoreTraceEntry> trace;
    int trigger_epoch = -1;  // epoch whose EPI fired the trigger (-1 if none)
    int prune_epoch = -1;    // epoch that ran iterative pruning
    bool forced = false;     // pruning forced by the dense-epoch cap
    bool fixed = false;      // pruning epoch given explicitly
    int pruned = 0;
    int total_neurons = 0;
    std::vector<std::vector<std::uint8_t>> final_masks;
    double flops_dense = 0.0;
    double flops_final = 0.0;
    double final_top1 = 0.0;
    double wall_seconds = 0.0;

    double flops_reduction() const noexcept {
        return flops_dense > 0.0 ? 1.0 - flops_final / flops_dense : 0.0;
    }
};

/// Side outputs of a run. Checkpoints and masks go to `checkpoint_dir` when
/// set: at the start and end of the prune epoch, at T, and the last good
/// epoch when training diverges.
struct RunHooks {
    std::optional<std::filesystem::path> checkpoint_dir;
    std::function<void(const EpochRecord&)> on_epoch;
};

template <std::floating_point T>
struct PatResult {
    PruneState state;
    RunReport report;
};

/// Stability row for one epoch, given the epoch's averaged scores and the
/// previous epoch's (for the rank-correlation columns).
inline StabilityRecord stability_step(StabilityHistory& history, const ScoreMap& scores,
                                      const ScoreMap* previous, int epoch, double alpha,
                                      Criterion criterion, const std::vector<int>& widths) {
    int total = 0;
    for (int w : widths) total += w;
    StabilityRecord row;
    row.epoch = epoch;
    row.alpha = alpha;
    row.criterion = criterion;
    row.k = keep_count(total, alpha);
    row.structure = top_k_structure(scores, row.k, widths, epoch);
    if (history.empty()) {
        history.record(row.structure);
    } else {
        const auto r = epi(history, row.structure);
        row.epi = r.value;
        row.psi = r.psi;
        row.partial = r.partial_window;
    }
    if (previous && previous->size() == scores.size()) {
        row.spearman = rank_correlation(*previous, scores, RankMethod::spearman);
        row.kendall = rank_correlation(*previous, scores, RankMethod::kendall);
    }
    return row;
}

/// Replay a recorded score trace at a given prune ratio.
inline std::vector<StabilityRecord> stability_log(const std::vector<ScoreTraceEntry>& trace,
                                                  double alpha, Criterion criterion,
                                                  const std::vector<int>& widths, int window) {
    StabilityHistory history(window, 5, 1.0);
    std::vector<StabilityRecord> rows;
    const ScoreMap* prev = nullptr;
    for (const auto& e : trace) {
        rows.push_back(stability_step(history, e.scores, prev, e.epoch, alpha, criterion, widths));
        prev = &e.scores;
    }
    return rows;
}

/// Dense -> prune -> sparse training over cfg.train.epochs epochs.
template <std::floating_point T>
PatResult<T> run_pat(BasicNetwork<T>& net, const PatConfig& cfg, const Dataset& train,
                     const Dataset& eval, const RunHooks& hooks = {}) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const int T_total = cfg.train.epochs;
    const int max_dense = cfg.effective_max_dense();
    const auto widths = net.unit_widths();
    const int total_neurons = net.neuron_count();

    PatResult<T> out;
    RunReport& rep = out.report;
    rep.seed = cfg.train.seed;
    rep.total_epochs = T_total;
    rep.alpha = cfg.alpha;
    rep.criterion = cfg.criterion;
    rep.tau = cfg.tau;
    rep.total_neurons = total_neurons;
    rep.flops_dense = count_flops(net);

    PruneState& state = out.state;
    state = PruneState::from_network(net);
    StabilityHistory history(cfg.window, cfg.monotone_window, cfg.tau);
    ImportanceTable table(cfg.criterion, cfg.costs);
    std::optional<ScoreMap> previous_scores;

    auto ckpt = [&](const std::string& stem) {
        if (!hooks.checkpoint_dir) return;
        std::filesystem::create_directories(*hooks.checkpoint_dir);
        save_checkpoint(net, state, *hooks.checkpoint_dir / (stem + ".ckpt"));
        save_mask(net, state, *hooks.checkpoint_dir / (stem + ".mask"));
    };

    EpochStatus status = EpochStatus::dense;
    const int first_prune = cfg.fixed_prune_epoch ? *cfg.fixed_prune_epoch : max_dense;
    if (first_prune == 0) {
        status = EpochStatus::prune;
        rep.forced = !cfg.fixed_prune_epoch;
        rep.fixed = cfg.fixed_prune_epoch.has_value();
    }

    std::optional<BasicNetwork<T>> last_good;
    for (int t = 0; t < T_total; ++t) {
        EpochRecord rec;
        rec.epoch = t;
        rec.status = status;
        rec.lr = lr_at_epoch(t, cfg.train);
        try {
            if (status == EpochStatus::dense) {
                table.reset();
                const auto stats = train_epoch(net, train, cfg.train, t, &table);
                rec.train_loss = stats.loss;
                rec.train_acc = stats.accuracy;
                ScoreMap scores = ranking_scores(table);
                auto row = stability_step(history, scores,
                                          previous_scores ? &*previous_scores : nullptr, t,
                                          cfg.alpha, cfg.criterion, widths);
                rec.epi = row.epi;
                rec.epi_partial = row.partial;
                rep.stability.push_back(std::move(row));
                rep.trace.push_back({t, scores});
                previous_scores = std::move(scores);

                bool trigger = false;
                if (cfg.fixed_prune_epoch) {
                    trigger = t + 1 == *cfg.fixed_prune_epoch;
                    rep.fixed = trigger || rep.fixed;
                } else {
                    trigger = should_prune(history, t);
                    if (trigger) {
                        rep.trigger_epoch = t;
                    } else if (t + 1 == max_dense) {
                        trigger = true;
                        rep.forced = true;
                    }
                }
                status = advance_epoch(status, trigger);
            } else if (status == EpochStatus::prune) {
                ckpt("prune_start");
                rep.prune_epoch = t;
                if (!cfg.warm_start_prune_importance) table.reset();
                const auto schedule = exponential_schedule(total_neurons, cfg.alpha, cfg.steps);
                state.set_limit(static_cast<int>(state.pruned().size()) + schedule.target);
                const auto res = iterative_prune_epoch(
                    net, table, schedule, state, train, cfg.train, t,
                    PruneOptions{cfg.floor, cfg.min_batches_per_prune_step});
                rec.train_loss = res.train.loss;
                rec.train_acc = res.train.accuracy;
                for (const auto& step : res.steps) rep.trace.push_back({t, step.scores});
                table.reset();
                ckpt("prune_end");
                status = advance_epoch(status, false);
            } else {
                const auto stats = train_epoch(net, train, cfg.train, t, nullptr);
                rec.train_loss = stats.loss;
                rec.train_acc = stats.accuracy;
            }
            const auto ev = evaluate(net, eval);
            if (!std::isfinite(ev.loss)) throw DivergenceError("non-finite evaluation loss", t);
            rec.eval_loss = ev.loss;
            rec.eval_acc = ev.accuracy;
        } catch (const DivergenceError& e) {
            if (hooks.checkpoint_dir && last_good) {
                std::filesystem::create_directories(*hooks.checkpoint_dir);
                save_checkpoint(*last_good, PruneState::from_network(*last_good),
                                *hooks.checkpoint_dir / "last_good.ckpt");
            }
            throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(t) + ")", t);
        }
        rec.flops = count_flops(net);
        rec.remaining = static_cast<int>(state.remaining().size());
        rep.epochs.push_back(rec);
        if (hooks.on_epoch) hooks.on_epoch(rec);
        if (hooks.checkpoint_dir) last_good = net;
    }

    rep.pruned = static_cast<int>(state.pruned().size());
    rep.final_masks = net.masks();
    rep.flops_final = count_flops(net);
    rep.final_top1 = rep.epochs.empty() ? 0.0 : rep.epochs.back().eval_acc;
    ckpt("final");
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// Train epochs [from_epoch, T) with the current masks frozen; used by the
/// replay and mask-variation protocols and by plain dense training.
template <std::floating_point T>
RunReport train_fixed_mask(BasicNetwork<T>& net, const TrainConfig& cfg, const Dataset& train,
                           const Dataset& eval, int from_epoch = 0) {
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.seed = cfg.seed;
    rep.total_epochs = cfg.epochs;
    rep.total_neurons = net.neuron_count();
    const auto state = PruneState::from_network(net);
    rep.pruned = static_cast<int>(state.pruned().size());
    const bool masked = rep.pruned > 0;
    rep.flops_dense = count_flops(net, /*ignore_masks=*/true);
    for (int t = from_epoch; t < cfg.epochs; ++t) {
        EpochRecord rec;
        rec.epoch = t;
        rec.status = masked ? EpochStatus::sparse : EpochStatus::dense;
        rec.lr = lr_at_epoch(t, cfg);
        const auto stats = train_epoch(net, train, cfg, t, nullptr);
        rec.train_loss = stats.loss;
        rec.train_acc = stats.accuracy;
        const auto ev = evaluate(net, eval);
        rec.eval_loss = ev.loss;
        rec.eval_acc = ev.accuracy;
        rec.flops = count_flops(net);
        rec.remaining = rep.total_neurons - rep.pruned;
        rep.epochs.push_back(rec);
    }
    rep.final_masks = net.masks();
    rep.flops_final = count_flops(net);
    rep.final_top1 = rep.epochs.empty() ? 0.0 : rep.epochs.back().eval_acc;
    rep.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

}  // namespace pat
