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

#include <filesystem>

#include "pat/models.hpp"
#include "pat/orchestrator.hpp"
#include "pat/report.hpp"

namespace pat {
namespace {

namespace fs = std::filesystem;

struct Toy {
    Dataset train = synth_dataset(4, 50, 21);
    Dataset eval = synth_dataset(4, 25, 22, {.split = Split::eval});

    Network net(std::uint64_t seed = 1) const {
        return build_network(model_specs("conv3", train.shape, 4, {.width = 4}), train.shape, seed);
    }
    static PatConfig config(int epochs) {
        PatConfig c;
        c.train.epochs = epochs;
        c.steps = 3;
        c.min_batches_per_prune_step = 4;
        return c;
    }
};

int count_status(const RunReport& r, EpochStatus s) {
    int n = 0;
    for (const auto& e : r.epochs) n += e.status == s;
    return n;
}

TEST(AdvanceEpoch, TransitionTable) {
    EXPECT_EQ(advance_epoch(EpochStatus::dense, false), EpochStatus::dense);
    EXPECT_EQ(advance_epoch(EpochStatus::dense, true), EpochStatus::prune);
    EXPECT_EQ(advance_epoch(EpochStatus::prune, false), EpochStatus::sparse);
    EXPECT_EQ(advance_epoch(EpochStatus::prune, true), EpochStatus::sparse);
    EXPECT_EQ(advance_epoch(EpochStatus::sparse, true), EpochStatus::sparse);
}

TEST(PatConfig, Validation) {
    auto c = Toy::config(12);
    EXPECT_NO_THROW(c.validate());
    c.alpha = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Toy::config(12);
    c.tau = 1.5;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Toy::config(12);
    c.max_dense_epochs = 12;
    EXPECT_THROW(c.validate(), ConfigError);
    c = Toy::config(12);
    c.fixed_prune_epoch = 12;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_EQ(Toy::config(30).effective_max_dense(), 10);
}

TEST(RunPat, ZeroThresholdFiresWhenWindowsFill) {
    const Toy toy;
    auto net = toy.net();
    auto cfg = Toy::config(10);
    cfg.tau = 0.0;
    cfg.window = 2;
    cfg.monotone_window = 2;
    cfg.max_dense_epochs = 8;
    const auto rep = run_pat(net, cfg, toy.train, toy.eval).report;
    // With tau = 0 the monotone check still needs EPI_t >= EPI_{t-1}, EPI_{t-2}.
    ASSERT_GE(rep.trigger_epoch, 4);
    EXPECT_EQ(rep.prune_epoch, rep.trigger_epoch + 1);
    EXPECT_FALSE(rep.forced);
    for (int t = 4; t < rep.trigger_epoch; ++t) {
        const auto& e = rep.epochs[static_cast<std::size_t>(t)];
        bool mono = true;
        for (int j = 1; j <= 2; ++j) mono = mono && *e.epi >= *rep.epochs[static_cast<std::size_t>(t - j)].epi;
        EXPECT_FALSE(mono) << "trigger should have fired at " << t;
    }
}

TEST(RunPat, ConstantStructureFiresExactlyAtFullWindows) {
    // Magnitude structure on this net is stable from the start, so EPI is 1
    // in every epoch and the trigger fires as soon as both windows are full.
    const Toy toy;
    auto net = toy.net();
    auto cfg = Toy::config(10);
    cfg.criterion = Criterion::magnitude;
    cfg.tau = 0.0;
    cfg.window = 2;
    cfg.monotone_window = 2;
    cfg.max_dense_epochs = 8;
    const auto rep = run_pat(net, cfg, toy.train, toy.eval).report;
    bool constant = true;
    for (const auto& s : rep.stability)
        if (s.epi) constant = constant && *s.epi == 1.0;
    if (!constant) GTEST_SKIP() << "structure moved on this seed";
    EXPECT_EQ(rep.trigger_epoch, 4);
    EXPECT_EQ(rep.prune_epoch, 5);
}

TEST(RunPat, ForcedAtTheDenseCap) {
    const Toy toy;
    auto net = toy.net();
    auto cfg = Toy::config(9);
    cfg.max_dense_epochs = 3;  // windows cannot fill before epoch 10
    const auto rep = run_pat(net, cfg, toy.train, toy.eval).report;
    EXPECT_TRUE(rep.forced);
    EXPECT_EQ(rep.trigger_epoch, -1);
    EXPECT_EQ(rep.prune_epoch, 3);
}

TEST(RunPat, FixedPruneEpoch) {
    const Toy toy;
    for (int e : {0, 2}) {
        auto net = toy.net();
        auto cfg = Toy::config(5);
        cfg.fixed_prune_epoch = e;
        const auto rep = run_pat(net, cfg, toy.train, toy.eval).report;
        EXPECT_EQ(rep.prune_epoch, e);
        EXPECT_TRUE(rep.fixed);
        EXPECT_FALSE(rep.forced);
        EXPECT_EQ(rep.epochs[static_cast<std::size_t>(e)].status, EpochStatus::prune);
    }
}

class RunPatToy : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = fs::temp_directory_path() / "patprune_orchestrator";
        fs::remove_all(dir_);
        const Toy toy;
        auto net = toy.net();
        auto cfg = Toy::config(30);
        RunHooks hooks;
        hooks.checkpoint_dir = dir_;
        result_ = new PatResult<float>(run_pat(net, cfg, toy.train, toy.eval, hooks));
        final_ = new Network(net);
    }
    static void TearDownTestSuite() {
        delete result_;
        delete final_;
        fs::remove_all(dir_);
    }
    static inline fs::path dir_;
    static inline PatResult<float>* result_ = nullptr;
    static inline Network* final_ = nullptr;
};

TEST_F(RunPatToy, ExactlyOnePruneEpochAndTarget) {
    const auto& rep = result_->report;
    EXPECT_EQ(rep.epochs.size(), 30u);
    EXPECT_EQ(count_status(rep, EpochStatus::prune), 1);
    EXPECT_EQ(rep.epochs[static_cast<std::size_t>(rep.prune_epoch)].status, EpochStatus::prune);
    EXPECT_EQ(count_status(rep, EpochStatus::dense), rep.prune_epoch);
    EXPECT_EQ(rep.pruned, prune_target(final_->neuron_count(), 0.5));
    EXPECT_EQ(static_cast<int>(result_->state.pruned().size()), rep.pruned);
    EXPECT_LT(rep.flops_final, rep.flops_dense);
}

TEST_F(RunPatToy, EpiSeriesMatchesReplayOfTheTrace) {
    const auto& rep = result_->report;
    std::vector<ScoreTraceEntry> dense;
    for (const auto& e : rep.trace)
        if (e.epoch < rep.prune_epoch) dense.push_back(e);
    const auto rows = stability_log(dense, 0.5, rep.criterion, final_->unit_widths(), 5);
    ASSERT_EQ(rows.size(), static_cast<std::size_t>(rep.prune_epoch));
    for (std::size_t t = 0; t < rows.size(); ++t) {
        EXPECT_EQ(rows[t].epi, rep.epochs[t].epi) << t;
        EXPECT_EQ(rows[t].structure, rep.stability[t].structure);
    }
}

TEST_F(RunPatToy, PrunedWeightsFrozenAtZeroAfterPruning) {
    const auto& rep = result_->report;
    const auto end = load_checkpoint(dir_ / "prune_end.ckpt");
    const auto fin = load_checkpoint(dir_ / "final.ckpt");
    const auto start = load_checkpoint(dir_ / "prune_start.ckpt");
    EXPECT_EQ(start.state.pruned().size(), 0u);
    EXPECT_EQ(static_cast<int>(start.net.epoch()), rep.prune_epoch);
    EXPECT_EQ(end.state.pruned(), fin.state.pruned());
    for (const auto& n : fin.state.pruned()) {
        for (float w : end.net.neuron_weights(n)) EXPECT_EQ(w, 0.0f);
        for (float w : fin.net.neuron_weights(n)) EXPECT_EQ(w, 0.0f);
    }
    // Survivors did keep training between the prune epoch and T.
    bool moved = false;
    for (const auto& n : fin.state.remaining()) {
        const auto a = end.net.neuron_weights(n), b = fin.net.neuron_weights(n);
        for (std::size_t i = 0; i < a.size(); ++i) moved = moved || a[i] != b[i];
    }
    EXPECT_TRUE(moved);
    EXPECT_TRUE(fs::exists(dir_ / "final.mask"));
}

TEST_F(RunPatToy, RerunIsByteIdentical) {
    const Toy toy;
    auto net = toy.net();
    const auto again = run_pat(net, Toy::config(30), toy.train, toy.eval).report;
    EXPECT_EQ(metrics_csv(again), metrics_csv(result_->report));
    EXPECT_EQ(stability_csv(again.stability), stability_csv(result_->report.stability));
    EXPECT_EQ(importance_csv(again), importance_csv(result_->report));
}

TEST(RunPat, DivergenceSavesLastGoodEpoch) {
    const Toy toy;
    auto net = toy.net();
    auto cfg = Toy::config(6);
    cfg.fixed_prune_epoch = 4;
    cfg.train.warmup_epochs = 1;
    cfg.train.peak_lr = 1e30;
    const auto dir = fs::temp_directory_path() / "patprune_diverge";
    fs::remove_all(dir);
    RunHooks hooks;
    hooks.checkpoint_dir = dir;
    try {
        run_pat(net, cfg, toy.train, toy.eval, hooks);
        FAIL() << "expected divergence";
    } catch (const DivergenceError& e) {
        EXPECT_GE(e.epoch(), 0);
        if (e.epoch() > 0) {
            EXPECT_TRUE(fs::exists(dir / "last_good.ckpt"));
        }
    }
    fs::remove_all(dir);
}

}  // namespace
}  // namespace pat
