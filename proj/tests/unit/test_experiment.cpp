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
#include <fstream>
#include <set>

#include "pat/config.hpp"
#include "pat/experiment.hpp"

namespace pat {
namespace {

namespace fs = std::filesystem;

constexpr const char* kTiny = R"(
model = conv3
model.width = 4
data.classes = 4
data.train_per_class = 30
data.eval_per_class = 10
epochs = 6
batch_size = 16
warmup_epochs = 1
prune_steps = 2
min_batches_per_step = 2
max_dense_epochs = 2
)";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

class ExperimentTest : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() / ("patprune_exp_" + std::string(
            ::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    ExperimentConfig tiny(const std::string& extra = "") const {
        auto kv = KeyValueConfig::parse(std::string(kTiny) + extra);
        kv.set("out", dir_.string());
        return experiment_from_config(kv);
    }
    fs::path dir_;
};

TEST(KeyValueConfig, ParsesAndReportsProblems) {
    const auto kv = KeyValueConfig::parse("a = 1  # note\n\nb=x y\nlist = 1, 2 3\n");
    EXPECT_EQ(kv.number("a", 0), 1);
    EXPECT_EQ(kv.get_or("b", ""), "x y");
    EXPECT_EQ(kv.list<int>("list"), (std::vector<int>{1, 2, 3}));
    EXPECT_THROW(kv.number<int>("b", 0), ConfigError);
    try {
        KeyValueConfig::parse("a = 1\na = 2\n", "f.conf");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("f.conf:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(KeyValueConfig::parse("novalue\n"), ConfigError);
}

TEST(ExperimentConfig, UnknownKeysAndBadValues) {
    try {
        experiment_from_config(KeyValueConfig::parse("epochs = 10\nepoch = 3\n"));
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    }
    EXPECT_THROW(experiment_from_config(KeyValueConfig::parse("criterion = entropy\n")), ConfigError);
    EXPECT_THROW(experiment_from_config(KeyValueConfig::parse("mode = replay\n")), ConfigError);
    const auto c = experiment_from_config(
        KeyValueConfig::parse("mode = oracle-sweep\nsweep.from = 2\nsweep.to = 8\nsweep.stride = 3\n"));
    EXPECT_EQ(c.sweep_epochs, (std::vector<int>{2, 5, 8}));
    EXPECT_EQ(c.mode, ExperimentMode::oracle_sweep);
}

TEST(ExperimentConfig, ModeRequirements) {
    ExperimentConfig c;
    c.mode = ExperimentMode::lottery_replay;
    EXPECT_THROW(c.validate(), ConfigError);
    c.mode = ExperimentMode::mask_variation;
    c.mask = "m";
    EXPECT_THROW(c.validate(), ConfigError);
    c.checkpoint = "c";
    EXPECT_NO_THROW(c.validate());
    c.mode = ExperimentMode::oracle_sweep;
    c.sweep_epochs = {c.pat.train.epochs};
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(MaskVariation, CountPreservingVariantsKeepStructure) {
    std::vector<std::vector<std::uint8_t>> src = {{1, 1, 0, 0, 1, 0}, {1, 0, 0, 0}, {1, 1, 1, 0, 0, 0, 0, 1}};
    Rng rng(11);
    std::set<std::vector<std::vector<std::uint8_t>>> distinct;
    for (int i = 0; i < 10; ++i) {
        const auto v = count_preserving_variation(src, rng);
        EXPECT_EQ(mask_counts(v), mask_counts(src));
        EXPECT_EQ(counts_similarity(mask_counts(v), mask_counts(src)), 1.0);
        distinct.insert(v);
    }
    EXPECT_GT(distinct.size(), 5u);
}

TEST(MaskVariation, PerturbedCountsApproachTarget) {
    const std::vector<int> counts = {8, 16, 16, 4}, widths = {16, 32, 32, 16};
    for (std::uint64_t s = 0; s < 20; ++s) {
        Rng rng(s);
        const auto p = perturb_counts(counts, widths, 0.8, rng);
        int sum = 0;
        for (std::size_t l = 0; l < p.size(); ++l) {
            EXPECT_GE(p[l], 1);
            EXPECT_LE(p[l], widths[l]);
            sum += p[l];
        }
        EXPECT_EQ(sum, 44);
        EXPECT_NEAR(counts_similarity(counts, p), 0.8, 0.05) << s;
    }
}

TEST(MaskVariation, SampleStandardDeviation) {
    VariationSummary s;
    for (double v : {0.5, 0.7, 0.9}) s.runs.push_back({0, 1.0, {}, v});
    summarize(s);
    EXPECT_DOUBLE_EQ(s.mean, 0.7);
    EXPECT_NEAR(s.stddev, 0.2, 1e-12);
}

TEST_F(ExperimentTest, PatRunEmitsAllArtifacts) {
    auto cfg = tiny();
    ASSERT_EQ(run_experiment(cfg), 0);
    for (const char* f : {"metrics.csv", "summary.json", "stability.csv", "importance.csv",
                          "checkpoints/final.ckpt", "checkpoints/final.mask",
                          "checkpoints/prune_start.ckpt", "checkpoints/prune_end.mask"})
        EXPECT_TRUE(fs::exists(dir_ / f)) << f;
    const auto metrics = slurp(dir_ / "metrics.csv");
    EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 7);
    EXPECT_EQ(metrics.substr(0, metrics.find('\n')), kMetricsHeader);
    const auto summary = nlohmann::json::parse(slurp(dir_ / "summary.json"));
    for (const char* key : {"prune_epoch", "trigger_epoch", "forced", "final_top1", "flops_reduction",
                            "remaining_per_layer", "wall_seconds"})
        EXPECT_TRUE(summary.contains(key)) << key;
    EXPECT_TRUE(summary["forced"].get<bool>());

    // Everything but the timing is a pure function of the config.
    const auto first = metrics;
    const auto stab = slurp(dir_ / "stability.csv");
    ASSERT_EQ(run_experiment(cfg), 0);
    EXPECT_EQ(slurp(dir_ / "metrics.csv"), first);
    EXPECT_EQ(slurp(dir_ / "stability.csv"), stab);
}

TEST_F(ExperimentTest, UnwritableOutputIsAnIoError) {
    fs::create_directories(dir_);
    std::ofstream(dir_ / "file") << "x";
    auto cfg = tiny();
    cfg.out = dir_ / "file" / "sub";
    EXPECT_THROW(run_experiment(cfg), IoError);
    EXPECT_THROW(emit_metrics(RunReport{}, dir_ / "file" / "sub"), IoError);
}

TEST_F(ExperimentTest, LotteryReplayOfAllOnMaskIsDenseTraining) {
    auto cfg = tiny("mode = lottery-replay\ncheckpoints = false\n");
    fs::create_directories(dir_);
    const auto data = load_data(cfg.data);
    auto net = make_network(cfg, data.train);
    detail::write_text(dir_ / "all.mask", encode_mask(mask_from_masks(net.masks())));
    cfg.mask = dir_ / "all.mask";
    ASSERT_EQ(run_experiment(cfg), 0);
    const auto dense = train_fixed_mask(net, cfg.pat.train, data.train, data.eval, 0);
    const auto summary = nlohmann::json::parse(slurp(dir_ / "summary.json"));
    EXPECT_EQ(summary["final_top1"].get<double>(), dense.final_top1);
    EXPECT_EQ(summary["pruned"].get<int>(), 0);
}

TEST_F(ExperimentTest, LotteryReplayKeepsPrunedWeightsAtZero) {
    auto pat_cfg = tiny();
    ASSERT_EQ(run_experiment(pat_cfg), 0);
    const auto mask = load_mask(dir_ / "checkpoints" / "final.mask");
    auto cfg = tiny("mode = lottery-replay\ncheckpoints = false\n");
    cfg.out = dir_ / "replay";
    cfg.mask = dir_ / "checkpoints" / "final.mask";
    ASSERT_EQ(run_experiment(cfg), 0);
    const auto summary = nlohmann::json::parse(slurp(cfg.out / "summary.json"));
    EXPECT_EQ(summary["pruned"].get<std::size_t>(), mask.pruned.size());
}

TEST_F(ExperimentTest, OracleSweepResumes) {
    auto cfg = tiny("mode = oracle-sweep\ncheckpoints = false\nsweep.epochs = 1\n");
    ASSERT_EQ(run_experiment(cfg), 0);
    const auto first = read_sweep_table(dir_ / "oracle_sweep.csv");
    ASSERT_EQ(first.size(), 1u);

    {
        std::ofstream torn(dir_ / "oracle_sweep.csv", std::ios::app);
        torn << "3,1,0.5";  // interrupted mid-row
    }
    cfg.sweep_epochs = {1, 3};
    ASSERT_EQ(run_experiment(cfg), 0);
    const auto rows = read_sweep_table(dir_ / "oracle_sweep.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].prune_epoch, 1);
    EXPECT_EQ(rows[0].final_top1, first[0].final_top1);
    EXPECT_EQ(rows[1].prune_epoch, 3);
    EXPECT_TRUE(fs::exists(dir_ / "epoch_3" / "metrics.csv"));
}

TEST_F(ExperimentTest, MaskVariationWritesSummary) {
    ASSERT_EQ(run_experiment(tiny()), 0);
    auto cfg = tiny("mode = mask-variation\nvariations = 3\ncheckpoints = false\n");
    cfg.out = dir_ / "var";
    cfg.mask = dir_ / "checkpoints" / "final.mask";
    cfg.checkpoint = dir_ / "checkpoints" / "prune_start.ckpt";
    ASSERT_EQ(run_experiment(cfg), 0);
    const auto text = slurp(cfg.out / "variations.csv");
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 6);
    EXPECT_NE(text.find("\nstd,,,"), std::string::npos);
}

TEST_F(ExperimentTest, StabilityCurvePerRatio) {
    auto cfg = tiny("mode = stability-curve\ncheckpoints = false\nratios = 0.3, 0.7\n");
    ASSERT_EQ(run_experiment(cfg), 0);
    EXPECT_TRUE(fs::exists(dir_ / "stability_alpha_0.3.csv"));
    EXPECT_TRUE(fs::exists(dir_ / "stability_alpha_0.7.csv"));
}

}  // namespace
}  // namespace pat
