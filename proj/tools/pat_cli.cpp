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
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "pat/experiment.hpp"

namespace {

struct Overrides {
    std::string config;
    std::optional<std::string> out, mask, checkpoint, criterion, sweep;
    std::optional<std::uint64_t> seed;
    std::optional<double> prune_ratio, tau, psi;
    std::optional<int> r, epochs, variations;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "Key-value config file");
    cmd->add_option("--out", o.out, "Output directory");
    cmd->add_option("--seed", o.seed, "Run seed (initialization and shuffling)");
    cmd->add_option("--prune-ratio", o.prune_ratio, "Fraction of neurons to prune, in (0, 1)");
    cmd->add_option("--criterion", o.criterion, "Importance criterion")
        ->check(CLI::IsMember({"magnitude", "gradient"}));
    cmd->add_option("--tau", o.tau, "EPI threshold");
    cmd->add_option("--r", o.r, "EPI window");
    cmd->add_option("--epochs", o.epochs, "Total training epochs");
}

pat::ExperimentConfig resolve(const std::string& mode, const Overrides& o) {
    auto kv = o.config.empty() ? pat::KeyValueConfig{} : pat::KeyValueConfig::load(o.config);
    auto put = [&](const char* key, const auto& v) {
        if (!v) return;
        if constexpr (std::is_same_v<std::decay_t<decltype(*v)>, std::string>)
            kv.set(key, *v);
        else
            kv.set(key, pat::format_double(static_cast<double>(*v)));
    };
    kv.set("mode", mode);
    put("out", o.out);
    put("mask", o.mask);
    put("checkpoint", o.checkpoint);
    put("criterion", o.criterion);
    put("sweep.epochs", o.sweep);
    if (o.seed) kv.set("seed", std::to_string(*o.seed));
    put("prune_ratio", o.prune_ratio);
    put("tau", o.tau);
    put("variation.psi", o.psi);
    if (o.r) kv.set("r", std::to_string(*o.r));
    if (o.epochs) kv.set("epochs", std::to_string(*o.epochs));
    if (o.variations) kv.set("variations", std::to_string(*o.variations));
    return pat::experiment_from_config(kv);
}

int inspect(const std::string& path) {
    const auto ck = pat::load_checkpoint<float>(path);
    std::cout << "checkpoint " << path << "\n"
              << "  epoch   " << ck.net.epoch() << "\n"
              << "  seed    " << ck.net.seed() << "\n"
              << "  layers  " << ck.net.specs().size() << "\n";
    for (std::size_t i = 0; i < ck.net.specs().size(); ++i)
        std::cout << "    " << i << "  " << pat::describe(ck.net.specs()[i]) << "\n";
    std::cout << "  neurons " << ck.net.neuron_count() << " (" << ck.state.pruned().size()
              << " pruned)\n";
    for (int u = 0; u < ck.net.unit_count(); ++u)
        std::cout << "    unit " << u << "  " << ck.net.active_count(u) << "/"
                  << ck.net.unit(u).channels << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pruning-aware training experiments"};
    app.require_subcommand(1);
    Overrides o;

    auto* pat_cmd = app.add_subcommand("pat", "Dense -> prune -> sparse training run");
    add_common(pat_cmd, o);

    auto* sweep = app.add_subcommand("oracle-sweep", "One run per forced prune epoch");
    add_common(sweep, o);
    sweep->add_option("--sweep", o.sweep, "Prune epochs, e.g. \"0,2,4\"");

    auto* replay = app.add_subcommand("lottery-replay", "Train a saved mask from initialization");
    add_common(replay, o);
    replay->add_option("--mask", o.mask, "Mask file")->check(CLI::ExistingFile);

    auto* vary = app.add_subcommand("mask-variation", "Train mask variants from one checkpoint");
    add_common(vary, o);
    vary->add_option("--mask", o.mask, "Source mask file")->check(CLI::ExistingFile);
    vary->add_option("--checkpoint", o.checkpoint, "Starting checkpoint")->check(CLI::ExistingFile);
    vary->add_option("--variations", o.variations, "Number of variants");
    vary->add_option("--psi", o.psi, "Perturb layer counts to this structure similarity");

    auto* curve = app.add_subcommand("stability-curve", "Dense training with EPI logs per ratio");
    add_common(curve, o);

    std::string ckpt_path;
    auto* insp = app.add_subcommand("inspect", "Print a checkpoint summary");
    insp->add_option("checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (insp->parsed()) return inspect(ckpt_path);
        for (auto* cmd : {pat_cmd, sweep, replay, vary, curve}) {
            if (!cmd->parsed()) continue;
            const auto cfg = resolve(cmd->get_name(), o);
            const int rc = pat::run_experiment(cfg);
            if (rc == 0) std::cout << cmd->get_name() << ": wrote " << cfg.out.string() << "\n";
            return rc;
        }
    } catch (const pat::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const pat::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
