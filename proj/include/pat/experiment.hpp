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
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pat/checkpoint.hpp"
#include "pat/config.hpp"
#include "pat/data.hpp"
#include "pat/models.hpp"
#include "pat/orchestrator.hpp"
#include "pat/report.hpp"

namespace pat {

enum class ExperimentMode { pat, oracle_sweep, lottery_replay, mask_variation, stability_curve };

constexpr std::string_view to_string(ExperimentMode m) noexcept {
    switch (m) {
        case ExperimentMode::pat: return "pat";
        case ExperimentMode::oracle_sweep: return "oracle-sweep";
        case ExperimentMode::lottery_replay: return "lottery-replay";
        case ExperimentMode::mask_variation: return "mask-variation";
        case ExperimentMode::stability_curve: return "stability-curve";
    }
    return "?";
}

inline ExperimentMode experiment_mode_from_string(std::string_view s) {
    for (auto m : {ExperimentMode::pat, ExperimentMode::oracle_sweep, ExperimentMode::lottery_replay,
                   ExperimentMode::mask_variation, ExperimentMode::stability_curve})
        if (to_string(m) == s) return m;
    throw ConfigError("unknown mode '" + std::string(s) + "'");
}

struct DataSource {
    std::string kind = "synth";  // synth | idx
    int classes = 4;
    int train_per_class = 500;
    int eval_per_class = 250;
    std::uint64_t data_seed = 7;
    SynthOptions synth;
    std::filesystem::path train_images, train_labels, eval_images, eval_labels;
    Normalization norm;
};

struct ExperimentConfig {
    ExperimentMode mode = ExperimentMode::pat;
    std::string model = "conv3";
    ModelOptions model_options;
    DataSource data;
    PatConfig pat;
    std::filesystem::path out = "out";
    bool save_checkpoints = true;
    std::vector<int> sweep_epochs;              // oracle-sweep
    std::optional<std::filesystem::path> mask;  // lottery-replay, mask-variation
    std::optional<std::filesystem::path> checkpoint;
    int variations = 5;                         // mask-variation
    std::optional<double> variation_psi;        // perturb structure to this Psi instead
    std::vector<double> ratios = {0.3, 0.5, 0.7};  // stability-curve

    void validate() const {
        pat.validate();
        if (mode == ExperimentMode::oracle_sweep) {
            if (sweep_epochs.empty()) throw ConfigError("oracle-sweep needs sweep epochs");
            for (int e : sweep_epochs)
                if (e < 0 || e >= pat.train.epochs)
                    throw ConfigError("sweep epoch " + std::to_string(e) + " outside [0, epochs)");
        }
        if (mode == ExperimentMode::lottery_replay && !mask)
            throw ConfigError("lottery-replay needs a mask file (--mask)");
        if (mode == ExperimentMode::mask_variation) {
            if (!mask) throw ConfigError("mask-variation needs a mask file (--mask)");
            if (!checkpoint) throw ConfigError("mask-variation needs a checkpoint (--checkpoint)");
            if (variations < 1) throw ConfigError("variations must be >= 1");
            if (variation_psi && !(*variation_psi >= 0.0 && *variation_psi <= 1.0))
                throw ConfigError("variation psi must lie in [0, 1]");
        }
        if (mode == ExperimentMode::stability_curve) {
            if (ratios.empty()) throw ConfigError("stability-curve needs at least one ratio");
            for (double a : ratios)
                if (!(a > 0.0 && a < 1.0)) throw ConfigError("ratios must lie in (0, 1)");
        }
        if (data.kind != "synth" && data.kind != "idx")
            throw ConfigError("data.source must be synth or idx");
        if (data.kind == "idx" && (data.train_images.empty() || data.train_labels.empty() ||
                                   data.eval_images.empty() || data.eval_labels.empty()))
            throw ConfigError("idx data needs train/eval image and label paths");
    }
};

/// Costs in a text file, one `layer channel cost` triple per line.
inline CostTable load_cost_table(const std::filesystem::path& path, double lambda) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read cost table " + path.string());
    CostTable t;
    t.lambda = lambda;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        std::istringstream ls(line);
        NeuronId n;
        double c = 0.0;
        if (!(ls >> n.layer)) continue;
        if (!(ls >> n.channel >> c)) throw ConfigError("malformed cost table line: " + line);
        t.cost[n] = c;
    }
    return t;
}

/// Reads an ExperimentConfig from key-value pairs; see README for the keys.
inline ExperimentConfig experiment_from_config(const KeyValueConfig& kv) {
    ExperimentConfig c;
    if (auto m = kv.get("mode")) c.mode = experiment_mode_from_string(*m);
    c.model = kv.get_or("model", c.model);
    c.model_options.width = kv.number("model.width", c.model_options.width);
    c.model_options.hidden = kv.number("model.hidden", c.model_options.hidden);

    auto& d = c.data;
    d.kind = kv.get_or("data.source", d.kind);
    d.classes = kv.number("data.classes", d.classes);
    d.train_per_class = kv.number("data.train_per_class", d.train_per_class);
    d.eval_per_class = kv.number("data.eval_per_class", d.eval_per_class);
    d.data_seed = kv.number("data.seed", d.data_seed);
    d.synth.size = kv.number("data.size", d.synth.size);
    d.synth.noise = kv.number("data.noise", d.synth.noise);
    d.synth.max_shift = kv.number("data.max_shift", d.synth.max_shift);
    d.train_images = kv.get_or("data.train_images", "");
    d.train_labels = kv.get_or("data.train_labels", "");
    d.eval_images = kv.get_or("data.eval_images", "");
    d.eval_labels = kv.get_or("data.eval_labels", "");
    d.norm.mean = kv.list<double>("data.mean");
    d.norm.stddev = kv.list<double>("data.std");

    auto& p = c.pat;
    auto& t = p.train;
    t.epochs = kv.number("epochs", t.epochs);
    t.batch_size = kv.number("batch_size", t.batch_size);
    t.peak_lr = kv.number("lr", t.peak_lr);
    t.warmup_epochs = kv.number("warmup_epochs", t.warmup_epochs);
    t.weight_decay = kv.number("weight_decay", t.weight_decay);
    t.momentum = kv.number("momentum", t.momentum);
    t.seed = kv.number("seed", t.seed);
    p.alpha = kv.number("prune_ratio", p.alpha);
    if (auto v = kv.get("criterion")) p.criterion = criterion_from_string(*v);
    p.tau = kv.number("tau", p.tau);
    p.window = kv.number("r", p.window);
    p.monotone_window = kv.number("w_mono", p.monotone_window);
    p.steps = kv.number("prune_steps", p.steps);
    p.floor = kv.number("layer_floor", p.floor);
    p.min_batches_per_prune_step = kv.number("min_batches_per_step", p.min_batches_per_prune_step);
    p.max_dense_epochs = kv.number("max_dense_epochs", p.max_dense_epochs);
    p.fixed_prune_epoch = kv.optional_number<int>("prune_epoch");
    p.warm_start_prune_importance = kv.flag("warm_start_importance", p.warm_start_prune_importance);
    if (auto f = kv.get("cost.file")) p.costs = load_cost_table(*f, kv.number("cost.lambda", 0.0));

    c.out = kv.get_or("out", c.out.string());
    c.save_checkpoints = kv.flag("checkpoints", c.save_checkpoints);
    c.sweep_epochs = kv.list<int>("sweep.epochs");
    if (c.sweep_epochs.empty() && kv.has("sweep.to")) {
        const int from = kv.number("sweep.from", 0), to = kv.number("sweep.to", 0),
                  stride = kv.number("sweep.stride", 1);
        if (stride < 1) throw ConfigError("sweep.stride must be >= 1");
        for (int e = from; e <= to; e += stride) c.sweep_epochs.push_back(e);
    }
    if (auto m = kv.get("mask")) c.mask = *m;
    if (auto m = kv.get("checkpoint")) c.checkpoint = *m;
    c.variations = kv.number("variations", c.variations);
    c.variation_psi = kv.optional_number<double>("variation.psi");
    c.ratios = kv.list<double>("ratios", c.ratios);

    if (const auto extra = kv.unused(); !extra.empty()) {
        std::string names;
        for (const auto& k : extra) names += (names.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config keys: " + names);
    }
    return c;
}

struct DataSplits {
    Dataset train;
    Dataset eval;
};

inline DataSplits load_data(const DataSource& src) {
    DataSplits d;
    if (src.kind == "synth") {
        SynthOptions tr = src.synth, ev = src.synth;
        tr.split = Split::train;
        ev.split = Split::eval;
        d.train = synth_dataset(src.classes, src.train_per_class, mix_seed(src.data_seed, 1), tr);
        d.eval = synth_dataset(src.classes, src.eval_per_class, mix_seed(src.data_seed, 2), ev);
        apply_normalization(d.train, src.norm);
        apply_normalization(d.eval, src.norm);
    } else {
        d.train = load_idx(src.train_images, src.train_labels, src.norm, src.classes, Split::train);
        d.eval = load_idx(src.eval_images, src.eval_labels, src.norm, d.train.classes, Split::eval);
    }
    if (!(d.train.shape == d.eval.shape)) throw ConfigError("train and eval image shapes differ");
    return d;
}

template <std::floating_point T = float>
BasicNetwork<T> make_network(const ExperimentConfig& cfg, const Dataset& train) {
    return build_network<T>(model_specs(cfg.model, train.shape, train.classes, cfg.model_options),
                            train.shape, cfg.pat.train.seed);
}

// --- mask variations --------------------------------------------------------

/// Same per-layer active counts, channel identities resampled uniformly.
inline std::vector<std::vector<std::uint8_t>> count_preserving_variation(
    const std::vector<std::vector<std::uint8_t>>& masks, Rng& rng) {
    std::vector<std::vector<std::uint8_t>> out;
    for (const auto& m : masks) {
        std::vector<std::uint8_t> v = m;
        shuffle(std::span<std::uint8_t>(v), rng);
        out.push_back(std::move(v));
    }
    return out;
}

inline std::vector<int> mask_counts(const std::vector<std::vector<std::uint8_t>>& masks) {
    std::vector<int> c;
    for (const auto& m : masks) {
        int n = 0;
        for (auto b : m) n += b != 0;
        c.push_back(n);
    }
    return c;
}

inline double counts_similarity(const std::vector<int>& a, const std::vector<int>& b) {
    StructureVector x, y;
    x.counts = a;
    y.counts = b;
    return structure_similarity(x, y);
}

/// Moves single neurons between random layers (keeping the total and every
/// layer within [1, width]) until Psi against `counts` drops to `target_psi`.
/// The step that lands closest to the target is kept.
inline std::vector<int> perturb_counts(const std::vector<int>& counts, const std::vector<int>& widths,
                                       double target_psi, Rng& rng, int max_moves = 10000) {
    if (counts.size() != widths.size()) throw UsageError("perturb_counts: size mismatch");
    if (counts.size() < 2) throw UsageError("perturb_counts needs at least two layers");
    std::vector<int> cur = counts, best = counts;
    double best_gap = std::abs(1.0 - target_psi);
    for (int i = 0; i < max_moves; ++i) {
        const auto from = uniform_index(rng, cur.size());
        const auto to = uniform_index(rng, cur.size());
        if (from == to || cur[from] <= 1 || cur[to] >= widths[to]) continue;
        --cur[from];
        ++cur[to];
        const double psi = counts_similarity(counts, cur);
        if (std::abs(psi - target_psi) < best_gap) {
            best_gap = std::abs(psi - target_psi);
            best = cur;
        }
        if (psi <= target_psi) break;
    }
    return best;
}

/// A random mask with the given per-layer active counts.
inline std::vector<std::vector<std::uint8_t>> random_mask_with_counts(const std::vector<int>& counts,
                                                                      const std::vector<int>& widths,
                                                                      Rng& rng) {
    std::vector<std::vector<std::uint8_t>> out;
    for (std::size_t l = 0; l < counts.size(); ++l) {
        if (counts[l] < 0 || counts[l] > widths[l]) throw UsageError("layer count outside [0, width]");
        std::vector<std::uint8_t> m(static_cast<std::size_t>(widths[l]), 0);
        std::fill(m.begin(), m.begin() + counts[l], std::uint8_t{1});
        shuffle(std::span<std::uint8_t>(m), rng);
        out.push_back(std::move(m));
    }
    return out;
}

struct VariationRun {
    int index = 0;
    double psi = 1.0;  // structure similarity to the source mask
    std::vector<int> counts;
    double final_top1 = 0.0;
};

struct VariationSummary {
    std::vector<VariationRun> runs;
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation
};

inline void summarize(VariationSummary& s) {
    const double n = static_cast<double>(s.runs.size());
    if (s.runs.empty()) return;
    double sum = 0.0;
    for (const auto& r : s.runs) sum += r.final_top1;
    s.mean = sum / n;
    double ss = 0.0;
    for (const auto& r : s.runs) ss += (r.final_top1 - s.mean) * (r.final_top1 - s.mean);
    s.stddev = s.runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
}

/// Train `count` mask variants from one starting network. Without
/// `target_psi` the variants keep the source's per-layer counts; with it the
/// counts are perturbed towards that similarity first.
template <std::floating_point T>
VariationSummary run_mask_variations(const BasicNetwork<T>& start, const MaskFile& source,
                                     const TrainConfig& cfg, const Dataset& train,
                                     const Dataset& eval, int count,
                                     std::optional<double> target_psi, std::uint64_t seed) {
    VariationSummary s;
    const auto widths = source.widths();
    const auto counts = source.active_counts();
    const int from_epoch = static_cast<int>(start.epoch());
    for (int i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, 0x7A51u + static_cast<std::uint64_t>(i)));
        VariationRun run;
        run.index = i;
        std::vector<std::vector<std::uint8_t>> masks;
        if (target_psi) {
            run.counts = perturb_counts(counts, widths, *target_psi, rng);
            masks = random_mask_with_counts(run.counts, widths, rng);
        } else {
            masks = count_preserving_variation(source.masks, rng);
            run.counts = mask_counts(masks);
        }
        run.psi = counts_similarity(counts, run.counts);
        BasicNetwork<T> net = start;
        net.set_masks(masks);
        run.final_top1 = train_fixed_mask(net, cfg, train, eval, from_epoch).final_top1;
        s.runs.push_back(std::move(run));
    }
    summarize(s);
    return s;
}

inline std::string variations_csv(const VariationSummary& s) {
    std::string out = "index,psi,counts,final_top1\n";
    for (const auto& r : s.runs) {
        std::string counts;
        for (std::size_t l = 0; l < r.counts.size(); ++l) counts += (l ? ";" : "") + std::to_string(r.counts[l]);
        out += std::to_string(r.index) + "," + format_double(r.psi) + "," + counts + "," +
               format_double(r.final_top1) + "\n";
    }
    out += "mean,,," + format_double(s.mean) + "\nstd,,," + format_double(s.stddev) + "\n";
    return out;
}

// --- dense stability curves -------------------------------------------------

/// Dense training for all T epochs, recording epoch-average scores.
template <std::floating_point T>
RunReport dense_score_trace(BasicNetwork<T>& net, const PatConfig& cfg, const Dataset& train,
                            const Dataset& eval) {
    cfg.train.validate();
    RunReport rep;
    rep.seed = cfg.train.seed;
    rep.total_epochs = cfg.train.epochs;
    rep.alpha = cfg.alpha;
    rep.criterion = cfg.criterion;
    rep.tau = cfg.tau;
    rep.total_neurons = net.neuron_count();
    rep.flops_dense = count_flops(net, true);
    ImportanceTable table(cfg.criterion, cfg.costs);
    for (int t = 0; t < cfg.train.epochs; ++t) {
        table.reset();
        EpochRecord rec;
        rec.epoch = t;
        rec.lr = lr_at_epoch(t, cfg.train);
        const auto st = train_epoch(net, train, cfg.train, t, &table);
        rec.train_loss = st.loss;
        rec.train_acc = st.accuracy;
        const auto ev = evaluate(net, eval);
        rec.eval_loss = ev.loss;
        rec.eval_acc = ev.accuracy;
        rec.flops = count_flops(net);
        rec.remaining = rep.total_neurons;
        rep.epochs.push_back(rec);
        rep.trace.push_back({t, ranking_scores(table)});
    }
    rep.final_masks = net.masks();
    rep.flops_final = count_flops(net);
    rep.final_top1 = rep.epochs.empty() ? 0.0 : rep.epochs.back().eval_acc;
    rep.stability = stability_log(rep.trace, cfg.alpha, cfg.criterion, net.unit_widths(), cfg.window);
    return rep;
}

// --- oracle sweep -----------------------------------------------------------

struct SweepRow {
    int prune_epoch = 0;
    std::uint64_t seed = 0;
    double final_top1 = 0.0;
    double flops_reduction = 0.0;
};

inline constexpr const char* kSweepHeader = "prune_epoch,seed,final_top1,flops_reduction";

inline std::string sweep_row(const SweepRow& r) {
    return std::to_string(r.prune_epoch) + "," + std::to_string(r.seed) + "," +
           format_double(r.final_top1) + "," + format_double(r.flops_reduction) + "\n";
}

/// Rows already present in a sweep table; used to resume an interrupted sweep.
inline std::vector<SweepRow> read_sweep_table(const std::filesystem::path& path) {
    std::vector<SweepRow> rows;
    std::ifstream in(path);
    if (!in) return rows;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string cell[4];
        for (auto& c : cell)
            if (!std::getline(ls, c, ',')) return rows;  // a torn final line is dropped
        SweepRow r;
        try {
            r.prune_epoch = std::stoi(cell[0]);
            r.seed = std::stoull(cell[1]);
            r.final_top1 = std::stod(cell[2]);
            r.flops_reduction = std::stod(cell[3]);
        } catch (const std::exception&) {
            return rows;
        }
        rows.push_back(r);
    }
    return rows;
}

// --- driver -----------------------------------------------------------------

namespace detail {

inline void prepare_dir(const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    const auto probe = dir / ".write-test";
    {
        std::ofstream f(probe);
        if (!f) throw IoError("output directory " + dir.string() + " is not writable");
    }
    std::filesystem::remove(probe, ec);
}

}  // namespace detail

/// Runs one experiment and writes its artifacts under cfg.out. Returns the
/// process exit status.
inline int run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    detail::prepare_dir(cfg.out);
    const auto data = load_data(cfg.data);
    RunHooks hooks;
    if (cfg.save_checkpoints) hooks.checkpoint_dir = cfg.out / "checkpoints";

    switch (cfg.mode) {
        case ExperimentMode::pat: {
            auto net = make_network(cfg, data.train);
            const auto res = run_pat(net, cfg.pat, data.train, data.eval, hooks);
            emit_metrics(res.report, cfg.out);
            return 0;
        }
        case ExperimentMode::oracle_sweep: {
            const auto table = cfg.out / "oracle_sweep.csv";
            std::set<int> done;
            for (const auto& r : read_sweep_table(table))
                if (r.seed == cfg.pat.train.seed) done.insert(r.prune_epoch);
            std::string existing;
            for (const auto& r : read_sweep_table(table)) existing += sweep_row(r);
            detail::write_text(table, std::string(kSweepHeader) + "\n" + existing);
            for (int e : cfg.sweep_epochs) {
                if (done.count(e)) continue;
                PatConfig pc = cfg.pat;
                pc.fixed_prune_epoch = e;
                auto net = make_network(cfg, data.train);
                RunHooks h;
                const auto dir = cfg.out / ("epoch_" + std::to_string(e));
                if (cfg.save_checkpoints) h.checkpoint_dir = dir / "checkpoints";
                const auto res = run_pat(net, pc, data.train, data.eval, h);
                emit_metrics(res.report, dir);
                std::ofstream out(table, std::ios::app | std::ios::binary);
                out << sweep_row({e, pc.train.seed, res.report.final_top1,
                                  res.report.flops_reduction()});
                if (!out) throw IoError("cannot append to " + table.string());
            }
            return 0;
        }
        case ExperimentMode::lottery_replay: {
            const auto mask = load_mask(*cfg.mask);
            auto net = make_network(cfg, data.train);
            apply_mask(net, mask);
            auto rep = train_fixed_mask(net, cfg.pat.train, data.train, data.eval, 0);
            rep.alpha = cfg.pat.alpha;
            rep.criterion = cfg.pat.criterion;
            rep.tau = cfg.pat.tau;
            emit_metrics(rep, cfg.out);
            return 0;
        }
        case ExperimentMode::mask_variation: {
            const auto mask = load_mask(*cfg.mask);
            auto ck = load_checkpoint<float>(*cfg.checkpoint);
            if (mask.widths() != ck.net.unit_widths())
                throw SpecMismatchError("mask and checkpoint have different layer widths");
            const auto s = run_mask_variations(ck.net, mask, cfg.pat.train, data.train, data.eval,
                                               cfg.variations, cfg.variation_psi, cfg.pat.train.seed);
            detail::write_text(cfg.out / "variations.csv", variations_csv(s));
            return 0;
        }
        case ExperimentMode::stability_curve: {
            auto net = make_network(cfg, data.train);
            const auto rep = dense_score_trace(net, cfg.pat, data.train, data.eval);
            emit_metrics(rep, cfg.out);
            for (double a : cfg.ratios) {
                const auto rows = stability_log(rep.trace, a, cfg.pat.criterion, net.unit_widths(),
                                                cfg.pat.window);
                detail::write_text(cfg.out / ("stability_alpha_" + format_double(a) + ".csv"),
                                   stability_csv(rows));
            }
            return 0;
        }
    }
    return 1;
}

}  // namespace pat
