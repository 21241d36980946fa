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

#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pat/errors.hpp"
#include "pat/orchestrator.hpp"

namespace pat {

/// Shortest round-trip decimal form; identical across runs and locales.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string format_optional(const std::optional<double>& v) {
    return v ? format_double(*v) : std::string();
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::string join(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    return line + '\n';
}

}  // namespace detail

inline constexpr const char* kMetricsHeader =
    "epoch,status,lr,train_loss,train_acc,eval_loss,eval_acc,epi,epi_partial,flops,remaining";

inline std::string metrics_row(const EpochRecord& r) {
    return detail::join({std::to_string(r.epoch), std::string(to_string(r.status)),
                         format_double(r.lr), format_double(r.train_loss),
                         format_double(r.train_acc), format_double(r.eval_loss),
                         format_double(r.eval_acc), format_optional(r.epi),
                         r.epi_partial ? "1" : "0", format_double(r.flops),
                         std::to_string(r.remaining)});
}

inline std::string metrics_csv(const RunReport& rep) {
    std::string out = std::string(kMetricsHeader) + '\n';
    for (const auto& r : rep.epochs) out += metrics_row(r);
    return out;
}

/// Psi columns run to the widest window seen in the log.
inline std::string stability_csv(const std::vector<StabilityRecord>& rows) {
    std::size_t width = 0;
    for (const auto& r : rows) width = std::max(width, r.psi.size());
    std::vector<std::string> head = {"epoch", "k", "alpha", "criterion", "epi"};
    for (std::size_t j = 1; j <= width; ++j) head.push_back("psi_" + std::to_string(j));
    head.insert(head.end(), {"partial", "spearman", "kendall", "structure"});
    std::string out = detail::join(head);
    for (const auto& r : rows) {
        std::vector<std::string> c = {std::to_string(r.epoch), std::to_string(r.k),
                                      format_double(r.alpha), std::string(to_string(r.criterion)),
                                      format_optional(r.epi)};
        for (std::size_t j = 0; j < width; ++j)
            c.push_back(j < r.psi.size() ? format_double(r.psi[j]) : std::string());
        std::string structure;
        for (std::size_t l = 0; l < r.structure.counts.size(); ++l)
            structure += (l ? ";" : "") + std::to_string(r.structure.counts[l]);
        c.insert(c.end(), {r.partial ? "1" : "0", format_optional(r.spearman),
                           format_optional(r.kendall), structure});
        out += detail::join(c);
    }
    return out;
}

inline std::string importance_csv(const RunReport& rep) {
    std::string out = "epoch,criterion,layer,channel,score\n";
    const std::string crit(to_string(rep.criterion));
    for (const auto& e : rep.trace)
        for (const auto& [n, s] : e.scores)
            out += detail::join({std::to_string(e.epoch), crit, std::to_string(n.layer),
                                 std::to_string(n.channel), format_double(s)});
    return out;
}

inline nlohmann::ordered_json summary_json(const RunReport& rep) {
    nlohmann::ordered_json j;
    j["seed"] = rep.seed;
    j["total_epochs"] = rep.total_epochs;
    j["alpha"] = rep.alpha;
    j["criterion"] = std::string(to_string(rep.criterion));
    j["tau"] = rep.tau;
    j["prune_epoch"] = rep.prune_epoch;
    j["trigger_epoch"] = rep.trigger_epoch;
    j["forced"] = rep.forced;
    j["fixed"] = rep.fixed;
    j["total_neurons"] = rep.total_neurons;
    j["pruned"] = rep.pruned;
    j["final_top1"] = rep.final_top1;
    j["flops_dense"] = rep.flops_dense;
    j["flops_final"] = rep.flops_final;
    j["flops_reduction"] = rep.flops_reduction();
    j["wall_seconds"] = rep.wall_seconds;
    std::vector<int> remaining;
    for (const auto& m : rep.final_masks) {
        int n = 0;
        for (auto b : m) n += b != 0;
        remaining.push_back(n);
    }
    j["remaining_per_layer"] = remaining;
    return j;
}

/// Writes metrics.csv, summary.json, stability.csv and importance.csv into
/// `dir`, creating it if needed.
inline void emit_metrics(const RunReport& rep, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
    detail::write_text(dir / "metrics.csv", metrics_csv(rep));
    detail::write_text(dir / "summary.json", summary_json(rep).dump(2) + "\n");
    detail::write_text(dir / "stability.csv", stability_csv(rep.stability));
    detail::write_text(dir / "importance.csv", importance_csv(rep));
}

}  // namespace pat
