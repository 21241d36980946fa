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
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "pat/errors.hpp"
#include "pat/importance.hpp"

namespace pat {

/// Per-layer neuron counts of a top-k sub-network.
struct StructureVector {
    int epoch = 0;
    std::vector<int> counts;
    int k = 0;

    int layers() const noexcept { return static_cast<int>(counts.size()); }
    friend bool operator==(const StructureVector&, const StructureVector&) = default;
};

/// Structure of the k highest-scored neurons. Ties at equal score go to the
/// lexicographically smaller NeuronId. `widths` holds C_O per layer.
inline StructureVector top_k_structure(const ScoreMap& scores, int k, const std::vector<int>& widths,
                                       int epoch = 0) {
    if (k < 0) throw UsageError("top_k_structure: k must be >= 0");
    if (static_cast<std::size_t>(k) > scores.size())
        throw UsageError("top_k_structure: k=" + std::to_string(k) + " exceeds the " +
                         std::to_string(scores.size()) + " scored neurons");
    std::vector<std::pair<double, NeuronId>> ranked;
    ranked.reserve(scores.size());
    for (const auto& [n, s] : scores) {
        if (n.layer < 0 || n.layer >= static_cast<int>(widths.size()) || n.channel < 0 ||
            n.channel >= widths[static_cast<std::size_t>(n.layer)])
            throw UsageError("top_k_structure: scored neuron outside the layer widths");
        ranked.emplace_back(s, n);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    StructureVector sv;
    sv.epoch = epoch;
    sv.k = k;
    sv.counts.assign(widths.size(), 0);
    for (int i = 0; i < k; ++i) ++sv.counts[static_cast<std::size_t>(ranked[static_cast<std::size_t>(i)].second.layer)];
    return sv;
}

/// |n1 - n2| / (n1 + n2), with 0 for two empty layers.
inline double layer_distance(int n1, int n2) {
    if (n1 < 0 || n2 < 0) throw UsageError("layer_distance: negative neuron count");
    if (n1 + n2 == 0) return 0.0;
    return static_cast<double>(std::abs(n1 - n2)) / static_cast<double>(n1 + n2);
}

/// Psi = 1 - mean_l d_l.
inline double structure_similarity(const StructureVector& a, const StructureVector& b) {
    if (a.layers() != b.layers())
        throw UsageError("structure_similarity: layer counts differ (" + std::to_string(a.layers()) +
                         " vs " + std::to_string(b.layers()) + ")");
    if (a.layers() == 0) return 1.0;
    double sum = 0.0;
    for (std::size_t l = 0; l < a.counts.size(); ++l) sum += layer_distance(a.counts[l], b.counts[l]);
    return 1.0 - sum / a.layers();
}

struct EpiResult {
    double value = 0.0;
    std::vector<double> psi;  // psi[j-1] = Psi(N_t, N_{t-j})
    bool partial_window = false;
    bool k_mismatch = false;  // some window member had a different k
};

/// Past structures and EPI values of one run.
class StabilityHistory {
public:
    explicit StabilityHistory(int window = 5, int monotone_window = 5, double tau = 0.944)
        : window_(window), monotone_window_(monotone_window), tau_(tau) {
        if (window_ < 1) throw ConfigError("EPI window r must be >= 1");
        if (monotone_window_ < 0) throw ConfigError("monotone window must be >= 0");
        if (!(tau_ >= 0.0 && tau_ <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
    }

    int window() const noexcept { return window_; }
    int monotone_window() const noexcept { return monotone_window_; }
    double tau() const noexcept { return tau_; }
    const std::vector<StructureVector>& structures() const noexcept { return structures_; }
    const std::map<int, EpiResult>& epi_values() const noexcept { return epi_; }
    bool empty() const noexcept { return structures_.empty(); }

    std::optional<double> epi_at(int epoch) const {
        const auto it = epi_.find(epoch);
        if (it == epi_.end()) return std::nullopt;
        return it->second.value;
    }

    /// Append a structure with no EPI (the first epoch of a run).
    void record(const StructureVector& sv) {
        if (!structures_.empty() && sv.epoch <= structures_.back().epoch)
            throw UsageError("stability history epochs must increase");
        structures_.push_back(sv);
    }
    void record_epi(int epoch, EpiResult r) { epi_[epoch] = std::move(r); }

private:
    int window_;
    int monotone_window_;
    double tau_;
    std::vector<StructureVector> structures_;
    std::map<int, EpiResult> epi_;
};

/// Mean Psi between N_t and the previous min(r, available) structures; the
/// result and N_t are appended to the history.
inline EpiResult epi(StabilityHistory& history, const StructureVector& current) {
    if (history.empty())
        throw UsageError("EPI is undefined without a previous structure");
    const auto& past = history.structures();
    const std::size_t avail = std::min<std::size_t>(past.size(), static_cast<std::size_t>(history.window()));
    EpiResult r;
    double sum = 0.0;
    for (std::size_t j = 1; j <= avail; ++j) {
        const auto& prev = past[past.size() - j];
        const double psi = structure_similarity(current, prev);
        r.psi.push_back(psi);
        r.k_mismatch = r.k_mismatch || prev.k != current.k;
        sum += psi;
    }
    r.value = sum / static_cast<double>(avail);
    r.partial_window = avail < static_cast<std::size_t>(history.window());
    history.record(current);
    history.record_epi(current.epoch, r);
    return r;
}

/// Trigger rule: EPI_t >= tau, EPI_t >= EPI_{t-j} for j = 1..w_mono, and both
/// the EPI window and the monotone window are fully populated.
inline bool should_prune(const StabilityHistory& history, int t) {
    const auto cur = history.epi_at(t);
    if (!cur) return false;
    if (t < history.window() + history.monotone_window()) return false;
    if (*cur < history.tau()) return false;
    for (int j = 1; j <= history.monotone_window(); ++j) {
        const auto prev = history.epi_at(t - j);
        if (!prev || *cur < *prev) return false;
    }
    return true;
}

enum class RankMethod { spearman, kendall };

constexpr std::string_view to_string(RankMethod m) noexcept {
    return m == RankMethod::spearman ? "spearman" : "kendall";
}

namespace detail {

inline std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

/// Spearman's rho (Pearson on average ranks) or Kendall's tau-b. Returns 0
/// when either side has no rank variation.
inline double rank_correlation(const ScoreMap& a, const ScoreMap& b, RankMethod method) {
    if (a.size() != b.size()) throw UsageError("rank_correlation: key sets differ in size");
    std::vector<double> xa, xb;
    xa.reserve(a.size());
    xb.reserve(b.size());
    auto ib = b.begin();
    for (auto ia = a.begin(); ia != a.end(); ++ia, ++ib) {
        if (ia->first != ib->first) throw UsageError("rank_correlation: key sets differ");
        xa.push_back(ia->second);
        xb.push_back(ib->second);
    }
    const std::size_t n = xa.size();
    if (n < 2) return 0.0;
    if (method == RankMethod::spearman) {
        const auto ra = detail::average_ranks(xa);
        const auto rb = detail::average_ranks(xb);
        const double mean = (static_cast<double>(n) + 1.0) / 2.0;
        double sab = 0.0, saa = 0.0, sbb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sab += (ra[i] - mean) * (rb[i] - mean);
            saa += (ra[i] - mean) * (ra[i] - mean);
            sbb += (rb[i] - mean) * (rb[i] - mean);
        }
        if (saa == 0.0 || sbb == 0.0) return 0.0;
        return sab / std::sqrt(saa * sbb);
    }
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double da = xa[i] - xa[j];
            const double db = xb[i] - xb[j];
            if (da == 0.0 && db == 0.0) continue;
            if (da == 0.0) {
                ++ties_a;
            } else if (db == 0.0) {
                ++ties_b;
            } else if ((da > 0) == (db > 0)) {
                ++concordant;
            } else {
                ++discordant;
            }
        }
    const double denom = std::sqrt(static_cast<double>(concordant + discordant + ties_a) *
                                   static_cast<double>(concordant + discordant + ties_b));
    if (denom == 0.0) return 0.0;
    return static_cast<double>(concordant - discordant) / denom;
}

}  // namespace pat
