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

#include <string>
#include <string_view>

#include "pat/errors.hpp"

namespace pat {

enum class LayerKind { dense, conv2d, batchnorm, relu, maxpool, avgpool_global };

constexpr std::string_view to_string(LayerKind kind) noexcept {
    switch (kind) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::avgpool_global: return "avgpool-global";
    }
    return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
    for (auto k : {LayerKind::dense, LayerKind::conv2d, LayerKind::batchnorm, LayerKind::relu,
                   LayerKind::maxpool, LayerKind::avgpool_global}) {
        if (to_string(k) == s) return k;
    }
    throw FormatError("unknown layer kind '" + std::string(s) + "'");
}

/// Declarative description of one layer.
///
/// For conv2d, `out_channels`/`in_channels` are C_O/C_I; for dense they are
/// out_features/in_features; for batchnorm `out_channels` is the channel count.
/// Max pooling uses a square window with stride equal to `kernel`.
struct LayerSpec {
    LayerKind kind = LayerKind::relu;
    int out_channels = 0;
    int in_channels = 0;
    int kernel = 1;
    int stride = 1;
    int padding = 0;
    bool bias = false;
    bool prunable = false;

    static LayerSpec dense(int in_features, int out_features, bool prunable = true) {
        return {LayerKind::dense, out_features, in_features, 1, 1, 0, true, prunable};
    }
    static LayerSpec conv2d(int in_channels, int out_channels, int kernel, int stride = 1,
                            int padding = 0, bool bias = true, bool prunable = true) {
        return {LayerKind::conv2d, out_channels, in_channels, kernel, stride, padding, bias,
                prunable};
    }
    static LayerSpec batchnorm(int channels) {
        return {LayerKind::batchnorm, channels, channels, 1, 1, 0, false, false};
    }
    static LayerSpec relu() { return {LayerKind::relu}; }
    static LayerSpec maxpool(int kernel) {
        return {LayerKind::maxpool, 0, 0, kernel, kernel, 0, false, false};
    }
    static LayerSpec avgpool_global() { return {LayerKind::avgpool_global}; }

    bool has_weights() const noexcept {
        return kind == LayerKind::dense || kind == LayerKind::conv2d;
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::string describe(const LayerSpec& s) {
    std::string out(to_string(s.kind));
    switch (s.kind) {
        case LayerKind::dense:
            out += "(" + std::to_string(s.in_channels) + "->" + std::to_string(s.out_channels) + ")";
            break;
        case LayerKind::conv2d:
            out += "(" + std::to_string(s.in_channels) + "->" + std::to_string(s.out_channels) +
                   ", k=" + std::to_string(s.kernel) + ", s=" + std::to_string(s.stride) +
                   ", p=" + std::to_string(s.padding) + ")";
            break;
        case LayerKind::batchnorm:
            out += "(" + std::to_string(s.out_channels) + ")";
            break;
        case LayerKind::maxpool:
            out += "(" + std::to_string(s.kernel) + ")";
            break;
        default:
            break;
    }
    return out;
}

}  // namespace pat
