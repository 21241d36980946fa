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
#include <vector>

#include "pat/errors.hpp"
#include "pat/layers.hpp"
#include "pat/tensor.hpp"

namespace pat {

/// Built-in architectures, sized for the synthetic data.
///
///   mlp2     dense(in->h) relu dense(h->classes)
///   mlp2-bn  dense(in->h) batchnorm relu dense(h->classes)
///   conv3    three 3x3 conv+bn+relu blocks (w, 2w stride 2, 2w), global
///            average pool, dense classifier
struct ModelOptions {
    int width = 8;    // conv3: first block width; later blocks use 2 * width
    int hidden = 32;  // mlp2: hidden units
};

inline std::vector<std::string> model_names() { return {"mlp2", "mlp2-bn", "conv3"}; }

inline std::vector<LayerSpec> model_specs(const std::string& name, Shape input, int classes,
                                          const ModelOptions& opt = {}) {
    if (classes < 2) throw ConfigError("model needs at least two classes");
    const int in = static_cast<int>(input.size());
    if (name == "mlp2")
        return {LayerSpec::dense(in, opt.hidden), LayerSpec::relu(),
                LayerSpec::dense(opt.hidden, classes)};
    if (name == "mlp2-bn")
        return {LayerSpec::dense(in, opt.hidden), LayerSpec::batchnorm(opt.hidden),
                LayerSpec::relu(), LayerSpec::dense(opt.hidden, classes)};
    if (name == "conv3") {
        const int w = opt.width, w2 = 2 * opt.width;
        return {LayerSpec::conv2d(input.channels, w, 3, 1, 1, false),
                LayerSpec::batchnorm(w),
                LayerSpec::relu(),
                LayerSpec::conv2d(w, w2, 3, 2, 1, false),
                LayerSpec::batchnorm(w2),
                LayerSpec::relu(),
                LayerSpec::conv2d(w2, w2, 3, 1, 1, false),
                LayerSpec::batchnorm(w2),
                LayerSpec::relu(),
                LayerSpec::avgpool_global(),
                LayerSpec::dense(w2, classes)};
    }
    std::string known;
    for (const auto& n : model_names()) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown model '" + name + "' (known: " + known + ")");
}

}  // namespace pat
