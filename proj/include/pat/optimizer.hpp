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
#include <cstdint>
#include <numbers>
#include <string>

#include "pat/errors.hpp"
#include "pat/network.hpp"

namespace pat {

struct TrainConfig {
    int epochs = 40;  // T
    int batch_size = 16;
    double peak_lr = 0.05;
    int warmup_epochs = 2;
    double weight_decay = 5e-4;  // L2 penalty on conv/dense weights
    double momentum = 0.9;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (warmup_epochs < 0 || warmup_epochs >= epochs)
            throw ConfigError("warmup_epochs must lie in [0, epochs)");
        if (!(peak_lr >= 0.0) || !(weight_decay >= 0.0) || !(momentum >= 0.0))
            throw ConfigError("learning rate, weight decay and momentum must be >= 0");
    }
};

/// Learning rate for a whole epoch: cosine decay over all T epochs, capped by
/// a linear ramp during warmup.
inline double lr_at_epoch(int epoch, const TrainConfig& cfg) {
    if (epoch < 0 || epoch >= cfg.epochs)
        throw UsageError("epoch " + std::to_string(epoch) + " outside [0, " +
                         std::to_string(cfg.epochs) + ")");
    const double cosine =
        cfg.peak_lr * 0.5 *
        (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) / cfg.epochs));
    if (epoch < cfg.warmup_epochs) {
        const double ramp = cfg.peak_lr * static_cast<double>(epoch + 1) / cfg.warmup_epochs;
        return std::min(ramp, cosine);
    }
    return cosine;
}

/// One SGD update with momentum:
///   v <- momentum*v + g + wd*w ;  w <- w - lr*v
/// Weight decay applies to conv/dense weights only. Masked channels are
/// re-zeroed afterwards.
template <std::floating_point T>
void sgd_step(BasicNetwork<T>& net, double lr, const TrainConfig& cfg) {
    for (const auto& l : net.layers()) {
        for (const Param<T>* p : {&l.weight, &l.bias, &l.gamma, &l.beta})
            for (T g : p->grad)
                if (!std::isfinite(static_cast<double>(g)))
                    throw DivergenceError("non-finite gradient in layer " + l.name);
    }
    const T mom = static_cast<T>(cfg.momentum);
    const T step = static_cast<T>(lr);
    for (auto& l : net.layers()) {
        auto update = [&](Param<T>& p, T decay) {
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T d = p.grad[i] + decay * p.value[i];
                p.velocity[i] = mom * p.velocity[i] + d;
                p.value[i] -= step * p.velocity[i];
            }
        };
        update(l.weight, static_cast<T>(cfg.weight_decay));
        update(l.bias, T(0));
        update(l.gamma, T(0));
        update(l.beta, T(0));
    }
    net.enforce_masks();
    net.bump_version();
}

}  // namespace pat
