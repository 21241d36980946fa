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
#include <string>
#include <vector>

#include "pat/network.hpp"
#include "pat/propagation.hpp"
#include "pat/rng.hpp"

namespace pat::testing {

template <typename T>
Tensor<T> random_batch(int n, Shape s, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xBA7C));
    Tensor<T> t(n, s);
    for (auto& v : t.data) v = static_cast<T>(uniform(rng, -1.0, 1.0));
    return t;
}

inline std::vector<int> random_labels(int n, int classes, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x1AB));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (auto& v : y) v = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(classes)));
    return y;
}

/// Randomize every trainable buffer, including batchnorm gamma/beta, so
/// that no gradient is trivially zero.
template <typename T>
void scramble(BasicNetwork<T>& net, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5C4A));
    for (auto& l : net.layers())
        for (Param<T>* p : {&l.weight, &l.bias, &l.gamma, &l.beta})
            for (auto& v : p->value) v = static_cast<T>(uniform(rng, -0.8, 0.8));
    net.enforce_masks();
    net.bump_version();
}

struct GradCheck {
    double worst = 0.0;  // largest relative error seen
    std::string where;
    int checked = 0;
};

/// Central finite differences against backward() for every parameter.
/// Relative error is |a - n| / max(|a|, |n|); pairs where both sides are
/// below `floor` are compared absolutely instead.
template <typename T>
GradCheck check_gradients(BasicNetwork<T>& net, const Tensor<T>& x, const std::vector<int>& y,
                          double eps = 1e-5, double floor = 1e-7) {
    const auto loss_at = [&] {
        const auto pass = forward(net, x, Mode::train);
        return cross_entropy(pass.logits(), std::span<const int>(y));
    };
    {
        const auto pass = forward(net, x, Mode::train);
        backward(net, pass, y);
    }
    GradCheck out;
    auto& layers = net.layers();
    for (std::size_t li = 0; li < layers.size(); ++li) {
        auto& l = layers[li];
        const char* names[] = {"weight", "bias", "gamma", "beta"};
        Param<T>* ps[] = {&l.weight, &l.bias, &l.gamma, &l.beta};
        for (int k = 0; k < 4; ++k) {
            Param<T>& p = *ps[k];
            const std::vector<T> analytic = p.grad;
            for (std::size_t i = 0; i < p.value.size(); ++i) {
                const T saved = p.value[i];
                p.value[i] = static_cast<T>(saved + eps);
                const double up = loss_at();
                p.value[i] = static_cast<T>(saved - eps);
                const double down = loss_at();
                p.value[i] = saved;
                const double num = (up - down) / (2.0 * eps);
                const double a = static_cast<double>(analytic[i]);
                const double scale = std::max(std::abs(a), std::abs(num));
                const double err = scale < floor ? std::abs(a - num) : std::abs(a - num) / scale;
                ++out.checked;
                if (err > out.worst) {
                    out.worst = err;
                    out.where = l.name + "." + names[k] + "[" + std::to_string(i) + "]";
                }
            }
        }
    }
    return out;
}

}  // namespace pat::testing
