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

#include <atomic>
#include <cmath>
#include <compare>
#include <concepts>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pat/errors.hpp"
#include "pat/layers.hpp"
#include "pat/rng.hpp"
#include "pat/tensor.hpp"

namespace pat {

/// A prunable output channel. `layer` is the ordinal of the prunable unit
/// (0 for the first prunable conv/dense layer, 1 for the next, ...), not the
/// position in the layer list.
struct NeuronId {
    int layer = 0;
    int channel = 0;
    friend constexpr auto operator<=>(const NeuronId&, const NeuronId&) = default;
};

/// Trainable buffer with its gradient and momentum.
template <typename T>
struct Param {
    std::vector<T> value;
    std::vector<T> grad;
    std::vector<T> velocity;

    void resize(std::size_t n, T init = T(0)) {
        value.assign(n, init);
        grad.assign(n, T(0));
        velocity.assign(n, T(0));
    }
    bool empty() const noexcept { return value.empty(); }
};

template <typename T>
struct Layer {
    LayerSpec spec;
    std::string name;
    Shape in_shape;
    Shape out_shape;
    Param<T> weight;  // conv: [C_O][C_I][K][K], dense: [out][in]
    Param<T> bias;
    Param<T> gamma;
    Param<T> beta;
    std::vector<T> running_mean;
    std::vector<T> running_var;
};

/// A conv/dense layer whose output channels can be pruned, together with the
/// batchnorm that directly follows it (if any) and the next layer that
/// consumes its channels.
struct PrunableUnit {
    int layer = 0;
    std::optional<int> batchnorm;
    int mask_point = 0;  // layer whose output carries the channel mask
    int channels = 0;
    int consumer = -1;
    int features_per_channel = 1;  // >1 when a dense consumer flattens a feature map
    int params_per_neuron = 0;     // P^l: C_I*K*K or in_features
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Layered feed-forward model with per-channel masks.
///
/// Pruning never reshapes buffers: a pruned channel keeps its slots but its
/// weights, batchnorm parameters, gradients and momentum are held at zero, and
/// its activation is zeroed at the mask point.
template <std::floating_point T>
class BasicNetwork {
public:
    using Scalar = T;

    BasicNetwork() = default;
    BasicNetwork(std::vector<LayerSpec> specs, Shape input, std::uint64_t seed);

    const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
    Shape input_shape() const noexcept { return input_; }
    Shape output_shape() const noexcept { return layers_.back().out_shape; }
    std::uint64_t seed() const noexcept { return seed_; }

    std::vector<Layer<T>>& layers() noexcept { return layers_; }
    const std::vector<Layer<T>>& layers() const noexcept { return layers_; }
    const std::vector<PrunableUnit>& units() const noexcept { return units_; }
    const PrunableUnit& unit(int u) const { return units_.at(static_cast<std::size_t>(u)); }
    int unit_count() const noexcept { return static_cast<int>(units_.size()); }

    /// |F|: total number of prunable output channels.
    int neuron_count() const noexcept {
        int n = 0;
        for (const auto& u : units_) n += u.channels;
        return n;
    }
    std::vector<int> unit_widths() const {
        std::vector<int> w;
        for (const auto& u : units_) w.push_back(u.channels);
        return w;
    }
    std::vector<NeuronId> all_neurons() const {
        std::vector<NeuronId> out;
        for (int u = 0; u < unit_count(); ++u)
            for (int c = 0; c < units_[static_cast<std::size_t>(u)].channels; ++c)
                out.push_back({u, c});
        return out;
    }

    bool has_neuron(NeuronId n) const noexcept {
        return n.layer >= 0 && n.layer < unit_count() && n.channel >= 0 &&
               n.channel < units_[static_cast<std::size_t>(n.layer)].channels;
    }
    bool is_active(NeuronId n) const {
        check_neuron(n);
        return masks_[static_cast<std::size_t>(n.layer)][static_cast<std::size_t>(n.channel)] != 0;
    }
    std::span<const std::uint8_t> mask(int u) const {
        return masks_.at(static_cast<std::size_t>(u));
    }
    int active_count(int u) const {
        int n = 0;
        for (auto m : masks_.at(static_cast<std::size_t>(u))) n += m != 0;
        return n;
    }
    /// Unit index whose mask is applied at the output of `layer`, or -1.
    int unit_at_mask_point(int layer) const noexcept {
        return mask_point_unit_[static_cast<std::size_t>(layer)];
    }
    /// Unit index whose conv/dense weights live in `layer`, or -1.
    int unit_of_layer(int layer) const noexcept {
        return layer_unit_[static_cast<std::size_t>(layer)];
    }

    /// Switch a channel on or off and re-establish the zero invariant.
    void set_active(NeuronId n, bool active) {
        check_neuron(n);
        masks_[static_cast<std::size_t>(n.layer)][static_cast<std::size_t>(n.channel)] =
            active ? 1 : 0;
        enforce_masks();
        bump_version();
    }

    /// Replace all masks at once (shape must match the unit widths).
    void set_masks(const std::vector<std::vector<std::uint8_t>>& masks) {
        if (masks.size() != units_.size()) throw ShapeError("mask count does not match units");
        for (std::size_t u = 0; u < units_.size(); ++u) {
            if (masks[u].size() != static_cast<std::size_t>(units_[u].channels))
                throw ShapeError("mask width mismatch at prunable layer " + std::to_string(u));
        }
        masks_ = masks;
        enforce_masks();
        bump_version();
    }
    const std::vector<std::vector<std::uint8_t>>& masks() const noexcept { return masks_; }

    /// Zero every parameter, gradient and momentum slot owned by a masked
    /// channel, plus the consumer's input slice for that channel.
    void enforce_masks();

    void zero_grad() {
        for (auto& l : layers_)
            for (Param<T>* p : {&l.weight, &l.bias, &l.gamma, &l.beta})
                std::fill(p->grad.begin(), p->grad.end(), T(0));
    }

    /// Identity + parameter version. A forward pass records both; backward
    /// refuses to run against a network that changed in between.
    std::uint64_t id() const noexcept { return id_; }
    std::uint64_t version() const noexcept { return version_; }
    void bump_version() noexcept { ++version_; }

    /// Slices of the weight buffer that belong to one output channel.
    std::span<const T> neuron_weights(NeuronId n) const {
        const auto& u = unit(n.layer);
        const auto& w = layers_[static_cast<std::size_t>(u.layer)].weight.value;
        const auto per = static_cast<std::size_t>(u.params_per_neuron);
        return {w.data() + per * static_cast<std::size_t>(n.channel), per};
    }
    std::span<const T> neuron_weight_grads(NeuronId n) const {
        const auto& u = unit(n.layer);
        const auto& g = layers_[static_cast<std::size_t>(u.layer)].weight.grad;
        const auto per = static_cast<std::size_t>(u.params_per_neuron);
        return {g.data() + per * static_cast<std::size_t>(n.channel), per};
    }

    std::uint64_t& epoch() noexcept { return epoch_; }
    std::uint64_t epoch() const noexcept { return epoch_; }
    Rng& rng() noexcept { return rng_; }
    const Rng& rng() const noexcept { return rng_; }

private:
    void check_neuron(NeuronId n) const {
        if (!has_neuron(n))
            throw UsageError("neuron (" + std::to_string(n.layer) + ", " +
                             std::to_string(n.channel) + ") does not exist");
    }
    void validate_and_shape();
    void find_units();
    void initialize();

    static std::uint64_t next_id() {
        static std::atomic<std::uint64_t> counter{0};
        return ++counter;
    }

    std::vector<LayerSpec> specs_;
    Shape input_;
    std::uint64_t seed_ = 0;
    std::vector<Layer<T>> layers_;
    std::vector<PrunableUnit> units_;
    std::vector<int> mask_point_unit_;
    std::vector<int> layer_unit_;
    std::vector<std::vector<std::uint8_t>> masks_;
    std::uint64_t id_ = next_id();
    std::uint64_t version_ = 0;
    std::uint64_t epoch_ = 0;
    Rng rng_;
};

using Network = BasicNetwork<float>;

/// Build a network with He-uniform weights drawn from `seed`.
template <std::floating_point T = float>
BasicNetwork<T> build_network(std::vector<LayerSpec> specs, Shape input, std::uint64_t seed) {
    return BasicNetwork<T>(std::move(specs), input, seed);
}

// ---------------------------------------------------------------------------

template <std::floating_point T>
BasicNetwork<T>::BasicNetwork(std::vector<LayerSpec> specs, Shape input, std::uint64_t seed)
    : specs_(std::move(specs)), input_(input), seed_(seed), rng_(mix_seed(seed)) {
    validate_and_shape();
    find_units();
    initialize();
}

template <std::floating_point T>
void BasicNetwork<T>::validate_and_shape() {
    if (specs_.empty()) throw ShapeError("network has no layers");
    if (input_.channels < 1 || input_.height < 1 || input_.width < 1)
        throw ShapeError("input shape must be positive");

    auto label = [&](std::size_t i) {
        return "layer " + std::to_string(i) + " (" + describe(specs_[i]) + ")";
    };
    auto prev_label = [&](std::size_t i) {
        return i == 0 ? std::string("the network input") : label(i - 1);
    };

    Shape cur = input_;
    layers_.clear();
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        const LayerSpec& s = specs_[i];
        Layer<T> layer;
        layer.spec = s;
        layer.name = std::string(to_string(s.kind)) + "#" + std::to_string(i);
        layer.in_shape = cur;
        switch (s.kind) {
            case LayerKind::dense: {
                if (s.out_channels < 1 || s.in_channels < 1)
                    throw ShapeError(label(i) + ": feature counts must be >= 1");
                if (static_cast<std::size_t>(s.in_channels) != cur.size())
                    throw ShapeError(label(i) + " expects " + std::to_string(s.in_channels) +
                                     " input features but " + prev_label(i) + " produces " +
                                     std::to_string(cur.size()));
                cur = Shape{s.out_channels, 1, 1};
                break;
            }
            case LayerKind::conv2d: {
                if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || s.out_channels < 1 ||
                    s.in_channels < 1)
                    throw ShapeError(label(i) + ": invalid convolution geometry");
                if (s.in_channels != cur.channels)
                    throw ShapeError(label(i) + " expects " + std::to_string(s.in_channels) +
                                     " input channels but " + prev_label(i) + " produces " +
                                     std::to_string(cur.channels));
                const int ho = (cur.height + 2 * s.padding - s.kernel) / s.stride + 1;
                const int wo = (cur.width + 2 * s.padding - s.kernel) / s.stride + 1;
                if (cur.height + 2 * s.padding < s.kernel || cur.width + 2 * s.padding < s.kernel)
                    throw ShapeError(label(i) + ": kernel larger than padded input of " +
                                     prev_label(i));
                cur = Shape{s.out_channels, ho, wo};
                break;
            }
            case LayerKind::batchnorm:
                if (s.out_channels != cur.channels)
                    throw ShapeError(label(i) + " has " + std::to_string(s.out_channels) +
                                     " channels but " + prev_label(i) + " produces " +
                                     std::to_string(cur.channels));
                break;
            case LayerKind::relu:
                break;
            case LayerKind::maxpool:
                if (s.kernel < 1 || cur.height < s.kernel || cur.width < s.kernel)
                    throw ShapeError(label(i) + ": pooling window does not fit the output of " +
                                     prev_label(i));
                cur = Shape{cur.channels, cur.height / s.kernel, cur.width / s.kernel};
                break;
            case LayerKind::avgpool_global:
                cur = Shape{cur.channels, 1, 1};
                break;
        }
        layer.out_shape = cur;
        layers_.push_back(std::move(layer));
    }
    if (specs_.back().kind != LayerKind::dense)
        throw ShapeError("network must end with a dense classifier layer, found " +
                         label(specs_.size() - 1));
}

template <std::floating_point T>
void BasicNetwork<T>::find_units() {
    units_.clear();
    const int n = static_cast<int>(layers_.size());
    mask_point_unit_.assign(static_cast<std::size_t>(n), -1);
    layer_unit_.assign(static_cast<std::size_t>(n), -1);
    for (int i = 0; i + 1 < n; ++i) {
        const auto& s = specs_[static_cast<std::size_t>(i)];
        if (!s.has_weights() || !s.prunable) continue;
        PrunableUnit u;
        u.layer = i;
        u.channels = s.out_channels;
        u.params_per_neuron = s.kind == LayerKind::conv2d ? s.in_channels * s.kernel * s.kernel
                                                          : s.in_channels;
        u.mask_point = i;
        if (specs_[static_cast<std::size_t>(i + 1)].kind == LayerKind::batchnorm) {
            u.batchnorm = i + 1;
            u.mask_point = i + 1;
        }
        for (int j = u.mask_point + 1; j < n; ++j) {
            if (specs_[static_cast<std::size_t>(j)].has_weights()) {
                u.consumer = j;
                if (specs_[static_cast<std::size_t>(j)].kind == LayerKind::dense)
                    u.features_per_channel =
                        static_cast<int>(layers_[static_cast<std::size_t>(j)].in_shape.plane());
                break;
            }
        }
        const int index = static_cast<int>(units_.size());
        mask_point_unit_[static_cast<std::size_t>(u.mask_point)] = index;
        layer_unit_[static_cast<std::size_t>(i)] = index;
        units_.push_back(u);
    }
    masks_.clear();
    for (const auto& u : units_) masks_.emplace_back(static_cast<std::size_t>(u.channels), 1);
}

template <std::floating_point T>
void BasicNetwork<T>::initialize() {
    for (auto& l : layers_) {
        const auto& s = l.spec;
        if (s.kind == LayerKind::dense || s.kind == LayerKind::conv2d) {
            const int fan_in = s.kind == LayerKind::conv2d ? s.in_channels * s.kernel * s.kernel
                                                           : s.in_channels;
            const std::size_t count = static_cast<std::size_t>(s.out_channels) *
                                      static_cast<std::size_t>(fan_in);
            l.weight.resize(count);
            const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
            for (auto& w : l.weight.value) w = static_cast<T>(uniform(rng_, -bound, bound));
            if (s.bias) l.bias.resize(static_cast<std::size_t>(s.out_channels));
        } else if (s.kind == LayerKind::batchnorm) {
            const auto c = static_cast<std::size_t>(s.out_channels);
            l.gamma.resize(c, T(1));
            l.beta.resize(c);
            l.running_mean.assign(c, T(0));
            l.running_var.assign(c, T(1));
        }
    }
}

template <std::floating_point T>
void BasicNetwork<T>::enforce_masks() {
    auto zero_param_range = [](Param<T>& p, std::size_t begin, std::size_t count) {
        if (p.empty()) return;
        for (auto* buf : {&p.value, &p.grad, &p.velocity})
            std::fill_n(buf->begin() + static_cast<std::ptrdiff_t>(begin), count, T(0));
    };
    for (std::size_t ui = 0; ui < units_.size(); ++ui) {
        const auto& u = units_[ui];
        auto& layer = layers_[static_cast<std::size_t>(u.layer)];
        const auto per = static_cast<std::size_t>(u.params_per_neuron);
        for (int c = 0; c < u.channels; ++c) {
            if (masks_[ui][static_cast<std::size_t>(c)]) continue;
            const auto cc = static_cast<std::size_t>(c);
            zero_param_range(layer.weight, cc * per, per);
            zero_param_range(layer.bias, cc, 1);
            if (u.batchnorm) {
                auto& bn = layers_[static_cast<std::size_t>(*u.batchnorm)];
                zero_param_range(bn.gamma, cc, 1);
                zero_param_range(bn.beta, cc, 1);
                bn.running_mean[cc] = T(0);
                bn.running_var[cc] = T(1);
            }
            if (u.consumer >= 0) {
                auto& next = layers_[static_cast<std::size_t>(u.consumer)];
                const auto& ns = next.spec;
                if (ns.kind == LayerKind::conv2d) {
                    const auto kk = static_cast<std::size_t>(ns.kernel * ns.kernel);
                    const auto row = static_cast<std::size_t>(ns.in_channels) * kk;
                    for (int o = 0; o < ns.out_channels; ++o)
                        zero_param_range(next.weight, static_cast<std::size_t>(o) * row + cc * kk,
                                         kk);
                } else {
                    const auto fpc = static_cast<std::size_t>(u.features_per_channel);
                    const auto row = static_cast<std::size_t>(ns.in_channels);
                    for (int o = 0; o < ns.out_channels; ++o)
                        zero_param_range(next.weight, static_cast<std::size_t>(o) * row + cc * fpc,
                                         fpc);
                }
            }
        }
    }
}

/// Floating-point operation count of one forward pass for a single sample,
/// counting a multiply-add as two operations and skipping masked channels.
template <std::floating_point T>
double count_flops(const BasicNetwork<T>& net, bool ignore_masks = false) {
    double flops = 0.0;
    int live = net.input_shape().channels;
    const auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const auto& s = l.spec;
        const int ui = ignore_masks ? -1 : net.unit_of_layer(static_cast<int>(i));
        if (s.kind == LayerKind::conv2d) {
            const int out = ui >= 0 ? net.active_count(ui) : s.out_channels;
            flops += 2.0 * out * live * s.kernel * s.kernel *
                     static_cast<double>(l.out_shape.plane());
            live = out;
        } else if (s.kind == LayerKind::dense) {
            const int out = ui >= 0 ? net.active_count(ui) : s.out_channels;
            flops += 2.0 * out * live * static_cast<double>(l.in_shape.plane());
            live = out;
        }
    }
    return flops;
}

}  // namespace pat
