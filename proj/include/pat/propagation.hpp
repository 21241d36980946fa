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
#include <span>
#include <vector>

#include "pat/errors.hpp"
#include "pat/network.hpp"
#include "pat/tensor.hpp"

namespace pat {

enum class Mode { train, eval };

/// Everything backward() needs from one forward pass.
template <typename T>
struct ForwardPass {
    /// acts[i] is the input of layer i; acts.back() holds the logits.
    std::vector<Tensor<T>> acts;
    std::vector<std::vector<T>> bn_xhat;
    std::vector<std::vector<T>> bn_inv_std;
    std::vector<std::vector<std::uint32_t>> pool_argmax;
    Mode mode = Mode::train;
    std::uint64_t net_id = 0;
    std::uint64_t net_version = 0;

    const Tensor<T>& logits() const { return acts.back(); }
};

namespace detail {

// Output columns [lo, hi] whose input column o*stride - pad + k lies in [0, size).
inline void valid_range(int size, int out_size, int stride, int pad, int k, int& lo, int& hi) {
    const int shift = pad - k;  // need o*stride >= shift and o*stride <= size-1+shift
    lo = shift <= 0 ? 0 : (shift + stride - 1) / stride;
    const int top = size - 1 + shift;
    hi = top < 0 ? -1 : std::min(out_size - 1, top / stride);
}

template <typename T>
void apply_channel_mask(Tensor<T>& t, std::span<const std::uint8_t> mask) {
    const std::size_t plane = t.shape.plane();
    for (int n = 0; n < t.batch; ++n)
        for (int c = 0; c < t.shape.channels; ++c)
            if (!mask[static_cast<std::size_t>(c)])
                std::fill_n(&t.at(n, c), plane, T(0));
}

template <typename T>
void dense_forward(const Layer<T>& l, const Tensor<T>& x, Tensor<T>& y,
                   std::span<const std::uint8_t> mask) {
    const int in = l.spec.in_channels;
    const int out = l.spec.out_channels;
    const T* w = l.weight.value.data();
    for (int n = 0; n < x.batch; ++n) {
        const T* xs = x.sample(n);
        T* ys = y.sample(n);
        for (int o = 0; o < out; ++o) {
            if (!mask.empty() && !mask[static_cast<std::size_t>(o)]) continue;
            const T* wr = w + static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
            T acc = l.bias.empty() ? T(0) : l.bias.value[static_cast<std::size_t>(o)];
            for (int i = 0; i < in; ++i) acc += wr[i] * xs[i];
            ys[o] = acc;
        }
    }
}

template <typename T>
void dense_backward(Layer<T>& l, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx) {
    const int in = l.spec.in_channels;
    const int out = l.spec.out_channels;
    const T* w = l.weight.value.data();
    T* gw = l.weight.grad.data();
    for (int n = 0; n < x.batch; ++n) {
        const T* xs = x.sample(n);
        const T* ds = dy.sample(n);
        T* dxs = dx ? dx->sample(n) : nullptr;
        for (int o = 0; o < out; ++o) {
            const T g = ds[o];
            if (g == T(0)) continue;
            const std::size_t row = static_cast<std::size_t>(o) * static_cast<std::size_t>(in);
            if (!l.bias.empty()) l.bias.grad[static_cast<std::size_t>(o)] += g;
            for (int i = 0; i < in; ++i) gw[row + static_cast<std::size_t>(i)] += g * xs[i];
            if (dxs)
                for (int i = 0; i < in; ++i) dxs[i] += g * w[row + static_cast<std::size_t>(i)];
        }
    }
}

template <typename T>
void conv_forward(const Layer<T>& l, const Tensor<T>& x, Tensor<T>& y,
                  std::span<const std::uint8_t> mask) {
    const auto& s = l.spec;
    const int H = x.shape.height, W = x.shape.width;
    const int Ho = y.shape.height, Wo = y.shape.width;
    const int K = s.kernel;
    const T* w = l.weight.value.data();
    for (int n = 0; n < x.batch; ++n) {
        for (int co = 0; co < s.out_channels; ++co) {
            if (!mask.empty() && !mask[static_cast<std::size_t>(co)]) continue;
            T* yp = &y.at(n, co);
            const T b = l.bias.empty() ? T(0) : l.bias.value[static_cast<std::size_t>(co)];
            std::fill_n(yp, static_cast<std::size_t>(Ho) * static_cast<std::size_t>(Wo), b);
            for (int ci = 0; ci < s.in_channels; ++ci) {
                const T* xp = &x.at(n, ci);
                const T* wk = w + (static_cast<std::size_t>(co) * s.in_channels + ci) *
                                      static_cast<std::size_t>(K * K);
                for (int kh = 0; kh < K; ++kh) {
                    int oh_lo, oh_hi;
                    valid_range(H, Ho, s.stride, s.padding, kh, oh_lo, oh_hi);
                    for (int kw = 0; kw < K; ++kw) {
                        const T wv = wk[kh * K + kw];
                        if (wv == T(0)) continue;
                        int ow_lo, ow_hi;
                        valid_range(W, Wo, s.stride, s.padding, kw, ow_lo, ow_hi);
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const T* xr = xp + static_cast<std::size_t>(oh * s.stride - s.padding + kh) * W;
                            T* yr = yp + static_cast<std::size_t>(oh) * Wo;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                yr[ow] += wv * xr[ow * s.stride - s.padding + kw];
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void conv_backward(Layer<T>& l, const Tensor<T>& x, const Tensor<T>& dy, Tensor<T>* dx,
                   std::span<const std::uint8_t> mask) {
    const auto& s = l.spec;
    const int H = x.shape.height, W = x.shape.width;
    const int Ho = dy.shape.height, Wo = dy.shape.width;
    const int K = s.kernel;
    const T* w = l.weight.value.data();
    T* gw = l.weight.grad.data();
    const std::size_t oplane = static_cast<std::size_t>(Ho) * static_cast<std::size_t>(Wo);
    for (int n = 0; n < x.batch; ++n) {
        for (int co = 0; co < s.out_channels; ++co) {
            if (!mask.empty() && !mask[static_cast<std::size_t>(co)]) continue;
            const T* dp = &dy.at(n, co);
            if (!l.bias.empty()) {
                T acc = T(0);
                for (std::size_t i = 0; i < oplane; ++i) acc += dp[i];
                l.bias.grad[static_cast<std::size_t>(co)] += acc;
            }
            for (int ci = 0; ci < s.in_channels; ++ci) {
                const T* xp = &x.at(n, ci);
                T* dxp = dx ? &dx->at(n, ci) : nullptr;
                const std::size_t base = (static_cast<std::size_t>(co) * s.in_channels + ci) *
                                         static_cast<std::size_t>(K * K);
                for (int kh = 0; kh < K; ++kh) {
                    int oh_lo, oh_hi;
                    valid_range(H, Ho, s.stride, s.padding, kh, oh_lo, oh_hi);
                    for (int kw = 0; kw < K; ++kw) {
                        int ow_lo, ow_hi;
                        valid_range(W, Wo, s.stride, s.padding, kw, ow_lo, ow_hi);
                        const T wv = w[base + static_cast<std::size_t>(kh * K + kw)];
                        T acc = T(0);
                        for (int oh = oh_lo; oh <= oh_hi; ++oh) {
                            const std::size_t irow =
                                static_cast<std::size_t>(oh * s.stride - s.padding + kh) * W;
                            const T* dr = dp + static_cast<std::size_t>(oh) * Wo;
                            const T* xr = xp + irow;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                acc += dr[ow] * xr[ow * s.stride - s.padding + kw];
                            if (dxp && wv != T(0)) {
                                T* dxr = dxp + irow;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow)
                                    dxr[ow * s.stride - s.padding + kw] += wv * dr[ow];
                            }
                        }
                        gw[base + static_cast<std::size_t>(kh * K + kw)] += acc;
                    }
                }
            }
        }
    }
}

template <typename T>
void batchnorm_forward(Layer<T>& l, const Tensor<T>& x, Tensor<T>& y, Mode mode,
                       std::vector<T>& xhat, std::vector<T>& inv_std) {
    const int C = x.shape.channels;
    const std::size_t plane = x.shape.plane();
    const double m = static_cast<double>(plane) * x.batch;
    xhat.assign(x.data.size(), T(0));
    inv_std.assign(static_cast<std::size_t>(C), T(0));
    for (int c = 0; c < C; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        double mean, var;
        if (mode == Mode::train) {
            double sum = 0.0;
            for (int n = 0; n < x.batch; ++n) {
                const T* p = &x.at(n, c);
                for (std::size_t i = 0; i < plane; ++i) sum += p[i];
            }
            mean = sum / m;
            double sq = 0.0;
            for (int n = 0; n < x.batch; ++n) {
                const T* p = &x.at(n, c);
                for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
            }
            var = sq / m;
            const double unbiased = m > 1.0 ? sq / (m - 1.0) : var;
            l.running_mean[cc] = static_cast<T>((1.0 - kBatchNormMomentum) * l.running_mean[cc] +
                                                kBatchNormMomentum * mean);
            l.running_var[cc] = static_cast<T>((1.0 - kBatchNormMomentum) * l.running_var[cc] +
                                               kBatchNormMomentum * unbiased);
        } else {
            mean = l.running_mean[cc];
            var = l.running_var[cc];
        }
        const T is = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
        inv_std[cc] = is;
        const T g = l.gamma.value[cc], b = l.beta.value[cc];
        const T mu = static_cast<T>(mean);
        for (int n = 0; n < x.batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + cc) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                const T xh = (x.data[off + i] - mu) * is;
                xhat[off + i] = xh;
                y.data[off + i] = g * xh + b;
            }
        }
    }
}

template <typename T>
void batchnorm_backward(Layer<T>& l, const Tensor<T>& dy, Tensor<T>* dx, Mode mode,
                        const std::vector<T>& xhat, const std::vector<T>& inv_std) {
    const int C = dy.shape.channels;
    const std::size_t plane = dy.shape.plane();
    const double m = static_cast<double>(plane) * dy.batch;
    for (int c = 0; c < C; ++c) {
        const auto cc = static_cast<std::size_t>(c);
        double sum_dy = 0.0, sum_dy_xhat = 0.0;
        for (int n = 0; n < dy.batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + cc) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                sum_dy += dy.data[off + i];
                sum_dy_xhat += static_cast<double>(dy.data[off + i]) * xhat[off + i];
            }
        }
        l.gamma.grad[cc] += static_cast<T>(sum_dy_xhat);
        l.beta.grad[cc] += static_cast<T>(sum_dy);
        if (!dx) continue;
        const double scale = static_cast<double>(l.gamma.value[cc]) * inv_std[cc];
        for (int n = 0; n < dy.batch; ++n) {
            const std::size_t off = (static_cast<std::size_t>(n) * C + cc) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
                if (mode == Mode::train)
                    dx->data[off + i] = static_cast<T>(
                        scale / m * (m * dy.data[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat));
                else
                    dx->data[off + i] = static_cast<T>(scale * dy.data[off + i]);
            }
        }
    }
}

}  // namespace detail

/// Run the network on a batch. In train mode batchnorm uses batch statistics
/// and updates its running estimates; eval mode uses the running estimates.
template <std::floating_point T>
ForwardPass<T> forward(BasicNetwork<T>& net, Tensor<T> batch, Mode mode = Mode::train) {
    if (batch.shape != net.input_shape() || batch.batch < 1 ||
        batch.data.size() != static_cast<std::size_t>(batch.batch) * batch.shape.size())
        throw ShapeError("input batch shape does not match the network input");
    auto& layers = net.layers();
    const std::size_t L = layers.size();
    ForwardPass<T> pass;
    pass.mode = mode;
    pass.net_id = net.id();
    pass.net_version = net.version();
    pass.acts.reserve(L + 1);
    pass.acts.push_back(std::move(batch));
    pass.bn_xhat.resize(L);
    pass.bn_inv_std.resize(L);
    pass.pool_argmax.resize(L);
    const int N = pass.acts[0].batch;

    for (std::size_t i = 0; i < L; ++i) {
        auto& l = layers[i];
        const Tensor<T>& x = pass.acts[i];
        Tensor<T> y(N, l.out_shape);
        const int own_unit = net.unit_of_layer(static_cast<int>(i));
        const std::span<const std::uint8_t> own_mask =
            own_unit >= 0 ? net.mask(own_unit) : std::span<const std::uint8_t>{};
        switch (l.spec.kind) {
            case LayerKind::dense:
                detail::dense_forward(l, x, y, own_mask);
                break;
            case LayerKind::conv2d:
                detail::conv_forward(l, x, y, own_mask);
                break;
            case LayerKind::batchnorm:
                detail::batchnorm_forward(l, x, y, mode, pass.bn_xhat[i], pass.bn_inv_std[i]);
                break;
            case LayerKind::relu:
                for (std::size_t k = 0; k < x.data.size(); ++k)
                    y.data[k] = x.data[k] > T(0) ? x.data[k] : T(0);
                break;
            case LayerKind::maxpool: {
                const int K = l.spec.kernel;
                auto& arg = pass.pool_argmax[i];
                arg.assign(y.data.size(), 0);
                std::size_t o = 0;
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < y.shape.channels; ++c)
                        for (int oh = 0; oh < y.shape.height; ++oh)
                            for (int ow = 0; ow < y.shape.width; ++ow, ++o) {
                                std::size_t best = 0;
                                T best_v = T(0);
                                bool first = true;
                                for (int kh = 0; kh < K; ++kh)
                                    for (int kw = 0; kw < K; ++kw) {
                                        const std::size_t idx =
                                            ((static_cast<std::size_t>(n) * x.shape.channels + c) *
                                                 x.shape.height + oh * K + kh) * x.shape.width +
                                            ow * K + kw;
                                        if (first || x.data[idx] > best_v) {
                                            best = idx;
                                            best_v = x.data[idx];
                                            first = false;
                                        }
                                    }
                                y.data[o] = best_v;
                                arg[o] = static_cast<std::uint32_t>(best);
                            }
                break;
            }
            case LayerKind::avgpool_global: {
                const std::size_t plane = x.shape.plane();
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < x.shape.channels; ++c) {
                        const T* p = &x.at(n, c);
                        T acc = T(0);
                        for (std::size_t k = 0; k < plane; ++k) acc += p[k];
                        y.at(n, c) = acc / static_cast<T>(plane);
                    }
                break;
            }
        }
        const int mp = net.unit_at_mask_point(static_cast<int>(i));
        if (mp >= 0) detail::apply_channel_mask(y, net.mask(mp));
        pass.acts.push_back(std::move(y));
    }
    return pass;
}

/// Mean softmax cross-entropy; optionally writes d(loss)/d(logits).
template <typename T>
double cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                     Tensor<T>* grad = nullptr) {
    const int N = logits.batch;
    const int C = static_cast<int>(logits.sample_size());
    if (static_cast<int>(labels.size()) != N)
        throw ShapeError("label count does not match the batch size");
    if (grad) *grad = Tensor<T>(N, logits.shape);
    double loss = 0.0;
    std::vector<double> p(static_cast<std::size_t>(C));
    for (int n = 0; n < N; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= C) throw UsageError("label out of range: " + std::to_string(y));
        const T* z = logits.sample(n);
        double mx = z[0];
        for (int c = 1; c < C; ++c) mx = std::max<double>(mx, z[c]);
        double sum = 0.0;
        for (int c = 0; c < C; ++c) {
            p[static_cast<std::size_t>(c)] = std::exp(static_cast<double>(z[c]) - mx);
            sum += p[static_cast<std::size_t>(c)];
        }
        loss += -(static_cast<double>(z[y]) - mx - std::log(sum));
        if (grad) {
            T* g = grad->sample(n);
            for (int c = 0; c < C; ++c)
                g[c] = static_cast<T>((p[static_cast<std::size_t>(c)] / sum - (c == y ? 1.0 : 0.0)) /
                                      N);
        }
    }
    return loss / N;
}

/// Number of samples whose arg-max logit equals the label.
template <typename T>
int count_correct(const Tensor<T>& logits, std::span<const int> labels) {
    int correct = 0;
    const int C = static_cast<int>(logits.sample_size());
    for (int n = 0; n < logits.batch; ++n) {
        const T* z = logits.sample(n);
        const int arg = static_cast<int>(std::max_element(z, z + C) - z);
        correct += arg == labels[static_cast<std::size_t>(n)];
    }
    return correct;
}

/// Fill the gradient buffers for the batch behind `pass` and return the mean
/// cross-entropy. Gradients of masked channels come out exactly zero.
template <std::floating_point T>
double backward(BasicNetwork<T>& net, const ForwardPass<T>& pass, std::span<const int> labels) {
    if (pass.net_id != net.id() || pass.net_version != net.version() ||
        pass.acts.size() != net.layers().size() + 1)
        throw UsageError("backward called without a matching forward pass");
    auto& layers = net.layers();
    net.zero_grad();
    Tensor<T> dy;
    const double loss = cross_entropy(pass.logits(), labels, &dy);

    for (std::size_t ii = layers.size(); ii-- > 0;) {
        auto& l = layers[ii];
        const int mp = net.unit_at_mask_point(static_cast<int>(ii));
        if (mp >= 0) detail::apply_channel_mask(dy, net.mask(mp));
        const Tensor<T>& x = pass.acts[ii];
        const bool need_dx = ii > 0;
        Tensor<T> dx;
        if (need_dx) dx = Tensor<T>(x.batch, x.shape);
        Tensor<T>* dxp = need_dx ? &dx : nullptr;
        const int own_unit = net.unit_of_layer(static_cast<int>(ii));
        const std::span<const std::uint8_t> own_mask =
            own_unit >= 0 ? net.mask(own_unit) : std::span<const std::uint8_t>{};
        switch (l.spec.kind) {
            case LayerKind::dense:
                detail::dense_backward(l, x, dy, dxp);
                break;
            case LayerKind::conv2d:
                detail::conv_backward(l, x, dy, dxp, own_mask);
                break;
            case LayerKind::batchnorm:
                detail::batchnorm_backward(l, dy, dxp, pass.mode, pass.bn_xhat[ii],
                                           pass.bn_inv_std[ii]);
                break;
            case LayerKind::relu: {
                if (!need_dx) break;
                const Tensor<T>& y = pass.acts[ii + 1];
                for (std::size_t k = 0; k < dy.data.size(); ++k)
                    dx.data[k] = y.data[k] > T(0) ? dy.data[k] : T(0);
                break;
            }
            case LayerKind::maxpool: {
                if (!need_dx) break;
                const auto& arg = pass.pool_argmax[ii];
                for (std::size_t k = 0; k < dy.data.size(); ++k) dx.data[arg[k]] += dy.data[k];
                break;
            }
            case LayerKind::avgpool_global: {
                if (!need_dx) break;
                const std::size_t plane = x.shape.plane();
                for (int n = 0; n < x.batch; ++n)
                    for (int c = 0; c < x.shape.channels; ++c) {
                        const T g = dy.at(n, c) / static_cast<T>(plane);
                        std::fill_n(&dx.at(n, c), plane, g);
                    }
                break;
            }
        }
        if (need_dx) dy = std::move(dx);
    }
    net.enforce_masks();
    return loss;
}

}  // namespace pat
