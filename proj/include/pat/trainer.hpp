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
#include <cstdint>
#include <numeric>
#include <vector>

#include "pat/data.hpp"
#include "pat/importance.hpp"
#include "pat/optimizer.hpp"
#include "pat/propagation.hpp"

namespace pat {

struct EpochStats {
    double loss = 0.0;
    double accuracy = 0.0;
    long batches = 0;
};

/// Shuffle seed of a given epoch; a pure function of (run seed, epoch).
constexpr std::uint64_t epoch_seed(std::uint64_t seed, int epoch) noexcept {
    return mix_seed(seed, 0x1000u + static_cast<std::uint64_t>(epoch));
}

struct StepResult {
    double loss = 0.0;
    int correct = 0;
};

/// forward -> backward -> (score accumulation) -> SGD update.
template <std::floating_point T>
StepResult train_step(BasicNetwork<T>& net, Batch<T> batch, double lr, const TrainConfig& cfg,
                      ImportanceTable* table = nullptr) {
    const auto pass = forward(net, std::move(batch.images), Mode::train);
    const double loss = backward(net, pass, batch.labels);
    if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss");
    const int correct = count_correct(pass.logits(), batch.labels);
    if (table) table->accumulate(net);
    sgd_step(net, lr, cfg);
    return {loss, correct};
}

/// Accumulates per-batch results into epoch means.
class EpochMeter {
public:
    void add(const StepResult& r, std::size_t batch_size) {
        loss_sum_ += r.loss * static_cast<double>(batch_size);
        correct_ += r.correct;
        samples_ += batch_size;
        ++batches_;
    }
    EpochStats stats() const {
        EpochStats s;
        s.batches = batches_;
        if (samples_ > 0) {
            s.loss = loss_sum_ / static_cast<double>(samples_);
            s.accuracy = static_cast<double>(correct_) / static_cast<double>(samples_);
        }
        return s;
    }

private:
    double loss_sum_ = 0.0;
    long correct_ = 0;
    std::size_t samples_ = 0;
    long batches_ = 0;
};

/// Train one epoch at the scheduled learning rate, optionally accumulating
/// neuron importance after every backward pass.
template <std::floating_point T>
EpochStats train_epoch(BasicNetwork<T>& net, const Dataset& ds, const TrainConfig& cfg, int epoch,
                       ImportanceTable* table = nullptr) {
    const double lr = lr_at_epoch(epoch, cfg);
    EpochMeter meter;
    for (auto batch : batches<T>(ds, cfg.batch_size, epoch_seed(cfg.seed, epoch))) {
        const std::size_t n = batch.labels.size();
        meter.add(train_step(net, std::move(batch), lr, cfg, table), n);
    }
    net.epoch() = static_cast<std::uint64_t>(epoch + 1);
    return meter.stats();
}

/// Loss and accuracy in eval mode (running batchnorm statistics).
template <std::floating_point T>
EpochStats evaluate(BasicNetwork<T>& net, const Dataset& ds, int batch_size = 256) {
    EpochMeter meter;
    std::vector<std::size_t> idx(ds.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t lo = 0; lo < idx.size(); lo += static_cast<std::size_t>(batch_size)) {
        const std::size_t hi = std::min(idx.size(), lo + static_cast<std::size_t>(batch_size));
        auto b = make_batch<T>(ds, std::span<const std::size_t>(idx.data() + lo, hi - lo));
        const auto pass = forward(net, std::move(b.images), Mode::eval);
        meter.add({cross_entropy(pass.logits(), std::span<const int>(b.labels)),
                   count_correct(pass.logits(), std::span<const int>(b.labels))},
                  hi - lo);
    }
    return meter.stats();
}

}  // namespace pat
