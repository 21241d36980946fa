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

#include <cstddef>
#include <vector>

namespace pat {

/// Channel-major image shape of a single sample.
struct Shape {
    int channels = 0;
    int height = 1;
    int width = 1;

    constexpr std::size_t size() const noexcept {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    constexpr std::size_t plane() const noexcept {
        return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
    }
    friend constexpr bool operator==(const Shape&, const Shape&) = default;
};

/// Dense NCHW batch tensor.
template <typename T>
struct Tensor {
    int batch = 0;
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n, Shape s)
        : batch(n), shape(s), data(static_cast<std::size_t>(n) * s.size(), T(0)) {}

    std::size_t sample_size() const noexcept { return shape.size(); }
    T* sample(int n) noexcept { return data.data() + static_cast<std::size_t>(n) * shape.size(); }
    const T* sample(int n) const noexcept {
        return data.data() + static_cast<std::size_t>(n) * shape.size();
    }
    T& at(int n, int c, int h = 0, int w = 0) noexcept {
        return data[((static_cast<std::size_t>(n) * shape.channels + c) * shape.height + h) *
                        shape.width + w];
    }
    const T& at(int n, int c, int h = 0, int w = 0) const noexcept {
        return data[((static_cast<std::size_t>(n) * shape.channels + c) * shape.height + h) *
                        shape.width + w];
    }
};

}  // namespace pat
