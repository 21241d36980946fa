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
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <vector>

#include "pat/errors.hpp"
#include "pat/rng.hpp"
#include "pat/tensor.hpp"

namespace pat {

enum class Split { train, eval };

/// Per-channel standardization x' = (x - mean[c]) / std[c], applied after
/// scaling bytes to [0, 1]. Empty vectors mean identity.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;

    bool identity() const noexcept { return mean.empty() && stddev.empty(); }
    double mean_of(int c) const { return mean.empty() ? 0.0 : mean[static_cast<std::size_t>(c)]; }
    double std_of(int c) const {
        return stddev.empty() ? 1.0 : stddev[static_cast<std::size_t>(c)];
    }
};

struct Dataset {
    Shape shape;
    int classes = 0;
    std::vector<float> images;  // count x C x H x W
    std::vector<int> labels;
    Split split = Split::train;
    Normalization norm;

    std::size_t size() const noexcept { return labels.size(); }
    const float* image(std::size_t i) const noexcept { return images.data() + i * shape.size(); }

    void validate() const {
        if (images.size() != labels.size() * shape.size())
            throw CountMismatchError("image buffer does not match label count");
        for (int y : labels)
            if (y < 0 || y >= classes) throw FormatError("label out of range");
    }
};

inline void apply_normalization(Dataset& ds, const Normalization& norm) {
    if (!norm.identity()) {
        const auto C = static_cast<std::size_t>(ds.shape.channels);
        if ((!norm.mean.empty() && norm.mean.size() != C) ||
            (!norm.stddev.empty() && norm.stddev.size() != C))
            throw ConfigError("normalization needs one mean/std per channel");
        for (std::size_t c = 0; c < C; ++c)
            if (!(norm.std_of(static_cast<int>(c)) > 0.0))
                throw ConfigError("normalization std must be > 0");
        const std::size_t plane = ds.shape.plane();
        for (std::size_t i = 0; i < ds.size(); ++i)
            for (std::size_t c = 0; c < C; ++c) {
                float* p = ds.images.data() + (i * C + c) * plane;
                const double m = norm.mean_of(static_cast<int>(c));
                const double s = norm.std_of(static_cast<int>(c));
                for (std::size_t k = 0; k < plane; ++k)
                    p[k] = static_cast<float>((p[k] - m) / s);
            }
    }
    ds.norm = norm;
}

namespace idx {

inline constexpr std::uint32_t kLabelMagic = 0x00000801;
inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kImageMagic4 = 0x00000804;  // N x C x H x W

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t be32(const std::vector<std::uint8_t>& b, std::size_t off) {
    return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
           (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

inline void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    b.push_back(static_cast<std::uint8_t>(v >> 24));
    b.push_back(static_cast<std::uint8_t>(v >> 16));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
    b.push_back(static_cast<std::uint8_t>(v));
}

struct Parsed {
    std::vector<std::uint32_t> dims;
    std::size_t payload_offset = 0;
};

inline Parsed parse_header(const std::vector<std::uint8_t>& bytes, const std::string& what,
                           std::initializer_list<std::uint32_t> magics) {
    if (bytes.size() < 4) throw TruncatedError(what + ": file shorter than the IDX magic");
    const std::uint32_t magic = be32(bytes, 0);
    if (std::find(magics.begin(), magics.end(), magic) == magics.end()) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "0x%08X", magic);
        throw FormatError(what + ": unexpected IDX magic " + buf);
    }
    const std::size_t ndim = magic & 0xFF;
    if (bytes.size() < 4 + 4 * ndim) throw TruncatedError(what + ": truncated IDX header");
    Parsed p;
    for (std::size_t d = 0; d < ndim; ++d) p.dims.push_back(be32(bytes, 4 + 4 * d));
    p.payload_offset = 4 + 4 * ndim;
    std::size_t expect = 1;
    for (auto d : p.dims) expect *= d;
    if (bytes.size() - p.payload_offset < expect)
        throw TruncatedError(what + ": payload has " +
                             std::to_string(bytes.size() - p.payload_offset) + " bytes, header declares " +
                             std::to_string(expect));
    return p;
}

}  // namespace idx

/// Parse an IDX image/label file pair (unsigned-byte payloads). Pixel bytes
/// are scaled to [0, 1] and then standardized with `norm`. When `classes` is
/// 0 it is inferred as max(label) + 1.
inline Dataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path, const Normalization& norm = {},
                        int classes = 0, Split split = Split::train) {
    const auto ib = idx::read_file(images_path);
    const auto lb = idx::read_file(labels_path);
    const auto ih = idx::parse_header(ib, images_path.string(), {idx::kImageMagic, idx::kImageMagic4});
    const auto lh = idx::parse_header(lb, labels_path.string(), {idx::kLabelMagic});
    if (ih.dims[0] != lh.dims[0])
        throw CountMismatchError("image file holds " + std::to_string(ih.dims[0]) +
                                 " samples but label file holds " + std::to_string(lh.dims[0]));
    Dataset ds;
    ds.split = split;
    if (ih.dims.size() == 3)
        ds.shape = Shape{1, static_cast<int>(ih.dims[1]), static_cast<int>(ih.dims[2])};
    else
        ds.shape = Shape{static_cast<int>(ih.dims[1]), static_cast<int>(ih.dims[2]),
                         static_cast<int>(ih.dims[3])};
    const std::size_t n = ih.dims[0];
    ds.images.resize(n * ds.shape.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i)
        ds.images[i] = static_cast<float>(ib[ih.payload_offset + i]) / 255.0f;
    ds.labels.resize(n);
    int max_label = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ds.labels[i] = lb[lh.payload_offset + i];
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.classes = classes > 0 ? classes : max_label + 1;
    ds.validate();
    apply_normalization(ds, norm);
    return ds;
}

/// Write a dataset back as IDX, undoing the standardization first.
inline void write_idx(const Dataset& ds, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path) {
    std::vector<std::uint8_t> ib;
    if (ds.shape.channels == 1) {
        idx::put_be32(ib, idx::kImageMagic);
        idx::put_be32(ib, static_cast<std::uint32_t>(ds.size()));
    } else {
        idx::put_be32(ib, idx::kImageMagic4);
        idx::put_be32(ib, static_cast<std::uint32_t>(ds.size()));
        idx::put_be32(ib, static_cast<std::uint32_t>(ds.shape.channels));
    }
    idx::put_be32(ib, static_cast<std::uint32_t>(ds.shape.height));
    idx::put_be32(ib, static_cast<std::uint32_t>(ds.shape.width));
    const std::size_t plane = ds.shape.plane();
    for (std::size_t k = 0; k < ds.images.size(); ++k) {
        const int c = static_cast<int>((k / plane) % static_cast<std::size_t>(ds.shape.channels));
        const double raw = ds.images[k] * ds.norm.std_of(c) + ds.norm.mean_of(c);
        ib.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(raw * 255.0), 0L, 255L)));
    }
    std::vector<std::uint8_t> lb;
    idx::put_be32(lb, idx::kLabelMagic);
    idx::put_be32(lb, static_cast<std::uint32_t>(ds.size()));
    for (int y : ds.labels) lb.push_back(static_cast<std::uint8_t>(y));

    for (const auto& [path, bytes] : {std::pair{images_path, &ib}, std::pair{labels_path, &lb}}) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write " + path.string());
        out.write(reinterpret_cast<const char*>(bytes->data()),
                  static_cast<std::streamsize>(bytes->size()));
    }
}

struct SynthOptions {
    int size = 8;           // square image side
    double noise = 0.25;    // per-pixel Gaussian noise std
    int max_shift = 1;      // uniform jitter of the class pattern, in pixels
    Split split = Split::train;
};

/// Single-channel images holding a class-specific pair of Gaussian blobs
/// with random amplitude, jitter and pixel noise. Class patterns depend only
/// on (classes, size); `seed` drives the samples, so train and eval splits
/// drawn with different seeds share the same classes.
inline Dataset synth_dataset(int classes, int per_class, std::uint64_t seed,
                             const SynthOptions& opt = {}) {
    if (classes < 2) throw ConfigError("synth_dataset needs at least two classes");
    if (per_class < 1) throw ConfigError("synth_dataset needs per_class >= 1");
    if (opt.size < 4) throw ConfigError("synth_dataset image size must be >= 4");
    const int S = opt.size;
    const std::size_t plane = static_cast<std::size_t>(S) * static_cast<std::size_t>(S);

    // Class c puts one blob on a ring at angle 2*pi*c/classes and a fainter
    // one a quarter turn further on an inner ring.
    struct Blob {
        double y, x, sigma, amp;
    };
    const double pi = std::acos(-1.0);
    const double mid = (S - 1) / 2.0;
    const double outer = 0.3 * S, inner = 0.15 * S;
    std::vector<std::array<Blob, 2>> patterns(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        const double a = 2.0 * pi * c / classes, b = a + pi / 2.0;
        patterns[static_cast<std::size_t>(c)] = {
            Blob{mid + outer * std::sin(a), mid + outer * std::cos(a), 0.12 * S, 1.0},
            Blob{mid + inner * std::sin(b), mid + inner * std::cos(b), 0.12 * S, 0.6}};
    }

    Dataset ds;
    ds.shape = Shape{1, S, S};
    ds.classes = classes;
    ds.split = opt.split;
    const std::size_t n = static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class);
    std::vector<int> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
    Rng rng(mix_seed(seed, 0xDA7A));
    shuffle(std::span<int>(order), rng);

    ds.images.resize(n * plane);
    ds.labels = order;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& pat = patterns[static_cast<std::size_t>(order[i])];
        const double dy = static_cast<double>(uniform_index(rng, 2 * opt.max_shift + 1)) - opt.max_shift;
        const double dx = static_cast<double>(uniform_index(rng, 2 * opt.max_shift + 1)) - opt.max_shift;
        const double amp = uniform(rng, 0.6, 1.0);
        float* img = ds.images.data() + i * plane;
        for (int r = 0; r < S; ++r)
            for (int c = 0; c < S; ++c) {
                double v = 0.0;
                for (const auto& b : pat) {
                    const double ry = r - (b.y + dy), rx = c - (b.x + dx);
                    v += b.amp * std::exp(-(ry * ry + rx * rx) / (2.0 * b.sigma * b.sigma));
                }
                v = amp * v + opt.noise * normal01(rng);
                // Quantize to bytes so the sample survives an IDX round trip.
                const long q = std::clamp(std::lround(v * 255.0), 0L, 255L);
                img[static_cast<std::size_t>(r * S + c)] = static_cast<float>(q) / 255.0f;
            }
    }
    return ds;
}

template <typename T = float>
struct Batch {
    Tensor<T> images;
    std::vector<int> labels;
};

template <typename T = float>
Batch<T> make_batch(const Dataset& ds, std::span<const std::size_t> indices) {
    Batch<T> b;
    b.images = Tensor<T>(static_cast<int>(indices.size()), ds.shape);
    b.labels.reserve(indices.size());
    const std::size_t sz = ds.shape.size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const float* src = ds.image(indices[k]);
        std::transform(src, src + sz, b.images.data.begin() + static_cast<std::ptrdiff_t>(k * sz),
                       [](float v) { return static_cast<T>(v); });
        b.labels.push_back(ds.labels[indices[k]]);
    }
    return b;
}

/// One epoch of shuffled mini-batches. The order is a pure function of
/// `epoch_seed`; the final partial batch is kept.
template <typename T = float>
class BatchRange {
public:
    BatchRange(const Dataset& ds, int batch_size, std::uint64_t epoch_seed)
        : ds_(&ds), batch_size_(static_cast<std::size_t>(batch_size)), order_(ds.size()) {
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        std::iota(order_.begin(), order_.end(), std::size_t{0});
        Rng rng(mix_seed(epoch_seed, 0xBA7C));
        shuffle(std::span<std::size_t>(order_), rng);
    }

    std::size_t batch_count() const noexcept {
        return (order_.size() + batch_size_ - 1) / batch_size_;
    }
    std::span<const std::size_t> indices(std::size_t b) const {
        const std::size_t lo = b * batch_size_;
        const std::size_t hi = std::min(order_.size(), lo + batch_size_);
        return {order_.data() + lo, hi - lo};
    }
    Batch<T> operator[](std::size_t b) const { return make_batch<T>(*ds_, indices(b)); }
    const std::vector<std::size_t>& order() const noexcept { return order_; }

    class iterator {
    public:
        using value_type = Batch<T>;
        using difference_type = std::ptrdiff_t;
        iterator(const BatchRange* r, std::size_t b) : r_(r), b_(b) {}
        Batch<T> operator*() const { return (*r_)[b_]; }
        iterator& operator++() {
            ++b_;
            return *this;
        }
        bool operator==(const iterator& o) const { return b_ == o.b_; }

    private:
        const BatchRange* r_;
        std::size_t b_;
    };
    iterator begin() const { return {this, 0}; }
    iterator end() const { return {this, batch_count()}; }

private:
    const Dataset* ds_;
    std::size_t batch_size_;
    std::vector<std::size_t> order_;
};

template <typename T = float>
BatchRange<T> batches(const Dataset& ds, int batch_size, std::uint64_t epoch_seed) {
    return BatchRange<T>(ds, batch_size, epoch_seed);
}

}  // namespace pat
