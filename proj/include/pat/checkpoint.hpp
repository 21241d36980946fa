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
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "pat/errors.hpp"
#include "pat/network.hpp"
#include "pat/prune.hpp"

// Checkpoint layout (all integers and floats little-endian):
//
//   "PATCKPT1"                     8-byte magic
//   u32 version, u32 scalar bytes  version is kCheckpointVersion
//   u32 C, H, W                    input shape
//   u64 seed, u64 epoch
//   u32 L, then L layer specs      u8 kind, i32 out, in, kernel, stride, padding, u8 bias, prunable
//   u32 U, then U masks            u32 width, width bytes of 0/1
//   per layer: weight, bias, gamma, beta as (u64 n, n values, n velocities),
//              running mean and var as (u64 n, n values)
//   u32 len, rng state text        std::mt19937_64 stream form
//   i32 step, i32 limit, u32 |P|, |P| pairs of i32 (layer, channel)
//   u64 FNV-1a of every preceding byte
//
// Values are stored at the network's own scalar width (4 bytes for Network).

namespace pat {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

constexpr std::uint64_t fnv1a(const char* data, std::size_t n,
                              std::uint64_t h = 0xcbf29ce484222325ull) noexcept {
    for (std::size_t i = 0; i < n; ++i) {
        h ^= static_cast<unsigned char>(data[i]);
        h *= 0x100000001b3ull;
    }
    return h;
}

class ByteWriter {
public:
    template <typename V>
    void put(V v) {
        char raw[sizeof(V)];
        std::memcpy(raw, &v, sizeof(V));
        buf_.append(raw, sizeof(V));
    }
    void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template <typename V>
    void array(const std::vector<V>& v) {
        bytes(v.data(), v.size() * sizeof(V));
    }
    const std::string& str() const noexcept { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view data) : data_(data) {}

    template <typename V>
    V get() {
        need(sizeof(V));
        V v;
        std::memcpy(&v, data_.data() + pos_, sizeof(V));
        pos_ += sizeof(V);
        return v;
    }
    template <typename V>
    std::vector<V> array(std::size_t n) {
        if (n > (data_.size() - pos_) / sizeof(V)) fail();
        std::vector<V> v(n);
        std::memcpy(v.data(), data_.data() + pos_, n * sizeof(V));
        pos_ += n * sizeof(V);
        return v;
    }
    std::string text(std::size_t n) {
        need(n);
        std::string s(data_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    std::size_t pos() const noexcept { return pos_; }

private:
    void need(std::size_t n) const {
        if (n > data_.size() - pos_) fail();
    }
    [[noreturn]] static void fail() { throw CorruptError("checkpoint payload is truncated"); }

    std::string_view data_;
    std::size_t pos_ = 0;
};

inline std::string read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

template <typename T>
void put_param(ByteWriter& w, const Param<T>& p) {
    w.put<std::uint64_t>(p.value.size());
    w.array(p.value);
    w.array(p.velocity);
}

}  // namespace detail

/// Decoded checkpoint contents, before they are bound to a network.
template <std::floating_point T>
struct CheckpointData {
    Shape input;
    std::uint64_t seed = 0;
    std::uint64_t epoch = 0;
    std::vector<LayerSpec> specs;
    std::vector<std::vector<std::uint8_t>> masks;
    struct Buffers {
        std::vector<T> value, velocity;
    };
    std::vector<std::array<Buffers, 4>> params;  // weight, bias, gamma, beta
    std::vector<std::vector<T>> running_mean, running_var;
    std::string rng;
    int step = 0;
    int limit = 0;
    std::vector<NeuronId> pruned;
};

template <std::floating_point T>
std::string encode_checkpoint(const BasicNetwork<T>& net, const PruneState& state) {
    detail::ByteWriter w;
    w.bytes(kCheckpointMagic, sizeof kCheckpointMagic);
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(sizeof(T));
    const Shape in = net.input_shape();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(in.channels));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(in.height));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(in.width));
    w.put<std::uint64_t>(net.seed());
    w.put<std::uint64_t>(net.epoch());

    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.specs().size()));
    for (const auto& s : net.specs()) {
        w.put<std::uint8_t>(static_cast<std::uint8_t>(s.kind));
        for (int v : {s.out_channels, s.in_channels, s.kernel, s.stride, s.padding})
            w.put<std::int32_t>(v);
        w.put<std::uint8_t>(s.bias);
        w.put<std::uint8_t>(s.prunable);
    }
    w.put<std::uint32_t>(static_cast<std::uint32_t>(net.masks().size()));
    for (const auto& m : net.masks()) {
        w.put<std::uint32_t>(static_cast<std::uint32_t>(m.size()));
        w.array(m);
    }
    for (const auto& l : net.layers()) {
        detail::put_param(w, l.weight);
        detail::put_param(w, l.bias);
        detail::put_param(w, l.gamma);
        detail::put_param(w, l.beta);
        w.put<std::uint64_t>(l.running_mean.size());
        w.array(l.running_mean);
        w.put<std::uint64_t>(l.running_var.size());
        w.array(l.running_var);
    }
    std::ostringstream rng;
    rng << net.rng();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(rng.str().size()));
    w.bytes(rng.str().data(), rng.str().size());

    w.put<std::int32_t>(state.step());
    w.put<std::int32_t>(state.limit());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(state.pruned().size()));
    for (const auto& n : state.pruned()) {
        w.put<std::int32_t>(n.layer);
        w.put<std::int32_t>(n.channel);
    }
    std::string out = w.str();
    const std::uint64_t sum = detail::fnv1a(out.data(), out.size());
    char raw[8];
    std::memcpy(raw, &sum, 8);
    out.append(raw, 8);
    return out;
}

template <std::floating_point T>
CheckpointData<T> decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < sizeof kCheckpointMagic ||
        std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
        throw FormatError("not a checkpoint file (bad magic)");
    detail::ByteReader r(bytes.substr(sizeof kCheckpointMagic));
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                           std::to_string(kCheckpointVersion) + ")");
    if (bytes.size() < sizeof kCheckpointMagic + 8 + 8)
        throw CorruptError("checkpoint payload is truncated");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, 8);
    if (detail::fnv1a(bytes.data(), body) != stored)
        throw CorruptError("checkpoint checksum mismatch (truncated or damaged file)");
    // From here on the reader may only walk the checksummed body.
    detail::ByteReader rb(bytes.substr(sizeof kCheckpointMagic + 4, body - sizeof kCheckpointMagic - 4));
    r = rb;

    const auto scalar = r.get<std::uint32_t>();
    if (scalar != sizeof(T))
        throw FormatError("checkpoint stores " + std::to_string(scalar) + "-byte scalars, expected " +
                          std::to_string(sizeof(T)));
    CheckpointData<T> d;
    d.input.channels = static_cast<int>(r.get<std::uint32_t>());
    d.input.height = static_cast<int>(r.get<std::uint32_t>());
    d.input.width = static_cast<int>(r.get<std::uint32_t>());
    d.seed = r.get<std::uint64_t>();
    d.epoch = r.get<std::uint64_t>();

    const auto layers = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < layers; ++i) {
        LayerSpec s;
        const auto kind = r.get<std::uint8_t>();
        if (kind > static_cast<std::uint8_t>(LayerKind::avgpool_global))
            throw CorruptError("checkpoint holds an unknown layer kind");
        s.kind = static_cast<LayerKind>(kind);
        s.out_channels = r.get<std::int32_t>();
        s.in_channels = r.get<std::int32_t>();
        s.kernel = r.get<std::int32_t>();
        s.stride = r.get<std::int32_t>();
        s.padding = r.get<std::int32_t>();
        s.bias = r.get<std::uint8_t>() != 0;
        s.prunable = r.get<std::uint8_t>() != 0;
        d.specs.push_back(s);
    }
    const auto units = r.get<std::uint32_t>();
    for (std::uint32_t u = 0; u < units; ++u) d.masks.push_back(r.array<std::uint8_t>(r.get<std::uint32_t>()));
    for (std::uint32_t i = 0; i < layers; ++i) {
        std::array<typename CheckpointData<T>::Buffers, 4> p;
        for (auto& b : p) {
            const auto n = static_cast<std::size_t>(r.get<std::uint64_t>());
            b.value = r.array<T>(n);
            b.velocity = r.array<T>(n);
        }
        d.params.push_back(std::move(p));
        d.running_mean.push_back(r.array<T>(static_cast<std::size_t>(r.get<std::uint64_t>())));
        d.running_var.push_back(r.array<T>(static_cast<std::size_t>(r.get<std::uint64_t>())));
    }
    d.rng = r.text(r.get<std::uint32_t>());
    d.step = r.get<std::int32_t>();
    d.limit = r.get<std::int32_t>();
    const auto np = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < np; ++i) {
        NeuronId n;
        n.layer = r.get<std::int32_t>();
        n.channel = r.get<std::int32_t>();
        d.pruned.push_back(n);
    }
    if (r.pos() != body - sizeof kCheckpointMagic - 4)
        throw CorruptError("checkpoint has trailing bytes");
    return d;
}

template <std::floating_point T>
void save_checkpoint(const BasicNetwork<T>& net, const PruneState& state,
                     const std::filesystem::path& path) {
    detail::write_all(path, encode_checkpoint(net, state));
}

/// Copy checkpointed state into an existing network built from the same
/// layer specs. Returns the saved prune state.
template <std::floating_point T>
PruneState restore_checkpoint(BasicNetwork<T>& net, const CheckpointData<T>& d) {
    std::string diff;
    const auto& specs = net.specs();
    const std::size_t n = std::max(specs.size(), d.specs.size());
    for (std::size_t i = 0; i < n; ++i) {
        const bool have_a = i < specs.size(), have_b = i < d.specs.size();
        if (have_a && have_b && specs[i] == d.specs[i]) continue;
        diff += "\n  layer " + std::to_string(i) + ": network " +
                (have_a ? describe(specs[i]) : std::string("<none>")) + ", checkpoint " +
                (have_b ? describe(d.specs[i]) : std::string("<none>"));
    }
    if (!(net.input_shape() == d.input))
        diff += "\n  input shape differs";
    if (!diff.empty()) throw SpecMismatchError("checkpoint layer specs differ:" + diff);

    auto& layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        Param<T>* ps[4] = {&layers[i].weight, &layers[i].bias, &layers[i].gamma, &layers[i].beta};
        for (std::size_t k = 0; k < 4; ++k) {
            const auto& b = d.params[i][k];
            if (b.value.size() != ps[k]->value.size())
                throw CorruptError("checkpoint buffer size mismatch in " + layers[i].name);
            ps[k]->value = b.value;
            ps[k]->velocity = b.velocity;
            std::fill(ps[k]->grad.begin(), ps[k]->grad.end(), T(0));
        }
        if (d.running_mean[i].size() != layers[i].running_mean.size() ||
            d.running_var[i].size() != layers[i].running_var.size())
            throw CorruptError("checkpoint running statistics mismatch in " + layers[i].name);
        layers[i].running_mean = d.running_mean[i];
        layers[i].running_var = d.running_var[i];
    }
    net.set_masks(d.masks);
    net.epoch() = d.epoch;
    std::istringstream rng(d.rng);
    rng >> net.rng();
    if (!rng) throw CorruptError("checkpoint rng state is unreadable");

    PruneState state = PruneState::from_network(net);
    if (state.pruned().size() != d.pruned.size())
        throw CorruptError("checkpoint pruned list disagrees with its masks");
    for (const auto& p : d.pruned)
        if (!state.pruned().count(p)) throw CorruptError("checkpoint pruned list disagrees with its masks");
    state.set_step(d.step);
    state.set_limit(d.limit);
    return state;
}

template <std::floating_point T>
PruneState restore_checkpoint(BasicNetwork<T>& net, const std::filesystem::path& path) {
    return restore_checkpoint(net, decode_checkpoint<T>(detail::read_all(path)));
}

template <std::floating_point T>
struct Checkpoint {
    BasicNetwork<T> net;
    PruneState state;
};

/// Rebuild a network and its prune state from a checkpoint file.
template <std::floating_point T = float>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
    const auto d = decode_checkpoint<T>(detail::read_all(path));
    Checkpoint<T> c{BasicNetwork<T>(d.specs, d.input, d.seed), {}};
    c.state = restore_checkpoint(c.net, d);
    return c;
}

// Mask files are plain text:
//
//   patmask 1
//   units <U>
//   unit <u> <width> <bits>        one line per unit, '1' = active
//   pruned <|P|>
//   <layer> <channel>              one line per pruned neuron
struct MaskFile {
    std::vector<std::vector<std::uint8_t>> masks;
    std::vector<NeuronId> pruned;

    std::vector<int> widths() const {
        std::vector<int> w;
        for (const auto& m : masks) w.push_back(static_cast<int>(m.size()));
        return w;
    }
    std::vector<int> active_counts() const {
        std::vector<int> c;
        for (const auto& m : masks) {
            int n = 0;
            for (auto b : m) n += b != 0;
            c.push_back(n);
        }
        return c;
    }
};

inline MaskFile mask_from_masks(std::vector<std::vector<std::uint8_t>> masks) {
    MaskFile f;
    f.masks = std::move(masks);
    for (std::size_t u = 0; u < f.masks.size(); ++u)
        for (std::size_t c = 0; c < f.masks[u].size(); ++c)
            if (!f.masks[u][c]) f.pruned.push_back({static_cast<int>(u), static_cast<int>(c)});
    return f;
}

inline std::string encode_mask(const MaskFile& f) {
    std::string out = "patmask 1\nunits " + std::to_string(f.masks.size()) + "\n";
    for (std::size_t u = 0; u < f.masks.size(); ++u) {
        out += "unit " + std::to_string(u) + " " + std::to_string(f.masks[u].size()) + " ";
        for (auto b : f.masks[u]) out += b ? '1' : '0';
        out += '\n';
    }
    out += "pruned " + std::to_string(f.pruned.size()) + "\n";
    for (const auto& n : f.pruned) out += std::to_string(n.layer) + " " + std::to_string(n.channel) + "\n";
    return out;
}

inline MaskFile decode_mask(const std::string& text) {
    std::istringstream in(text);
    auto bad = [](const std::string& why) { return FormatError("mask file: " + why); };
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "patmask") throw bad("missing 'patmask' header");
    if (version != 1) throw VersionError("mask file version " + std::to_string(version) + " is not supported");
    std::size_t units = 0;
    if (!(in >> word >> units) || word != "units") throw bad("missing unit count");
    MaskFile f;
    for (std::size_t u = 0; u < units; ++u) {
        std::size_t idx = 0, width = 0;
        std::string bits;
        if (!(in >> word >> idx >> width >> bits) || word != "unit" || idx != u)
            throw bad("malformed line for unit " + std::to_string(u));
        if (bits.size() != width) throw bad("unit " + std::to_string(u) + " has the wrong bit count");
        std::vector<std::uint8_t> m;
        for (char c : bits) {
            if (c != '0' && c != '1') throw bad("bits must be 0 or 1");
            m.push_back(c == '1');
        }
        f.masks.push_back(std::move(m));
    }
    std::size_t np = 0;
    if (!(in >> word >> np) || word != "pruned") throw bad("missing pruned list");
    for (std::size_t i = 0; i < np; ++i) {
        NeuronId n;
        if (!(in >> n.layer >> n.channel)) throw bad("pruned list is truncated");
        f.pruned.push_back(n);
    }
    const auto derived = mask_from_masks(f.masks).pruned;
    if (derived != f.pruned) throw bad("pruned list disagrees with the bit vectors");
    return f;
}

template <std::floating_point T>
void save_mask(const BasicNetwork<T>& net, const PruneState& state, const std::filesystem::path& path) {
    MaskFile f;
    f.masks = net.masks();
    f.pruned.assign(state.pruned().begin(), state.pruned().end());
    detail::write_all(path, encode_mask(f));
}

inline MaskFile load_mask(const std::filesystem::path& path) {
    return decode_mask(detail::read_all(path));
}

/// Install a mask on a network of matching unit widths.
template <std::floating_point T>
void apply_mask(BasicNetwork<T>& net, const MaskFile& f) {
    if (f.widths() != net.unit_widths()) {
        std::string diff;
        const auto w = net.unit_widths();
        for (std::size_t u = 0; u < std::max(w.size(), f.masks.size()); ++u) {
            const int a = u < w.size() ? w[u] : -1;
            const int b = u < f.masks.size() ? static_cast<int>(f.masks[u].size()) : -1;
            if (a != b)
                diff += "\n  unit " + std::to_string(u) + ": network width " + std::to_string(a) +
                        ", mask width " + std::to_string(b);
        }
        throw SpecMismatchError("mask does not fit the network:" + diff);
    }
    net.set_masks(f.masks);
}

}  // namespace pat
