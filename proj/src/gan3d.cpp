// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/gan3d.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace dg3d::gan3d {

TriplaneGrid TriplaneGrid::zeros(int channels, int resolution) {
    TriplaneGrid t;
    t.channels = channels;
    t.resolution = resolution;
    t.values.assign(element_count(channels, resolution), 0.0);
    return t;
}

LearnableTriplane::LearnableTriplane(int channels, int resolution)
    : residual("learnable_triplane",
               {3, static_cast<std::size_t>(channels), static_cast<std::size_t>(resolution),
                static_cast<std::size_t>(resolution)},
               true) {}

TriplaneGrid LearnableTriplane::grid() const {
    TriplaneGrid t;
    t.channels = channels();
    t.resolution = resolution();
    t.values = residual.values;
    return t;
}

namespace {

DenseLayer make_layer(const std::string& prefix, int index, int in, int out, double stddev,
                      std::mt19937_64& rng) {
    const std::string base = prefix + "." + std::to_string(index);
    DenseLayer layer{ParamBuffer(base + ".weight", {static_cast<std::size_t>(out), static_cast<std::size_t>(in)}),
                     ParamBuffer(base + ".bias", {static_cast<std::size_t>(out)})};
    std::normal_distribution<double> normal(0.0, stddev);
    for (auto& v : layer.weight.values) v = normal(rng);
    return layer;
}

const char* part_name(Part p) {
    switch (p) {
        case Part::mapping: return "mapping";
        case Part::triplane_gen: return "triplane_gen";
        case Part::decoder: return "decoder";
    }
    return "?";
}

constexpr Part kParts[] = {Part::mapping, Part::triplane_gen, Part::decoder};

}  // namespace

GeneratorParams GeneratorParams::create(const GanDims& dims, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    GeneratorParams p;
    p.dims = dims;
    const int base_out = 3 * dims.channels * dims.base_resolution * dims.base_resolution;

    p.mapping.slope = dims.leaky_slope;
    p.mapping.layers.push_back(
        make_layer("mapping", 0, dims.latent_dim, dims.hidden, std::sqrt(2.0 / dims.latent_dim), rng));
    p.mapping.layers.push_back(
        make_layer("mapping", 1, dims.hidden, dims.latent_dim, std::sqrt(1.0 / dims.hidden), rng));

    p.triplane_gen.slope = dims.leaky_slope;
    p.triplane_gen.layers.push_back(
        make_layer("triplane_gen", 0, dims.latent_dim, dims.hidden, std::sqrt(2.0 / dims.latent_dim), rng));
    p.triplane_gen.layers.push_back(
        make_layer("triplane_gen", 1, dims.hidden, base_out, std::sqrt(1.0 / dims.hidden), rng));

    p.decoder.slope = dims.leaky_slope;
    p.decoder.layers.push_back(
        make_layer("decoder", 0, dims.channels, dims.decoder_hidden, std::sqrt(2.0 / dims.channels), rng));
    p.decoder.layers.push_back(
        make_layer("decoder", 1, dims.decoder_hidden, 4, std::sqrt(1.0 / dims.decoder_hidden), rng));
    return p;
}

DenseStack& GeneratorParams::part(Part p) {
    switch (p) {
        case Part::mapping: return mapping;
        case Part::triplane_gen: return triplane_gen;
        case Part::decoder: return decoder;
    }
    throw std::logic_error("unknown generator part");
}

const DenseStack& GeneratorParams::part(Part p) const { return const_cast<GeneratorParams*>(this)->part(p); }

void GeneratorParams::set_trainable(Part p, bool trainable) {
    for (auto& layer : part(p).layers) {
        layer.weight.trainable = trainable;
        layer.bias.trainable = trainable;
    }
}

void GeneratorParams::train_only(Part p) {
    for (Part q : kParts) set_trainable(q, q == p);
}

std::vector<ParamBuffer*> GeneratorParams::buffers() {
    std::vector<ParamBuffer*> out;
    for (Part q : kParts) {
        for (auto& layer : part(q).layers) {
            out.push_back(&layer.weight);
            out.push_back(&layer.bias);
        }
    }
    return out;
}

std::vector<const ParamBuffer*> GeneratorParams::buffers() const {
    std::vector<const ParamBuffer*> out;
    for (auto* b : const_cast<GeneratorParams*>(this)->buffers()) out.push_back(b);
    return out;
}

std::vector<NamedTensor> GeneratorParams::to_tensors() const {
    std::vector<NamedTensor> out;
    out.push_back({"meta.dims",
                   {7},
                   {double(dims.latent_dim), double(dims.channels), double(dims.resolution),
                    double(dims.base_resolution), double(dims.hidden), double(dims.decoder_hidden),
                    dims.leaky_slope}});
    for (Part q : kParts) {
        out.push_back({std::string(part_name(q)) + ".slope", {1}, {part(q).slope}});
    }
    for (const auto* b : buffers()) {
        NamedTensor t{b->name, {}, b->values};
        for (auto d : b->shape) t.dims.push_back(d);
        out.push_back(std::move(t));
    }
    return out;
}

GeneratorParams GeneratorParams::from_tensors(const std::vector<NamedTensor>& tensors) {
    const auto* meta = find_tensor(tensors, "meta.dims");
    if (meta == nullptr || meta->values.size() != 7) throw CheckpointError("checkpoint lacks generator dims");
    GeneratorParams p;
    p.dims.latent_dim = static_cast<int>(meta->values[0]);
    p.dims.channels = static_cast<int>(meta->values[1]);
    p.dims.resolution = static_cast<int>(meta->values[2]);
    p.dims.base_resolution = static_cast<int>(meta->values[3]);
    p.dims.hidden = static_cast<int>(meta->values[4]);
    p.dims.decoder_hidden = static_cast<int>(meta->values[5]);
    p.dims.leaky_slope = meta->values[6];
    for (Part q : kParts) {
        auto& stack = p.part(q);
        const std::string prefix = part_name(q);
        if (const auto* s = find_tensor(tensors, prefix + ".slope")) stack.slope = s->values.at(0);
        for (int i = 0;; ++i) {
            const std::string base = prefix + "." + std::to_string(i);
            const auto* w = find_tensor(tensors, base + ".weight");
            const auto* b = find_tensor(tensors, base + ".bias");
            if (w == nullptr || b == nullptr) break;
            if (w->dims.size() != 2 || b->dims.size() != 1 || b->dims[0] != w->dims[0]) {
                throw CheckpointError("malformed layer '" + base + "'");
            }
            stack.layers.push_back({ParamBuffer(w->name, {w->dims[0], w->dims[1]}, w->values),
                                    ParamBuffer(b->name, {b->dims[0]}, b->values)});
        }
        if (stack.layers.empty()) throw CheckpointError("checkpoint lacks layers for '" + prefix + "'");
    }
    return p;
}

LatentCode sample_noise(int dim, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    LatentCode z;
    z.kind = LatentKind::noise;
    z.values.resize(static_cast<std::size_t>(dim));
    for (auto& v : z.values) v = normal(rng);
    return z;
}

namespace {

template <class Stack, class Bind>
Var run_stack(Graph& g, Stack& stack, Var x, Bind bind) {
    for (std::size_t i = 0; i < stack.layers.size(); ++i) {
        auto& layer = stack.layers[i];
        x = g.dense(x, bind(layer.weight), bind(layer.bias));
        if (i + 1 < stack.layers.size()) x = g.leaky_relu(x, stack.slope);
    }
    return x;
}

}  // namespace

Var stack_node(Graph& g, DenseStack& stack, Var x) {
    return run_stack(g, stack, x, [&g](ParamBuffer& p) { return p.trainable ? g.leaf(p) : g.input(p); });
}

Var stack_node(Graph& g, const DenseStack& stack, Var x) {
    return run_stack(g, stack, x, [&g](const ParamBuffer& p) { return g.input(p); });
}

Var mapping_node(Graph& g, GeneratorParams& params, Var z) { return stack_node(g, params.mapping, z); }

Var upsample_node(Graph& g, Var planes, int channels, int base, int full) {
    auto value = upsample_planes(g.value(planes), channels, base, full);
    return g.custom("upsample_planes", {planes}, std::move(value),
                    {3, static_cast<std::size_t>(channels), static_cast<std::size_t>(full),
                     static_cast<std::size_t>(full)},
                    [channels, base, full](auto gout, auto& gin) {
                        upsample_planes_adjoint(gout, gin[0], channels, base, full);
                    });
}

namespace {

template <class Params>
Var triplane_from_stack(Graph& g, Params& params, Var w) {
    const auto& d = params.dims;
    Var base = stack_node(g, params.triplane_gen, w);
    if (d.base_resolution == d.resolution) {
        return g.custom("reshape_triplane", {base}, std::vector<double>(g.value(base).begin(), g.value(base).end()),
                        {3, static_cast<std::size_t>(d.channels), static_cast<std::size_t>(d.resolution),
                         static_cast<std::size_t>(d.resolution)},
                        [](auto gout, auto& gin) {
                            for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i];
                        });
    }
    return upsample_node(g, base, d.channels, d.base_resolution, d.resolution);
}

}  // namespace

Var triplane_node(Graph& g, GeneratorParams& params, Var w, std::optional<Var> residual) {
    Var t = triplane_from_stack(g, params, w);
    if (residual) {
        if (g.shape(*residual) != g.shape(t)) {
            throw std::invalid_argument("triplane residual shape " + numgrad::shape_string(g.shape(*residual)) +
                                        " does not match " + numgrad::shape_string(g.shape(t)));
        }
        t = g.add(t, *residual);
    }
    return t;
}

Var triplane_node(Graph& g, const GeneratorParams& params, Var w) { return triplane_from_stack(g, params, w); }

LatentCode mapping_forward(const GeneratorParams& params, const LatentCode& z) {
    if (z.kind != LatentKind::noise) throw std::invalid_argument("mapping_forward expects a noise code");
    if (static_cast<int>(z.values.size()) != params.mapping.input_dim()) {
        throw std::invalid_argument("mapping_forward: latent has " + std::to_string(z.values.size()) +
                                    " dims, mapping expects " + std::to_string(params.mapping.input_dim()));
    }
    Graph g;
    Var out = stack_node(g, params.mapping, g.constant(z.values, {z.values.size()}));
    return {std::vector<double>(g.value(out).begin(), g.value(out).end()), LatentKind::style};
}

TriplaneGrid triplane_forward(const GeneratorParams& params, const LatentCode& w, const LearnableTriplane* residual) {
    if (w.kind != LatentKind::style) throw std::invalid_argument("triplane_forward expects a style code");
    if (static_cast<int>(w.values.size()) != params.triplane_gen.input_dim()) {
        throw std::invalid_argument("triplane_forward: style code dimension mismatch");
    }
    Graph g;
    Var t = triplane_node(g, params, g.constant(w.values, {w.values.size()}));
    TriplaneGrid out;
    out.channels = params.dims.channels;
    out.resolution = params.dims.resolution;
    out.values.assign(g.value(t).begin(), g.value(t).end());
    if (residual != nullptr) {
        if (residual->residual.values.size() != out.values.size() || residual->channels() != out.channels ||
            residual->resolution() != out.resolution) {
            throw std::invalid_argument("triplane residual shape " +
                                        numgrad::shape_string(residual->residual.shape) + " does not match (3," +
                                        std::to_string(out.channels) + "," + std::to_string(out.resolution) + "," +
                                        std::to_string(out.resolution) + ")");
        }
        for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += residual->residual.values[i];
    }
    return out;
}

GeneratorParams clone_frozen(const GeneratorParams& params) {
    GeneratorParams copy = params;
    for (auto* b : copy.buffers()) {
        b->trainable = false;
        b->zero_grad();
    }
    return copy;
}

namespace {

struct Tap {
    int i0, i1;
    double w1;
};

std::vector<Tap> make_taps(int base, int full) {
    std::vector<Tap> taps(static_cast<std::size_t>(full));
    for (int i = 0; i < full; ++i) {
        const double s = full == 1 ? 0.0 : static_cast<double>(i) * (base - 1) / (full - 1);
        int i0 = static_cast<int>(std::floor(s));
        if (i0 >= base - 1) i0 = std::max(base - 2, 0);
        const int i1 = std::min(i0 + 1, base - 1);
        taps[static_cast<std::size_t>(i)] = {i0, i1, s - i0};
    }
    return taps;
}

}  // namespace

std::vector<double> upsample_planes(std::span<const double> planes, int channels, int base, int full) {
    const auto taps = make_taps(base, full);
    const std::size_t maps = 3u * channels;
    std::vector<double> out(maps * full * full);
    for (std::size_t m = 0; m < maps; ++m) {
        const double* src = planes.data() + m * base * base;
        double* dst = out.data() + m * full * full;
        for (int r = 0; r < full; ++r) {
            const Tap& tr = taps[r];
            for (int c = 0; c < full; ++c) {
                const Tap& tc = taps[c];
                const double top = (1 - tc.w1) * src[tr.i0 * base + tc.i0] + tc.w1 * src[tr.i0 * base + tc.i1];
                const double bot = (1 - tc.w1) * src[tr.i1 * base + tc.i0] + tc.w1 * src[tr.i1 * base + tc.i1];
                dst[r * full + c] = (1 - tr.w1) * top + tr.w1 * bot;
            }
        }
    }
    return out;
}

void upsample_planes_adjoint(std::span<const double> grad_full, std::span<double> grad_base, int channels, int base,
                             int full) {
    const auto taps = make_taps(base, full);
    const std::size_t maps = 3u * channels;
    for (std::size_t m = 0; m < maps; ++m) {
        const double* src = grad_full.data() + m * full * full;
        double* dst = grad_base.data() + m * base * base;
        for (int r = 0; r < full; ++r) {
            const Tap& tr = taps[r];
            for (int c = 0; c < full; ++c) {
                const Tap& tc = taps[c];
                const double g = src[r * full + c];
                dst[tr.i0 * base + tc.i0] += (1 - tr.w1) * (1 - tc.w1) * g;
                dst[tr.i0 * base + tc.i1] += (1 - tr.w1) * tc.w1 * g;
                dst[tr.i1 * base + tc.i0] += tr.w1 * (1 - tc.w1) * g;
                dst[tr.i1 * base + tc.i1] += tr.w1 * tc.w1 * g;
            }
        }
    }
}

}  // namespace dg3d::gan3d
