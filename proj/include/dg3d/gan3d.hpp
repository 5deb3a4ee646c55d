// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "dg3d/checkpoint.hpp"
#include "dg3d/numgrad.hpp"

namespace dg3d::gan3d {

using numgrad::Graph;
using numgrad::ParamBuffer;
using numgrad::Var;

struct GanDims {
    int latent_dim = 16;
    int channels = 8;
    int resolution = 32;
    // The triplane generator synthesizes planes at this resolution; they are
    // bilinearly upsampled to `resolution`.
    int base_resolution = 8;
    int hidden = 64;
    int decoder_hidden = 64;
    double leaky_slope = 0.2;
};

enum class LatentKind { noise, style };

struct LatentCode {
    std::vector<double> values;
    LatentKind kind = LatentKind::noise;
};

/// Three axis-aligned feature planes (XY, XZ, YZ) stored [plane][channel][row][col]
/// over the cube [-1, 1]^3. Plane (a, b) indexes col by a and row by b.
struct TriplaneGrid {
    int channels = 0;
    int resolution = 0;
    std::vector<double> values;

    static TriplaneGrid zeros(int channels, int resolution);
    static std::size_t element_count(int channels, int resolution) {
        return 3u * static_cast<std::size_t>(channels) * resolution * resolution;
    }
    std::size_t index(int plane, int c, int row, int col) const {
        return ((static_cast<std::size_t>(plane) * channels + c) * resolution + row) * resolution + col;
    }
    double& at(int plane, int c, int row, int col) { return values[index(plane, c, row, col)]; }
    double at(int plane, int c, int row, int col) const { return values[index(plane, c, row, col)]; }
};

/// Zero-initialized trainable residual added to the generated triplane.
struct LearnableTriplane {
    ParamBuffer residual;

    LearnableTriplane(int channels, int resolution);
    int channels() const { return static_cast<int>(residual.shape[1]); }
    int resolution() const { return static_cast<int>(residual.shape[2]); }
    TriplaneGrid grid() const;
};

struct DenseLayer {
    ParamBuffer weight;  // [out, in]
    ParamBuffer bias;    // [out]
};

/// Dense layers with a leaky rectifier between consecutive layers and a
/// linear final layer.
struct DenseStack {
    std::vector<DenseLayer> layers;
    double slope = 0.2;

    int input_dim() const { return static_cast<int>(layers.front().weight.shape[1]); }
    int output_dim() const { return static_cast<int>(layers.back().weight.shape[0]); }
};

enum class Part { mapping, triplane_gen, decoder };

struct GeneratorParams {
    GanDims dims;
    DenseStack mapping;
    DenseStack triplane_gen;
    DenseStack decoder;

    /// Seeded random initialization.
    static GeneratorParams create(const GanDims& dims, std::uint64_t seed);

    DenseStack& part(Part p);
    const DenseStack& part(Part p) const;
    void set_trainable(Part p, bool trainable);
    /// Leaves only `p` trainable.
    void train_only(Part p);
    std::vector<ParamBuffer*> buffers();
    std::vector<const ParamBuffer*> buffers() const;

    std::vector<NamedTensor> to_tensors() const;
    static GeneratorParams from_tensors(const std::vector<NamedTensor>& tensors);
};

LatentCode sample_noise(int dim, std::mt19937_64& rng);

/// Graph view of a dense stack; frozen layers enter as read-only inputs.
Var stack_node(Graph& g, DenseStack& stack, Var x);
Var stack_node(Graph& g, const DenseStack& stack, Var x);

Var mapping_node(Graph& g, GeneratorParams& params, Var z);
/// triplane_gen(w) upsampled to full resolution, plus `residual` when given.
Var triplane_node(Graph& g, GeneratorParams& params, Var w, std::optional<Var> residual = std::nullopt);
Var triplane_node(Graph& g, const GeneratorParams& params, Var w);

LatentCode mapping_forward(const GeneratorParams& params, const LatentCode& z);
TriplaneGrid triplane_forward(const GeneratorParams& params, const LatentCode& w,
                              const LearnableTriplane* residual = nullptr);

/// Deep copy with every buffer frozen.
GeneratorParams clone_frozen(const GeneratorParams& params);

/// Align-corners bilinear upsampling of 3*C planes from `base` to `full`
/// resolution, and its adjoint.
std::vector<double> upsample_planes(std::span<const double> planes, int channels, int base, int full);
void upsample_planes_adjoint(std::span<const double> grad_full, std::span<double> grad_base, int channels,
                             int base, int full);
Var upsample_node(Graph& g, Var planes, int channels, int base, int full);

}  // namespace dg3d::gan3d
