// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "dg3d/gan3d.hpp"

using namespace dg3d;
using namespace dg3d::gan3d;

namespace {

GanDims small_dims() {
    GanDims d;
    d.latent_dim = 4;
    d.channels = 2;
    d.resolution = 6;
    d.base_resolution = 3;
    d.hidden = 8;
    d.decoder_hidden = 8;
    return d;
}

std::vector<double> flat_values(const GeneratorParams& p) {
    std::vector<double> v;
    for (const auto* b : p.buffers()) v.insert(v.end(), b->values.begin(), b->values.end());
    return v;
}

}  // namespace

TEST(Mapping, IdentityConfiguration) {
    GeneratorParams p = GeneratorParams::create(small_dims(), 1);
    p.mapping.layers = {{numgrad::ParamBuffer("mapping.0.weight", {4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1}),
                         numgrad::ParamBuffer("mapping.0.bias", {4}, {0, 0, 0, 0})}};
    const LatentCode z{{0.3, -0.5, 1.25, 0.0}, LatentKind::noise};
    const LatentCode w = mapping_forward(p, z);
    EXPECT_EQ(w.values, z.values);
    EXPECT_EQ(w.kind, LatentKind::style);
}

TEST(Mapping, OneLayerHandMultiply) {
    GanDims d = small_dims();
    d.latent_dim = 1;
    GeneratorParams p = GeneratorParams::create(d, 1);
    p.mapping.layers = {{numgrad::ParamBuffer("mapping.0.weight", {1, 1}, std::vector<double>{2.0}),
                         numgrad::ParamBuffer("mapping.0.bias", {1}, std::vector<double>{1.0})}};
    EXPECT_EQ(mapping_forward(p, {{3.0}, LatentKind::noise}).values, std::vector<double>({7.0}));
}

TEST(Mapping, SeededInitIsDeterministic) {
    const auto a = GeneratorParams::create(small_dims(), 42);
    const auto b = GeneratorParams::create(small_dims(), 42);
    std::mt19937_64 rng(3);
    const LatentCode z = sample_noise(4, rng);
    EXPECT_EQ(mapping_forward(a, z).values, mapping_forward(b, z).values);
    EXPECT_EQ(flat_values(a), flat_values(b));
    EXPECT_NE(flat_values(a), flat_values(GeneratorParams::create(small_dims(), 43)));
}

TEST(Mapping, RejectsStyleInputAndWrongDimension) {
    const auto p = GeneratorParams::create(small_dims(), 1);
    EXPECT_THROW(mapping_forward(p, {{1, 2, 3, 4}, LatentKind::style}), std::invalid_argument);
    EXPECT_THROW(mapping_forward(p, {{1, 2}, LatentKind::noise}), std::invalid_argument);
}

TEST(Triplane, ZeroResidualIsAdditiveIdentity) {
    const auto p = GeneratorParams::create(small_dims(), 5);
    std::mt19937_64 rng(1);
    const LatentCode w = mapping_forward(p, sample_noise(4, rng));
    const LearnableTriplane res(2, 6);
    EXPECT_EQ(triplane_forward(p, w).values, triplane_forward(p, w, &res).values);
}

TEST(Triplane, ZeroGeneratorPassesResidualThrough) {
    auto p = GeneratorParams::create(small_dims(), 5);
    for (auto& l : p.triplane_gen.layers) {
        std::fill(l.weight.values.begin(), l.weight.values.end(), 0.0);
        std::fill(l.bias.values.begin(), l.bias.values.end(), 0.0);
    }
    LearnableTriplane res(2, 6);
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    for (double& v : res.residual.values) v = n(rng);
    const LatentCode w{{0.1, 0.2, 0.3, 0.4}, LatentKind::style};
    EXPECT_EQ(triplane_forward(p, w, &res).values, res.residual.values);
}

TEST(Triplane, ResidualGradientOfSumIsOnes) {
    auto p = GeneratorParams::create(small_dims(), 5);
    LearnableTriplane res(2, 6);
    numgrad::ParamBuffer w("w", {4}, {0.1, 0.2, 0.3, 0.4}, false);
    numgrad::Graph g;
    const auto out = g.sum(triplane_node(g, p, g.input(w), g.leaf(res.residual)));
    res.residual.zero_grad();
    g.backward(out);
    for (double v : res.residual.grad) EXPECT_EQ(v, 1.0);

    auto fn = [&](std::span<const double> x, std::span<double> grad) {
        res.residual.values.assign(x.begin(), x.end());
        numgrad::Graph h;
        const auto o = h.sum(triplane_node(h, p, h.input(w), h.leaf(res.residual)));
        if (!grad.empty()) {
            res.residual.zero_grad();
            h.backward(o);
            std::copy(res.residual.grad.begin(), res.residual.grad.end(), grad.begin());
        }
        return h.item(o);
    };
    const std::vector<double> x(res.residual.size(), 0.25);
    EXPECT_LE(numgrad::fd_check(fn, x).max_rel_error, 1e-6);
}

TEST(Triplane, UpsampleAlignsCorners) {
    // 2x2 -> 3x3 per plane: corners kept, centre is the mean.
    std::vector<double> base(3 * 1 * 4);
    for (int pl = 0; pl < 3; ++pl) {
        base[pl * 4 + 0] = 0.0;
        base[pl * 4 + 1] = 1.0;
        base[pl * 4 + 2] = 2.0;
        base[pl * 4 + 3] = 3.0;
    }
    const auto up = upsample_planes(base, 1, 2, 3);
    EXPECT_DOUBLE_EQ(up[0], 0.0);
    EXPECT_DOUBLE_EQ(up[2], 1.0);
    EXPECT_DOUBLE_EQ(up[6], 2.0);
    EXPECT_DOUBLE_EQ(up[8], 3.0);
    EXPECT_DOUBLE_EQ(up[4], 1.5);
    EXPECT_DOUBLE_EQ(up[1], 0.5);
}

TEST(Clone, IsolatedFromTrainingOriginal) {
    auto p = GeneratorParams::create(small_dims(), 7);
    const auto clone = clone_frozen(p);
    const auto before = flat_values(clone);
    for (auto* b : p.buffers()) {
        for (double& v : b->values) v += 1.0;
    }
    EXPECT_EQ(flat_values(clone), before);
    for (const auto* b : clone.buffers()) EXPECT_FALSE(b->trainable);
}

TEST(Clone, Idempotent) {
    const auto p = GeneratorParams::create(small_dims(), 7);
    EXPECT_EQ(flat_values(clone_frozen(clone_frozen(p))), flat_values(clone_frozen(p)));
}

TEST(Clone, FrozenCloneRecordsNoGradients) {
    auto frozen = clone_frozen(GeneratorParams::create(small_dims(), 7));
    numgrad::ParamBuffer z("z", {4}, {0.5, -0.1, 0.2, 0.9}, false);
    numgrad::Graph g;
    const auto w = mapping_node(g, frozen, g.input(z));
    g.backward(g.sum(triplane_node(g, frozen, w)));
    for (const auto* b : frozen.buffers()) {
        for (double v : b->grad) EXPECT_EQ(v, 0.0);
    }
}

TEST(Params, TrainOnlyFreezesOtherParts) {
    auto p = GeneratorParams::create(small_dims(), 7);
    p.train_only(Part::triplane_gen);
    for (const auto& l : p.mapping.layers) EXPECT_FALSE(l.weight.trainable);
    for (const auto& l : p.decoder.layers) EXPECT_FALSE(l.bias.trainable);
    for (const auto& l : p.triplane_gen.layers) EXPECT_TRUE(l.weight.trainable);
}

TEST(Params, TensorRoundTrip) {
    const auto p = GeneratorParams::create(small_dims(), 11);
    const auto q = GeneratorParams::from_tensors(p.to_tensors());
    EXPECT_EQ(flat_values(p), flat_values(q));
    EXPECT_EQ(q.dims.base_resolution, 3);
}
