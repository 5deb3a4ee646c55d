// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "dg3d/render.hpp"

using namespace dg3d;
using namespace dg3d::render;
using gan3d::TriplaneGrid;

namespace {

Camera cam(double az, double el, int size) {
    Camera c;
    c.azimuth = az;
    c.elevation = el;
    c.height = c.width = size;
    return c;
}

// One-layer decoder: sigma = softplus(k f0 + b), rgb = sigmoid(0) = 0.5.
gan3d::DenseStack linear_decoder(int channels, double k, double b) {
    gan3d::DenseStack d;
    std::vector<double> w(4 * static_cast<std::size_t>(channels), 0.0);
    w[0] = k;
    d.layers.push_back({numgrad::ParamBuffer("decoder.0.weight", {4, static_cast<std::size_t>(channels)}, w),
                        numgrad::ParamBuffer("decoder.0.bias", {4}, {b, 0.0, 0.0, 0.0})});
    return d;
}

}  // namespace

TEST(Camera, FrontCenterRayLooksDownMinusZ) {
    const Camera c = cam(0, 0, 5);
    const auto f = camera_frame(c);
    EXPECT_NEAR(f.origin.x, 0.0, 1e-15);
    EXPECT_NEAR(f.origin.z, 2.7, 1e-15);
    const Ray r = pixel_ray(f, 5, 5, 2, 2);
    EXPECT_NEAR(r.direction.x, 0.0, 1e-12);
    EXPECT_NEAR(r.direction.y, 0.0, 1e-12);
    EXPECT_NEAR(r.direction.z, -1.0, 1e-12);
}

TEST(Camera, BackViewNegatesXZ) {
    const Vec3 a = cam(30, 20, 4).position();
    const Vec3 b = cam(210, 20, 4).position();
    EXPECT_NEAR(a.x, -b.x, 1e-12);
    EXPECT_NEAR(a.z, -b.z, 1e-12);
    EXPECT_NEAR(a.y, b.y, 1e-12);
}

TEST(Camera, DirectionsUnitNorm) {
    const auto f = camera_frame(cam(47, -13, 7));
    for (int r = 0; r < 7; ++r)
        for (int c = 0; c < 7; ++c) EXPECT_NEAR(norm(pixel_ray(f, 7, 7, r, c).direction), 1.0, 1e-12);
}

TEST(Camera, AzimuthNormalization) {
    EXPECT_EQ(normalize_azimuth(360.0), 0.0);
    EXPECT_EQ(normalize_azimuth(180.0), -180.0);
    EXPECT_EQ(normalize_azimuth(-190.0), 170.0);
    EXPECT_THROW(camera_frame(cam(0, 90, 4)), std::invalid_argument);
}

TEST(Camera, ProjectInvertsPixelRay) {
    const Camera c = cam(25, 10, 9);
    const auto f = camera_frame(c);
    const Ray r = pixel_ray(f, 9, 9, 3, 6);
    const auto p = project(f, 9, 9, r.origin + r.direction * 2.5);
    EXPECT_TRUE(p.in_front);
    EXPECT_NEAR(p.row, 3.0, 1e-9);
    EXPECT_NEAR(p.col, 6.0, 1e-9);
    EXPECT_NEAR(p.distance, 2.5, 1e-9);
}

TEST(Triplane, ConstantPlanesSum) {
    TriplaneGrid t = TriplaneGrid::zeros(1, 4);
    for (int pl = 0; pl < 3; ++pl)
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) t.at(pl, 0, r, c) = pl == 0 ? 1.0 : (pl == 1 ? 2.0 : 4.0);
    EXPECT_NEAR(sample_triplane(t, {0.3, -0.2, 0.7})[0], 7.0, 1e-12);
}

TEST(Triplane, GridNodeReturnsNodeValues) {
    TriplaneGrid t = TriplaneGrid::zeros(1, 3);
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = static_cast<double>(i);
    // Node (0, 0, 0) is index 1 on every axis of a 3x3 grid.
    const double expect = t.at(0, 0, 1, 1) + t.at(1, 0, 1, 1) + t.at(2, 0, 1, 1);
    EXPECT_NEAR(sample_triplane(t, {0.0, 0.0, 0.0})[0], expect, 1e-12);
}

TEST(Triplane, HandBilinearCenter) {
    TriplaneGrid t = TriplaneGrid::zeros(1, 2);
    t.at(0, 0, 0, 1) = 1.0;
    t.at(0, 0, 1, 1) = 1.0;
    EXPECT_NEAR(sample_triplane(t, {0.0, 0.0, 0.0})[0], 0.5, 1e-12);
}

TEST(Triplane, OutsideCubeIsZero) {
    TriplaneGrid t = TriplaneGrid::zeros(2, 3);
    std::fill(t.values.begin(), t.values.end(), 1.0);
    EXPECT_EQ(sample_triplane(t, {1.01, 0, 0}), std::vector<double>({0.0, 0.0}));
}

TEST(Composite, EmptySpaceIsBlack) {
    std::vector<RaySample> s(4);
    for (auto& x : s) {
        x.delta = 0.2;
        x.rgb = {1, 1, 1};
    }
    const auto r = composite(s);
    EXPECT_EQ(r.rgb, (std::array<double, 3>{0, 0, 0}));
    EXPECT_EQ(r.opacity, 0.0);
}

TEST(Composite, OpaqueSample) {
    std::vector<RaySample> s{{1e6, {1, 0, 0}, 1.0, 2.0}};
    const auto r = composite(s);
    EXPECT_NEAR(r.rgb[0], 1.0, 1e-12);
    EXPECT_NEAR(r.rgb[1], 0.0, 1e-12);
    EXPECT_NEAR(r.depth, 2.0, 1e-12);
}

TEST(Composite, TwoHalfAlphaSamples) {
    const double s = std::log(2.0);
    std::vector<RaySample> v{{s, {1, 1, 1}, 1.0, 1.0}, {s, {0, 0, 0}, 1.0, 2.0}};
    const auto r = composite(v);
    EXPECT_NEAR(r.rgb[0], 0.5, 1e-12);
    EXPECT_NEAR(r.opacity, 0.75, 1e-12);
    const auto w = composite_weights(v);
    EXPECT_NEAR(w[0], 0.5, 1e-12);
    EXPECT_NEAR(w[1], 0.25, 1e-12);
}

TEST(Render, ZeroDensityGivesBlackImage) {
    const TriplaneGrid t = TriplaneGrid::zeros(1, 4);
    const auto dec = linear_decoder(1, 1.0, -60.0);  // softplus(-60) underflows to ~0
    const auto r = render::render(dec, t, cam(0, 0, 6), {16, 0, false});
    for (double v : r.image.pixels) EXPECT_LE(v, 1e-20);
    for (double v : r.depth.coverage) EXPECT_LE(v, 1e-20);
}

TEST(Render, Deterministic) {
    TriplaneGrid t = TriplaneGrid::zeros(2, 5);
    for (std::size_t i = 0; i < t.values.size(); ++i) t.values[i] = std::sin(0.37 * static_cast<double>(i));
    const auto p = gan3d::GeneratorParams::create({4, 2, 5, 3, 8, 8, 0.2}, 3);
    const auto a = render::render(p.decoder, t, cam(15, 5, 8), {12, 77, true});
    const auto b = render::render(p.decoder, t, cam(15, 5, 8), {12, 77, true});
    EXPECT_EQ(a.image.pixels, b.image.pixels);
    const auto c = render::render(p.decoder, t, cam(15, 5, 8), {12, 78, true});
    EXPECT_NE(a.image.pixels, c.image.pixels);
}

TEST(Render, NodeValueMatchesForwardRender) {
    const auto p = gan3d::GeneratorParams::create({4, 2, 5, 3, 8, 8, 0.2}, 3);
    numgrad::ParamBuffer planes("planes", {3, 2, 5, 5}, std::vector<double>(150, 0.0));
    for (std::size_t i = 0; i < planes.values.size(); ++i) planes.values[i] = std::cos(0.21 * static_cast<double>(i));
    TriplaneGrid t = TriplaneGrid::zeros(2, 5);
    t.values = planes.values;
    numgrad::Graph g;
    const gan3d::DenseStack& dec = p.decoder;
    DepthMap depth;
    const auto node = render_node(g, dec, g.leaf(planes), 2, 5, cam(40, 10, 6), {10, 5, true}, &depth);
    const auto ref = render::render(p.decoder, t, cam(40, 10, 6), {10, 5, true});
    const auto v = g.value(node);
    EXPECT_EQ(std::vector<double>(v.begin(), v.end()), ref.image.pixels);
    EXPECT_EQ(depth.depth, ref.depth.depth);
}

TEST(Render, MeanPixelGradientMatchesFiniteDifference) {
    const auto p = gan3d::GeneratorParams::create({4, 2, 5, 3, 8, 8, 0.2}, 4);
    numgrad::ParamBuffer planes("planes", {3, 2, 5, 5}, std::vector<double>(150, 0.0));
    for (std::size_t i = 0; i < planes.values.size(); ++i) planes.values[i] = std::sin(0.13 * static_cast<double>(i));
    const gan3d::DenseStack& dec = p.decoder;
    auto fn = [&](std::span<const double> x, std::span<double> grad) {
        planes.values.assign(x.begin(), x.end());
        numgrad::Graph g;
        const auto img = render_node(g, dec, g.leaf(planes), 2, 5, cam(0, 0, 4), {8, 1, true});
        const auto out = g.scale(g.sum(img), 1.0 / 48.0);
        if (!grad.empty()) {
            planes.zero_grad();
            g.backward(out);
            std::copy(planes.grad.begin(), planes.grad.end(), grad.begin());
        }
        return g.item(out);
    };
    const std::vector<std::size_t> coords{0, 12, 31, 57, 88, 101, 149};
    EXPECT_LE(numgrad::fd_check(fn, planes.values, coords).max_rel_error, 1e-4);
}

// Density depending only on the distance from the y axis: rotating the camera
// about y must not change the image beyond sampling error.
TEST(Render, ViewConsistencyOnRotationallySymmetricDensity) {
    const int R = 64;
    TriplaneGrid t = TriplaneGrid::zeros(1, R);
    for (int r = 0; r < R; ++r) {
        for (int c = 0; c < R; ++c) {
            const double x = -1.0 + 2.0 * c / (R - 1), z = -1.0 + 2.0 * r / (R - 1);
            t.at(1, 0, r, c) = std::sqrt(x * x + z * z) < 0.6 ? 1.0 : 0.0;
        }
    }
    const auto dec = linear_decoder(1, 40.0, -20.0);
    const auto a = render::render(dec, t, cam(0, 0, 24), {96, 0, false});
    const auto b = render::render(dec, t, cam(90, 0, 24), {96, 0, false});
    double worst = 0.0;
    for (std::size_t i = 0; i < a.image.pixels.size(); ++i)
        worst = std::max(worst, std::abs(a.image.pixels[i] - b.image.pixels[i]));
    EXPECT_LE(worst, 2.0 / R * 2.0);
}
