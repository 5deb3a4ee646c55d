// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "dg3d/gan3d.hpp"
#include "dg3d/image.hpp"
#include "dg3d/numgrad.hpp"

namespace dg3d::render {

using gan3d::DenseStack;
using gan3d::TriplaneGrid;
using numgrad::Graph;
using numgrad::Var;

/// Pinhole camera on a sphere around the origin, looking at the origin with +Y up.
struct Camera {
    double azimuth = 0.0;    // degrees, normalized to [-180, 180)
    double elevation = 0.0;  // degrees
    double radius = 2.7;
    double fov_y = 30.0;     // degrees
    int height = 64;
    int width = 64;

    Camera normalized() const;
    Vec3 position() const;
};

double normalize_azimuth(double degrees);

struct CameraFrame {
    Vec3 origin;
    Vec3 forward;
    Vec3 right;
    Vec3 up;
    double tan_half_fov = 0.0;
    double aspect = 1.0;
};

CameraFrame camera_frame(const Camera& camera);

struct Ray {
    Vec3 origin;
    Vec3 direction;
};

/// One unit-direction ray per pixel center, row-major.
std::vector<Ray> ray_grid(const Camera& camera);
Ray pixel_ray(const CameraFrame& frame, int height, int width, double row, double col);

struct Projection {
    double col = 0.0;  // continuous pixel coordinate, pixel centers at integers
    double row = 0.0;
    double distance = 0.0;  // Euclidean distance from the camera
    bool in_front = false;
};

Projection project(const CameraFrame& frame, int height, int width, const Vec3& point);

/// Ray parameter interval inside the bounding sphere of [-1, 1]^3.
bool sphere_bounds(const Ray& ray, double& near, double& far);

/// Global [near, far] depth range for a camera (used for depth export).
std::array<double, 2> depth_range(const Camera& camera);

// ---------------------------------------------------------------------------
// Triplane sampling

/// Sum of bilinear samples of the three planes at the projections of p.
/// Points outside [-1, 1]^3 map to a zero feature.
std::vector<double> sample_triplane(const TriplaneGrid& triplane, const Vec3& p);

/// Adjoint of sample_triplane: accumulates feature_grad into the plane
/// gradient and, if point_grad is non-null, into d/dp.
void sample_triplane_adjoint(const TriplaneGrid& triplane, const Vec3& p, std::span<const double> feature_grad,
                             std::span<double> plane_grad, Vec3* point_grad);

// ---------------------------------------------------------------------------
// Compositing

struct RaySample {
    double sigma = 0.0;
    std::array<double, 3> rgb{};
    double delta = 0.0;
    double t = 0.0;
};

struct CompositeResult {
    std::array<double, 3> rgb{};
    double opacity = 0.0;
    double depth = 0.0;
};

/// Emission-absorption compositing over a black background.
CompositeResult composite(std::span<const RaySample> samples);

/// Gradients of the composited color with respect to each sample's sigma and
/// color, given dL/d(rgb).
struct CompositeGrad {
    std::vector<double> sigma;
    std::vector<std::array<double, 3>> rgb;
};
CompositeGrad composite_backward(std::span<const RaySample> samples, const std::array<double, 3>& rgb_grad);

/// Compositing weights w_i = T_i * alpha_i.
std::vector<double> composite_weights(std::span<const RaySample> samples);

// ---------------------------------------------------------------------------
// Decoder

struct Decoded {
    double sigma = 0.0;
    std::array<double, 3> rgb{};
};

/// Softplus density and sigmoid color from a triplane feature.
Decoded decode(const DenseStack& decoder, std::span<const double> feature);

// ---------------------------------------------------------------------------
// Volume rendering

struct RenderOptions {
    int samples = 48;
    std::uint64_t seed = 0;
    bool stratified = true;
};

struct RenderResult {
    ImageBuffer image;
    DepthMap depth;
};

RenderResult render(const DenseStack& decoder, const TriplaneGrid& triplane, const Camera& camera,
                    const RenderOptions& options = {});
RenderResult render(const gan3d::GeneratorParams& params, const TriplaneGrid& triplane, const Camera& camera,
                    const RenderOptions& options = {});

/// Graph node whose value is the H x W x 3 image. Differentiable with respect
/// to the triplane node and every trainable decoder buffer. If `depth_out` is
/// given it receives the depth/coverage of the same pass.
Var render_node(Graph& g, DenseStack& decoder, Var triplane, int channels, int resolution, const Camera& camera,
                const RenderOptions& options = {}, DepthMap* depth_out = nullptr);
Var render_node(Graph& g, const DenseStack& decoder, Var triplane, int channels, int resolution,
                const Camera& camera, const RenderOptions& options = {}, DepthMap* depth_out = nullptr);

/// Worker count used for per-pixel loops (DG3D_THREADS caps it).
int worker_count();

}  // namespace dg3d::render
