// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dg3d/gan3d.hpp"
#include "dg3d/image.hpp"
#include "dg3d/numgrad.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/render.hpp"

namespace dg3d::meshtex {

using render::Camera;

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<std::array<double, 2>> uv;  // empty until unwrapped
    std::vector<char> seam_duplicate;       // per vertex, set on seam copies

    bool has_uv() const { return !uv.empty() && uv.size() == vertices.size(); }
};

/// Throws std::invalid_argument on out-of-range indices or uv outside [0, 1].
void validate(const Mesh& mesh);
double face_area(const Mesh& mesh, std::size_t face);
/// V - E + F over unique undirected edges.
long euler_characteristic(const Mesh& mesh);
/// Every undirected edge is shared by exactly two faces.
bool is_watertight(const Mesh& mesh);
/// Divergence-theorem volume; positive for outward-facing closed surfaces.
double signed_volume(const Mesh& mesh);

// ---------------------------------------------------------------------------
// Extraction

using ScalarField = std::function<double(const Vec3&)>;

/// Density level where one lattice cell of width 2/n reaches opacity 0.5.
double default_iso(int n);

/// Samples f on the (n+1)^3 lattice over [-1, 1]^3 and extracts the surface
/// f = iso with outward normals pointing toward decreasing f. Returns
/// nullopt when no cell straddles the level.
std::optional<Mesh> marching_cubes(const ScalarField& field, int n, double iso);

/// Same, from lattice values indexed [(k * (n+1) + j) * (n+1) + i] for
/// x_i, y_j, z_k.
std::optional<Mesh> marching_cubes_lattice(std::span<const double> values, int n, double iso);

/// Density of a generator's triplane at a point (0 outside the cube).
ScalarField density_field(const gan3d::DenseStack& decoder, const gan3d::TriplaneGrid& triplane);

class DegenerateMesh : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// u = (atan2(x, z) + pi) / 2 pi, v = (y - y_min) / (y_max - y_min); faces
/// spanning the seam get duplicated vertices with u + 1 clamped to 1.
Mesh cylinder_unwrap(const Mesh& mesh);

// ---------------------------------------------------------------------------
// Texture atlas and rasterization

struct TextureAtlas {
    int resolution = 0;
    std::vector<double> texels;    // resolution^2 x 3, row-major
    std::vector<double> coverage;  // resolution^2
    std::vector<char> refined;     // resolution^2

    static TextureAtlas zeros(int resolution);
    std::size_t texel_count() const { return static_cast<std::size_t>(resolution) * resolution; }
    ImageBuffer image() const;
};

/// Bilinear taps of a uv coordinate: row = (1 - v) Tex - 0.5, col = u Tex - 0.5,
/// clamped to the atlas.
struct Footprint {
    std::array<int, 4> texel{};
    std::array<double, 4> weight{};
};
Footprint atlas_taps(double u, double v, int resolution);

/// Taps below this weight do not count as "seen" for coverage and masks.
inline constexpr double kFootprintEps = 1e-9;

/// Atlas-independent part of a rasterization: z-buffered visibility,
/// perspective-correct barycentrics and the texel footprint per pixel.
struct Raster {
    int height = 0;
    int width = 0;
    int tex_resolution = 0;
    std::vector<int> face;        // -1 = background
    std::vector<double> depth;    // distance from the camera center
    std::vector<Footprint> footprint;

    bool hit(std::size_t pixel) const { return face[pixel] >= 0; }
    DepthMap depth_map() const;
};

Raster rasterize_geometry(const Mesh& mesh, const Camera& camera, int tex_resolution);
ImageBuffer shade(const Raster& raster, std::span<const double> texels);
void shade_adjoint(const Raster& raster, std::span<const double> image_grad, std::span<double> texel_grad);

struct RasterResult {
    ImageBuffer image;
    DepthMap depth;
    Raster raster;
};

RasterResult rasterize(const Mesh& mesh, const TextureAtlas& atlas, const Camera& camera);

/// Image node (H x W x 3) differentiable in the texel node.
numgrad::Var rasterize_node(numgrad::Graph& g, numgrad::Var texels, const Raster& raster);

/// Per-texel surface point obtained by rasterizing faces in uv space
/// (face -1 where no face covers the texel center).
struct TexelSurface {
    std::vector<int> face;
    std::vector<Vec3> position;
};
TexelSurface texel_surface(const Mesh& mesh, int resolution);

/// Mean squared forward difference of an HWC atlas, per channel plane.
double atlas_tv(std::span<const double> texels, int resolution);
void atlas_tv_grad(std::span<const double> texels, int resolution, std::span<double> grad);

// ---------------------------------------------------------------------------
// Adaptive blend

struct BlendView {
    Camera camera;
    ImageBuffer target;
};

class InvisibleMesh : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// sum_v |rasterize_v(atlas) - target_v|^2 / npix_v + tv_weight * atlas_tv(atlas).
double blend_objective(const std::vector<Raster>& rasters, const std::vector<BlendView>& views,
                       std::span<const double> texels, double tv_weight);

/// Minimizes blend_objective from a zero atlas with `iters` conjugate
/// gradient steps (exact line search). Objective values before each step and
/// after the last are appended to `trace` when given.
TextureAtlas adaptive_blend(const Mesh& mesh, const std::vector<BlendView>& views, int atlas_resolution, int iters,
                            double tv_weight, std::vector<double>* trace = nullptr);

/// Baseline: every texel seen by a view takes the bilinear image color at its
/// projection; later views overwrite earlier ones.
TextureAtlas naive_back_project(const Mesh& mesh, const std::vector<BlendView>& views, int atlas_resolution);

// ---------------------------------------------------------------------------
// Controls and masks

/// Sobel magnitude (normalized so a unit step reads 1), non-maximum
/// suppression along the dominant axis, then hysteresis. Single channel,
/// values in {0, 1}.
ImageBuffer edge_map(const ImageBuffer& image, double low, double high);

/// Binary dilation with a disk of the given radius.
std::vector<double> dilate(const std::vector<double>& mask, int height, int width, int radius);

/// Pixels whose footprint touches a covered, not yet refined texel.
std::vector<double> unrefined_mask(const Raster& raster, const TextureAtlas& atlas);

// ---------------------------------------------------------------------------
// Progressive refinement

struct RefineView {
    Camera camera;
    double azimuth = 0.0;  // nominal, before normalization
    double elevation = 0.0;
    priors::TranslateMode mode = priors::TranslateMode::inpaint;
    double strength = 0.4;
};

struct RefineSchedule {
    std::vector<RefineView> views;
    int k = 1;
    int j = 1;
    int dilation_radius = 5;
};

struct ScheduleOptions {
    int k = 1;
    int j = 1;
    double img2img_strength = 0.6;
    double inpaint_strength = 0.4;
    int dilation_radius = 5;
    double elevation_min = -15.0;
    double elevation_max = 15.0;
    Camera base;  // radius, fov and resolution of every view
};

RefineSchedule build_schedule(const ScheduleOptions& options);

/// Re-fits the texels seen by `region` pixels (with coverage > 0) so the
/// rasterization matches `refined` there, keeping all other texels fixed, and
/// marks them refined. Returns the number of texels updated.
std::size_t project_refined(TextureAtlas& atlas, const Raster& raster, const ImageBuffer& refined,
                            const std::vector<double>& region, int max_iters = 200);
std::size_t project_refined(const Mesh& mesh, TextureAtlas& atlas, const Camera& camera, const ImageBuffer& refined,
                            const std::vector<double>& region, int max_iters = 200);

struct RefineStage {
    std::size_t index = 0;
    RefineView view;
    ImageBuffer render;
    ImageBuffer edges;
    DepthMap depth;
    std::optional<std::vector<double>> mask;
    ImageBuffer refined;
    const TextureAtlas* atlas = nullptr;  // state after projection
};

struct RefineOptions {
    std::string prompt;
    std::uint64_t seed = 0;
    double edge_low = 0.1;
    double edge_high = 0.3;
    int blend_iters = 200;
    double tv_weight = 0.01;
    std::optional<std::filesystem::path> dump_dir;  // partial state on backend failure
};

struct RefineResult {
    TextureAtlas final_atlas;
    std::vector<TextureAtlas> stages;  // U_1 .. after each view
    std::vector<ImageBuffer> refined_images;
};

RefineResult progressive_refine(const Mesh& mesh, const TextureAtlas& atlas0, const RefineSchedule& schedule,
                                priors::TranslationBackend& backend, const RefineOptions& options,
                                const std::function<void(const RefineStage&)>& observer = {});

// ---------------------------------------------------------------------------
// I/O

/// OBJ with v/vt/f plus a companion .mtl whose map_Kd names `texture_file`.
void write_obj(const std::filesystem::path& path, const Mesh& mesh, const std::string& texture_file);
Mesh read_obj(const std::filesystem::path& path);

}  // namespace dg3d::meshtex
