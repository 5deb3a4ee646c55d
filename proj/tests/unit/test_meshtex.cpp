// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>

#include "dg3d/meshtex.hpp"

using namespace dg3d;
using namespace dg3d::meshtex;
namespace fs = std::filesystem;

namespace {

Mesh sphere_mesh(int n, double radius = 0.5) {
    auto m = marching_cubes([radius](const Vec3& p) { return radius - norm(p); }, n, 0.0);
    return *m;
}

Camera view(double az, double el, int size) {
    Camera c;
    c.azimuth = az;
    c.elevation = el;
    c.height = c.width = size;
    return c.normalized();
}

// Quad facing +z at depth z, uv spanning the unit square.
Mesh quad(double z, double half) {
    Mesh m;
    m.vertices = {{-half, -half, z}, {half, -half, z}, {half, half, z}, {-half, half, z}};
    m.uv = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    m.faces = {{0, 1, 2}, {0, 2, 3}};
    m.seam_duplicate.assign(4, 0);
    return m;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST(MarchingCubes, SphereOracle) {
    const Mesh m = sphere_mesh(32);
    for (const auto& v : m.vertices) EXPECT_LE(std::abs(norm(v) - 0.5), 1.5 * (2.0 / 32));
    EXPECT_TRUE(is_watertight(m));
    EXPECT_EQ(euler_characteristic(m), 2);
    // Outward normals: positive enclosed volume close to 4/3 pi r^3.
    const double vol = signed_volume(m);
    EXPECT_GT(vol, 0.0);
    EXPECT_NEAR(vol, 4.0 / 3.0 * std::numbers::pi * 0.125, 0.02);
}

TEST(MarchingCubes, ConstantFieldIsEmpty) {
    EXPECT_FALSE(marching_cubes([](const Vec3&) { return 1.0; }, 8, 0.0).has_value());
}

TEST(MarchingCubes, PlaneSheet) {
    const auto m = marching_cubes([](const Vec3& p) { return p.z; }, 10, 0.0);
    ASSERT_TRUE(m.has_value());
    for (const auto& v : m->vertices) EXPECT_LE(std::abs(v.z), 2.0 / 10);
    // Normals point toward decreasing field (-z).
    for (std::size_t f = 0; f < m->faces.size(); ++f) {
        const auto& t = m->faces[f];
        const Vec3 n = cross(m->vertices[t[1]] - m->vertices[t[0]], m->vertices[t[2]] - m->vertices[t[0]]);
        EXPECT_LT(n.z, 0.0);
    }
}

TEST(MarchingCubes, NonFiniteFieldRejected) {
    std::vector<double> v(27, 1.0);
    v[13] = std::nan("");
    EXPECT_THROW(marching_cubes_lattice(v, 2, 0.0), std::domain_error);
    EXPECT_THROW(marching_cubes_lattice(std::vector<double>(26, 0.0), 2, 0.0), std::invalid_argument);
}

TEST(MarchingCubes, DefaultIso) { EXPECT_NEAR(default_iso(64), std::log(2.0) * 32.0, 1e-12); }

TEST(CylinderUnwrap, FormulaAndSeam) {
    const Mesh m = cylinder_unwrap(sphere_mesh(24));
    ASSERT_TRUE(m.has_uv());
    validate(m);
    for (const auto& f : m.faces) {
        double lo = 1, hi = 0;
        for (int i : f) {
            lo = std::min(lo, m.uv[i][0]);
            hi = std::max(hi, m.uv[i][0]);
        }
        EXPECT_LE(hi - lo, 0.5);
    }
    double ymin = 1e9;
    for (const auto& v : m.vertices) ymin = std::min(ymin, v.y);
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
        if (m.vertices[i].y == ymin) EXPECT_EQ(m.uv[i][1], 0.0);
        if (!m.seam_duplicate[i]) {
            const double u = (std::atan2(m.vertices[i].x, m.vertices[i].z) + std::numbers::pi) / (2 * std::numbers::pi);
            EXPECT_NEAR(m.uv[i][0], u, 1e-15);
        }
    }
}

TEST(CylinderUnwrap, AngleZeroMapsToHalf) {
    Mesh m;
    m.vertices = {{0, 0, 1}, {0.1, 1, 1}, {-0.1, 0.5, 1}};
    m.faces = {{0, 1, 2}};
    const Mesh u = cylinder_unwrap(m);
    EXPECT_NEAR(u.uv[0][0], 0.5, 1e-15);
    EXPECT_EQ(u.uv[0][1], 0.0);
}

TEST(CylinderUnwrap, FlatMeshRejected) {
    Mesh m;
    m.vertices = {{0, 0, 1}, {1, 0, 0}, {0, 0, -1}};
    m.faces = {{0, 1, 2}};
    EXPECT_THROW(cylinder_unwrap(m), DegenerateMesh);
}

TEST(Atlas, TapsAreBilinear) {
    const auto f = atlas_taps(0.5, 0.5, 4);  // col = row = 1.5
    EXPECT_EQ(f.texel, (std::array<int, 4>{5, 6, 9, 10}));
    for (double w : f.weight) EXPECT_NEAR(w, 0.25, 1e-15);
    const auto c = atlas_taps(0.0, 1.0, 4);  // clamped corner
    EXPECT_EQ(c.texel[0], 0);
    EXPECT_NEAR(c.weight[0], 1.0, 1e-15);
}

TEST(Rasterize, ConstantUvFillsEveryPixel) {
    Mesh m;
    m.vertices = {{-5, -5, 0}, {5, -5, 0}, {0, 8, 0}};
    m.uv = {{0.3, 0.6}, {0.3, 0.6}, {0.3, 0.6}};
    m.faces = {{0, 1, 2}};
    TextureAtlas a = TextureAtlas::zeros(4);
    for (std::size_t i = 0; i < a.texels.size(); ++i) a.texels[i] = 0.01 * static_cast<double>(i);
    const auto r = rasterize(m, a, view(0, 0, 8));
    const auto taps = atlas_taps(0.3, 0.6, 4);
    for (std::size_t p = 0; p < r.raster.face.size(); ++p) {
        ASSERT_TRUE(r.raster.hit(p));
        for (int c = 0; c < 3; ++c) {
            double e = 0.0;
            for (int k = 0; k < 4; ++k) e += taps.weight[k] * a.texels[taps.texel[k] * 3 + c];
            EXPECT_NEAR(r.image.pixels[p * 3 + c], e, 1e-12);
        }
    }
}

TEST(Rasterize, NearerTriangleWins) {
    Mesh near_q = quad(0.5, 0.6), far_q = quad(-0.5, 0.6);
    Mesh m = far_q;
    for (auto& uv : m.uv) uv = {0.1, 0.1};
    const int off = static_cast<int>(m.vertices.size());
    for (const auto& v : near_q.vertices) {
        m.vertices.push_back(v);
        m.uv.push_back({0.9, 0.9});
    }
    for (auto f : near_q.faces) m.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
    const auto r = rasterize_geometry(m, view(0, 0, 16), 8);
    int contested = 0;
    for (std::size_t p = 0; p < r.face.size(); ++p) {
        if (!r.hit(p)) continue;
        ++contested;
        EXPECT_GE(r.face[p], 2);
        EXPECT_NEAR(r.depth[p], 2.2, 0.3);
    }
    EXPECT_GT(contested, 0);
}

TEST(Rasterize, MeanPixelTexelGradient) {
    const Mesh m = cylinder_unwrap(sphere_mesh(10, 0.7));
    const Raster r = rasterize_geometry(m, view(10, 5, 10), 6);
    numgrad::ParamBuffer tex("tex", {36, 3}, std::vector<double>(108, 0.0));
    auto fn = [&](std::span<const double> x, std::span<double> grad) {
        tex.values.assign(x.begin(), x.end());
        numgrad::Graph g;
        const auto out = g.scale(g.sum(rasterize_node(g, g.leaf(tex), r)), 1.0 / 300.0);
        if (!grad.empty()) {
            tex.zero_grad();
            g.backward(out);
            std::copy(tex.grad.begin(), tex.grad.end(), grad.begin());
        }
        return g.item(out);
    };
    std::vector<double> x(108);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::sin(0.3 * static_cast<double>(i));
    EXPECT_LE(numgrad::fd_check(fn, x).max_rel_error, 1e-4);
}

TEST(AdaptiveBlend, ZeroItersIsZeroAtlas) {
    const Mesh m = quad(0.0, 0.8);
    const std::vector<BlendView> views{{view(0, 0, 12), ImageBuffer(12, 12, 3, 0.7)}};
    const auto a = adaptive_blend(m, views, 8, 0, 0.0);
    for (double v : a.texels) EXPECT_EQ(v, 0.0);
}

TEST(AdaptiveBlend, SingleViewReachesInterpolation) {
    const Mesh m = quad(0.0, 0.8);
    const Camera c = view(0, 0, 24);
    TextureAtlas truth = TextureAtlas::zeros(8);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : truth.texels) v = u(rng);
    const auto target = rasterize(m, truth, c).image;
    std::vector<double> trace;
    const auto a = adaptive_blend(m, {{c, target}}, 8, 300, 0.0, &trace);
    const auto img = rasterize(m, a, c).image;
    double mse = 0.0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) mse += std::pow(img.pixels[i] - target.pixels[i], 2);
    EXPECT_LE(mse / static_cast<double>(img.pixels.size()), 1e-4);
    for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1] + 1e-12);
}

TEST(AdaptiveBlend, InvisibleMeshThrows) {
    Mesh m = quad(0.0, 0.3);
    for (auto& v : m.vertices) v.x += 20.0;  // outside the frustum
    EXPECT_THROW(adaptive_blend(m, {{view(0, 0, 8), ImageBuffer(8, 8)}}, 4, 5, 0.0), InvisibleMesh);
}

TEST(EdgeMap, ConstantImageHasNoEdges) {
    for (double v : edge_map(ImageBuffer(8, 8, 3, 0.4), 0.1, 0.3).pixels) EXPECT_EQ(v, 0.0);
}

TEST(EdgeMap, VerticalStepGivesOneColumn) {
    ImageBuffer img(8, 10, 3, 0.0);
    for (int y = 0; y < 8; ++y)
        for (int x = 5; x < 10; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0;
    const auto e = edge_map(img, 0.1, 0.3);
    std::set<int> cols;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x) {
            const double v = e.at(y, x);
            EXPECT_TRUE(v == 0.0 || v == 1.0);
            if (v == 1.0) cols.insert(x);
        }
    EXPECT_EQ(cols.size(), 1u);
    EXPECT_TRUE(cols.count(4) || cols.count(5));
    EXPECT_THROW(edge_map(img, 0.5, 0.2), std::invalid_argument);
}

TEST(Dilate, Disk) {
    std::vector<double> m(49, 0.0);
    m[24] = 1.0;
    const auto d = dilate(m, 7, 7, 2);
    int count = 0;
    for (double v : d) count += v > 0.0;
    EXPECT_EQ(count, 13);
    EXPECT_EQ(dilate(m, 7, 7, 0), m);
}

TEST(Schedule, KOneJOne) {
    ScheduleOptions o;
    o.base = view(0, 0, 16);
    const auto s = build_schedule(o);
    ASSERT_EQ(s.views.size(), 4u);
    const double az[] = {0, 90, -90, 180};
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(s.views[i].azimuth, az[i]);
        EXPECT_EQ(s.views[i].elevation, 0.0);
        EXPECT_EQ(s.views[i].mode, i == 0 ? priors::TranslateMode::img2img : priors::TranslateMode::inpaint);
        EXPECT_EQ(s.views[i].strength, i == 0 ? 0.6 : 0.4);
    }
    EXPECT_EQ(s.views[3].camera.azimuth, -180.0);
}

TEST(Schedule, KTwoSpacing) {
    ScheduleOptions o;
    o.k = 2;
    const auto s = build_schedule(o);
    ASSERT_EQ(s.views.size(), 6u);
    const double az[] = {0, 60, -60, 120, -120, 180};
    for (int i = 0; i < 6; ++i) EXPECT_DOUBLE_EQ(s.views[i].azimuth, az[i]);
}

TEST(Schedule, ElevationsAzimuthMajor) {
    ScheduleOptions o;
    o.j = 3;
    o.elevation_min = -20;
    o.elevation_max = 20;
    const auto s = build_schedule(o);
    ASSERT_EQ(s.views.size(), 12u);
    EXPECT_EQ(s.views[0].elevation, 0.0);
    EXPECT_EQ(s.views[1].elevation, -20.0);
    EXPECT_EQ(s.views[2].elevation, 20.0);
    EXPECT_EQ(s.views[3].azimuth, 90.0);
    EXPECT_EQ(s.views[0].mode, priors::TranslateMode::img2img);
    EXPECT_EQ(s.views[1].mode, priors::TranslateMode::inpaint);
}

TEST(ProjectRefined, RoundTripLeavesAtlasUnchanged) {
    const Mesh m = cylinder_unwrap(sphere_mesh(12, 0.7));
    const Camera c = view(30, 10, 24);
    TextureAtlas a = TextureAtlas::zeros(16);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (double& v : a.texels) v = u(rng);
    std::fill(a.coverage.begin(), a.coverage.end(), 1.0);
    const auto before = a.texels;
    const Raster r = rasterize_geometry(m, c, 16);
    const auto img = shade(r, a.texels);
    std::vector<double> region(r.face.size());
    for (std::size_t p = 0; p < region.size(); ++p) region[p] = r.hit(p) ? 1.0 : 0.0;
    EXPECT_GT(project_refined(a, r, img, region), 0u);
    EXPECT_LE(max_abs_diff(a.texels, before), 1e-6);
}

TEST(ProjectRefined, OccludedTexelsUntouchedAndFitExact) {
    const Mesh m = cylinder_unwrap(sphere_mesh(12, 0.7));
    const Camera c = view(0, 0, 32);
    TextureAtlas a = TextureAtlas::zeros(16);
    std::fill(a.texels.begin(), a.texels.end(), 0.5);
    std::fill(a.coverage.begin(), a.coverage.end(), 1.0);
    const Raster r = rasterize_geometry(m, c, 16);
    std::vector<char> seen(a.texel_count(), 0);
    for (std::size_t p = 0; p < r.face.size(); ++p)
        if (r.hit(p))
            for (int k = 0; k < 4; ++k)
                if (r.footprint[p].weight[k] > kFootprintEps) seen[r.footprint[p].texel[k]] = 1;
    ImageBuffer target(32, 32, 3, 0.9);
    std::vector<double> region(r.face.size());
    for (std::size_t p = 0; p < region.size(); ++p) region[p] = r.hit(p) ? 1.0 : 0.0;
    project_refined(a, r, target, region);
    for (std::size_t t = 0; t < a.texel_count(); ++t) {
        if (!seen[t]) {
            EXPECT_EQ(a.texels[t * 3], 0.5);
            EXPECT_FALSE(a.refined[t]);
        } else {
            EXPECT_TRUE(a.refined[t]);
        }
    }
    const auto img = shade(r, a.texels);
    for (std::size_t p = 0; p < r.face.size(); ++p)
        if (r.hit(p)) EXPECT_NEAR(img.pixels[p * 3], 0.9, 1e-6);
}

TEST(UnrefinedMask, TracksRefinedTexels) {
    const Mesh m = quad(0.0, 0.8);
    const Raster r = rasterize_geometry(m, view(0, 0, 12), 4);
    TextureAtlas a = TextureAtlas::zeros(4);
    std::fill(a.coverage.begin(), a.coverage.end(), 1.0);
    const auto all = unrefined_mask(r, a);
    for (std::size_t p = 0; p < all.size(); ++p) EXPECT_EQ(all[p], r.hit(p) ? 1.0 : 0.0);
    std::fill(a.refined.begin(), a.refined.end(), 1);
    for (double v : unrefined_mask(r, a)) EXPECT_EQ(v, 0.0);
}

TEST(ProgressiveRefine, IdentityBackendIdempotentAndMonotone) {
    const Mesh m = cylinder_unwrap(sphere_mesh(12, 0.7));
    ScheduleOptions o;
    o.base = view(0, 0, 24);
    o.dilation_radius = 1;
    const auto sched = build_schedule(o);
    std::vector<BlendView> views;
    TextureAtlas src = TextureAtlas::zeros(16);
    for (std::size_t i = 0; i < src.texels.size(); ++i) src.texels[i] = 0.5 + 0.4 * std::sin(0.7 * static_cast<double>(i));
    for (const auto& v : sched.views) views.push_back({v.camera, rasterize(m, src, v.camera).image});
    const auto atlas0 = adaptive_blend(m, views, 16, 200, 0.01);

    priors::IdentityBackend backend;
    RefineOptions ro;
    ro.blend_iters = 200;
    ro.tv_weight = 0.01;
    std::size_t prev = 0;
    const auto res = progressive_refine(m, atlas0, sched, backend, ro, [&](const RefineStage& s) {
        std::size_t n = 0;
        for (char c : s.atlas->refined) n += c != 0;
        EXPECT_GE(n, prev);
        prev = n;
        if (s.index == 0) EXPECT_FALSE(s.mask.has_value());
        else EXPECT_TRUE(s.mask.has_value());
    });
    EXPECT_EQ(res.stages.size(), 4u);
    EXPECT_EQ(res.refined_images.size(), 4u);

    std::vector<BlendView> reblend;
    for (const auto& v : sched.views) reblend.push_back({v.camera, rasterize(m, atlas0, v.camera).image});
    const auto expect = adaptive_blend(m, reblend, 16, 200, 0.01);
    EXPECT_LE(max_abs_diff(res.final_atlas.texels, expect.texels), 1e-6);
}

TEST(ProgressiveRefine, BackendFailureDumpsPartialState) {
    class Failing : public priors::TranslationBackend {
    public:
        std::string name() const override { return "failing"; }
        ImageBuffer run(const priors::TranslationRequest&) override {
            if (++calls == 2) throw priors::BackendError("boom", "log");
            return ImageBuffer();
        }
        int calls = 0;
    };
    const Mesh m = quad(0.0, 0.8);
    ScheduleOptions o;
    o.base = view(0, 0, 12);
    o.k = 0;
    const auto sched = build_schedule(o);
    TextureAtlas a0 = TextureAtlas::zeros(4);
    std::fill(a0.coverage.begin(), a0.coverage.end(), 1.0);
    struct Wrap : priors::TranslationBackend {
        Failing inner;
        std::string name() const override { return "wrap"; }
        ImageBuffer run(const priors::TranslationRequest& r) override {
            inner.run(r);
            return r.image;
        }
    } backend;
    RefineOptions ro;
    ro.dump_dir = fs::temp_directory_path() / "dg3d_test_dump";
    fs::remove_all(*ro.dump_dir);
    EXPECT_THROW(progressive_refine(m, a0, sched, backend, ro), priors::BackendError);
    EXPECT_TRUE(fs::exists(*ro.dump_dir / "partial_atlas_view1.ppm"));
}

TEST(Obj, RoundTrip) {
    const Mesh m = cylinder_unwrap(sphere_mesh(8));
    const fs::path dir = fs::temp_directory_path() / "dg3d_test_obj";
    fs::create_directories(dir);
    write_obj(dir / "m.obj", m, "tex.ppm");
    EXPECT_TRUE(fs::exists(dir / "m.mtl"));
    const Mesh back = read_obj(dir / "m.obj");
    // The reader numbers vertices by first use, so compare face corners.
    ASSERT_EQ(back.vertices.size(), m.vertices.size());
    ASSERT_EQ(back.faces.size(), m.faces.size());
    for (std::size_t f = 0; f < m.faces.size(); ++f)
        for (int k = 0; k < 3; ++k) {
            const int a = m.faces[f][k], b = back.faces[f][k];
            EXPECT_EQ(back.vertices[b].x, m.vertices[a].x);
            EXPECT_EQ(back.vertices[b].z, m.vertices[a].z);
            EXPECT_EQ(back.uv[b], m.uv[a]);
        }
}
