// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/meshtex.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "dg3d/losses.hpp"
#include "parallel.hpp"

namespace dg3d::meshtex {

// ---------------------------------------------------------------------------
// Atlas

TextureAtlas TextureAtlas::zeros(int resolution) {
    if (resolution < 1) throw std::invalid_argument("atlas resolution must be >= 1");
    TextureAtlas a;
    a.resolution = resolution;
    a.texels.assign(a.texel_count() * 3, 0.0);
    a.coverage.assign(a.texel_count(), 0.0);
    a.refined.assign(a.texel_count(), 0);
    return a;
}

ImageBuffer TextureAtlas::image() const {
    ImageBuffer img(resolution, resolution, 3);
    img.pixels = texels;
    return img;
}

Footprint atlas_taps(double u, double v, int resolution) {
    const double maxc = resolution - 1;
    const double col = std::clamp(u * resolution - 0.5, 0.0, maxc);
    const double row = std::clamp((1.0 - v) * resolution - 0.5, 0.0, maxc);
    const int c0 = std::min(static_cast<int>(col), resolution - 1);
    const int r0 = std::min(static_cast<int>(row), resolution - 1);
    const int c1 = std::min(c0 + 1, resolution - 1);
    const int r1 = std::min(r0 + 1, resolution - 1);
    const double fc = col - c0, fr = row - r0;
    Footprint f;
    f.texel = {r0 * resolution + c0, r0 * resolution + c1, r1 * resolution + c0, r1 * resolution + c1};
    f.weight = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
    return f;
}

// ---------------------------------------------------------------------------
// Rasterization

DepthMap Raster::depth_map() const {
    DepthMap d(height, width);
    for (std::size_t p = 0; p < face.size(); ++p) {
        if (face[p] < 0) continue;
        d.depth[p] = depth[p];
        d.coverage[p] = 1.0;
    }
    return d;
}

namespace {

inline double edge_fn(double ax, double ay, double bx, double by, double px, double py) {
    return (px - ax) * (by - ay) - (py - ay) * (bx - ax);
}

}  // namespace

Raster rasterize_geometry(const Mesh& mesh, const Camera& camera, int tex_resolution) {
    if (!mesh.has_uv()) throw std::invalid_argument("rasterize: mesh has no uv coordinates");
    const Camera cam = camera.normalized();
    const auto frame = render::camera_frame(cam);
    const int H = cam.height, W = cam.width;
    Raster r;
    r.height = H;
    r.width = W;
    r.tex_resolution = tex_resolution;
    const std::size_t npix = static_cast<std::size_t>(H) * W;
    r.face.assign(npix, -1);
    r.depth.assign(npix, 0.0);
    r.footprint.assign(npix, Footprint{});

    struct Proj {
        double col, row, zc;
    };
    std::vector<Proj> proj(mesh.vertices.size());
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const auto p = render::project(frame, H, W, mesh.vertices[i]);
        proj[i] = {p.col, p.row, dot(mesh.vertices[i] - frame.origin, frame.forward)};
    }

    std::vector<double> zbuf(npix, std::numeric_limits<double>::infinity());
    const int bands = std::min(H, 16);
    detail::parallel_for(bands, render::worker_count(), [&](int band) {
        const int row0 = band * H / bands, row1 = (band + 1) * H / bands;
        for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
            const auto& tri = mesh.faces[f];
            const Proj& a = proj[tri[0]];
            const Proj& b = proj[tri[1]];
            const Proj& c = proj[tri[2]];
            if (a.zc <= 1e-6 || b.zc <= 1e-6 || c.zc <= 1e-6) continue;
            const double area = edge_fn(a.col, a.row, b.col, b.row, c.col, c.row);
            if (std::abs(area) < 1e-14) continue;
            const int cmin = std::max(0, static_cast<int>(std::ceil(std::min({a.col, b.col, c.col}) - 1e-9)));
            const int cmax = std::min(W - 1, static_cast<int>(std::floor(std::max({a.col, b.col, c.col}) + 1e-9)));
            const int rmin = std::max(row0, static_cast<int>(std::ceil(std::min({a.row, b.row, c.row}) - 1e-9)));
            const int rmax = std::min(row1 - 1, static_cast<int>(std::floor(std::max({a.row, b.row, c.row}) + 1e-9)));
            for (int y = rmin; y <= rmax; ++y) {
                for (int x = cmin; x <= cmax; ++x) {
                    double l0 = edge_fn(b.col, b.row, c.col, c.row, x, y) / area;
                    double l1 = edge_fn(c.col, c.row, a.col, a.row, x, y) / area;
                    double l2 = edge_fn(a.col, a.row, b.col, b.row, x, y) / area;
                    constexpr double tol = -1e-10;
                    if (l0 < tol || l1 < tol || l2 < tol) continue;
                    // Perspective-correct weights.
                    double w0 = l0 / a.zc, w1 = l1 / b.zc, w2 = l2 / c.zc;
                    const double s = w0 + w1 + w2;
                    const double zc = 1.0 / s;
                    const std::size_t p = static_cast<std::size_t>(y) * W + x;
                    if (!(zc < zbuf[p])) continue;
                    zbuf[p] = zc;
                    w0 /= s;
                    w1 /= s;
                    w2 /= s;
                    const Vec3 pos = mesh.vertices[tri[0]] * w0 + mesh.vertices[tri[1]] * w1 + mesh.vertices[tri[2]] * w2;
                    const double u = w0 * mesh.uv[tri[0]][0] + w1 * mesh.uv[tri[1]][0] + w2 * mesh.uv[tri[2]][0];
                    const double v = w0 * mesh.uv[tri[0]][1] + w1 * mesh.uv[tri[1]][1] + w2 * mesh.uv[tri[2]][1];
                    r.face[p] = static_cast<int>(f);
                    r.depth[p] = norm(pos - frame.origin);
                    r.footprint[p] = atlas_taps(u, v, tex_resolution);
                }
            }
        }
    });
    return r;
}

ImageBuffer shade(const Raster& raster, std::span<const double> texels) {
    const std::size_t ntex = static_cast<std::size_t>(raster.tex_resolution) * raster.tex_resolution;
    if (texels.size() != ntex * 3) throw std::invalid_argument("shade: texel array does not match the raster atlas size");
    ImageBuffer img(raster.height, raster.width, 3);
    for (std::size_t p = 0; p < raster.face.size(); ++p) {
        if (raster.face[p] < 0) continue;
        const Footprint& f = raster.footprint[p];
        for (int c = 0; c < 3; ++c) {
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += f.weight[k] * texels[static_cast<std::size_t>(f.texel[k]) * 3 + c];
            img.pixels[p * 3 + c] = acc;
        }
    }
    return img;
}

void shade_adjoint(const Raster& raster, std::span<const double> image_grad, std::span<double> texel_grad) {
    for (std::size_t p = 0; p < raster.face.size(); ++p) {
        if (raster.face[p] < 0) continue;
        const Footprint& f = raster.footprint[p];
        for (int k = 0; k < 4; ++k)
            for (int c = 0; c < 3; ++c)
                texel_grad[static_cast<std::size_t>(f.texel[k]) * 3 + c] += f.weight[k] * image_grad[p * 3 + c];
    }
}

RasterResult rasterize(const Mesh& mesh, const TextureAtlas& atlas, const Camera& camera) {
    RasterResult r;
    r.raster = rasterize_geometry(mesh, camera, atlas.resolution);
    r.image = shade(r.raster, atlas.texels);
    r.depth = r.raster.depth_map();
    return r;
}

numgrad::Var rasterize_node(numgrad::Graph& g, numgrad::Var texels, const Raster& raster) {
    ImageBuffer img = shade(raster, g.value(texels));
    return g.custom("rasterize", {texels}, std::move(img.pixels),
                    {static_cast<std::size_t>(raster.height), static_cast<std::size_t>(raster.width), 3},
                    [raster](std::span<const double> gout, std::vector<std::span<double>>& gin) {
                        if (!gin[0].empty()) shade_adjoint(raster, gout, gin[0]);
                    });
}

TexelSurface texel_surface(const Mesh& mesh, int resolution) {
    if (!mesh.has_uv()) throw std::invalid_argument("texel_surface: mesh has no uv coordinates");
    const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
    TexelSurface s{std::vector<int>(n, -1), std::vector<Vec3>(n)};
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        // Texel space: col = u Tex - 0.5, row = (1 - v) Tex - 0.5.
        double cx[3], cy[3];
        for (int k = 0; k < 3; ++k) {
            cx[k] = mesh.uv[t[k]][0] * resolution - 0.5;
            cy[k] = (1.0 - mesh.uv[t[k]][1]) * resolution - 0.5;
        }
        const double area = edge_fn(cx[0], cy[0], cx[1], cy[1], cx[2], cy[2]);
        if (std::abs(area) < 1e-14) continue;
        const int c0 = std::max(0, static_cast<int>(std::ceil(std::min({cx[0], cx[1], cx[2]}))));
        const int c1 = std::min(resolution - 1, static_cast<int>(std::floor(std::max({cx[0], cx[1], cx[2]}))));
        const int r0 = std::max(0, static_cast<int>(std::ceil(std::min({cy[0], cy[1], cy[2]}))));
        const int r1 = std::min(resolution - 1, static_cast<int>(std::floor(std::max({cy[0], cy[1], cy[2]}))));
        for (int y = r0; y <= r1; ++y) {
            for (int x = c0; x <= c1; ++x) {
                const std::size_t idx = static_cast<std::size_t>(y) * resolution + x;
                if (s.face[idx] >= 0) continue;
                const double l0 = edge_fn(cx[1], cy[1], cx[2], cy[2], x, y) / area;
                const double l1 = edge_fn(cx[2], cy[2], cx[0], cy[0], x, y) / area;
                const double l2 = edge_fn(cx[0], cy[0], cx[1], cy[1], x, y) / area;
                if (l0 < -1e-10 || l1 < -1e-10 || l2 < -1e-10) continue;
                s.face[idx] = static_cast<int>(f);
                s.position[idx] = mesh.vertices[t[0]] * l0 + mesh.vertices[t[1]] * l1 + mesh.vertices[t[2]] * l2;
            }
        }
    }
    return s;
}

namespace {

std::vector<double> to_planes(std::span<const double> texels, int res) {
    const std::size_t n = static_cast<std::size_t>(res) * res;
    std::vector<double> planes(n * 3);
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < 3; ++c) planes[c * n + t] = texels[t * 3 + c];
    return planes;
}

}  // namespace

double atlas_tv(std::span<const double> texels, int resolution) {
    return losses::tv2d(to_planes(texels, resolution), 3, resolution);
}

void atlas_tv_grad(std::span<const double> texels, int resolution, std::span<double> grad) {
    const std::size_t n = static_cast<std::size_t>(resolution) * resolution;
    std::vector<double> g(n * 3, 0.0);
    losses::tv2d_grad(to_planes(texels, resolution), 3, resolution, g);
    for (std::size_t t = 0; t < n; ++t)
        for (int c = 0; c < 3; ++c) grad[t * 3 + c] += g[c * n + t];
}

// ---------------------------------------------------------------------------
// Adaptive blend

namespace {

double dotv(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

std::vector<Raster> rasterize_views(const Mesh& mesh, const std::vector<BlendView>& views, int res) {
    std::vector<Raster> rasters;
    for (const auto& v : views) {
        const Camera cam = v.camera.normalized();
        if (v.target.height != cam.height || v.target.width != cam.width || v.target.channels != 3) {
            throw std::invalid_argument("adaptive_blend: target image does not match its camera resolution");
        }
        rasters.push_back(rasterize_geometry(mesh, cam, res));
    }
    return rasters;
}

// Hessian-vector product of the (quadratic) blend objective.
void blend_hessian(const std::vector<Raster>& rasters, std::span<const double> p, double tv_weight, int res,
                   std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& r : rasters) {
        ImageBuffer img = shade(r, p);
        const double scale = 2.0 / static_cast<double>(r.face.size());
        for (double& v : img.pixels) v *= scale;
        shade_adjoint(r, img.pixels, out);
    }
    if (tv_weight > 0.0) {
        std::vector<double> g(p.size(), 0.0);
        atlas_tv_grad(p, res, g);
        for (std::size_t i = 0; i < p.size(); ++i) out[i] += tv_weight * g[i];
    }
}

}  // namespace

double blend_objective(const std::vector<Raster>& rasters, const std::vector<BlendView>& views,
                       std::span<const double> texels, double tv_weight) {
    double total = 0.0;
    for (std::size_t v = 0; v < rasters.size(); ++v) {
        const ImageBuffer img = shade(rasters[v], texels);
        double s = 0.0;
        for (std::size_t i = 0; i < img.pixels.size(); ++i) {
            const double d = img.pixels[i] - views[v].target.pixels[i];
            s += d * d;
        }
        total += s / static_cast<double>(rasters[v].face.size());
    }
    if (tv_weight > 0.0) total += tv_weight * atlas_tv(texels, rasters.front().tex_resolution);
    return total;
}

TextureAtlas adaptive_blend(const Mesh& mesh, const std::vector<BlendView>& views, int atlas_resolution, int iters,
                            double tv_weight, std::vector<double>* trace) {
    if (views.empty()) throw std::invalid_argument("adaptive_blend: at least one view is required");
    if (tv_weight < 0.0) throw std::invalid_argument("adaptive_blend: tv_weight must be >= 0");
    TextureAtlas atlas = TextureAtlas::zeros(atlas_resolution);
    const auto rasters = rasterize_views(mesh, views, atlas_resolution);
    double seen = 0.0;
    for (const auto& r : rasters) {
        for (std::size_t p = 0; p < r.face.size(); ++p) {
            if (r.face[p] < 0) continue;
            for (int k = 0; k < 4; ++k) {
                if (r.footprint[p].weight[k] <= kFootprintEps) continue;
                atlas.coverage[r.footprint[p].texel[k]] += r.footprint[p].weight[k];
                seen += r.footprint[p].weight[k];
            }
        }
    }
    if (!(seen > 0.0)) throw InvisibleMesh("adaptive_blend: the mesh is not visible in any view");
    for (double& c : atlas.coverage) c = std::min(c, 1.0);

    const std::size_t n = atlas.texels.size();
    // Right-hand side b = sum_v 2/npix S_v^T y_v; the objective is a.Ha/2 - b.a + const.
    std::vector<double> b(n, 0.0);
    for (std::size_t v = 0; v < rasters.size(); ++v) {
        std::vector<double> y = views[v].target.pixels;
        const double scale = 2.0 / static_cast<double>(rasters[v].face.size());
        for (double& x : y) x *= scale;
        shade_adjoint(rasters[v], y, b);
    }
    std::vector<double>& a = atlas.texels;
    std::vector<double> r = b, p = b, hp(n);
    double rr = dotv(r, r);
    if (trace) trace->push_back(blend_objective(rasters, views, a, tv_weight));
    for (int it = 0; it < iters; ++it) {
        if (rr <= 1e-30) {
            if (trace) trace->push_back(trace->back());
            continue;
        }
        blend_hessian(rasters, p, tv_weight, atlas_resolution, hp);
        const double php = dotv(p, hp);
        if (!(php > 0.0)) {
            if (trace) trace->push_back(trace->back());
            continue;
        }
        const double alpha = rr / php;
        for (std::size_t i = 0; i < n; ++i) {
            a[i] += alpha * p[i];
            r[i] -= alpha * hp[i];
        }
        const double rr_new = dotv(r, r);
        const double beta = rr_new / rr;
        for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
        rr = rr_new;
        if (trace) trace->push_back(blend_objective(rasters, views, a, tv_weight));
    }
    return atlas;
}

TextureAtlas naive_back_project(const Mesh& mesh, const std::vector<BlendView>& views, int atlas_resolution) {
    TextureAtlas atlas = TextureAtlas::zeros(atlas_resolution);
    const TexelSurface surface = texel_surface(mesh, atlas_resolution);
    const auto rasters = rasterize_views(mesh, views, atlas_resolution);
    for (std::size_t v = 0; v < views.size(); ++v) {
        const Raster& r = rasters[v];
        std::vector<char> seen(atlas.texel_count(), 0);
        for (std::size_t p = 0; p < r.face.size(); ++p) {
            if (r.face[p] < 0) continue;
            for (int k = 0; k < 4; ++k)
                if (r.footprint[p].weight[k] > kFootprintEps) seen[r.footprint[p].texel[k]] = 1;
        }
        const Camera cam = views[v].camera.normalized();
        const auto frame = render::camera_frame(cam);
        const ImageBuffer& img = views[v].target;
        for (std::size_t t = 0; t < atlas.texel_count(); ++t) {
            if (!seen[t] || surface.face[t] < 0) continue;
            const auto pr = render::project(frame, cam.height, cam.width, surface.position[t]);
            if (!pr.in_front) continue;
            const double col = std::clamp(pr.col, 0.0, cam.width - 1.0);
            const double row = std::clamp(pr.row, 0.0, cam.height - 1.0);
            const int c0 = std::min(static_cast<int>(col), cam.width - 1), r0 = std::min(static_cast<int>(row), cam.height - 1);
            const int c1 = std::min(c0 + 1, cam.width - 1), r1 = std::min(r0 + 1, cam.height - 1);
            const double fc = col - c0, fr = row - r0;
            for (int c = 0; c < 3; ++c) {
                atlas.texels[t * 3 + c] = (1 - fr) * ((1 - fc) * img.at(r0, c0, c) + fc * img.at(r0, c1, c)) +
                                          fr * ((1 - fc) * img.at(r1, c0, c) + fc * img.at(r1, c1, c));
            }
            atlas.coverage[t] = 1.0;
        }
    }
    return atlas;
}

// ---------------------------------------------------------------------------
// Controls and masks

ImageBuffer edge_map(const ImageBuffer& image, double low, double high) {
    if (low > high) throw std::invalid_argument("edge_map: low threshold exceeds high threshold");
    const ImageBuffer gray = to_gray(image);
    const int H = gray.height, W = gray.width;
    auto px = [&](int y, int x) { return gray.at(std::clamp(y, 0, H - 1), std::clamp(x, 0, W - 1)); };
    std::vector<double> mag(static_cast<std::size_t>(H) * W), gx(mag.size()), gy(mag.size());
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const double sx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
            const double sy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                              (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            gx[i] = sx / 4.0;
            gy[i] = sy / 4.0;
            mag[i] = std::hypot(gx[i], gy[i]);
        }
    }
    auto at = [&](int y, int x) {
        if (y < 0 || y >= H || x < 0 || x >= W) return 0.0;
        return mag[static_cast<std::size_t>(y) * W + x];
    };
    // Thin along the dominant gradient axis: strictly above the previous
    // neighbour, at least the next one, so plateaus of width 2 keep one pixel.
    std::vector<double> thin(mag.size(), 0.0);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * W + x;
            const double m = mag[i];
            if (m <= 0.0) continue;
            const bool horizontal = std::abs(gx[i]) >= std::abs(gy[i]);
            const double prev = horizontal ? at(y, x - 1) : at(y - 1, x);
            const double next = horizontal ? at(y, x + 1) : at(y + 1, x);
            if (m > prev && m >= next) thin[i] = m;
        }
    }
    ImageBuffer out(H, W, 1);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < thin.size(); ++i) {
        if (thin[i] >= high && thin[i] > 0.0 && out.pixels[i] == 0.0) {
            out.pixels[i] = 1.0;
            stack.push_back(i);
        }
    }
    while (!stack.empty()) {
        const std::size_t i = stack.back();
        stack.pop_back();
        const int y = static_cast<int>(i / W), x = static_cast<int>(i % W);
        for (int dy = -1; dy <= 1; ++dy) {
            for (int dx = -1; dx <= 1; ++dx) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
                const std::size_t j = static_cast<std::size_t>(yy) * W + xx;
                if (out.pixels[j] == 0.0 && thin[j] >= low && thin[j] > 0.0) {
                    out.pixels[j] = 1.0;
                    stack.push_back(j);
                }
            }
        }
    }
    return out;
}

std::vector<double> dilate(const std::vector<double>& mask, int height, int width, int radius) {
    if (radius < 0) throw std::invalid_argument("dilate: radius must be >= 0");
    std::vector<double> out(mask.size(), 0.0);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            if (mask[static_cast<std::size_t>(y) * width + x] <= 0.0) continue;
            for (int dy = -radius; dy <= radius; ++dy) {
                for (int dx = -radius; dx <= radius; ++dx) {
                    if (dy * dy + dx * dx > radius * radius) continue;
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= height || xx < 0 || xx >= width) continue;
                    out[static_cast<std::size_t>(yy) * width + xx] = 1.0;
                }
            }
        }
    }
    return out;
}

std::vector<double> unrefined_mask(const Raster& raster, const TextureAtlas& atlas) {
    std::vector<double> m(raster.face.size(), 0.0);
    for (std::size_t p = 0; p < raster.face.size(); ++p) {
        if (raster.face[p] < 0) continue;
        const Footprint& f = raster.footprint[p];
        for (int k = 0; k < 4; ++k) {
            const int t = f.texel[k];
            if (f.weight[k] > kFootprintEps && atlas.coverage[t] > 0.0 && !atlas.refined[t]) {
                m[p] = 1.0;
                break;
            }
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// Schedule

RefineSchedule build_schedule(const ScheduleOptions& o) {
    if (o.k < 0) throw std::invalid_argument("build_schedule: k must be >= 0");
    if (o.j < 1) throw std::invalid_argument("build_schedule: j must be >= 1");
    RefineSchedule s;
    s.k = o.k;
    s.j = o.j;
    s.dilation_radius = o.dilation_radius;
    const double step = 360.0 / (2 * o.k + 2);
    std::vector<double> azimuths{0.0};
    for (int i = 1; i <= o.k; ++i) {
        azimuths.push_back(i * step);
        azimuths.push_back(-i * step);
    }
    azimuths.push_back(180.0);

    std::vector<double> elevations;
    if (o.j == 1) {
        elevations.push_back(0.5 * (o.elevation_min + o.elevation_max));
    } else {
        for (int i = 0; i < o.j; ++i) elevations.push_back(o.elevation_min + (o.elevation_max - o.elevation_min) * i / (o.j - 1));
        std::stable_sort(elevations.begin(), elevations.end(),
                         [](double a, double b) { return std::abs(a) < std::abs(b); });
    }
    for (double az : azimuths) {
        for (double el : elevations) {
            RefineView v;
            v.azimuth = az;
            v.elevation = el;
            v.camera = o.base;
            v.camera.azimuth = az;
            v.camera.elevation = el;
            v.camera = v.camera.normalized();
            const bool first = s.views.empty();
            v.mode = first ? priors::TranslateMode::img2img : priors::TranslateMode::inpaint;
            v.strength = first ? o.img2img_strength : o.inpaint_strength;
            s.views.push_back(v);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Projection of refined views

std::size_t project_refined(TextureAtlas& atlas, const Raster& raster, const ImageBuffer& refined,
                            const std::vector<double>& region, int max_iters) {
    if (refined.height != raster.height || refined.width != raster.width || refined.channels != 3) {
        throw std::invalid_argument("project_refined: refined image does not match the camera resolution");
    }
    if (region.size() != raster.face.size()) throw std::invalid_argument("project_refined: region size mismatch");
    if (raster.tex_resolution != atlas.resolution) throw std::invalid_argument("project_refined: atlas size mismatch");

    // Pixels constraining the fit and the texels they see.
    Raster sub = raster;
    std::vector<char> in_set(atlas.texel_count(), 0);
    std::size_t count = 0;
    for (std::size_t p = 0; p < sub.face.size(); ++p) {
        if (sub.face[p] < 0) continue;
        if (!(region[p] > 0.0)) {
            sub.face[p] = -1;
            continue;
        }
        for (int k = 0; k < 4; ++k) {
            const int t = sub.footprint[p].texel[k];
            if (sub.footprint[p].weight[k] > kFootprintEps && atlas.coverage[t] > 0.0 && !in_set[t]) {
                in_set[t] = 1;
                ++count;
            }
        }
    }
    if (count == 0) return 0;

    const std::size_t n = atlas.texels.size();
    auto restrict_to_set = [&](std::vector<double>& v) {
        for (std::size_t t = 0; t < atlas.texel_count(); ++t)
            if (!in_set[t]) v[t * 3] = v[t * 3 + 1] = v[t * 3 + 2] = 0.0;
    };
    // Least squares on the selected texels: minimize |S a - y|^2 over region pixels.
    std::vector<double> resid(n, 0.0);
    {
        ImageBuffer cur = shade(sub, atlas.texels);
        for (std::size_t i = 0; i < cur.pixels.size(); ++i) cur.pixels[i] = refined.pixels[i] - cur.pixels[i];
        for (std::size_t p = 0; p < sub.face.size(); ++p)
            if (sub.face[p] < 0) cur.pixels[p * 3] = cur.pixels[p * 3 + 1] = cur.pixels[p * 3 + 2] = 0.0;
        shade_adjoint(sub, cur.pixels, resid);
    }
    restrict_to_set(resid);
    // Jacobi preconditioner: diagonal of S^T S. Clamped taps can repeat a texel.
    std::vector<double> diag(atlas.texel_count(), 0.0);
    for (std::size_t p = 0; p < sub.face.size(); ++p) {
        if (sub.face[p] < 0) continue;
        const auto& fp = sub.footprint[p];
        for (int k = 0; k < 4; ++k) {
            bool first = true;
            for (int q = 0; q < k; ++q) first = first && fp.texel[q] != fp.texel[k];
            if (!first) continue;
            double w = 0.0;
            for (int q = k; q < 4; ++q)
                if (fp.texel[q] == fp.texel[k]) w += fp.weight[q];
            diag[fp.texel[k]] += w * w;
        }
    }
    auto precondition = [&](const std::vector<double>& r, std::vector<double>& z) {
        for (std::size_t t = 0; t < atlas.texel_count(); ++t) {
            const double inv = in_set[t] && diag[t] > 0.0 ? 1.0 / diag[t] : 0.0;
            for (int c = 0; c < 3; ++c) z[t * 3 + c] = r[t * 3 + c] * inv;
        }
    };
    std::vector<double> z(n), hp(n);
    precondition(resid, z);
    std::vector<double> dir = z;
    double rz = dotv(resid, z);
    const double tol = 1e-28 * std::max(1.0, dotv(resid, resid));
    for (int it = 0; it < max_iters && dotv(resid, resid) > tol; ++it) {
        std::fill(hp.begin(), hp.end(), 0.0);
        const ImageBuffer sp = shade(sub, dir);
        shade_adjoint(sub, sp.pixels, hp);
        restrict_to_set(hp);
        const double php = dotv(dir, hp);
        if (!(php > 0.0)) break;
        const double alpha = rz / php;
        for (std::size_t i = 0; i < n; ++i) {
            atlas.texels[i] += alpha * dir[i];
            resid[i] -= alpha * hp[i];
        }
        precondition(resid, z);
        const double rz_new = dotv(resid, z);
        const double beta = rz_new / rz;
        for (std::size_t i = 0; i < n; ++i) dir[i] = z[i] + beta * dir[i];
        rz = rz_new;
    }
    for (std::size_t t = 0; t < atlas.texel_count(); ++t)
        if (in_set[t]) atlas.refined[t] = 1;
    return count;
}

std::size_t project_refined(const Mesh& mesh, TextureAtlas& atlas, const Camera& camera, const ImageBuffer& refined,
                            const std::vector<double>& region, int max_iters) {
    return project_refined(atlas, rasterize_geometry(mesh, camera, atlas.resolution), refined, region, max_iters);
}

// ---------------------------------------------------------------------------
// OBJ

void write_obj(const std::filesystem::path& path, const Mesh& mesh, const std::string& texture_file) {
    validate(mesh);
    std::filesystem::path mtl = path;
    mtl.replace_extension(".mtl");
    {
        std::ofstream m(mtl);
        if (!m) throw IoError(mtl, "cannot open for writing");
        m << "newmtl textured\nKa 1 1 1\nKd 1 1 1\nmap_Kd " << texture_file << "\n";
    }
    std::ofstream out(path);
    if (!out) throw IoError(path, "cannot open for writing");
    out.precision(17);
    out << "mtllib " << mtl.filename().string() << "\nusemtl textured\n";
    for (const auto& v : mesh.vertices) out << "v " << v.x << ' ' << v.y << ' ' << v.z << '\n';
    const bool uv = mesh.has_uv();
    if (uv)
        for (const auto& t : mesh.uv) out << "vt " << t[0] << ' ' << t[1] << '\n';
    for (const auto& f : mesh.faces) {
        out << 'f';
        for (int idx : f) {
            out << ' ' << idx + 1;
            if (uv) out << '/' << idx + 1;
        }
        out << '\n';
    }
    if (!out) throw IoError(path, "write failed");
}

Mesh read_obj(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError(path, "cannot open for reading");
    std::vector<Vec3> positions;
    std::vector<std::array<double, 2>> texcoords;
    Mesh mesh;
    std::map<std::pair<int, int>, int> corner_index;
    bool any_uv = false;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream ls(line);
        std::string tag;
        ls >> tag;
        if (tag == "v") {
            Vec3 v;
            ls >> v.x >> v.y >> v.z;
            positions.push_back(v);
        } else if (tag == "vt") {
            std::array<double, 2> t{};
            ls >> t[0] >> t[1];
            texcoords.push_back(t);
        } else if (tag == "f") {
            std::vector<int> corners;
            std::string tok;
            while (ls >> tok) {
                const auto s1 = tok.find('/');
                const int vi = std::stoi(tok.substr(0, s1));
                int ti = 0;
                if (s1 != std::string::npos) {
                    const auto s2 = tok.find('/', s1 + 1);
                    const std::string t = tok.substr(s1 + 1, s2 == std::string::npos ? std::string::npos : s2 - s1 - 1);
                    if (!t.empty()) ti = std::stoi(t);
                }
                const int v = vi < 0 ? static_cast<int>(positions.size()) + vi : vi - 1;
                const int tt = ti == 0 ? -1 : (ti < 0 ? static_cast<int>(texcoords.size()) + ti : ti - 1);
                if (v < 0 || v >= static_cast<int>(positions.size()) || (tt >= static_cast<int>(texcoords.size()))) {
                    throw IoError(path, "line " + std::to_string(line_no) + ": index out of range");
                }
                if (tt >= 0) any_uv = true;
                auto [it, inserted] = corner_index.try_emplace({v, tt}, static_cast<int>(mesh.vertices.size()));
                if (inserted) {
                    mesh.vertices.push_back(positions[v]);
                    mesh.uv.push_back(tt >= 0 ? texcoords[tt] : std::array<double, 2>{0.0, 0.0});
                }
                corners.push_back(it->second);
            }
            if (corners.size() < 3) throw IoError(path, "line " + std::to_string(line_no) + ": face with < 3 vertices");
            for (std::size_t k = 1; k + 1 < corners.size(); ++k) mesh.faces.push_back({corners[0], corners[k], corners[k + 1]});
        }
    }
    if (!any_uv) mesh.uv.clear();
    mesh.seam_duplicate.assign(mesh.vertices.size(), 0);
    return mesh;
}

}  // namespace dg3d::meshtex
