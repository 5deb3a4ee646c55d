// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0
//
// Property-based acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. `dg3d_acceptance 3 7` runs a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dg3d/gradcheck.hpp"
#include "dg3d/losses.hpp"
#include "dg3d/meshtex.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/trainer.hpp"

namespace {

using namespace dg3d;
namespace fs = std::filesystem;
using trainer::Mode;
using render::Camera;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------------------
// Shared toy setup

gan3d::GanDims toy_dims() {
    gan3d::GanDims d;
    d.latent_dim = 8;
    d.channels = 4;
    d.resolution = 16;
    d.base_resolution = 8;
    d.hidden = 32;
    d.decoder_hidden = 32;
    return d;
}

trainer::TrainConfig toy_config(int steps) {
    trainer::TrainConfig c;
    c.steps = steps;
    c.resolution = 16;
    c.samples = 12;
    c.cfg_scale = 1.0;
    c.lr = 1e-3;
    c.seed = 5;
    c.latent_k = 4;
    c.latent_steps = 3;
    c.prompt = "target";
    return c;
}

// Target for every non-empty prompt; "" keeps the neutral grey.
priors::TargetFn fixed_target(ImageBuffer image) {
    return [image](const std::string& prompt, int h, int w) {
        if (prompt.empty()) return ImageBuffer(h, w, 3, 0.5);
        if (h != image.height || w != image.width) throw std::invalid_argument("fixed_target: size");
        return image;
    };
}

struct PriorSet {
    priors::NoiseSchedule schedule = priors::NoiseSchedule::linear(1000, 1e-4, 0.02);
    priors::GaussianScorePrior score;
    priors::EmbeddingPrior embed;
    explicit PriorSet(double var, priors::TargetFn target = {}) : score(var, std::move(target)) {}
    trainer::Priors get() const { return {&schedule, &score, &embed}; }
};

render::RenderOptions still(int samples) { return {samples, 0, false}; }

ImageBuffer render_latent(const gan3d::GeneratorParams& p, const gan3d::LatentCode& z, const Camera& cam,
                          int samples) {
    const auto tri = gan3d::triplane_forward(p, gan3d::mapping_forward(p, z));
    return render::render(p, tri, cam, still(samples)).image;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

std::vector<double> part_bytes(const gan3d::GeneratorParams& p, gan3d::Part part) {
    std::vector<double> out;
    for (const auto& l : p.part(part).layers) {
        out.insert(out.end(), l.weight.values.begin(), l.weight.values.end());
        out.insert(out.end(), l.bias.values.begin(), l.bias.values.end());
    }
    return out;
}

bool bytes_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

// ---------------------------------------------------------------------------
// 1. Gradient soundness

Outcome gradient_soundness() {
    const auto report = gradcheck::run_gradcheck(gradcheck::default_roster(), 10, 1e-4);
    double worst = 0.0;
    std::string worst_name;
    for (const auto& r : report.rows)
        if (r.max_rel_error >= worst) {
            worst = r.max_rel_error;
            worst_name = r.name;
        }
    return {report.passed(), fmt("%zu ops, worst %s rel err %.2e", report.rows.size(), worst_name.c_str(), worst)};
}

// ---------------------------------------------------------------------------
// 2. SDS fixed point

Outcome sds_fixed_point() {
    const int res = 16;
    const std::string prompt = "a bronze statue";
    PriorSet pri(1.0);
    const ImageBuffer mu = pri.score.mean(prompt, res, res);

    // (a) Adam on a directly parameterized image.
    numgrad::ParamBuffer x("x", {static_cast<std::size_t>(res * res * 3)}, std::vector<double>(res * res * 3, 0.5));
    numgrad::Adam opt(numgrad::AdamConfig{1e-2});
    std::mt19937_64 rng(7);
    std::normal_distribution<double> normal;
    std::uniform_int_distribution<int> tdist(300, 800);
    ImageBuffer img(res, res, 3), eps(res, res, 3);
    double tail_mean = 0.0;
    const int steps = 500;
    for (int s = 0; s < steps; ++s) {
        std::copy(x.values.begin(), x.values.end(), img.pixels.begin());
        for (double& e : eps.pixels) e = normal(rng);
        const auto r = losses::sds_grad(img, prompt, tdist(rng), eps, pri.schedule, pri.score, 1.0);
        std::copy(r.grad.pixels.begin(), r.grad.pixels.end(), x.grad.begin());
        opt.step(std::vector<numgrad::ParamBuffer*>{&x});
        if (s >= steps - 100) {
            double m = 0.0;
            for (std::size_t i = 0; i < x.values.size(); ++i) m = std::max(m, std::abs(x.values[i] - mu.pixels[i]));
            tail_mean += m / 100.0;
        }
    }
    double linf = 0.0, mean_abs = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double d = std::abs(x.values[i] - mu.pixels[i]);
        linf = std::max(linf, d);
        mean_abs += d / static_cast<double>(x.values.size());
    }

    // (b) Monte-Carlo mean of the single-sample gradient against the closed
    // form E[w (eps_hat - eps)] = w sqrt(ab (1 - ab)) (x - mu) / (ab var + 1 - ab).
    ImageBuffer x0(res, res, 3);
    std::mt19937_64 xr(11);
    std::bernoulli_distribution coin;
    for (std::size_t i = 0; i < x0.pixels.size(); ++i) x0.pixels[i] = mu.pixels[i] + (coin(xr) ? 1.0 : -1.0);
    double worst_mc = 0.0;
    for (int t : {300, 550, 800}) {
        const double ab = pri.schedule.alpha_bar[t];
        const double w = pri.schedule.weight(t);
        std::vector<double> mean(x0.pixels.size(), 0.0), expect(x0.pixels.size());
        const int draws = 10000;
        for (int k = 0; k < draws; ++k) {
            for (double& e : eps.pixels) e = normal(rng);
            const auto r = losses::sds_grad(x0, prompt, t, eps, pri.schedule, pri.score, 1.0);
            for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += r.grad.pixels[i] / draws;
        }
        for (std::size_t i = 0; i < expect.size(); ++i)
            expect[i] = w * std::sqrt(ab * (1 - ab)) * (x0.pixels[i] - mu.pixels[i]) / (ab * 1.0 + 1 - ab);
        worst_mc = std::max(worst_mc, l2(mean, expect) / l2(expect, std::vector<double>(expect.size(), 0.0)));
    }
    const bool pass = linf <= 0.05 && worst_mc <= 0.02;
    return {pass, fmt("|x-mu|inf %.3f (mean %.3f, tail-avg inf %.3f; need <= 0.05), MC rel err %.4f (need <= 0.02)",
                      linf, mean_abs, tail_mean, worst_mc)};
}

// ---------------------------------------------------------------------------
// 3. Relative distance and diversity

// Mean pairwise L2 distance of renders and of triplanes over fixed latents.
std::pair<double, double> diversity(const gan3d::GeneratorParams& p, const std::vector<gan3d::LatentCode>& zs,
                                    const Camera& cam) {
    std::vector<std::vector<double>> imgs, planes;
    for (const auto& z : zs) {
        const auto tri = gan3d::triplane_forward(p, gan3d::mapping_forward(p, z));
        imgs.push_back(render::render(p, tri, cam, still(12)).image.pixels);
        planes.push_back(tri.values);
    }
    double v = 0.0, d = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < imgs.size(); ++i)
        for (std::size_t j = i + 1; j < imgs.size(); ++j, ++n) {
            v += l2(imgs[i], imgs[j]);
            d += l2(planes[i], planes[j]);
        }
    return {v / n, d / n};
}

Outcome relative_distance() {
    // Unit cases.
    const std::vector<double> li{1, 1}, lj{0, 0}, fi{2, 0}, fj{0, 0};
    const bool unit = losses::relative_distance(li, lj, fi, fj) == 1.0 &&
                      losses::relative_distance(lj, li, fj, fi) == losses::relative_distance(li, lj, fi, fj) &&
                      losses::relative_distance(fi, fj, fi, fj) == 0.0;

    const auto base = gan3d::GeneratorParams::create(toy_dims(), 7);
    const PriorSet pri(0.01, fixed_target(ImageBuffer(16, 16, 3, 0.8)));
    std::mt19937_64 zr(99);
    std::vector<gan3d::LatentCode> zs;
    for (int i = 0; i < 8; ++i) zs.push_back(gan3d::sample_noise(toy_dims().latent_dim, zr));
    const Camera cam = toy_config(0).camera(0.0, 0.0);
    const auto [v0, d0] = diversity(base, zs, cam);

    double v[2], d[2];
    for (int lam = 0; lam < 2; ++lam) {
        auto cfg = toy_config(2000);
        cfg.weights.lambda1 = lam;
        auto state = trainer::TrainState::create(base, Mode::adaptation, cfg);
        for (int s = 0; s < cfg.steps; ++s) trainer::adapt_step(state, cfg, pri.get());
        const auto [vi, di] = diversity(state.live, zs, cam);
        v[lam] = vi / v0;
        d[lam] = di / d0;
    }
    const bool pass = unit && v[1] >= 0.5 && v[0] <= 0.2;
    return {pass, fmt("unit cases %s, V(l1=1) %.3f (>= 0.5), V(l1=0) %.3f (<= 0.2); triplane spread %.3f vs %.3f",
                      unit ? "exact" : "WRONG", v[1], v[0], d[1], d[0])};
}

// ---------------------------------------------------------------------------
// 4. Diffusion-guided reconstruction locality

Outcome recon_locality() {
    ImageBuffer x(1, 2, 1), xr(1, 2, 1), gamma(1, 2, 1);
    x.pixels = {0.0, 1.0};
    xr.pixels = {0.0, 0.0};
    gamma.pixels = {1.0, 0.5};
    const bool unit = losses::diffusion_guided_recon(x, xr, gamma, 500) == 125.0;

    const auto base = gan3d::GeneratorParams::create(toy_dims(), 7);
    auto cfg = toy_config(2000);
    cfg.pose = {0.0, 0.0, 0.0, 0.0};
    std::mt19937_64 zr(3);
    const auto z = gan3d::sample_noise(toy_dims().latent_dim, zr);
    cfg.latent_pool = {z.values};
    const Camera cam = cfg.camera(0.0, 0.0);
    const ImageBuffer src = render_latent(base, z, cam, cfg.samples);
    ImageBuffer target = src;
    const int w = src.width, h = src.height;
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w / 2; ++c)
            for (int k = 0; k < 3; ++k) {
                double& v = target.at(r, c, k);
                v = v < 0.5 ? v + 0.4 : v - 0.4;
            }
    const PriorSet pri(0.01, fixed_target(target));

    // Returns {right-half mean |change|, left-half mean movement toward target}.
    auto edit = [&](double lambda2) {
        auto c = cfg;
        c.weights.lambda2 = lambda2;
        auto state = trainer::TrainState::create(base, Mode::editing, c);
        for (int s = 0; s < c.steps; ++s) trainer::edit_step(state, c, pri.get());
        const ImageBuffer out = render_latent(state.live, z, cam, c.samples);
        double right = 0.0, left = 0.0;
        for (int r = 0; r < h; ++r)
            for (int col = 0; col < w; ++col)
                for (int k = 0; k < 3; ++k) {
                    if (col < w / 2) {
                        left += std::abs(src.at(r, col, k) - target.at(r, col, k)) -
                                std::abs(out.at(r, col, k) - target.at(r, col, k));
                    } else {
                        right += std::abs(out.at(r, col, k) - src.at(r, col, k));
                    }
                }
        const double half = h * (w / 2) * 3.0;
        return std::pair{right / half, left / half};
    };
    // The reconstruction term carries a factor t (300..800), so the weight is
    // scaled down to let image-space SDS move the render at all.
    const auto [right, left] = edit(5e-4);
    const auto [right0, left0] = edit(0.0);
    const bool pass = unit && right <= 0.05 && left >= 0.2;
    return {pass, fmt("unit case %s, right-half drift %.4f (<= 0.05), left-half move %.3f (>= 0.2); without the "
                      "term %.4f / %.3f",
                      unit ? "125" : "WRONG", right, left, right0, left0)};
}

// ---------------------------------------------------------------------------
// 5. Learnable triplane

struct AvatarRun {
    double gradnorm = 0.0;
    double tv = 0.0;
};

AvatarRun avatar_run(const gan3d::GeneratorParams& base, const trainer::TrainConfig& cfg, const trainer::Priors& pri,
                     const gan3d::LatentCode& w) {
    auto state = trainer::TrainState::create(base, Mode::avatar, cfg);
    state.fixed_w = w;
    AvatarRun r;
    const int tail = 100;
    for (int s = 0; s < cfg.steps; ++s) {
        const auto m = trainer::avatar_step(state, cfg, pri);
        if (s >= cfg.steps - tail) r.gradnorm += m.loss_sds_gradnorm / tail;
    }
    if (state.residual) {
        const auto& d = base.dims;
        r.tv = losses::tv2d(state.residual->residual.values, 3 * d.channels, d.resolution);
    }
    return r;
}

Outcome learnable_triplane() {
    auto dims = toy_dims();
    dims.resolution = 32;
    const auto base = gan3d::GeneratorParams::create(dims, 7);
    auto cfg = toy_config(1500);
    cfg.pose = {0.0, 0.0, 0.0, 0.0};
    cfg.lr = 1e-2;
    ImageBuffer target(16, 16, 3);
    for (int r = 0; r < 16; ++r)
        for (int c = 0; c < 16; ++c)
            for (int k = 0; k < 3; ++k) target.at(r, c, k) = ((r / 2 + c / 2) % 2) ? 0.8 : 0.2;
    const PriorSet pri(0.01, fixed_target(target));
    std::mt19937_64 zr(4);
    const auto w = gan3d::mapping_forward(base, gan3d::sample_noise(dims.latent_dim, zr));

    auto with = cfg;
    with.weights.lambda3 = 0.1;
    auto without = with;
    without.learnable_triplane = false;
    auto heavy = with;
    heavy.weights.lambda3 = 1.0;
    const auto a = avatar_run(base, with, pri.get(), w);
    const auto b = avatar_run(base, without, pri.get(), w);
    const auto c = avatar_run(base, heavy, pri.get(), w);
    const double ratio = a.gradnorm / b.gradnorm;
    const bool pass = ratio <= 0.6 && a.tv <= 2.0 * c.tv;
    return {pass, fmt("SDS grad norm with/without T_l %.3f (<= 0.6), tv2d(T_l) l3=0.1 %.4g vs 2x l3=1.0 %.4g", ratio,
                      a.tv, 2.0 * c.tv)};
}

// ---------------------------------------------------------------------------
// 6. Geometry

Outcome geometry() {
    const auto m = meshtex::marching_cubes([](const Vec3& p) { return 0.5 - norm(p); }, 32, 0.0);
    if (!m) return {false, "empty surface"};
    double err = 0.0;
    for (const auto& v : m->vertices) err = std::max(err, std::abs(norm(v) - 0.5));
    const bool tight = meshtex::is_watertight(*m);
    const long chi = meshtex::euler_characteristic(*m);
    const auto u = meshtex::cylinder_unwrap(*m);
    double extent = 0.0;
    for (const auto& f : u.faces) {
        double lo = 1.0, hi = 0.0;
        for (int i : f) {
            lo = std::min(lo, u.uv[i][0]);
            hi = std::max(hi, u.uv[i][0]);
        }
        extent = std::max(extent, hi - lo);
    }
    const bool pass = err <= 0.094 && tight && chi == 2 && extent <= 0.5;
    return {pass, fmt("radial err %.4f, watertight %d, chi %ld, max u-extent %.3f", err, tight, chi, extent)};
}

// ---------------------------------------------------------------------------
// 7. Adaptive blend

meshtex::Mesh test_sphere(int n, double radius) {
    return meshtex::cylinder_unwrap(*meshtex::marching_cubes([radius](const Vec3& p) { return radius - norm(p); }, n, 0.0));
}

Camera view(double az, double el, int size) {
    Camera c;
    c.azimuth = az;
    c.elevation = el;
    c.height = c.width = size;
    return c.normalized();
}

// Mean squared 4-neighbour difference over pairs inside `band`.
double band_tv(const std::vector<double>& texels, int res, const std::vector<char>& band) {
    double s = 0.0;
    int n = 0;
    for (int r = 0; r < res; ++r)
        for (int c = 0; c < res; ++c) {
            const int i = r * res + c;
            if (!band[i]) continue;
            for (auto [dr, dc] : {std::pair{0, 1}, std::pair{1, 0}}) {
                const int rr = r + dr, cc = c + dc;
                if (rr >= res || cc >= res || !band[rr * res + cc]) continue;
                for (int k = 0; k < 3; ++k) s += std::pow(texels[i * 3 + k] - texels[(rr * res + cc) * 3 + k], 2);
                ++n;
            }
        }
    return n ? s / n : 0.0;
}

Outcome adaptive_blend() {
    const int tex = 32, size = 48;
    const auto mesh = test_sphere(20, 0.7);

    // Single view, full coverage: a textured quad filling the frame.
    meshtex::Mesh q;
    q.vertices = {{-0.8, -0.8, 0}, {0.8, -0.8, 0}, {0.8, 0.8, 0}, {-0.8, 0.8, 0}};
    q.uv = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    q.faces = {{0, 1, 2}, {0, 2, 3}};
    q.seam_duplicate.assign(4, 0);
    meshtex::TextureAtlas truth = meshtex::TextureAtlas::zeros(8);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u01(0, 1);
    for (double& v : truth.texels) v = u01(rng);
    const Camera front = view(0, 0, 24);
    const auto target = meshtex::rasterize(q, truth, front).image;
    const auto fit = meshtex::adaptive_blend(q, {{front, target}}, 8, 300, 0.0);
    const auto img = meshtex::rasterize(q, fit, front).image;
    double mse = 0.0;
    int hits = 0;
    const auto rq = meshtex::rasterize_geometry(q, front, 8);
    for (std::size_t p = 0; p < rq.face.size(); ++p) {
        if (!rq.hit(p)) continue;
        ++hits;
        for (int k = 0; k < 3; ++k) mse += std::pow(img.pixels[p * 3 + k] - target.pixels[p * 3 + k], 2);
    }
    mse /= 3.0 * hits;

    // Two views that disagree on colour.
    const std::vector<meshtex::BlendView> views{{view(0, 0, size), ImageBuffer(size, size, 3, 0.3)},
                                                {view(90, 0, size), ImageBuffer(size, size, 3, 0.7)}};
    const auto naive = meshtex::naive_back_project(mesh, views, tex);
    const auto blended = meshtex::adaptive_blend(mesh, views, tex, 300, 0.01);

    // Seam: texels the naive stitch took from different views, plus 2 texels.
    std::vector<int> label(tex * tex, -1);
    for (std::size_t t = 0; t < label.size(); ++t) {
        if (!(naive.coverage[t] > 0.0) || !(blended.coverage[t] > 0.0)) continue;
        label[t] = std::abs(naive.texels[t * 3] - 0.3) < 1e-9 ? 0 : (std::abs(naive.texels[t * 3] - 0.7) < 1e-9 ? 1 : 2);
    }
    std::vector<double> seam(tex * tex, 0.0);
    for (int r = 0; r < tex; ++r)
        for (int c = 0; c + 1 < tex; ++c) {
            const int a = r * tex + c;
            for (int b : {a + 1, a + tex}) {
                if (b >= tex * tex || label[a] < 0 || label[b] < 0 || label[a] == label[b]) continue;
                seam[a] = seam[b] = 1.0;
            }
        }
    const auto grown = meshtex::dilate(seam, tex, tex, 2);
    std::vector<char> band(tex * tex, 0);
    int band_size = 0;
    for (std::size_t t = 0; t < band.size(); ++t) {
        band[t] = grown[t] > 0.0 && label[t] >= 0;
        band_size += band[t];
    }
    const double tv_naive = band_tv(naive.texels, tex, band);
    const double tv_blend = band_tv(blended.texels, tex, band);
    const bool pass = mse <= 1e-4 && band_size > 0 && tv_blend <= 0.7 * tv_naive;
    return {pass, fmt("single-view MSE %.2e, seam-band TV blend/naive %.4f/%.4f = %.3f over %d texels", mse, tv_blend,
                      tv_naive, tv_naive > 0 ? tv_blend / tv_naive : 0.0, band_size)};
}

// ---------------------------------------------------------------------------
// 8. Progressive refinement

// Brute-force ray cast: texels bilinearly touched by the nearest hit of
// every pixel ray in every view.
std::vector<char> visible_texels(const meshtex::Mesh& m, const std::vector<meshtex::RefineView>& views, int tex) {
    std::vector<char> seen(static_cast<std::size_t>(tex) * tex, 0);
    for (const auto& v : views) {
        for (const auto& ray : render::ray_grid(v.camera)) {
            double best = std::numeric_limits<double>::infinity();
            std::array<double, 2> uv{};
            for (const auto& f : m.faces) {
                const Vec3 a = m.vertices[f[0]], e1 = m.vertices[f[1]] - a, e2 = m.vertices[f[2]] - a;
                const Vec3 pv = cross(ray.direction, e2);
                const double det = dot(e1, pv);
                if (std::abs(det) < 1e-14) continue;
                const Vec3 tv = ray.origin - a;
                const double b1 = dot(tv, pv) / det;
                if (b1 < 0.0 || b1 > 1.0) continue;
                const Vec3 qv = cross(tv, e1);
                const double b2 = dot(ray.direction, qv) / det;
                if (b2 < 0.0 || b1 + b2 > 1.0) continue;
                const double t = dot(e2, qv) / det;
                if (t <= 0.0 || t >= best) continue;
                best = t;
                for (int k = 0; k < 2; ++k)
                    uv[k] = (1 - b1 - b2) * m.uv[f[0]][k] + b1 * m.uv[f[1]][k] + b2 * m.uv[f[2]][k];
            }
            if (!std::isfinite(best)) continue;
            const auto fp = meshtex::atlas_taps(uv[0], uv[1], tex);
            for (int k = 0; k < 4; ++k)
                if (fp.weight[k] > meshtex::kFootprintEps) seen[fp.texel[k]] = 1;
        }
    }
    return seen;
}

// Changes every pixel, so anything outside the mask survives only because
// translate() restores it.
class ShiftBackend : public priors::TranslationBackend {
public:
    std::string name() const override { return "shift"; }
    ImageBuffer run(const priors::TranslationRequest& r) override {
        ImageBuffer out = r.image;
        for (double& v : out.pixels) v = std::fmod(v + 0.25, 1.0);
        return out;
    }
};

Outcome progressive_refinement() {
    const int tex = 32, size = 40;
    const auto mesh = test_sphere(16, 0.7);
    meshtex::ScheduleOptions so;
    so.base = view(0, 0, size);
    so.dilation_radius = 2;
    const auto sched = meshtex::build_schedule(so);

    // Schedule shape.
    bool shape = sched.views.size() == 4;
    const double az[] = {0, 90, -90, 180};
    for (std::size_t i = 0; shape && i < 4; ++i) {
        const auto& v = sched.views[i];
        shape = v.azimuth == az[i] && v.mode == (i == 0 ? priors::TranslateMode::img2img : priors::TranslateMode::inpaint) &&
                v.strength == (i == 0 ? 0.6 : 0.4);
    }

    meshtex::TextureAtlas src = meshtex::TextureAtlas::zeros(tex);
    for (std::size_t i = 0; i < src.texels.size(); ++i) src.texels[i] = 0.5 + 0.4 * std::sin(0.37 * static_cast<double>(i));
    std::vector<meshtex::BlendView> views;
    for (const auto& v : sched.views) views.push_back({v.camera, meshtex::rasterize(mesh, src, v.camera).image});
    const auto atlas0 = meshtex::adaptive_blend(mesh, views, tex, 200, 0.01);
    meshtex::RefineOptions ro;
    ro.prompt = "weathered bronze";

    // Identity idempotence.
    priors::IdentityBackend identity;
    const auto ident = meshtex::progressive_refine(mesh, atlas0, sched, identity, ro);
    std::vector<meshtex::BlendView> reblend;
    for (const auto& v : sched.views) reblend.push_back({v.camera, meshtex::rasterize(mesh, atlas0, v.camera).image});
    const auto expect = meshtex::adaptive_blend(mesh, reblend, tex, ro.blend_iters, ro.tv_weight);
    double idem = 0.0;
    for (std::size_t i = 0; i < expect.texels.size(); ++i)
        idem = std::max(idem, std::abs(expect.texels[i] - ident.final_atlas.texels[i]));

    // Mask preservation and refined-set union with a backend that alters everything.
    ShiftBackend shift;
    std::size_t preserved_bad = 0, inpaint_calls = 0;
    const auto shifted = meshtex::progressive_refine(mesh, atlas0, sched, shift, ro, [&](const meshtex::RefineStage& s) {
        if (!s.mask) return;
        ++inpaint_calls;
        for (std::size_t p = 0; p < s.mask->size(); ++p) {
            if ((*s.mask)[p] != 0.0) continue;
            for (int k = 0; k < 3; ++k) {
                const double a = s.refined.pixels[p * 3 + k], b = s.render.pixels[p * 3 + k];
                if (std::memcmp(&a, &b, sizeof a) != 0) ++preserved_bad;
            }
        }
    });
    const auto brute = visible_texels(mesh, sched.views, tex);
    std::size_t mismatch = 0, visible = 0;
    for (std::size_t t = 0; t < brute.size(); ++t) {
        visible += brute[t] != 0;
        mismatch += (brute[t] != 0) != (shifted.final_atlas.refined[t] != 0);
    }
    const bool pass = shape && idem <= 1e-6 && preserved_bad == 0 && inpaint_calls == 3 && mismatch == 0;
    return {pass, fmt("schedule %s, idempotence %.1e, mask-0 changes %zu over %zu inpaint calls, refined vs ray-cast "
                      "mismatch %zu of %zu",
                      shape ? "ok" : "WRONG", idem, preserved_bad, inpaint_calls, mismatch, visible)};
}

// ---------------------------------------------------------------------------
// 9. Determinism and freezing

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome determinism_freezing() {
    const auto base = gan3d::GeneratorParams::create(toy_dims(), 7);
    const PriorSet pri(1.0);
    const fs::path root = fs::temp_directory_path() / "dg3d_acceptance_det";
    bool same = true, frozen = true;
    std::string notes;
    for (Mode mode : {Mode::adaptation, Mode::editing, Mode::avatar}) {
        auto cfg = toy_config(100);
        cfg.cfg_scale = 50.0;
        std::string streams[2];
        trainer::RunResult last;
        for (int rep = 0; rep < 2; ++rep) {
            const fs::path dir = root / (std::string(losses::mode_name(mode)) + std::to_string(rep));
            fs::remove_all(dir);
            last = trainer::run(mode, cfg, pri.get(), base, dir);
            streams[rep] = slurp(dir / "metrics.jsonl");
        }
        same = same && !streams[0].empty() && streams[0] == streams[1];
        // Avatar: the mapping network may differ only by the latent-search finetune.
        std::vector<double> mapping_ref = part_bytes(base, gan3d::Part::mapping);
        if (mode == Mode::avatar) {
            auto search_only = cfg;
            search_only.steps = 0;
            mapping_ref = part_bytes(trainer::run(mode, search_only, pri.get(), base).state.live, gan3d::Part::mapping);
        }
        const bool ok = bytes_equal(part_bytes(last.state.live, gan3d::Part::mapping), mapping_ref) &&
                        bytes_equal(part_bytes(last.state.live, gan3d::Part::decoder), part_bytes(base, gan3d::Part::decoder)) &&
                        bytes_equal(part_bytes(last.state.frozen, gan3d::Part::triplane_gen),
                                    part_bytes(base, gan3d::Part::triplane_gen));
        frozen = frozen && ok;
        notes += std::string(losses::mode_name(mode)) + (ok ? " frozen " : " MOVED ");
    }
    return {same && frozen, fmt("metrics streams %s; %s", same ? "identical" : "DIFFER", notes.c_str())};
}

// ---------------------------------------------------------------------------
// 10. Latent search

Outcome latent_search() {
    const priors::EmbeddingPrior embed;
    int agree = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
        auto params = gan3d::GeneratorParams::create(toy_dims(), 100 + trial);
        trainer::LatentSearchOptions o;
        o.camera = toy_config(0).camera(0.0, 0.0);
        o.render = still(12);
        const std::string prompt = "trial " + std::to_string(trial);
        std::mt19937_64 rng(1000 + trial), oracle(1000 + trial);
        std::vector<double> losses;
        for (int i = 0; i < 16; ++i) {
            const auto z = gan3d::sample_noise(params.dims.latent_dim, oracle);
            losses.push_back(priors::clip_loss(embed, render_latent(params, z, o.camera, 12), prompt));
        }
        std::size_t best = 0;
        for (std::size_t i = 1; i < losses.size(); ++i)
            if (losses[i] < losses[best]) best = i;
        agree += trainer::latent_search(params, prompt, 16, embed, 1, o, rng).selected == best;
    }
    return {agree == trials, fmt("%d/%d trials match the brute-force argmin", agree, trials)};
}

struct Criterion {
    int id;
    const char* name;
    double budget_s;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> all{
        {1, "gradient soundness", 120, gradient_soundness},
        {2, "SDS fixed point", 180, sds_fixed_point},
        {3, "relative distance loss", 600, relative_distance},
        {4, "diffusion-guided reconstruction", 600, recon_locality},
        {5, "learnable triplane", 600, learnable_triplane},
        {6, "geometry", 30, geometry},
        {7, "adaptive blend", 120, adaptive_blend},
        {8, "progressive refinement", 180, progressive_refinement},
        {9, "determinism and freezing", 120, determinism_freezing},
        {10, "latent search", 60, latent_search},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

    int failed = 0;
    for (const auto& c : all) {
        if (!only.empty() && !only.count(c.id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        const bool pass = o.pass && secs <= c.budget_s;
        failed += !pass;
        std::printf("%s %2d %s: %s [%.1fs / %.0fs]\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs,
                    c.budget_s);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
