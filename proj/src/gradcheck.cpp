// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>

#include "dg3d/gan3d.hpp"
#include "dg3d/losses.hpp"
#include "dg3d/meshtex.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/render.hpp"

namespace dg3d::gradcheck {

using numgrad::Graph;
using numgrad::ParamBuffer;
using numgrad::Var;

namespace {

std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

std::vector<double> fixed_weights(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    return uniform(rng, n, -1.0, 1.0);
}

// <weights, node> as a scalar node.
Var weighted_sum(Graph& g, Var node, const std::vector<double>& weights) {
    return g.sum(g.mul(node, g.constant(weights, g.shape(node))));
}

// Wraps a graph built over `buffers(state)` as a DifferentiableFn of their
// concatenated values.
template <class State>
numgrad::DifferentiableFn graph_probe(std::shared_ptr<State> state,
                                      std::function<std::vector<ParamBuffer*>(State&)> buffers,
                                      std::function<Var(Graph&, State&)> build) {
    return [state, buffers, build](std::span<const double> x, std::span<double> grad) {
        auto bufs = buffers(*state);
        std::size_t off = 0;
        for (ParamBuffer* b : bufs) {
            std::copy(x.begin() + off, x.begin() + off + b->size(), b->values.begin());
            off += b->size();
        }
        Graph g;
        const Var out = build(g, *state);
        const double value = g.item(out);
        if (!grad.empty()) {
            for (ParamBuffer* b : bufs) b->zero_grad();
            g.backward(out);
            off = 0;
            for (ParamBuffer* b : bufs) {
                std::copy(b->grad.begin(), b->grad.end(), grad.begin() + off);
                off += b->size();
            }
        }
        return value;
    };
}

gan3d::GanDims tiny_dims() {
    gan3d::GanDims d;
    d.latent_dim = 4;
    d.channels = 2;
    d.resolution = 5;
    d.base_resolution = 3;
    d.hidden = 6;
    d.decoder_hidden = 6;
    return d;
}

render::Camera tiny_camera(int size) {
    render::Camera c;
    c.azimuth = 20.0;
    c.elevation = 10.0;
    c.radius = 2.7;
    c.fov_y = 30.0;
    c.height = size;
    c.width = size;
    return c;
}

std::vector<ParamBuffer*> stack_buffers(gan3d::DenseStack& s) {
    std::vector<ParamBuffer*> out;
    for (auto& l : s.layers) {
        out.push_back(&l.weight);
        out.push_back(&l.bias);
    }
    return out;
}

std::vector<double> stack_values(const gan3d::DenseStack& s) {
    std::vector<double> v;
    for (const auto& l : s.layers) {
        v.insert(v.end(), l.weight.values.begin(), l.weight.values.end());
        v.insert(v.end(), l.bias.values.begin(), l.bias.values.end());
    }
    return v;
}

// Random perturbation around a reference parameter vector.
std::function<std::vector<double>(std::mt19937_64&)> around(std::vector<double> base, double scale) {
    return [base = std::move(base), scale](std::mt19937_64& rng) {
        std::normal_distribution<double> n(0.0, scale);
        std::vector<double> v = base;
        for (double& x : v) x += n(rng);
        return v;
    };
}

Entry triplane_values_entry() {
    const int C = 2, R = 5;
    const Vec3 p{0.31, -0.47, 0.12};
    const auto w = fixed_weights(C, 11);
    Entry e;
    e.name = "triplane_sampling";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        gan3d::TriplaneGrid tp = gan3d::TriplaneGrid::zeros(C, R);
        tp.values.assign(x.begin(), x.end());
        const auto f = render::sample_triplane(tp, p);
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
            render::sample_triplane_adjoint(tp, p, w, grad, nullptr);
        }
        return std::inner_product(f.begin(), f.end(), w.begin(), 0.0);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, gan3d::TriplaneGrid::element_count(C, R), -1, 1); };
    return e;
}

Entry triplane_point_entry() {
    const int C = 2, R = 5;
    std::mt19937_64 rng(12);
    gan3d::TriplaneGrid tp = gan3d::TriplaneGrid::zeros(C, R);
    tp.values = uniform(rng, tp.values.size(), -1, 1);
    const auto w = fixed_weights(C, 13);
    Entry e;
    e.name = "triplane_sampling_point";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        const Vec3 p{x[0], x[1], x[2]};
        const auto f = render::sample_triplane(tp, p);
        if (!grad.empty()) {
            std::vector<double> plane_grad(tp.values.size(), 0.0);
            Vec3 pg;
            render::sample_triplane_adjoint(tp, p, w, plane_grad, &pg);
            grad[0] = pg.x;
            grad[1] = pg.y;
            grad[2] = pg.z;
        }
        return std::inner_product(f.begin(), f.end(), w.begin(), 0.0);
    };
    e.point = [](std::mt19937_64& r) { return uniform(r, 3, -0.9, 0.9); };
    return e;
}

Entry compositing_entry() {
    const std::size_t n = 6;
    const std::array<double, 3> w{0.7, -0.4, 0.9};
    Entry e;
    e.name = "compositing";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        std::vector<render::RaySample> s(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i].sigma = x[i];
            for (int c = 0; c < 3; ++c) s[i].rgb[c] = x[n + 3 * i + c];
            s[i].delta = 0.1 + 0.02 * static_cast<double>(i);
            s[i].t = 2.0 + 0.1 * static_cast<double>(i);
        }
        const auto r = render::composite(s);
        if (!grad.empty()) {
            const auto cg = render::composite_backward(s, w);
            for (std::size_t i = 0; i < n; ++i) {
                grad[i] = cg.sigma[i];
                for (int c = 0; c < 3; ++c) grad[n + 3 * i + c] = cg.rgb[i][c];
            }
        }
        return w[0] * r.rgb[0] + w[1] * r.rgb[1] + w[2] * r.rgb[2];
    };
    e.point = [=](std::mt19937_64& rng) {
        auto v = uniform(rng, n, 0.0, 5.0);
        auto c = uniform(rng, 3 * n, 0.0, 1.0);
        v.insert(v.end(), c.begin(), c.end());
        return v;
    };
    return e;
}

struct RenderState {
    gan3d::GeneratorParams params;
    ParamBuffer planes;
    std::vector<double> weights;
};

std::shared_ptr<RenderState> render_state(std::uint64_t seed) {
    auto st = std::make_shared<RenderState>();
    st->params = gan3d::GeneratorParams::create(tiny_dims(), seed);
    const auto d = tiny_dims();
    std::mt19937_64 rng(seed + 1);
    st->planes = ParamBuffer("planes", {3, static_cast<std::size_t>(d.channels), static_cast<std::size_t>(d.resolution),
                                        static_cast<std::size_t>(d.resolution)},
                             uniform(rng, gan3d::TriplaneGrid::element_count(d.channels, d.resolution), -1, 1));
    st->weights = fixed_weights(3 * 3 * 3, seed + 2);
    return st;
}

render::RenderOptions tiny_render_options() {
    render::RenderOptions o;
    o.samples = 8;
    o.seed = 5;
    o.stratified = true;
    return o;
}

Entry decoder_entry() {
    auto st = render_state(21);
    st->planes.trainable = false;
    Entry e;
    e.name = "decoder";
    e.fn = graph_probe<RenderState>(
        st, [](RenderState& s) { return stack_buffers(s.params.decoder); },
        [](Graph& g, RenderState& s) {
            const auto d = s.params.dims;
            const Var tp = g.input(s.planes);
            const Var img =
                render::render_node(g, s.params.decoder, tp, d.channels, d.resolution, tiny_camera(3), tiny_render_options());
            return weighted_sum(g, img, s.weights);
        });
    e.point = around(stack_values(st->params.decoder), 0.05);
    return e;
}

Entry render_entry() {
    auto st = render_state(31);
    Entry e;
    e.name = "volume_rendering";
    e.fn = graph_probe<RenderState>(
        st, [](RenderState& s) { return std::vector<ParamBuffer*>{&s.planes}; },
        [](Graph& g, RenderState& s) {
            const auto d = s.params.dims;
            const Var tp = g.leaf(s.planes);
            const gan3d::DenseStack& dec = s.params.decoder;
            const Var img = render::render_node(g, dec, tp, d.channels, d.resolution, tiny_camera(3), tiny_render_options());
            return weighted_sum(g, img, s.weights);
        });
    e.point = around(st->planes.values, 0.5);
    e.max_coordinates = 40;
    return e;
}

struct GenState {
    gan3d::GeneratorParams params;
    ParamBuffer input;
    std::vector<double> weights;
};

Entry mapping_entry() {
    auto st = std::make_shared<GenState>();
    st->params = gan3d::GeneratorParams::create(tiny_dims(), 41);
    std::mt19937_64 rng(42);
    st->input = ParamBuffer("z", {4}, uniform(rng, 4, -1, 1), false);
    st->weights = fixed_weights(4, 43);
    Entry e;
    e.name = "mapping";
    e.fn = graph_probe<GenState>(
        st, [](GenState& s) { return stack_buffers(s.params.mapping); },
        [](Graph& g, GenState& s) {
            return weighted_sum(g, gan3d::mapping_node(g, s.params, g.input(s.input)), s.weights);
        });
    e.point = around(stack_values(st->params.mapping), 0.05);
    return e;
}

Entry triplane_generator_entry() {
    auto st = std::make_shared<GenState>();
    st->params = gan3d::GeneratorParams::create(tiny_dims(), 51);
    std::mt19937_64 rng(52);
    st->input = ParamBuffer("w", {4}, uniform(rng, 4, -1, 1), false);
    const auto d = tiny_dims();
    st->weights = fixed_weights(gan3d::TriplaneGrid::element_count(d.channels, d.resolution), 53);
    Entry e;
    e.name = "triplane_generator";
    e.fn = graph_probe<GenState>(
        st, [](GenState& s) { return stack_buffers(s.params.triplane_gen); },
        [](Graph& g, GenState& s) {
            return weighted_sum(g, gan3d::triplane_node(g, s.params, g.input(s.input)), s.weights);
        });
    e.point = around(stack_values(st->params.triplane_gen), 0.05);
    e.max_coordinates = 40;
    return e;
}

Entry upsample_entry() {
    const int C = 2, base = 3, full = 7;
    const auto w = fixed_weights(gan3d::TriplaneGrid::element_count(C, full), 61);
    Entry e;
    e.name = "upsample";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        const auto up = gan3d::upsample_planes(x, C, base, full);
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
            gan3d::upsample_planes_adjoint(w, grad, C, base, full);
        }
        return std::inner_product(up.begin(), up.end(), w.begin(), 0.0);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, gan3d::TriplaneGrid::element_count(C, base), -1, 1); };
    return e;
}

Entry rasterization_entry() {
    using namespace meshtex;
    const int tex = 4;
    auto sphere = marching_cubes([](const Vec3& p) { return 0.6 - norm(p); }, 8, 0.0);
    const Mesh mesh = cylinder_unwrap(*sphere);
    const Raster raster = rasterize_geometry(mesh, tiny_camera(6), tex);
    const auto w = fixed_weights(6 * 6 * 3, 71);
    Entry e;
    e.name = "rasterization";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        ParamBuffer texels("texels", {static_cast<std::size_t>(tex * tex), 3}, std::vector<double>(x.begin(), x.end()));
        Graph g;
        const Var out = weighted_sum(g, rasterize_node(g, g.leaf(texels), raster), w);
        if (!grad.empty()) {
            texels.zero_grad();
            g.backward(out);
            std::copy(texels.grad.begin(), texels.grad.end(), grad.begin());
        }
        return g.item(out);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, tex * tex * 3, 0, 1); };
    return e;
}

Entry relative_distance_entry() {
    const std::size_t n = 12;
    std::mt19937_64 rng(81);
    const auto fi = uniform(rng, n, -1, 1);
    const auto fj = uniform(rng, n, -1, 1);
    Entry e;
    e.name = "relative_distance";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        ParamBuffer ti("ti", {n}, std::vector<double>(x.begin(), x.begin() + n));
        ParamBuffer tj("tj", {n}, std::vector<double>(x.begin() + n, x.end()));
        Graph g;
        const Var out = losses::relative_distance_node(g, g.leaf(ti), g.leaf(tj), fi, fj);
        if (!grad.empty()) {
            ti.zero_grad();
            tj.zero_grad();
            g.backward(out);
            std::copy(ti.grad.begin(), ti.grad.end(), grad.begin());
            std::copy(tj.grad.begin(), tj.grad.end(), grad.begin() + n);
        }
        return g.item(out);
    };
    e.point = [=](std::mt19937_64& r) { return uniform(r, 2 * n, -1, 1); };
    return e;
}

Entry diffusion_recon_entry() {
    const int H = 3, W = 4;
    std::mt19937_64 rng(91);
    ImageBuffer gamma(H, W, 3);
    gamma.pixels = uniform(rng, gamma.pixels.size(), 0, 1);
    const auto mask = losses::gradient_mask(gamma);
    const auto ref = uniform(rng, static_cast<std::size_t>(H) * W * 3, 0, 1);
    Entry e;
    e.name = "diffusion_guided_recon";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        ParamBuffer img("x", {static_cast<std::size_t>(H), static_cast<std::size_t>(W), 3},
                        std::vector<double>(x.begin(), x.end()));
        Graph g;
        const Var out = losses::masked_recon_node(g, g.leaf(img), ref, mask, 3, 0.5);
        if (!grad.empty()) {
            img.zero_grad();
            g.backward(out);
            std::copy(img.grad.begin(), img.grad.end(), grad.begin());
        }
        return g.item(out);
    };
    e.point = [=](std::mt19937_64& r) { return uniform(r, static_cast<std::size_t>(H) * W * 3, 0, 1); };
    return e;
}

Entry tv2d_entry() {
    const int C = 2, R = 5;
    Entry e;
    e.name = "tv2d";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
            losses::tv2d_grad(x, C, R, grad);
        }
        return losses::tv2d(x, C, R);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, static_cast<std::size_t>(C) * R * R, -1, 1); };
    return e;
}

Entry multiscale_tv_entry() {
    const int C = 2, R = 8, L = 3;
    Entry e;
    e.name = "multiscale_tv";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        if (!grad.empty()) {
            std::fill(grad.begin(), grad.end(), 0.0);
            losses::multiscale_tv_grad(x, C, R, L, grad);
        }
        return losses::multiscale_tv(x, C, R, L);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, gan3d::TriplaneGrid::element_count(C, R), -1, 1); };
    return e;
}

Entry clip_entry() {
    const int H = 8, W = 8;
    auto prior = std::make_shared<priors::EmbeddingPrior>();
    Entry e;
    e.name = "clip_loss";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        ParamBuffer img("image", {H, W, 3}, std::vector<double>(x.begin(), x.end()));
        Graph g;
        const Var out = priors::clip_node(g, g.leaf(img), H, W, *prior, "a smiling face");
        if (!grad.empty()) {
            img.zero_grad();
            g.backward(out);
            std::copy(img.grad.begin(), img.grad.end(), grad.begin());
        }
        return g.item(out);
    };
    e.point = [=](std::mt19937_64& rng) { return uniform(rng, static_cast<std::size_t>(H) * W * 3, 0, 1); };
    return e;
}

// log N(z; sqrt(ab) mu, (ab var + 1 - ab) I) against the score identity
// eps_hat = -sqrt(1 - ab) grad log p.
Entry gaussian_score_entry() {
    const int H = 2, W = 2;
    const double ab = 0.6, var = 0.7;
    std::mt19937_64 rng(101);
    ImageBuffer mu(H, W, 3);
    mu.pixels = uniform(rng, mu.pixels.size(), 0, 1);
    Entry e;
    e.name = "gaussian_score";
    e.fn = [=](std::span<const double> x, std::span<double> grad) {
        ImageBuffer z(H, W, 3);
        z.pixels.assign(x.begin(), x.end());
        const double s2 = ab * var + 1.0 - ab;
        double logp = 0.0;
        for (std::size_t i = 0; i < z.pixels.size(); ++i) {
            const double d = z.pixels[i] - std::sqrt(ab) * mu.pixels[i];
            logp += -0.5 * d * d / s2 - 0.5 * std::log(2.0 * std::numbers::pi * s2);
        }
        if (!grad.empty()) {
            const ImageBuffer eps = priors::analytic_score(z, ab, mu, var);
            for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = -eps.pixels[i] / std::sqrt(1.0 - ab);
        }
        return logp;
    };
    e.point = [=](std::mt19937_64& r) { return uniform(r, static_cast<std::size_t>(H) * W * 3, -2, 2); };
    return e;
}

}  // namespace

bool Report::passed() const {
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const Row& r) { return r.passed; });
}

std::string Report::to_text() const {
    std::ostringstream out;
    for (const auto& r : rows) {
        out << (r.passed ? "ok   " : "FAIL ") << r.name << " points=" << r.points << " max_rel_err=" << r.max_rel_error
            << " worst_coord=" << r.worst_index << " analytic=" << r.analytic << " numeric=" << r.numeric << '\n';
    }
    out << (passed() ? "all operations within " : "gradient check failed, tolerance ") << tolerance << '\n';
    return out.str();
}

std::vector<Entry> default_roster() {
    std::vector<Entry> r;
    r.push_back(triplane_values_entry());
    r.push_back(triplane_point_entry());
    r.push_back(decoder_entry());
    r.push_back(compositing_entry());
    r.push_back(render_entry());
    r.push_back(mapping_entry());
    r.push_back(triplane_generator_entry());
    r.push_back(upsample_entry());
    r.push_back(rasterization_entry());
    r.push_back(relative_distance_entry());
    r.push_back(diffusion_recon_entry());
    r.push_back(tv2d_entry());
    r.push_back(multiscale_tv_entry());
    r.push_back(clip_entry());
    r.push_back(gaussian_score_entry());
    return r;
}

Report run_gradcheck(const std::vector<Entry>& entries, int points, double tolerance, std::uint64_t seed) {
    Report report;
    report.tolerance = tolerance;
    std::mt19937_64 rng(seed);
    for (const auto& e : entries) {
        Row row;
        row.name = e.name;
        row.points = points;
        bool finite = true;
        for (int p = 0; p < points; ++p) {
            const std::vector<double> x = e.point(rng);
            std::vector<std::size_t> coords(x.size());
            std::iota(coords.begin(), coords.end(), 0);
            if (e.max_coordinates > 0 && e.max_coordinates < coords.size()) {
                std::shuffle(coords.begin(), coords.end(), rng);
                coords.resize(e.max_coordinates);
                std::sort(coords.begin(), coords.end());
            }
            const auto r = numgrad::fd_check(e.fn, x, coords);
            if (!std::isfinite(r.max_rel_error)) finite = false;
            if (p == 0 || !(r.max_rel_error <= row.max_rel_error)) {
                row.max_rel_error = r.max_rel_error;
                row.worst_index = r.worst_index;
                row.analytic = r.analytic;
                row.numeric = r.numeric;
            }
        }
        row.passed = finite && row.max_rel_error <= tolerance;
        report.rows.push_back(row);
    }
    return report;
}

}  // namespace dg3d::gradcheck
