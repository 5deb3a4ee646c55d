// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dg3d::losses {

// ---------------------------------------------------------------------------
// Score distillation

SdsResult sds_grad(const ImageBuffer& x, const std::string& prompt, int t, const ImageBuffer& eps,
                   const priors::NoiseSchedule& schedule, const priors::ScorePrior& prior, double cfg_scale) {
    if (!x.same_shape(eps)) throw std::invalid_argument("sds_grad: x and eps differ in shape");
    priors::ScoreQuery q{priors::add_noise(x, t, eps, schedule), t, prompt, cfg_scale};
    SdsResult r;
    r.eps_hat = prior.predict(q, schedule);
    r.weight = schedule.weight(t);
    r.grad = ImageBuffer(x.height, x.width, x.channels);
    r.gamma = ImageBuffer(x.height, x.width, x.channels);
    for (std::size_t i = 0; i < x.pixels.size(); ++i) {
        const double g = r.weight * (r.eps_hat.pixels[i] - eps.pixels[i]);
        if (!std::isfinite(g)) throw priors::NonFiniteScore("sds_grad: non-finite gradient at element " + std::to_string(i));
        r.grad.pixels[i] = g;
        r.gamma.pixels[i] = std::abs(g);
    }
    return r;
}

Var sds_node(Graph& g, Var x, const ImageBuffer& grad) {
    if (g.value(x).size() != grad.pixels.size()) throw std::invalid_argument("sds_node: gradient size mismatch");
    auto backward = [grad = grad.pixels](std::span<const double> gout, std::vector<std::span<double>>& gin) {
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < grad.size(); ++i) gin[0][i] += gout[0] * grad[i];
    };
    return g.custom("sds", {x}, {0.0}, {1}, std::move(backward));
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Relative distance

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

void check_four(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    if (a != b || a != c || a != d) throw std::invalid_argument("relative_distance: triplanes differ in size");
}

}  // namespace

double relative_distance(std::span<const double> ti, std::span<const double> tj, std::span<const double> frozen_i,
                         std::span<const double> frozen_j) {
    check_four(ti.size(), tj.size(), frozen_i.size(), frozen_j.size());
    const double den = sq_dist(ti, tj);
    if (den < 1e-12) throw DegeneratePair("relative_distance: finetuned pair distance " + std::to_string(den) + " < 1e-12");
    return std::abs(sq_dist(frozen_i, frozen_j) / den - 1.0);
}

Var relative_distance_node(Graph& g, Var ti, Var tj, std::span<const double> frozen_i,
                           std::span<const double> frozen_j) {
    const auto a = g.value(ti);
    const auto b = g.value(tj);
    check_four(a.size(), b.size(), frozen_i.size(), frozen_j.size());
    const double num = sq_dist(frozen_i, frozen_j);
    const double den = sq_dist(a, b);
    if (den < 1e-12) throw DegeneratePair("relative_distance: finetuned pair distance " + std::to_string(den) + " < 1e-12");
    const double r = num / den;
    std::vector<double> diff(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
    const double sign = r > 1.0 ? 1.0 : (r < 1.0 ? -1.0 : 0.0);
    auto backward = [diff = std::move(diff), coef = sign * (-num / (den * den)) * 2.0](
                        std::span<const double> gout, std::vector<std::span<double>>& gin) {
        const double c = coef * gout[0];
        if (!gin[0].empty())
            for (std::size_t i = 0; i < diff.size(); ++i) gin[0][i] += c * diff[i];
        if (!gin[1].empty())
            for (std::size_t i = 0; i < diff.size(); ++i) gin[1][i] -= c * diff[i];
    };
    return g.custom("relative_distance", {ti, tj}, {std::abs(r - 1.0)}, {1}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Diffusion-guided reconstruction

std::vector<double> gradient_mask(const ImageBuffer& gamma) {
    const std::size_t npix = static_cast<std::size_t>(gamma.height) * gamma.width;
    std::vector<double> h(npix, 0.0);
    double hmax = 0.0;
    for (std::size_t p = 0; p < npix; ++p) {
        double s = 0.0;
        for (int c = 0; c < gamma.channels; ++c) s += gamma.pixels[p * gamma.channels + c];
        h[p] = s / gamma.channels;
        hmax = std::max(hmax, h[p]);
    }
    if (!(hmax > 0.0)) throw DegenerateGradient("gradient mask: max(gamma) is 0");
    for (double& v : h) v = std::clamp(1.0 - v / hmax, 0.0, 1.0);
    return h;
}

double masked_recon(std::span<const double> x, std::span<const double> x_ref, std::span<const double> mask,
                    int channels, double t) {
    if (x.size() != x_ref.size() || x.size() != mask.size() * static_cast<std::size_t>(channels)) {
        throw std::invalid_argument("masked_recon: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = (x[i] - x_ref[i]) * mask[i / channels];
        s += d * d;
    }
    return t * s;
}

double diffusion_guided_recon(const ImageBuffer& x, const ImageBuffer& x_ref, const ImageBuffer& gamma, int t) {
    if (!x.same_shape(x_ref) || !x.same_shape(gamma)) throw std::invalid_argument("diffusion_guided_recon: shape mismatch");
    const auto mask = gradient_mask(gamma);
    return masked_recon(x.pixels, x_ref.pixels, mask, x.channels, t);
}

Var masked_recon_node(Graph& g, Var x, std::vector<double> x_ref, std::vector<double> mask, int channels, double t) {
    const double value = masked_recon(g.value(x), x_ref, mask, channels, t);
    std::vector<double> xv(g.value(x).begin(), g.value(x).end());
    auto backward = [xv = std::move(xv), x_ref = std::move(x_ref), mask = std::move(mask), channels, t](
                        std::span<const double> gout, std::vector<std::span<double>>& gin) {
        if (gin[0].empty()) return;
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double m = mask[i / channels];
            gin[0][i] += gout[0] * 2.0 * t * m * m * (xv[i] - x_ref[i]);
        }
    };
    return g.custom("diffusion_guided_recon", {x}, {value}, {1}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Total variation

double tv2d(std::span<const double> plane, int channels, int resolution) {
    const std::size_t R = static_cast<std::size_t>(resolution);
    if (resolution < 1 || plane.size() != static_cast<std::size_t>(channels) * R * R) {
        throw std::invalid_argument("tv2d: plane size does not match channels x R x R");
    }
    double s = 0.0;
    for (int c = 0; c < channels; ++c) {
        const double* p = plane.data() + c * R * R;
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t q = 0; q < R; ++q) {
                if (q + 1 < R) {
                    const double d = p[r * R + q + 1] - p[r * R + q];
                    s += d * d;
                }
                if (r + 1 < R) {
                    const double d = p[(r + 1) * R + q] - p[r * R + q];
                    s += d * d;
                }
            }
        }
    }
    return s / static_cast<double>(plane.size());
}

void tv2d_grad(std::span<const double> plane, int channels, int resolution, std::span<double> grad) {
    const std::size_t R = static_cast<std::size_t>(resolution);
    const double scale = 2.0 / static_cast<double>(plane.size());
    for (int c = 0; c < channels; ++c) {
        const double* p = plane.data() + c * R * R;
        double* gp = grad.data() + c * R * R;
        for (std::size_t r = 0; r < R; ++r) {
            for (std::size_t q = 0; q < R; ++q) {
                if (q + 1 < R) {
                    const double d = scale * (p[r * R + q + 1] - p[r * R + q]);
                    gp[r * R + q + 1] += d;
                    gp[r * R + q] -= d;
                }
                if (r + 1 < R) {
                    const double d = scale * (p[(r + 1) * R + q] - p[r * R + q]);
                    gp[(r + 1) * R + q] += d;
                    gp[r * R + q] -= d;
                }
            }
        }
    }
}

std::vector<double> avg_pool2(std::span<const double> plane, int channels, int resolution) {
    if (resolution % 2 != 0) throw std::invalid_argument("avg_pool2: odd resolution " + std::to_string(resolution));
    const std::size_t R = static_cast<std::size_t>(resolution), H = R / 2;
    std::vector<double> out(static_cast<std::size_t>(channels) * H * H);
    for (int c = 0; c < channels; ++c) {
        const double* p = plane.data() + c * R * R;
        double* o = out.data() + c * H * H;
        for (std::size_t r = 0; r < H; ++r)
            for (std::size_t q = 0; q < H; ++q)
                o[r * H + q] = 0.25 * (p[2 * r * R + 2 * q] + p[2 * r * R + 2 * q + 1] + p[(2 * r + 1) * R + 2 * q] +
                                       p[(2 * r + 1) * R + 2 * q + 1]);
    }
    return out;
}

namespace {

void check_levels(int resolution, int levels) {
    if (levels < 1) throw std::invalid_argument("multiscale_tv: levels must be >= 1");
    if (levels > 31 || resolution % (1 << (levels - 1)) != 0) {
        throw std::invalid_argument("multiscale_tv: resolution " + std::to_string(resolution) +
                                    " not divisible by 2^" + std::to_string(levels - 1));
    }
}

}  // namespace

double multiscale_tv(std::span<const double> triplane, int channels, int resolution, int levels) {
    check_levels(resolution, levels);
    const std::size_t block = static_cast<std::size_t>(channels) * resolution * resolution;
    if (triplane.size() != 3 * block) throw std::invalid_argument("multiscale_tv: triplane size mismatch");
    double total = 0.0;
    for (int plane = 0; plane < 3; ++plane) {
        std::vector<double> cur(triplane.begin() + plane * block, triplane.begin() + (plane + 1) * block);
        int res = resolution;
        for (int level = 0; level < levels; ++level) {
            total += tv2d(cur, channels, res);
            if (level + 1 < levels) {
                cur = avg_pool2(cur, channels, res);
                res /= 2;
            }
        }
    }
    return total;
}

void multiscale_tv_grad(std::span<const double> triplane, int channels, int resolution, int levels,
                        std::span<double> grad) {
    check_levels(resolution, levels);
    const std::size_t block = static_cast<std::size_t>(channels) * resolution * resolution;
    for (int plane = 0; plane < 3; ++plane) {
        std::vector<std::vector<double>> pyramid{
            std::vector<double>(triplane.begin() + plane * block, triplane.begin() + (plane + 1) * block)};
        std::vector<int> res{resolution};
        for (int level = 1; level < levels; ++level) {
            pyramid.push_back(avg_pool2(pyramid.back(), channels, res.back()));
            res.push_back(res.back() / 2);
        }
        // Walk coarse to fine, pulling the accumulated gradient through each pool.
        std::vector<double> g(pyramid.back().size(), 0.0);
        for (int level = levels - 1; level >= 0; --level) {
            tv2d_grad(pyramid[level], channels, res[level], g);
            if (level == 0) break;
            const std::size_t Rf = static_cast<std::size_t>(res[level - 1]), Rc = Rf / 2;
            std::vector<double> fine(pyramid[level - 1].size(), 0.0);
            for (int c = 0; c < channels; ++c)
                for (std::size_t r = 0; r < Rf; ++r)
                    for (std::size_t q = 0; q < Rf; ++q)
                        fine[c * Rf * Rf + r * Rf + q] = 0.25 * g[c * Rc * Rc + (r / 2) * Rc + q / 2];
            g = std::move(fine);
        }
        for (std::size_t i = 0; i < block; ++i) grad[plane * block + i] += g[i];
    }
}

Var tv2d_node(Graph& g, Var plane, int channels, int resolution) {
    std::vector<double> v(g.value(plane).begin(), g.value(plane).end());
    const double value = tv2d(v, channels, resolution);
    auto backward = [v = std::move(v), channels, resolution](std::span<const double> gout,
                                                             std::vector<std::span<double>>& gin) {
        if (gin[0].empty()) return;
        std::vector<double> gr(v.size(), 0.0);
        tv2d_grad(v, channels, resolution, gr);
        for (std::size_t i = 0; i < v.size(); ++i) gin[0][i] += gout[0] * gr[i];
    };
    return g.custom("tv2d", {plane}, {value}, {1}, std::move(backward));
}

Var multiscale_tv_node(Graph& g, Var triplane, int channels, int resolution, int levels) {
    std::vector<double> v(g.value(triplane).begin(), g.value(triplane).end());
    const double value = multiscale_tv(v, channels, resolution, levels);
    auto backward = [v = std::move(v), channels, resolution, levels](std::span<const double> gout,
                                                                     std::vector<std::span<double>>& gin) {
        if (gin[0].empty()) return;
        std::vector<double> gr(v.size(), 0.0);
        multiscale_tv_grad(v, channels, resolution, levels, gr);
        for (std::size_t i = 0; i < v.size(); ++i) gin[0][i] += gout[0] * gr[i];
    };
    return g.custom("multiscale_tv", {triplane}, {value}, {1}, std::move(backward));
}

// ---------------------------------------------------------------------------
// Composite objectives

const char* mode_name(Mode mode) {
    switch (mode) {
        case Mode::adaptation: return "adaptation";
        case Mode::editing: return "editing";
        case Mode::avatar: return "avatar";
    }
    return "?";
}

namespace {

template <class T>
const T& require(const std::optional<T>& part, const char* name, Mode mode) {
    if (!part) throw std::invalid_argument(std::string(mode_name(mode)) + " objective is missing part '" + name + "'");
    return *part;
}

struct ModeTerm {
    const char* name;
    double weight;
};

ModeTerm mode_term(Mode mode, const LossWeights& w) {
    switch (mode) {
        case Mode::adaptation: return {"l_dis", w.lambda1};
        case Mode::editing: return {"l_diff", w.lambda2};
        case Mode::avatar: return {"l_mstv", w.lambda3};
    }
    return {"?", 0.0};
}

template <class Parts>
const auto& mode_part(const Parts& parts, Mode mode) {
    switch (mode) {
        case Mode::adaptation: return parts.l_dis;
        case Mode::editing: return parts.l_diff;
        default: return parts.l_mstv;
    }
}

}  // namespace

Var composite_objective(Graph& g, Mode mode, const ObjectiveParts& parts, const LossWeights& weights) {
    const Var sds = require(parts.sds, "sds", mode);
    const ModeTerm term = mode_term(mode, weights);
    const Var extra = require(mode_part(parts, mode), term.name, mode);
    if (term.weight < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    if (term.weight == 0.0) return sds;
    return g.add(sds, g.scale(extra, term.weight));
}

double composite_objective(Mode mode, const ObjectiveValues& parts, const LossWeights& weights) {
    const double sds = require(parts.sds, "sds", mode);
    const ModeTerm term = mode_term(mode, weights);
    const double extra = require(mode_part(parts, mode), term.name, mode);
    if (term.weight < 0.0) throw std::invalid_argument("loss weights must be >= 0");
    return sds + term.weight * extra;
}

}  // namespace dg3d::losses
