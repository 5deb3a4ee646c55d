// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/priors.hpp"

#include <cctype>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace dg3d::priors {

namespace {

void require_same_shape(const ImageBuffer& a, const ImageBuffer& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" + std::to_string(a.height) + "x" +
                                    std::to_string(a.width) + "x" + std::to_string(a.channels) + " vs " +
                                    std::to_string(b.height) + "x" + std::to_string(b.width) + "x" +
                                    std::to_string(b.channels) + ")");
    }
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Schedule

NoiseSchedule NoiseSchedule::linear(int total, double beta_start, double beta_end, WeightRule rule) {
    if (total < 1) throw std::invalid_argument("noise schedule needs at least one step");
    NoiseSchedule s;
    s.total = total;
    s.rule = rule;
    s.beta.assign(static_cast<std::size_t>(total) + 1, 0.0);
    s.alpha_bar.assign(static_cast<std::size_t>(total) + 1, 1.0);
    for (int t = 1; t <= total; ++t) {
        const double frac = total == 1 ? 0.0 : static_cast<double>(t - 1) / (total - 1);
        s.beta[t] = beta_start + (beta_end - beta_start) * frac;
        s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
    }
    return s;
}

double NoiseSchedule::alpha_bar_at(int t) const {
    if (t < 0 || t > total) throw std::out_of_range("timestep " + std::to_string(t) + " outside [0, " +
                                                    std::to_string(total) + "]");
    return alpha_bar[static_cast<std::size_t>(t)];
}

double NoiseSchedule::weight(int t) const {
    return rule == WeightRule::constant ? 1.0 : 1.0 - alpha_bar_at(t);
}

ImageBuffer add_noise(const ImageBuffer& x, int t, const ImageBuffer& eps, const NoiseSchedule& schedule) {
    require_same_shape(x, eps, "add_noise");
    const double ab = schedule.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    ImageBuffer z = x;
    for (std::size_t i = 0; i < z.pixels.size(); ++i) z.pixels[i] = a * x.pixels[i] + b * eps.pixels[i];
    return z;
}

ImageBuffer analytic_score(const ImageBuffer& z_t, double alpha_bar, const ImageBuffer& mu, double var) {
    if (!(var > 0.0)) throw std::invalid_argument("analytic_score: variance must be > 0");
    require_same_shape(z_t, mu, "analytic_score");
    const double sa = std::sqrt(alpha_bar);
    const double num = std::sqrt(1.0 - alpha_bar);
    const double den = alpha_bar * var + 1.0 - alpha_bar;
    ImageBuffer eps = z_t;
    for (std::size_t i = 0; i < eps.pixels.size(); ++i) eps.pixels[i] = num * (z_t.pixels[i] - sa * mu.pixels[i]) / den;
    return eps;
}

ImageBuffer cfg_combine(const ImageBuffer& eps_uncond, const ImageBuffer& eps_cond, double scale) {
    require_same_shape(eps_uncond, eps_cond, "cfg_combine");
    ImageBuffer out = eps_cond;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = eps_uncond.pixels[i] + scale * (eps_cond.pixels[i] - eps_uncond.pixels[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian prior

GaussianScorePrior::GaussianScorePrior(double variance, TargetFn target)
    : variance_(variance), target_(std::move(target)) {
    if (!(variance > 0.0)) throw std::invalid_argument("GaussianScorePrior: variance must be > 0");
    if (!target_) target_ = [](const std::string& p, int h, int w) { return prompt_image(p, h, w); };
}

ImageBuffer GaussianScorePrior::mean(const std::string& prompt, int height, int width) const {
    return target_(prompt, height, width);
}

ImageBuffer GaussianScorePrior::predict(const ScoreQuery& q, const NoiseSchedule& schedule) const {
    const double ab = schedule.alpha_bar_at(q.t);
    ImageBuffer cond = analytic_score(q.z_t, ab, mean(q.prompt, q.z_t.height, q.z_t.width), variance_);
    ImageBuffer out;
    if (q.cfg_scale == 1.0) {
        out = std::move(cond);
    } else {
        const ImageBuffer uncond = analytic_score(q.z_t, ab, mean("", q.z_t.height, q.z_t.width), variance_);
        out = cfg_combine(uncond, cond, q.cfg_scale);
    }
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        if (!std::isfinite(out.pixels[i])) {
            throw NonFiniteScore("score prior produced a non-finite value at element " + std::to_string(i));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompt synthesizer

std::vector<std::string> tokenize(const std::string& prompt) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char ch : prompt) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            tokens.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(std::move(cur));
    return tokens;
}

ImageBuffer prompt_image(const std::string& prompt, int height, int width) {
    ImageBuffer img(height, width, 3, 0.5);
    const auto tokens = tokenize(prompt);
    if (tokens.empty()) return img;

    struct Wave {
        double fx, fy, phase, amp;
    };
    std::vector<std::array<double, 3>> bias;
    std::vector<std::array<std::array<Wave, 3>, 3>> waves;
    for (const auto& tok : tokens) {
        std::mt19937_64 rng(fnv1a(tok));
        std::uniform_real_distribution<double> freq(-2.0, 2.0), phase(0.0, 2.0 * std::numbers::pi), amp(0.5, 1.0);
        std::normal_distribution<double> normal(0.0, 0.5);
        std::array<double, 3> b{};
        std::array<std::array<Wave, 3>, 3> w{};
        for (int c = 0; c < 3; ++c) {
            b[c] = normal(rng);
            for (auto& wave : w[c]) wave = {freq(rng), freq(rng), phase(rng), amp(rng)};
        }
        bias.push_back(b);
        waves.push_back(w);
    }
    const double inv = 1.0 / static_cast<double>(tokens.size());
    for (int y = 0; y < height; ++y) {
        const double v = (y + 0.5) / height;
        for (int x = 0; x < width; ++x) {
            const double u = (x + 0.5) / width;
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (std::size_t k = 0; k < tokens.size(); ++k) {
                    acc += bias[k][c];
                    for (const auto& wv : waves[k][c]) {
                        acc += wv.amp * std::sin(2.0 * std::numbers::pi * (wv.fx * u + wv.fy * v) + wv.phase);
                    }
                }
                img.at(y, x, c) = 0.5 + 0.4 * std::tanh(acc * inv / 1.5);
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Embedding prior

EmbeddingPrior::EmbeddingPrior(int dim, std::uint64_t seed) : dim_(dim) {
    if (dim < 1) throw std::invalid_argument("embedding dimension must be >= 1");
    constexpr int in = kGrid * kGrid * 3;
    matrix_.resize(static_cast<std::size_t>(dim) * in);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
    for (auto& v : matrix_) v = normal(rng);
}

namespace {

// Cell of pixel y for a size-n axis split into kGrid cells.
inline int cell_of(int y, int n) { return y * EmbeddingPrior::kGrid / n; }

std::vector<double> downsample(const ImageBuffer& image, std::vector<int>& counts) {
    constexpr int G = EmbeddingPrior::kGrid;
    if (image.channels != 3) throw std::invalid_argument("embedding expects a 3-channel image");
    std::vector<double> cells(static_cast<std::size_t>(G) * G * 3, 0.0);
    counts.assign(static_cast<std::size_t>(G) * G, 0);
    for (int y = 0; y < image.height; ++y) {
        const int cy = cell_of(y, image.height);
        for (int x = 0; x < image.width; ++x) {
            const int cell = cy * G + cell_of(x, image.width);
            ++counts[cell];
            for (int c = 0; c < 3; ++c) cells[cell * 3 + c] += image.at(y, x, c);
        }
    }
    for (int cell = 0; cell < G * G; ++cell) {
        for (int c = 0; c < 3; ++c) {
            cells[cell * 3 + c] = counts[cell] > 0 ? cells[cell * 3 + c] / counts[cell] - 0.5 : 0.0;
        }
    }
    return cells;
}

std::vector<double> unit(std::vector<double> v, const char* what) {
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (!(n2 > 0.0) || !std::isfinite(n2)) throw std::domain_error(std::string(what) + ": zero-norm embedding");
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    return v;
}

}  // namespace

std::vector<double> EmbeddingPrior::project(const ImageBuffer& image) const {
    std::vector<int> counts;
    const std::vector<double> cells = downsample(image, counts);
    const std::size_t in = cells.size();
    std::vector<double> e(static_cast<std::size_t>(dim_), 0.0);
    for (int d = 0; d < dim_; ++d) {
        const double* row = matrix_.data() + static_cast<std::size_t>(d) * in;
        double acc = 0.0;
        for (std::size_t i = 0; i < in; ++i) acc += row[i] * cells[i];
        e[d] = acc;
    }
    return e;
}

void EmbeddingPrior::project_adjoint(std::span<const double> embed_grad, ImageBuffer& image_grad) const {
    constexpr int G = kGrid;
    const std::size_t in = static_cast<std::size_t>(G) * G * 3;
    std::vector<double> cell_grad(in, 0.0);
    for (int d = 0; d < dim_; ++d) {
        const double g = embed_grad[d];
        const double* row = matrix_.data() + static_cast<std::size_t>(d) * in;
        for (std::size_t i = 0; i < in; ++i) cell_grad[i] += row[i] * g;
    }
    std::vector<int> counts(static_cast<std::size_t>(G) * G, 0);
    for (int y = 0; y < image_grad.height; ++y)
        for (int x = 0; x < image_grad.width; ++x) ++counts[cell_of(y, image_grad.height) * G + cell_of(x, image_grad.width)];
    for (int y = 0; y < image_grad.height; ++y) {
        const int cy = cell_of(y, image_grad.height);
        for (int x = 0; x < image_grad.width; ++x) {
            const int cell = cy * G + cell_of(x, image_grad.width);
            for (int c = 0; c < 3; ++c) image_grad.at(y, x, c) += cell_grad[cell * 3 + c] / counts[cell];
        }
    }
}

std::vector<double> EmbeddingPrior::image_embed(const ImageBuffer& image) const {
    return unit(project(image), "image_embed");
}

std::vector<double> EmbeddingPrior::text_embed(const std::string& prompt) const {
    return unit(project(prompt_image(prompt, 4 * kGrid, 4 * kGrid)), "text_embed");
}

double clip_loss(const EmbeddingPrior& prior, const ImageBuffer& image, const std::string& prompt) {
    const auto a = prior.image_embed(image);
    const auto b = prior.text_embed(prompt);
    double cos = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) cos += a[i] * b[i];
    return 1.0 - cos;
}

numgrad::Var clip_node(numgrad::Graph& g, numgrad::Var image, int height, int width, const EmbeddingPrior& prior,
                       const std::string& prompt) {
    ImageBuffer img(height, width, 3);
    const auto v = g.value(image);
    if (v.size() != img.pixels.size()) throw std::invalid_argument("clip_node: image node size mismatch");
    std::copy(v.begin(), v.end(), img.pixels.begin());
    const std::vector<double> e = prior.project(img);
    const std::vector<double> text = prior.text_embed(prompt);
    double n2 = 0.0;
    for (double x : e) n2 += x * x;
    if (!(n2 > 0.0)) throw std::domain_error("clip_node: zero-norm image embedding");
    const double n = std::sqrt(n2);
    double cos = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) cos += e[i] / n * text[i];

    auto backward = [&prior, e, text, n, cos, height, width](std::span<const double> gout,
                                                              std::vector<std::span<double>>& gin) {
        if (gin[0].empty()) return;
        // d(1 - u.t)/de = -(t - (u.t) u) / |e|
        std::vector<double> ge(e.size());
        for (std::size_t i = 0; i < e.size(); ++i) ge[i] = -gout[0] * (text[i] - cos * e[i] / n) / n;
        ImageBuffer grad(height, width, 3);
        prior.project_adjoint(ge, grad);
        for (std::size_t i = 0; i < grad.pixels.size(); ++i) gin[0][i] += grad.pixels[i];
    };
    return g.custom("clip_loss", {image}, {1.0 - cos}, {1}, std::move(backward));
}

}  // namespace dg3d::priors
