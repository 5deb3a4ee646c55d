// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dg3d/image.hpp"
#include "dg3d/numgrad.hpp"

namespace dg3d::priors {

enum class WeightRule { one_minus_alpha_bar, constant };

/// Discrete diffusion schedule. Index 0 is the noise-free boundary
/// (alpha_bar = 1); valid training timesteps are 1..total.
struct NoiseSchedule {
    int total = 1000;
    std::vector<double> beta;       // beta[t], t = 1..total (beta[0] unused, 0)
    std::vector<double> alpha_bar;  // alpha_bar[0] = 1
    WeightRule rule = WeightRule::one_minus_alpha_bar;

    static NoiseSchedule linear(int total = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                                WeightRule rule = WeightRule::one_minus_alpha_bar);

    double alpha_bar_at(int t) const;
    /// w_t: 1 - alpha_bar_t, or 1 under the constant rule.
    double weight(int t) const;
};

/// z_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps.
ImageBuffer add_noise(const ImageBuffer& x, int t, const ImageBuffer& eps, const NoiseSchedule& schedule);

struct ScoreQuery {
    ImageBuffer z_t;
    int t = 1;
    std::string prompt;
    double cfg_scale = 1.0;
};

/// Closed-form minimum-MSE noise prediction for data ~ N(mu, var I).
ImageBuffer analytic_score(const ImageBuffer& z_t, double alpha_bar, const ImageBuffer& mu, double var);

/// eps_u + s (eps_c - eps_u).
ImageBuffer cfg_combine(const ImageBuffer& eps_uncond, const ImageBuffer& eps_cond, double scale);

class NonFiniteScore : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Noise-prediction oracle eps_phi(z_t; y, t), guidance included.
class ScorePrior {
public:
    virtual ~ScorePrior() = default;
    virtual ImageBuffer predict(const ScoreQuery& query, const NoiseSchedule& schedule) const = 0;
};

/// Conditional mean for a prompt at a given image size.
using TargetFn = std::function<ImageBuffer(const std::string& prompt, int height, int width)>;

/// Gaussian image population per prompt: N(target(prompt), var I). The
/// unconditional branch uses target("").
class GaussianScorePrior : public ScorePrior {
public:
    explicit GaussianScorePrior(double variance = 1.0, TargetFn target = {});
    ImageBuffer predict(const ScoreQuery& query, const NoiseSchedule& schedule) const override;
    ImageBuffer mean(const std::string& prompt, int height, int width) const;
    double variance() const { return variance_; }

private:
    double variance_;
    TargetFn target_;
};

/// Seeded low-frequency RGB pattern per prompt token, averaged over tokens
/// and squashed into (0.1, 0.9). The empty prompt maps to constant 0.5.
ImageBuffer prompt_image(const std::string& prompt, int height, int width);

/// Lower-cased alphanumeric tokens.
std::vector<std::string> tokenize(const std::string& prompt);

/// Stand-in for a joint image/text embedding: a seeded Gaussian projection of
/// an 8x8 area-downsampled, mean-shifted image, normalized to unit length.
/// Text embeds through prompt_image.
class EmbeddingPrior {
public:
    static constexpr int kGrid = 8;

    explicit EmbeddingPrior(int dim = 32, std::uint64_t seed = 0x5eed);

    int dim() const { return dim_; }
    std::vector<double> image_embed(const ImageBuffer& image) const;
    std::vector<double> text_embed(const std::string& prompt) const;

    /// Unnormalized projection and its adjoint (used by clip gradients).
    std::vector<double> project(const ImageBuffer& image) const;
    void project_adjoint(std::span<const double> embed_grad, ImageBuffer& image_grad) const;

private:
    int dim_;
    std::vector<double> matrix_;  // dim x (kGrid * kGrid * 3)
};

/// 1 - cos(image_embed(image), text_embed(prompt)).
double clip_loss(const EmbeddingPrior& prior, const ImageBuffer& image, const std::string& prompt);

/// Graph node for clip_loss of an H x W x 3 image node.
numgrad::Var clip_node(numgrad::Graph& g, numgrad::Var image, int height, int width, const EmbeddingPrior& prior,
                       const std::string& prompt);

// ---------------------------------------------------------------------------
// Image translation oracle

enum class TranslateMode { img2img, inpaint };

const char* mode_name(TranslateMode mode);

struct TranslationRequest {
    ImageBuffer image;
    ImageBuffer edge_control;
    DepthMap depth_control;
    std::optional<std::vector<double>> mask;  // H x W, 1 = regenerate
    double strength = 0.6;
    std::string prompt;
    std::uint64_t seed = 0;
    double edge_weight = 1.0;
    double depth_weight = 1.0;

    TranslateMode mode() const { return mask ? TranslateMode::inpaint : TranslateMode::img2img; }
};

class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, std::string log)
        : std::runtime_error(what), log_(std::move(log)) {}
    const std::string& log() const { return log_; }

private:
    std::string log_;
};

class TranslationBackend {
public:
    virtual ~TranslationBackend() = default;
    virtual std::string name() const = 0;
    virtual ImageBuffer run(const TranslationRequest& request) = 0;
};

class IdentityBackend : public TranslationBackend {
public:
    std::string name() const override { return "identity"; }
    ImageBuffer run(const TranslationRequest& request) override;
};

/// Blends toward prompt_image(prompt) by `strength`, restricted to the mask
/// in inpaint mode, with a seeded low-amplitude dither.
class ProceduralBackend : public TranslationBackend {
public:
    std::string name() const override { return "procedural"; }
    ImageBuffer run(const TranslationRequest& request) override;
};

/// Runs `command <dir>` where dir holds input.ppm, edge.ppm, depth.pgm,
/// mask.pgm (inpaint only) and request.json; reads dir/output.ppm.
class ExternalBackend : public TranslationBackend {
public:
    explicit ExternalBackend(std::string command);
    std::string name() const override { return "external:" + command_; }
    ImageBuffer run(const TranslationRequest& request) override;

private:
    std::string command_;
    std::mutex mutex_;
};

/// identity | procedural | external:CMD
std::unique_ptr<TranslationBackend> make_backend(const std::string& spec);

/// Sidecar JSON written for the external protocol.
std::string request_json(const TranslationRequest& request);

/// Validates the request, runs the backend, checks the reply shape and, in
/// inpaint mode, restores every pixel whose mask is 0.
ImageBuffer translate(TranslationBackend& backend, const TranslationRequest& request);

}  // namespace dg3d::priors
