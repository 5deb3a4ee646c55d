// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dg3d/gan3d.hpp"
#include "dg3d/losses.hpp"
#include "dg3d/numgrad.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/render.hpp"

namespace dg3d::trainer {

using gan3d::GeneratorParams;
using gan3d::LatentCode;
using gan3d::LearnableTriplane;
using losses::LossWeights;
using losses::Mode;
using render::Camera;

/// Invalid configuration value; `key` names the offending entry.
class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string key, const std::string& what)
        : std::invalid_argument(key + ": " + what), key_(std::move(key)) {}
    const std::string& key() const { return key_; }

private:
    std::string key_;
};

struct PoseSpan {
    double azimuth_min = -180.0;
    double azimuth_max = 180.0;
    double elevation_min = -30.0;
    double elevation_max = 30.0;
};

struct TrainConfig {
    int steps = 10000;
    int batch = 1;
    double lr = 1e-4;
    int t_min = 300;
    int t_max = 800;
    double cfg_scale = 50.0;
    PoseSpan pose;
    LossWeights weights;
    std::uint64_t seed = 0;
    int snapshot_interval = 0;  // 0 disables periodic snapshots
    std::string prompt = "a portrait in the target style";

    // Training renders.
    int resolution = 64;
    int samples = 48;
    double camera_radius = 2.7;
    double fov_y = 30.0;

    // Editing: optional smoothing of gamma over iterations.
    bool gamma_ema = false;
    double gamma_ema_decay = 0.95;

    // Avatar.
    bool learnable_triplane = true;
    int mstv_levels = 3;
    int latent_k = 16;
    int latent_steps = 100;
    double latent_lr = 1e-3;

    /// When non-empty, noise codes are drawn uniformly from this pool instead
    /// of N(0, I).
    std::vector<std::vector<double>> latent_pool;

    /// Write wall-clock step time into metrics; off by default so metric
    /// streams are reproducible byte for byte.
    bool record_timing = false;

    void validate(int schedule_total, int latent_dim) const;
    Camera camera(double azimuth, double elevation) const;
};

struct Priors {
    const priors::NoiseSchedule* schedule = nullptr;
    const priors::ScorePrior* score = nullptr;
    const priors::EmbeddingPrior* embed = nullptr;
};

/// Uniform azimuth and elevation over the configured span.
Camera sample_view(const TrainConfig& config, std::mt19937_64& rng);

struct PrevBatch {
    LatentCode w;
    std::vector<double> frozen_triplane;
};

struct TrainState {
    Mode mode = Mode::adaptation;
    GeneratorParams live;
    GeneratorParams frozen;
    std::optional<LearnableTriplane> residual;
    numgrad::Adam optimizer;
    std::optional<PrevBatch> prev;
    std::optional<LatentCode> fixed_w;  // avatar: the searched style code
    std::optional<ImageBuffer> gamma_ema;
    std::mt19937_64 rng;
    std::int64_t step = 0;

    static TrainState create(const GeneratorParams& base, Mode mode, const TrainConfig& config);
    std::vector<numgrad::ParamBuffer*> trainable_buffers();
};

struct StepMetrics {
    std::int64_t step = 0;
    Mode mode = Mode::adaptation;
    double loss_sds_gradnorm = 0.0;
    double l_dis = 0.0;
    double l_diff = 0.0;
    double l_mstv = 0.0;
    double pairwise_triplane_dist = 0.0;
    int t = 0;
    double elapsed_ms = 0.0;

    std::string to_json() const;
};

StepMetrics adapt_step(TrainState& state, const TrainConfig& config, const Priors& priors);
StepMetrics edit_step(TrainState& state, const TrainConfig& config, const Priors& priors);
StepMetrics avatar_step(TrainState& state, const TrainConfig& config, const Priors& priors);
StepMetrics train_step(TrainState& state, const TrainConfig& config, const Priors& priors);

struct LatentSearchResult {
    std::size_t selected = 0;
    std::vector<LatentCode> candidates;
    std::vector<double> losses;
    std::vector<double> finetune_losses;
    LatentCode w;
};

/// Index of the smallest loss (first on ties).
std::size_t argmin_loss(std::span<const double> losses);

struct LatentSearchOptions {
    Camera camera;
    render::RenderOptions render;
    double lr = 1e-3;
};

/// Scores k noise draws by clip_loss of their front render, then finetunes
/// only the mapping network on the winner for m_steps.
LatentSearchResult latent_search(GeneratorParams& params, const std::string& prompt, int k,
                                 const priors::EmbeddingPrior& embed, int m_steps, const LatentSearchOptions& options,
                                 std::mt19937_64& rng);

/// Style code used for snapshot renders (fixed per seed, or the avatar's w').
LatentCode snapshot_latent(const TrainState& state, const TrainConfig& config);

/// Tensors for a resumable/renderable checkpoint: generator, residual,
/// snapshot latent and camera.
std::vector<NamedTensor> checkpoint_tensors(const TrainState& state, const TrainConfig& config);

/// Front, right, back and left views of the snapshot latent.
std::vector<Camera> snapshot_cameras(const TrainConfig& config);

/// Writes checkpoint.dg3d, view_<i>.ppm for the four snapshot cameras, and
/// snapshot.json (one metrics line).
void snapshot(const TrainState& state, const TrainConfig& config, const std::filesystem::path& dir,
              const StepMetrics* last = nullptr);

struct RunResult {
    TrainState state;
    std::vector<StepMetrics> metrics;
    std::optional<LatentSearchResult> search;
};

/// Full loop for one mode. With `out_dir`, streams metrics.jsonl, writes
/// periodic snapshots under snapshots/ and a final checkpoint.dg3d.
RunResult run(Mode mode, const TrainConfig& config, const Priors& priors, const GeneratorParams& base,
              const std::optional<std::filesystem::path>& out_dir = std::nullopt);

}  // namespace dg3d::trainer
