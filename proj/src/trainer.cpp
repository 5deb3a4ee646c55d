// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "dg3d/checkpoint.hpp"
#include "json.hpp"

namespace dg3d::trainer {

namespace fs = std::filesystem;
using numgrad::Graph;
using numgrad::Var;

void TrainConfig::validate(int schedule_total, int latent_dim) const {
    if (steps < 0) throw ConfigError("steps", "must be >= 0");
    if (batch != 1) throw ConfigError("batch", "only batch size 1 is supported");
    if (!(lr > 0.0)) throw ConfigError("lr", "must be > 0");
    if (t_min < 1) throw ConfigError("t_min", "must be >= 1");
    if (t_max < t_min) throw ConfigError("t_max", "T_min > T_max");
    if (t_max > schedule_total) throw ConfigError("t_max", "exceeds the schedule length");
    if (!std::isfinite(cfg_scale)) throw ConfigError("cfg_scale", "must be finite");
    if (pose.azimuth_max < pose.azimuth_min) throw ConfigError("pose.azimuth", "empty span");
    if (pose.elevation_max < pose.elevation_min) throw ConfigError("pose.elevation", "empty span");
    if (pose.elevation_min <= -90.0 || pose.elevation_max >= 90.0) {
        throw ConfigError("pose.elevation", "must stay inside (-90, 90)");
    }
    if (weights.lambda1 < 0.0) throw ConfigError("weights.lambda1", "must be >= 0");
    if (weights.lambda2 < 0.0) throw ConfigError("weights.lambda2", "must be >= 0");
    if (weights.lambda3 < 0.0) throw ConfigError("weights.lambda3", "must be >= 0");
    if (snapshot_interval < 0) throw ConfigError("snapshot_interval", "must be >= 0");
    if (resolution < 1) throw ConfigError("render.resolution", "must be >= 1");
    if (samples < 2) throw ConfigError("render.samples", "must be >= 2");
    if (!(camera_radius > std::sqrt(3.0))) throw ConfigError("render.radius", "camera must sit outside the scene bounds");
    if (!(fov_y > 0.0 && fov_y < 180.0)) throw ConfigError("render.fov_y", "must lie in (0, 180)");
    if (!(gamma_ema_decay >= 0.0 && gamma_ema_decay < 1.0)) throw ConfigError("editing.gamma_ema_decay", "must lie in [0, 1)");
    if (mstv_levels < 1) throw ConfigError("avatar.mstv_levels", "must be >= 1");
    if (latent_k < 1) throw ConfigError("avatar.latent_k", "must be >= 1");
    if (latent_steps < 0) throw ConfigError("avatar.latent_steps", "must be >= 0");
    if (!(latent_lr > 0.0)) throw ConfigError("avatar.latent_lr", "must be > 0");
    for (const auto& z : latent_pool) {
        if (static_cast<int>(z.size()) != latent_dim) throw ConfigError("latent_pool", "entry has wrong dimension");
    }
}

Camera TrainConfig::camera(double azimuth, double elevation) const {
    Camera c;
    c.azimuth = azimuth;
    c.elevation = elevation;
    c.radius = camera_radius;
    c.fov_y = fov_y;
    c.height = resolution;
    c.width = resolution;
    return c.normalized();
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
    if (hi <= lo) return lo;
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace

Camera sample_view(const TrainConfig& config, std::mt19937_64& rng) {
    const double az = uniform(rng, config.pose.azimuth_min, config.pose.azimuth_max);
    const double el = uniform(rng, config.pose.elevation_min, config.pose.elevation_max);
    return config.camera(az, el);
}

TrainState TrainState::create(const GeneratorParams& base, Mode mode, const TrainConfig& config) {
    TrainState s;
    s.mode = mode;
    s.live = base;
    s.live.train_only(gan3d::Part::triplane_gen);
    for (auto* b : s.live.buffers()) b->zero_grad();
    s.frozen = gan3d::clone_frozen(base);
    if (mode == Mode::avatar && config.learnable_triplane) s.residual.emplace(base.dims.channels, base.dims.resolution);
    s.optimizer = numgrad::Adam(numgrad::AdamConfig{config.lr});
    s.rng.seed(config.seed);
    return s;
}

std::vector<numgrad::ParamBuffer*> TrainState::trainable_buffers() {
    auto out = live.buffers();
    if (residual) out.push_back(&residual->residual);
    return out;
}

std::string StepMetrics::to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["mode"] = losses::mode_name(mode);
    j["loss_sds_gradnorm"] = loss_sds_gradnorm;
    j["l_dis"] = l_dis;
    j["l_diff"] = l_diff;
    j["l_mstv"] = l_mstv;
    j["elapsed_ms"] = elapsed_ms;
    j["pairwise_triplane_dist"] = pairwise_triplane_dist;
    j["t"] = t;
    return j.dump();
}

namespace {

// Per-step random draws, always consumed in this order.
struct Draw {
    LatentCode z;
    Camera camera;
    int t = 0;
    ImageBuffer eps;
    std::uint64_t render_seed = 0;
};

LatentCode draw_latent(TrainState& s, const TrainConfig& config) {
    if (!config.latent_pool.empty()) {
        std::uniform_int_distribution<std::size_t> pick(0, config.latent_pool.size() - 1);
        return {config.latent_pool[pick(s.rng)], gan3d::LatentKind::noise};
    }
    return gan3d::sample_noise(s.live.dims.latent_dim, s.rng);
}

Draw draw(TrainState& s, const TrainConfig& config, bool with_latent) {
    Draw d;
    if (with_latent) d.z = draw_latent(s, config);
    d.camera = sample_view(config, s.rng);
    d.t = std::uniform_int_distribution<int>(config.t_min, config.t_max)(s.rng);
    d.eps = ImageBuffer(config.resolution, config.resolution, 3);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (auto& v : d.eps.pixels) v = normal(s.rng);
    d.render_seed = s.rng();
    return d;
}

render::RenderOptions train_render(const TrainConfig& config, std::uint64_t seed) {
    return {config.samples, seed, true};
}

ImageBuffer as_image(std::span<const double> v, int res) {
    ImageBuffer img(res, res, 3);
    std::copy(v.begin(), v.end(), img.pixels.begin());
    return img;
}

Var constant_latent(Graph& g, const LatentCode& w) { return g.constant(w.values, {w.values.size()}); }

struct SdsPass {
    Var x;
    Var sds;
    ImageBuffer image;
    losses::SdsResult result;
};

SdsPass sds_pass(Graph& g, TrainState& s, const TrainConfig& config, const Priors& priors, Var triplane,
                 const Draw& d) {
    SdsPass p;
    const auto& dims = s.live.dims;
    p.x = render::render_node(g, s.live.decoder, triplane, dims.channels, dims.resolution, d.camera,
                              train_render(config, d.render_seed));
    p.image = as_image(g.value(p.x), config.resolution);
    p.result = losses::sds_grad(p.image, config.prompt, d.t, d.eps, *priors.schedule, *priors.score, config.cfg_scale);
    p.sds = losses::sds_node(g, p.x, p.result.grad);
    return p;
}

void finish(TrainState& s, StepMetrics& m) {
    s.optimizer.step(s.trainable_buffers());
    s.step += 1;
    m.step = s.step;
    m.mode = s.mode;
}

}  // namespace

StepMetrics adapt_step(TrainState& s, const TrainConfig& config, const Priors& priors) {
    Draw d = draw(s, config, true);
    for (int attempt = 0;; ++attempt) {
        try {
            StepMetrics m;
            m.t = d.t;
            Graph g;
            const LatentCode w = gan3d::mapping_forward(s.live, d.z);
            const Var ti = gan3d::triplane_node(g, s.live, constant_latent(g, w));
            const gan3d::TriplaneGrid frozen_i = gan3d::triplane_forward(s.frozen, w);

            losses::ObjectiveParts parts;
            if (s.prev) {
                const Var tj = gan3d::triplane_node(g, s.live, constant_latent(g, s.prev->w));
                parts.l_dis = losses::relative_distance_node(g, ti, tj, frozen_i.values, s.prev->frozen_triplane);
                m.l_dis = g.item(*parts.l_dis);
                double d2 = 0.0;
                for (std::size_t i = 0; i < frozen_i.values.size(); ++i) {
                    const double diff = g.value(ti)[i] - g.value(tj)[i];
                    d2 += diff * diff;
                }
                m.pairwise_triplane_dist = d2;
            } else {
                parts.l_dis = g.scalar(0.0);
            }

            SdsPass p = sds_pass(g, s, config, priors, ti, d);
            parts.sds = p.sds;
            m.loss_sds_gradnorm = losses::l2_norm(p.result.grad.pixels);
            g.backward(losses::composite_objective(g, Mode::adaptation, parts, config.weights));
            finish(s, m);
            s.prev = PrevBatch{w, frozen_i.values};
            return m;
        } catch (const losses::DegeneratePair&) {
            if (attempt >= 1) throw;
            for (auto* b : s.trainable_buffers()) b->zero_grad();
            d.z = draw_latent(s, config);
        }
    }
}

StepMetrics edit_step(TrainState& s, const TrainConfig& config, const Priors& priors) {
    const Draw d = draw(s, config, true);
    StepMetrics m;
    m.t = d.t;
    Graph g;
    const LatentCode w = gan3d::mapping_forward(s.live, d.z);
    const Var t_live = gan3d::triplane_node(g, s.live, constant_latent(g, w));
    SdsPass p = sds_pass(g, s, config, priors, t_live, d);
    m.loss_sds_gradnorm = losses::l2_norm(p.result.grad.pixels);

    // x' from the frozen generator under the same latent, camera and jitter.
    const gan3d::TriplaneGrid t_frozen = gan3d::triplane_forward(s.frozen, w);
    const ImageBuffer x_ref =
        render::render(s.frozen.decoder, t_frozen, d.camera, train_render(config, d.render_seed)).image;

    const ImageBuffer* gamma = &p.result.gamma;
    if (config.gamma_ema) {
        if (!s.gamma_ema) {
            s.gamma_ema = p.result.gamma;
        } else {
            for (std::size_t i = 0; i < s.gamma_ema->pixels.size(); ++i) {
                s.gamma_ema->pixels[i] = config.gamma_ema_decay * s.gamma_ema->pixels[i] +
                                         (1.0 - config.gamma_ema_decay) * p.result.gamma.pixels[i];
            }
        }
        gamma = &*s.gamma_ema;
    }
    losses::ObjectiveParts parts;
    parts.sds = p.sds;
    parts.l_diff = losses::masked_recon_node(g, p.x, x_ref.pixels, losses::gradient_mask(*gamma), 3, d.t);
    m.l_diff = g.item(*parts.l_diff);
    g.backward(losses::composite_objective(g, Mode::editing, parts, config.weights));
    finish(s, m);
    return m;
}

StepMetrics avatar_step(TrainState& s, const TrainConfig& config, const Priors& priors) {
    if (!s.fixed_w) throw std::logic_error("avatar_step requires the searched style code");
    const Draw d = draw(s, config, false);
    StepMetrics m;
    m.t = d.t;
    Graph g;
    std::optional<Var> res;
    if (s.residual) res = g.leaf(s.residual->residual);
    const Var tri = gan3d::triplane_node(g, s.live, constant_latent(g, *s.fixed_w), res);
    SdsPass p = sds_pass(g, s, config, priors, tri, d);
    m.loss_sds_gradnorm = losses::l2_norm(p.result.grad.pixels);
    losses::ObjectiveParts parts;
    parts.sds = p.sds;
    if (res) {
        parts.l_mstv = losses::multiscale_tv_node(g, *res, s.live.dims.channels, s.live.dims.resolution,
                                                  config.mstv_levels);
        m.l_mstv = g.item(*parts.l_mstv);
    } else {
        parts.l_mstv = g.scalar(0.0);
    }
    g.backward(losses::composite_objective(g, Mode::avatar, parts, config.weights));
    finish(s, m);
    return m;
}

StepMetrics train_step(TrainState& state, const TrainConfig& config, const Priors& priors) {
    switch (state.mode) {
        case Mode::adaptation: return adapt_step(state, config, priors);
        case Mode::editing: return edit_step(state, config, priors);
        case Mode::avatar: return avatar_step(state, config, priors);
    }
    throw std::logic_error("unknown mode");
}

// ---------------------------------------------------------------------------
// Latent search

std::size_t argmin_loss(std::span<const double> values) {
    if (values.empty()) throw std::invalid_argument("argmin_loss: no candidates");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] < values[best]) best = i;
    return best;
}

LatentSearchResult latent_search(GeneratorParams& params, const std::string& prompt, int k,
                                 const priors::EmbeddingPrior& embed, int m_steps, const LatentSearchOptions& options,
                                 std::mt19937_64& rng) {
    if (k < 1) throw std::invalid_argument("latent_search: k must be >= 1");
    LatentSearchResult r;
    for (int i = 0; i < k; ++i) {
        LatentCode z = gan3d::sample_noise(params.dims.latent_dim, rng);
        const auto tri = gan3d::triplane_forward(params, gan3d::mapping_forward(params, z));
        const ImageBuffer img = render::render(params.decoder, tri, options.camera, options.render).image;
        r.losses.push_back(priors::clip_loss(embed, img, prompt));
        r.candidates.push_back(std::move(z));
    }
    r.selected = argmin_loss(r.losses);
    const LatentCode& z = r.candidates[r.selected];

    std::vector<bool> was_trainable;
    for (auto* b : params.buffers()) was_trainable.push_back(b->trainable);
    params.train_only(gan3d::Part::mapping);
    numgrad::Adam opt(numgrad::AdamConfig{options.lr});
    const Camera cam = options.camera.normalized();
    for (int step = 0; step < m_steps; ++step) {
        Graph g;
        const Var w = gan3d::mapping_node(g, params, g.constant(z.values, {z.values.size()}));
        const Var tri = gan3d::triplane_node(g, std::as_const(params), w);
        const Var x = render::render_node(g, std::as_const(params.decoder), tri, params.dims.channels,
                                          params.dims.resolution, cam, options.render);
        const Var loss = priors::clip_node(g, x, cam.height, cam.width, embed, prompt);
        r.finetune_losses.push_back(g.item(loss));
        g.backward(loss);
        opt.step(params.buffers());
    }
    auto buffers = params.buffers();
    for (std::size_t i = 0; i < buffers.size(); ++i) buffers[i]->trainable = was_trainable[i];
    r.w = gan3d::mapping_forward(params, z);
    return r;
}

// ---------------------------------------------------------------------------
// Snapshots

LatentCode snapshot_latent(const TrainState& state, const TrainConfig& config) {
    if (state.fixed_w) return *state.fixed_w;
    std::mt19937_64 rng(config.seed ^ 0x736e617073686f74ull);
    return gan3d::mapping_forward(state.live, gan3d::sample_noise(state.live.dims.latent_dim, rng));
}

std::vector<Camera> snapshot_cameras(const TrainConfig& config) {
    return {config.camera(0.0, 0.0), config.camera(90.0, 0.0), config.camera(180.0, 0.0), config.camera(-90.0, 0.0)};
}

std::vector<NamedTensor> checkpoint_tensors(const TrainState& state, const TrainConfig& config) {
    auto tensors = state.live.to_tensors();
    if (state.residual) {
        const auto& r = state.residual->residual;
        NamedTensor t{r.name, {}, r.values};
        for (auto d : r.shape) t.dims.push_back(d);
        tensors.push_back(std::move(t));
    }
    const LatentCode w = snapshot_latent(state, config);
    tensors.push_back({"snapshot.w", {w.values.size()}, w.values});
    tensors.push_back({"snapshot.camera",
                       {5},
                       {config.camera_radius, config.fov_y, double(config.resolution), double(config.resolution),
                        double(config.samples)}});
    tensors.push_back({"snapshot.step", {1}, {double(state.step)}});
    return tensors;
}

void snapshot(const TrainState& state, const TrainConfig& config, const fs::path& dir, const StepMetrics* last) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError(dir, "cannot create snapshot directory: " + ec.message());
    write_checkpoint(dir / "checkpoint.dg3d", checkpoint_tensors(state, config));

    const LatentCode w = snapshot_latent(state, config);
    const auto tri = gan3d::triplane_forward(state.live, w, state.residual ? &*state.residual : nullptr);
    const auto cams = snapshot_cameras(config);
    for (std::size_t i = 0; i < cams.size(); ++i) {
        const auto img = render::render(state.live.decoder, tri, cams[i], {config.samples, 0, false}).image;
        write_ppm(dir / ("view_" + std::to_string(i) + ".ppm"), img);
    }
    StepMetrics m;
    if (last != nullptr) m = *last;
    m.step = state.step;
    m.mode = state.mode;
    std::ofstream out(dir / "snapshot.json");
    out << m.to_json() << '\n';
    if (!out) throw IoError(dir / "snapshot.json", "write failed");
}

// ---------------------------------------------------------------------------
// Loop

RunResult run(Mode mode, const TrainConfig& config, const Priors& priors, const GeneratorParams& base,
              const std::optional<fs::path>& out_dir) {
    if (priors.schedule == nullptr || priors.score == nullptr) throw std::invalid_argument("run: missing priors");
    config.validate(priors.schedule->total, base.dims.latent_dim);
    RunResult r{TrainState::create(base, mode, config), {}, std::nullopt};
    TrainState& s = r.state;

    if (mode == Mode::avatar) {
        if (priors.embed == nullptr) throw std::invalid_argument("run: avatar mode needs an embedding prior");
        LatentSearchOptions opts{config.camera(0.0, 0.0), {config.samples, 0, false}, config.latent_lr};
        r.search = latent_search(s.live, config.prompt, config.latent_k, *priors.embed, config.latent_steps, opts, s.rng);
        s.fixed_w = r.search->w;
        s.frozen = gan3d::clone_frozen(s.live);
    }

    std::ofstream metrics;
    if (out_dir) {
        fs::create_directories(*out_dir);
        metrics.open(*out_dir / "metrics.jsonl", std::ios::binary);
        if (!metrics) throw IoError(*out_dir / "metrics.jsonl", "cannot open for writing");
    }
    auto snap_dir = [&](std::int64_t step) {
        char name[32];
        std::snprintf(name, sizeof name, "step_%06lld", static_cast<long long>(step));
        return *out_dir / "snapshots" / name;
    };
    if (out_dir && config.snapshot_interval > 0) snapshot(s, config, snap_dir(0));

    for (int i = 0; i < config.steps; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        StepMetrics m = train_step(s, config, priors);
        if (config.record_timing) {
            m.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        }
        if (out_dir) {
            metrics << m.to_json() << '\n';
            metrics.flush();
            if (config.snapshot_interval > 0 && s.step % config.snapshot_interval == 0) snapshot(s, config, snap_dir(s.step), &m);
        }
        r.metrics.push_back(m);
    }
    if (out_dir) write_checkpoint(*out_dir / "checkpoint.dg3d", checkpoint_tensors(s, config));
    return r;
}

}  // namespace dg3d::trainer
