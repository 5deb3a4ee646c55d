// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "dg3d/checkpoint.hpp"
#include "dg3d/gan3d.hpp"
#include "dg3d/gradcheck.hpp"
#include "dg3d/image.hpp"
#include "dg3d/meshtex.hpp"
#include "dg3d/numgrad.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/render.hpp"
#include "dg3d/run_config.hpp"
#include "dg3d/trainer.hpp"

namespace fs = std::filesystem;
using namespace dg3d;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitEmptySurface = 4;

class EmptySurface : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CommonFlags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> steps;
    std::string backend;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config, "JSON run configuration");
    app->add_option("--out", f.out, "output directory");
    app->add_option("--seed", f.seed, "overrides the configured seed");
    app->add_option("--steps", f.steps, "overrides the configured step count");
    app->add_option("--backend", f.backend, "identity | procedural | external:CMD");
}

struct Loaded {
    RunConfig config;
    std::string verbatim = "{}\n";
    fs::path out_dir;
};

Loaded load(const CommonFlags& f, const std::string& default_out) {
    Loaded l;
    if (!f.config.empty()) {
        if (!fs::exists(f.config)) throw ConfigError("--config", "file not found: " + f.config);
        l.verbatim = read_text_file(f.config);
        l.config = parse_run_config_text(l.verbatim);
    }
    if (f.seed) l.config.train.seed = *f.seed;
    if (f.steps) l.config.train.steps = *f.steps;
    if (!f.backend.empty()) l.config.backend = f.backend;
    if (!f.out.empty()) l.config.output_dir = f.out;
    if (!l.config.output_dir) l.config.output_dir = default_out;
    l.config.validate();
    l.out_dir = *l.config.output_dir;
    return l;
}

void write_run_header(const Loaded& l, const CommonFlags& f, const std::string& argv0,
                      std::map<std::string, fs::path> inputs = {}) {
    fs::create_directories(l.out_dir);
    {
        std::ofstream out(l.out_dir / "config.json", std::ios::binary);
        out << l.verbatim;
    }
    {
        std::ofstream out(l.out_dir / "resolved_config.json", std::ios::binary);
        out << to_json(l.config).dump(2) << '\n';
    }
    inputs["config.json"] = l.out_dir / "config.json";
    if (!f.config.empty()) inputs["config"] = f.config;
    if (l.config.generator_checkpoint) inputs["generator"] = *l.config.generator_checkpoint;
    std::error_code ec;
    fs::path binary = fs::read_symlink("/proc/self/exe", ec);
    if (ec) binary = argv0;
    write_provenance(l.out_dir, inputs, binary);
}

gan3d::GeneratorParams base_generator(const RunConfig& c) {
    if (c.generator_checkpoint) {
        if (!fs::exists(*c.generator_checkpoint)) {
            throw ConfigError("generator.checkpoint", "file not found: " + c.generator_checkpoint->string());
        }
        return gan3d::GeneratorParams::from_tensors(read_checkpoint(*c.generator_checkpoint));
    }
    return gan3d::GeneratorParams::create(c.dims, c.generator_seed);
}

int cmd_train(losses::Mode mode, const CommonFlags& f, const std::string& argv0) {
    const Loaded l = load(f, std::string("runs/") + losses::mode_name(mode));
    write_run_header(l, f, argv0);
    const auto schedule = priors::NoiseSchedule::linear(1000, 1e-4, 0.02, l.config.weighting);
    const priors::GaussianScorePrior score(l.config.prior_variance);
    const priors::EmbeddingPrior embed;
    const trainer::Priors pri{&schedule, &score, &embed};
    const auto base = base_generator(l.config);
    auto result = trainer::run(mode, l.config.train, pri, base, l.out_dir);
    trainer::snapshot(result.state, l.config.train, l.out_dir / "snapshots" / "final",
                      result.metrics.empty() ? nullptr : &result.metrics.back());
    std::cout << losses::mode_name(mode) << ": " << result.metrics.size() << " steps written to " << l.out_dir.string()
              << '\n';
    return 0;
}

struct RefineFlags {
    std::string checkpoint;
    std::string mesh;
    std::string texture;
};

void write_atlas(const fs::path& path, const meshtex::TextureAtlas& atlas) { write_ppm(path, atlas.image()); }

int cmd_refine(const CommonFlags& f, const RefineFlags& rf, const std::string& argv0) {
    if (rf.checkpoint.empty() == rf.mesh.empty()) throw ConfigError("--checkpoint/--mesh", "give exactly one of them");
    if (!rf.checkpoint.empty() && !fs::exists(rf.checkpoint)) throw ConfigError("--checkpoint", "file not found: " + rf.checkpoint);
    if (!rf.mesh.empty() && !fs::exists(rf.mesh)) throw ConfigError("--mesh", "file not found: " + rf.mesh);
    if (!rf.texture.empty() && !fs::exists(rf.texture)) throw ConfigError("--texture", "file not found: " + rf.texture);
    if (!rf.texture.empty() && rf.mesh.empty()) throw ConfigError("--texture", "only valid together with --mesh");
    const Loaded l = load(f, "runs/refine");
    std::map<std::string, fs::path> inputs;
    if (!rf.checkpoint.empty()) inputs["checkpoint"] = rf.checkpoint;
    if (!rf.mesh.empty()) inputs["mesh"] = rf.mesh;
    if (!rf.texture.empty()) inputs["texture"] = rf.texture;
    write_run_header(l, f, argv0, inputs);
    const RunConfig& c = l.config;
    const auto& rc = c.refine;

    render::Camera base;
    base.radius = c.train.camera_radius;
    base.fov_y = c.train.fov_y;
    base.height = base.width = rc.view_resolution;

    meshtex::ScheduleOptions so;
    so.k = rc.k;
    so.j = rc.j;
    so.img2img_strength = rc.img2img_strength;
    so.inpaint_strength = rc.inpaint_strength;
    so.dilation_radius = rc.dilation;
    so.elevation_min = rc.elevation_min;
    so.elevation_max = rc.elevation_max;

    meshtex::Mesh mesh;
    std::vector<meshtex::BlendView> views;
    if (!rf.checkpoint.empty()) {
        const auto tensors = read_checkpoint(rf.checkpoint);
        const auto params = gan3d::GeneratorParams::from_tensors(tensors);
        std::optional<gan3d::LearnableTriplane> residual;
        if (const auto* t = find_tensor(tensors, "learnable_triplane")) {
            residual.emplace(params.dims.channels, params.dims.resolution);
            if (t->values.size() != residual->residual.size()) throw CheckpointError("learnable_triplane: size mismatch");
            residual->residual.values = t->values;
        }
        gan3d::LatentCode w;
        if (const auto* t = find_tensor(tensors, "snapshot.w")) {
            w.values = t->values;
            w.kind = gan3d::LatentKind::style;
        } else {
            std::mt19937_64 rng(c.train.seed);
            w = gan3d::mapping_forward(params, gan3d::sample_noise(params.dims.latent_dim, rng));
        }
        if (const auto* t = find_tensor(tensors, "snapshot.camera"); t && t->values.size() >= 2) {
            base.radius = t->values[0];
            base.fov_y = t->values[1];
        }
        const auto tri = gan3d::triplane_forward(params, w, residual ? &*residual : nullptr);
        const double iso = rc.iso ? *rc.iso : meshtex::default_iso(rc.mc_resolution);
        auto extracted = meshtex::marching_cubes(meshtex::density_field(params.decoder, tri), rc.mc_resolution, iso);
        if (!extracted) {
            throw EmptySurface("no lattice cell crosses density level " + std::to_string(iso) + " at resolution " +
                               std::to_string(rc.mc_resolution));
        }
        mesh = meshtex::cylinder_unwrap(*extracted);
        so.base = base;
        for (const auto& v : meshtex::build_schedule(so).views) {
            views.push_back({v.camera, render::render(params.decoder, tri, v.camera, {rc.view_samples, 0, false}).image});
        }
    } else {
        mesh = meshtex::read_obj(rf.mesh);
        if (mesh.faces.empty()) throw EmptySurface("mesh has no faces: " + rf.mesh);
        if (!mesh.has_uv()) mesh = meshtex::cylinder_unwrap(mesh);
        meshtex::TextureAtlas tex = meshtex::TextureAtlas::zeros(rc.atlas_resolution);
        if (!rf.texture.empty()) {
            const ImageBuffer img = read_ppm(rf.texture);
            if (img.height != img.width) throw ConfigError("--texture", "texture must be square");
            tex = meshtex::TextureAtlas::zeros(img.height);
            tex.texels = img.pixels;
        } else {
            std::fill(tex.texels.begin(), tex.texels.end(), 0.5);
        }
        so.base = base;
        for (const auto& v : meshtex::build_schedule(so).views) {
            views.push_back({v.camera, meshtex::rasterize(mesh, tex, v.camera).image});
        }
    }
    so.base = base;
    const auto schedule = meshtex::build_schedule(so);

    const fs::path tex_dir = l.out_dir / "textures";
    const fs::path view_dir = l.out_dir / "views";
    fs::create_directories(tex_dir);
    fs::create_directories(view_dir);

    const auto atlas0 = meshtex::adaptive_blend(mesh, views, rc.atlas_resolution, rc.blend_iters, rc.tv_weight);
    write_atlas(tex_dir / "U_0.ppm", atlas0);
    for (std::size_t i = 0; i < views.size(); ++i) write_ppm(view_dir / ("view_" + std::to_string(i) + "_input.ppm"), views[i].target);

    auto backend = priors::make_backend(c.backend);
    meshtex::RefineOptions ro;
    ro.prompt = c.train.prompt;
    ro.seed = c.train.seed;
    ro.edge_low = rc.edge_low;
    ro.edge_high = rc.edge_high;
    ro.blend_iters = rc.blend_iters;
    ro.tv_weight = rc.tv_weight;
    ro.dump_dir = l.out_dir / "failed";
    const auto result = meshtex::progressive_refine(mesh, atlas0, schedule, *backend, ro, [&](const meshtex::RefineStage& s) {
        const std::string p = "view_" + std::to_string(s.index);
        write_ppm(view_dir / (p + "_render.ppm"), s.render);
        write_ppm(view_dir / (p + "_edges.ppm"), s.edges);
        const auto range = render::depth_range(s.view.camera);
        write_depth_pgm(view_dir / (p + "_depth.pgm"), s.depth, range[0], range[1]);
        if (s.mask) write_mask_pgm(view_dir / (p + "_mask.pgm"), s.render.height, s.render.width, *s.mask);
        write_ppm(view_dir / (p + "_refined.ppm"), s.refined);
        write_atlas(tex_dir / ("U_" + std::to_string(s.index + 1) + ".ppm"), *s.atlas);
    });
    write_atlas(l.out_dir / "final_texture.ppm", result.final_atlas);
    meshtex::write_obj(l.out_dir / "mesh.obj", mesh, "final_texture.ppm");
    std::cout << "refine: " << schedule.views.size() << " views, " << mesh.vertices.size() << " vertices, "
              << mesh.faces.size() << " faces written to " << l.out_dir.string() << '\n';
    return 0;
}

struct RenderFlags {
    std::string checkpoint;
    std::string output = "render.ppm";
    double azimuth = 0.0;
    double elevation = 0.0;
};

int cmd_render(const RenderFlags& rf) {
    if (!fs::exists(rf.checkpoint)) throw ConfigError("--checkpoint", "file not found: " + rf.checkpoint);
    const auto tensors = read_checkpoint(rf.checkpoint);
    const auto params = gan3d::GeneratorParams::from_tensors(tensors);
    const auto* wt = find_tensor(tensors, "snapshot.w");
    const auto* ct = find_tensor(tensors, "snapshot.camera");
    if (wt == nullptr || ct == nullptr || ct->values.size() != 5) {
        throw CheckpointError("checkpoint lacks snapshot.w / snapshot.camera");
    }
    std::optional<gan3d::LearnableTriplane> residual;
    if (const auto* t = find_tensor(tensors, "learnable_triplane")) {
        residual.emplace(params.dims.channels, params.dims.resolution);
        if (t->values.size() != residual->residual.size()) throw CheckpointError("learnable_triplane: size mismatch");
        residual->residual.values = t->values;
    }
    gan3d::LatentCode w{wt->values, gan3d::LatentKind::style};
    const auto tri = gan3d::triplane_forward(params, w, residual ? &*residual : nullptr);
    render::Camera cam;
    cam.azimuth = rf.azimuth;
    cam.elevation = rf.elevation;
    cam.radius = ct->values[0];
    cam.fov_y = ct->values[1];
    cam.height = static_cast<int>(ct->values[2]);
    cam.width = static_cast<int>(ct->values[3]);
    const int samples = static_cast<int>(ct->values[4]);
    const auto img = render::render(params.decoder, tri, cam.normalized(), {samples, 0, false}).image;
    write_ppm(rf.output, img);
    return 0;
}

int cmd_gradcheck() {
    const auto report = gradcheck::run_gradcheck(gradcheck::default_roster());
    std::cout << report.to_text();
    return report.passed() ? 0 : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dg3d: text-guided adaptation and texturing of toy 3D generators"};
    app.require_subcommand(1);

    CommonFlags common;
    RefineFlags refine_flags;
    RenderFlags render_flags;

    auto* adapt = app.add_subcommand("adapt", "domain adaptation run");
    auto* edit = app.add_subcommand("edit", "local editing run");
    auto* avatar = app.add_subcommand("avatar", "text-to-avatar run");
    auto* refine = app.add_subcommand("refine", "mesh extraction and progressive texture refinement");
    auto* rend = app.add_subcommand("render", "render a checkpoint at a pose");
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable operation");
    for (auto* sc : {adapt, edit, avatar, refine}) add_common(sc, common);
    refine->add_option("--checkpoint", refine_flags.checkpoint, "training checkpoint");
    refine->add_option("--mesh", refine_flags.mesh, "OBJ mesh");
    refine->add_option("--texture", refine_flags.texture, "initial texture (PPM) for --mesh");
    rend->add_option("--checkpoint", render_flags.checkpoint, "checkpoint")->required();
    rend->add_option("--azimuth", render_flags.azimuth, "degrees");
    rend->add_option("--elevation", render_flags.elevation, "degrees");
    rend->add_option("--output,-o", render_flags.output, "PPM path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        if (*adapt) return cmd_train(losses::Mode::adaptation, common, argv[0]);
        if (*edit) return cmd_train(losses::Mode::editing, common, argv[0]);
        if (*avatar) return cmd_train(losses::Mode::avatar, common, argv[0]);
        if (*refine) return cmd_refine(common, refine_flags, argv[0]);
        if (*rend) return cmd_render(render_flags);
        if (*grad) return cmd_gradcheck();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const CheckpointError& e) {
        std::cerr << "checkpoint error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const numgrad::NonFiniteGradient& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const priors::NonFiniteScore& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const EmptySurface& e) {
        std::cerr << "empty isosurface: " << e.what() << '\n';
        return kExitEmptySurface;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}
