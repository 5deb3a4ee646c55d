// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/run_config.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "dg3d/image.hpp"

namespace dg3d {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Reads the members of one JSON object and rejects anything left unread.
class ObjectReader {
public:
    ObjectReader(const json& obj, std::string prefix) : obj_(obj), prefix_(std::move(prefix)) {
        if (!obj_.is_object()) throw ConfigError(prefix_.empty() ? "<root>" : prefix_, "expected an object");
    }

    std::string key(const std::string& k) const { return prefix_.empty() ? k : prefix_ + "." + k; }

    const json* find(const std::string& k) {
        seen_.insert(k);
        auto it = obj_.find(k);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <class T>
    void get(const std::string& k, T& out) {
        const json* v = find(k);
        if (v == nullptr) return;
        try {
            if constexpr (std::is_same_v<T, bool>) {
                if (!v->is_boolean()) throw ConfigError(key(k), "expected a boolean");
            } else if constexpr (std::is_integral_v<T>) {
                if (!v->is_number_integer()) throw ConfigError(key(k), "expected an integer");
                if constexpr (std::is_unsigned_v<T>) {
                    if (v->is_number_unsigned() == false && v->get<long long>() < 0) {
                        throw ConfigError(key(k), "must be >= 0");
                    }
                }
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!v->is_number()) throw ConfigError(key(k), "expected a number");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!v->is_string()) throw ConfigError(key(k), "expected a string");
            }
            out = v->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(key(k), e.what());
        }
    }

    void get_span(const std::string& k, double& lo, double& hi) {
        const json* v = find(k);
        if (v == nullptr) return;
        if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number()) {
            throw ConfigError(key(k), "expected [min, max]");
        }
        lo = (*v)[0].get<double>();
        hi = (*v)[1].get<double>();
    }

    template <class F>
    void object(const std::string& k, F&& body) {
        const json* v = find(k);
        if (v == nullptr) return;
        ObjectReader sub(*v, key(k));
        body(sub);
        sub.finish();
    }

    void finish() const {
        for (auto it = obj_.begin(); it != obj_.end(); ++it) {
            if (!seen_.count(it.key())) throw ConfigError(key(it.key()), "unknown key");
        }
    }

private:
    const json& obj_;
    std::string prefix_;
    std::set<std::string> seen_;
};

const char* weighting_name(priors::WeightRule r) {
    return r == priors::WeightRule::constant ? "constant" : "one_minus_alpha_bar";
}

}  // namespace

void apply_preset(RunConfig& c, const std::string& name) {
    auto& t = c.train;
    if (name.empty()) return;
    if (name == "face") {
        t.pose = {-45.0, 45.0, -30.0, 30.0};
    } else if (name == "head") {
        t.pose = {-180.0, 180.0, -30.0, 30.0};
    } else if (name == "avatar-head") {
        t.pose = {-180.0, 180.0, -30.0, 30.0};
        t.learnable_triplane = true;
        t.mstv_levels = 3;
        t.latent_k = 16;
        c.refine.k = 1;
        c.refine.j = 1;
    } else if (name == "smoke") {
        t.steps = 50;
        t.resolution = 16;
        t.samples = 12;
        t.snapshot_interval = 0;
        t.latent_k = 4;
        t.latent_steps = 5;
        c.dims.resolution = 16;
        c.dims.base_resolution = 8;
        c.dims.hidden = 32;
        c.dims.decoder_hidden = 32;
        c.refine.atlas_resolution = 32;
        c.refine.mc_resolution = 24;
        c.refine.view_resolution = 32;
        c.refine.view_samples = 16;
        c.refine.blend_iters = 50;
        c.refine.dilation = 2;
    } else {
        throw ConfigError("preset", "unknown preset '" + name + "' (expected face, head, avatar-head or smoke)");
    }
    c.preset = name;
}

RunConfig parse_run_config(const json& doc) {
    RunConfig c;
    if (doc.is_null()) return c;
    ObjectReader root(doc, "");
    std::string preset;
    root.get("preset", preset);
    apply_preset(c, preset);

    auto& t = c.train;
    root.get("steps", t.steps);
    root.get("batch", t.batch);
    root.get("lr", t.lr);
    root.get("t_min", t.t_min);
    root.get("t_max", t.t_max);
    root.get("cfg_scale", t.cfg_scale);
    root.get("seed", t.seed);
    root.get("snapshot_interval", t.snapshot_interval);
    root.get("prompt", t.prompt);
    root.get("record_timing", t.record_timing);
    root.get("backend", c.backend);
    if (const json* v = root.find("output_dir")) {
        if (v->is_null()) {
            c.output_dir.reset();
        } else if (v->is_string()) {
            c.output_dir = v->get<std::string>();
        } else {
            throw ConfigError("output_dir", "expected a string");
        }
    }
    if (const json* v = root.find("latent_pool")) {
        if (!v->is_array()) throw ConfigError("latent_pool", "expected an array of number arrays");
        t.latent_pool.clear();
        for (const auto& z : *v) {
            if (!z.is_array()) throw ConfigError("latent_pool", "expected an array of number arrays");
            std::vector<double> code;
            for (const auto& x : z) {
                if (!x.is_number()) throw ConfigError("latent_pool", "expected an array of number arrays");
                code.push_back(x.get<double>());
            }
            t.latent_pool.push_back(std::move(code));
        }
    }
    root.object("pose", [&](ObjectReader& r) {
        r.get_span("azimuth", t.pose.azimuth_min, t.pose.azimuth_max);
        r.get_span("elevation", t.pose.elevation_min, t.pose.elevation_max);
    });
    root.object("weights", [&](ObjectReader& r) {
        r.get("lambda1", t.weights.lambda1);
        r.get("lambda2", t.weights.lambda2);
        r.get("lambda3", t.weights.lambda3);
    });
    root.object("prior", [&](ObjectReader& r) {
        r.get("variance", c.prior_variance);
        std::string w = weighting_name(c.weighting);
        r.get("weighting", w);
        if (w == "one_minus_alpha_bar") {
            c.weighting = priors::WeightRule::one_minus_alpha_bar;
        } else if (w == "constant") {
            c.weighting = priors::WeightRule::constant;
        } else {
            throw ConfigError("prior.weighting", "expected one_minus_alpha_bar or constant");
        }
    });
    root.object("render", [&](ObjectReader& r) {
        r.get("resolution", t.resolution);
        r.get("samples", t.samples);
        r.get("radius", t.camera_radius);
        r.get("fov_y", t.fov_y);
    });
    root.object("generator", [&](ObjectReader& r) {
        r.get("seed", c.generator_seed);
        if (const json* v = r.find("checkpoint")) {
            if (v->is_null()) {
                c.generator_checkpoint.reset();
            } else if (v->is_string()) {
                c.generator_checkpoint = v->get<std::string>();
            } else {
                throw ConfigError("generator.checkpoint", "expected a string");
            }
        }
        r.object("dims", [&](ObjectReader& d) {
            d.get("latent_dim", c.dims.latent_dim);
            d.get("channels", c.dims.channels);
            d.get("resolution", c.dims.resolution);
            d.get("base_resolution", c.dims.base_resolution);
            d.get("hidden", c.dims.hidden);
            d.get("decoder_hidden", c.dims.decoder_hidden);
            d.get("leaky_slope", c.dims.leaky_slope);
        });
    });
    root.object("editing", [&](ObjectReader& r) {
        r.get("gamma_ema", t.gamma_ema);
        r.get("gamma_ema_decay", t.gamma_ema_decay);
    });
    root.object("avatar", [&](ObjectReader& r) {
        r.get("learnable_triplane", t.learnable_triplane);
        r.get("mstv_levels", t.mstv_levels);
        r.get("latent_k", t.latent_k);
        r.get("latent_steps", t.latent_steps);
        r.get("latent_lr", t.latent_lr);
    });
    root.object("refine", [&](ObjectReader& r) {
        auto& f = c.refine;
        r.get("k", f.k);
        r.get("j", f.j);
        r.get_span("elevation", f.elevation_min, f.elevation_max);
        r.get("dilation", f.dilation);
        r.get("atlas_resolution", f.atlas_resolution);
        r.get("blend_iters", f.blend_iters);
        r.get("tv_weight", f.tv_weight);
        r.get("mc_resolution", f.mc_resolution);
        if (const json* v = r.find("iso")) {
            if (v->is_null()) {
                f.iso.reset();
            } else if (v->is_number()) {
                f.iso = v->get<double>();
            } else {
                throw ConfigError("refine.iso", "expected a number or null");
            }
        }
        r.get("edge_low", f.edge_low);
        r.get("edge_high", f.edge_high);
        r.get("img2img_strength", f.img2img_strength);
        r.get("inpaint_strength", f.inpaint_strength);
        r.get("view_resolution", f.view_resolution);
        r.get("view_samples", f.view_samples);
    });
    root.finish();
    return c;
}

RunConfig parse_run_config_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("<document>", std::string("invalid JSON: ") + e.what());
    }
    return parse_run_config(doc);
}

void RunConfig::validate() const {
    train.validate(1000, dims.latent_dim);
    if (!(prior_variance > 0.0)) throw ConfigError("prior.variance", "must be > 0");
    if (dims.latent_dim < 1) throw ConfigError("generator.dims.latent_dim", "must be >= 1");
    if (dims.channels < 1) throw ConfigError("generator.dims.channels", "must be >= 1");
    if (dims.base_resolution < 2) throw ConfigError("generator.dims.base_resolution", "must be >= 2");
    if (dims.resolution < dims.base_resolution) {
        throw ConfigError("generator.dims.resolution", "must be >= base_resolution");
    }
    if (dims.hidden < 1) throw ConfigError("generator.dims.hidden", "must be >= 1");
    if (dims.decoder_hidden < 1) throw ConfigError("generator.dims.decoder_hidden", "must be >= 1");
    if (train.learnable_triplane && dims.resolution % (1 << (train.mstv_levels - 1)) != 0) {
        throw ConfigError("avatar.mstv_levels", "generator resolution must be divisible by 2^(levels-1)");
    }
    const auto& f = refine;
    if (f.k < 0) throw ConfigError("refine.k", "must be >= 0");
    if (f.j < 1) throw ConfigError("refine.j", "must be >= 1");
    if (f.elevation_max < f.elevation_min) throw ConfigError("refine.elevation", "empty span");
    if (f.dilation < 0) throw ConfigError("refine.dilation", "must be >= 0");
    if (f.atlas_resolution < 2) throw ConfigError("refine.atlas_resolution", "must be >= 2");
    if (f.blend_iters < 0) throw ConfigError("refine.blend_iters", "must be >= 0");
    if (f.tv_weight < 0.0) throw ConfigError("refine.tv_weight", "must be >= 0");
    if (f.mc_resolution < 2) throw ConfigError("refine.mc_resolution", "must be >= 2");
    if (f.edge_low > f.edge_high) throw ConfigError("refine.edge_low", "exceeds edge_high");
    if (!(f.img2img_strength >= 0.0 && f.img2img_strength <= 1.0)) {
        throw ConfigError("refine.img2img_strength", "must lie in [0, 1]");
    }
    if (!(f.inpaint_strength >= 0.0 && f.inpaint_strength <= 1.0)) {
        throw ConfigError("refine.inpaint_strength", "must lie in [0, 1]");
    }
    if (f.view_resolution < 1) throw ConfigError("refine.view_resolution", "must be >= 1");
    if (f.view_samples < 2) throw ConfigError("refine.view_samples", "must be >= 2");
}

json to_json(const RunConfig& c) {
    const auto& t = c.train;
    json j = json::object();
    j["preset"] = c.preset;
    j["steps"] = t.steps;
    j["batch"] = t.batch;
    j["lr"] = t.lr;
    j["t_min"] = t.t_min;
    j["t_max"] = t.t_max;
    j["cfg_scale"] = t.cfg_scale;
    j["seed"] = t.seed;
    j["snapshot_interval"] = t.snapshot_interval;
    j["prompt"] = t.prompt;
    j["record_timing"] = t.record_timing;
    j["backend"] = c.backend;
    j["output_dir"] = c.output_dir ? json(c.output_dir->string()) : json(nullptr);
    j["latent_pool"] = t.latent_pool;
    j["pose"] = {{"azimuth", {t.pose.azimuth_min, t.pose.azimuth_max}},
                 {"elevation", {t.pose.elevation_min, t.pose.elevation_max}}};
    j["weights"] = {{"lambda1", t.weights.lambda1}, {"lambda2", t.weights.lambda2}, {"lambda3", t.weights.lambda3}};
    j["prior"] = {{"variance", c.prior_variance}, {"weighting", weighting_name(c.weighting)}};
    j["render"] = {{"resolution", t.resolution}, {"samples", t.samples}, {"radius", t.camera_radius}, {"fov_y", t.fov_y}};
    j["generator"] = {
        {"seed", c.generator_seed},
        {"checkpoint", c.generator_checkpoint ? json(c.generator_checkpoint->string()) : json(nullptr)},
        {"dims",
         {{"latent_dim", c.dims.latent_dim},
          {"channels", c.dims.channels},
          {"resolution", c.dims.resolution},
          {"base_resolution", c.dims.base_resolution},
          {"hidden", c.dims.hidden},
          {"decoder_hidden", c.dims.decoder_hidden},
          {"leaky_slope", c.dims.leaky_slope}}}};
    j["editing"] = {{"gamma_ema", t.gamma_ema}, {"gamma_ema_decay", t.gamma_ema_decay}};
    j["avatar"] = {{"learnable_triplane", t.learnable_triplane},
                   {"mstv_levels", t.mstv_levels},
                   {"latent_k", t.latent_k},
                   {"latent_steps", t.latent_steps},
                   {"latent_lr", t.latent_lr}};
    const auto& f = c.refine;
    j["refine"] = {{"k", f.k},
                   {"j", f.j},
                   {"elevation", {f.elevation_min, f.elevation_max}},
                   {"dilation", f.dilation},
                   {"atlas_resolution", f.atlas_resolution},
                   {"blend_iters", f.blend_iters},
                   {"tv_weight", f.tv_weight},
                   {"mc_resolution", f.mc_resolution},
                   {"iso", f.iso ? json(*f.iso) : json(nullptr)},
                   {"edge_low", f.edge_low},
                   {"edge_high", f.edge_high},
                   {"img2img_strength", f.img2img_strength},
                   {"inpaint_strength", f.inpaint_strength},
                   {"view_resolution", f.view_resolution},
                   {"view_samples", f.view_samples}};
    return j;
}

std::string git_blob_sha1(const std::string& bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw std::runtime_error("sha1: cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 && EVP_DigestFinal_ex(ctx, md, &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("sha1: digest failed");
    std::string hex;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        hex += buf;
    }
    return hex;
}

std::string read_text_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_blob_sha1(const fs::path& path) { return git_blob_sha1(read_text_file(path)); }

void write_provenance(const fs::path& out_dir, const std::map<std::string, fs::path>& inputs, const fs::path& binary) {
    json j = json::object();
    j["hash"] = "git-blob-sha1";
    json in = json::object();
    for (const auto& [name, path] : inputs) in[name] = {{"path", path.string()}, {"sha1", file_blob_sha1(path)}};
    j["inputs"] = in;
    std::error_code ec;
    if (!binary.empty() && fs::exists(binary, ec)) {
        j["binary"] = {{"path", binary.string()}, {"sha1", file_blob_sha1(binary)}};
    }
    std::ofstream out(out_dir / "provenance.json", std::ios::binary);
    if (!out) throw IoError(out_dir / "provenance.json", "cannot open for writing");
    out << j.dump(2) << '\n';
}

}  // namespace dg3d
