// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "dg3d/priors.hpp"
#include "json.hpp"

namespace dg3d::priors {

namespace fs = std::filesystem;

const char* mode_name(TranslateMode mode) { return mode == TranslateMode::img2img ? "img2img" : "inpaint"; }

ImageBuffer IdentityBackend::run(const TranslationRequest& request) { return request.image; }

ImageBuffer ProceduralBackend::run(const TranslationRequest& request) {
    const ImageBuffer& in = request.image;
    const ImageBuffer style = prompt_image(request.prompt, in.height, in.width);
    ImageBuffer out = in;
    std::mt19937_64 rng(request.seed);
    std::uniform_real_distribution<double> dither(-1.0, 1.0);
    const double s = request.strength;
    for (int y = 0; y < in.height; ++y) {
        for (int x = 0; x < in.width; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * in.width + x;
            const bool active = !request.mask || (*request.mask)[p] > 0.0;
            for (int c = 0; c < in.channels; ++c) {
                const double d = dither(rng);  // drawn unconditionally to keep the stream aligned
                if (!active || s == 0.0) continue;
                const double v = in.at(y, x, c);
                out.at(y, x, c) = v + s * (style.at(y, x, std::min(c, 2)) - v) + 0.02 * s * d;
            }
        }
    }
    return out;
}

ExternalBackend::ExternalBackend(std::string command) : command_(std::move(command)) {
    if (command_.empty()) throw std::invalid_argument("external backend needs a command");
}

std::string request_json(const TranslationRequest& request) {
    nlohmann::json j;
    j["mode"] = mode_name(request.mode());
    j["prompt"] = request.prompt;
    j["strength"] = request.strength;
    j["seed"] = request.seed;
    j["control_weights"] = {{"edge", request.edge_weight}, {"depth", request.depth_weight}};
    return j.dump();
}

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out.push_back(c);
    }
    return out + "'";
}

void depth_bounds(const DepthMap& depth, double& near, double& far) {
    near = 0.0;
    far = 1.0;
    bool any = false;
    for (std::size_t i = 0; i < depth.depth.size(); ++i) {
        if (depth.coverage[i] <= 0.5) continue;
        if (!any) near = far = depth.depth[i];
        near = std::min(near, depth.depth[i]);
        far = std::max(far, depth.depth[i]);
        any = true;
    }
    if (far <= near) far = near + 1.0;
}

}  // namespace

ImageBuffer ExternalBackend::run(const TranslationRequest& request) {
    std::lock_guard<std::mutex> lock(mutex_);
    std::string tmpl = (fs::temp_directory_path() / "dg3d-backend-XXXXXX").string();
    if (mkdtemp(tmpl.data()) == nullptr) throw BackendError("cannot create backend work directory", "");
    const fs::path dir(tmpl);

    write_ppm(dir / "input.ppm", request.image);
    write_ppm(dir / "edge.ppm", request.edge_control);
    if (request.depth_control.height > 0) {
        double near, far;
        depth_bounds(request.depth_control, near, far);
        write_depth_pgm(dir / "depth.pgm", request.depth_control, near, far);
    }
    if (request.mask) write_mask_pgm(dir / "mask.pgm", request.image.height, request.image.width, *request.mask);
    {
        std::ofstream out(dir / "request.json");
        out << request_json(request) << '\n';
    }

    const fs::path log_path = dir / "backend.log";
    const std::string cmd = command_ + " " + shell_quote(dir.string()) + " > " + shell_quote(log_path.string()) + " 2>&1";
    const int status = std::system(cmd.c_str());
    const std::string log = slurp(log_path);
    if (status != 0) {
        throw BackendError("backend '" + command_ + "' exited with status " + std::to_string(status) + " (work dir " +
                               dir.string() + ")",
                           log);
    }
    ImageBuffer out;
    try {
        out = read_ppm(dir / "output.ppm");
    } catch (const IoError& e) {
        throw BackendError(std::string("malformed backend reply: ") + e.what(), log);
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    return out;
}

std::unique_ptr<TranslationBackend> make_backend(const std::string& spec) {
    if (spec == "identity") return std::make_unique<IdentityBackend>();
    if (spec == "procedural") return std::make_unique<ProceduralBackend>();
    const std::string prefix = "external:";
    if (spec.rfind(prefix, 0) == 0) return std::make_unique<ExternalBackend>(spec.substr(prefix.size()));
    throw std::invalid_argument("unknown backend '" + spec + "' (expected identity, procedural or external:CMD)");
}

ImageBuffer translate(TranslationBackend& backend, const TranslationRequest& request) {
    const ImageBuffer& in = request.image;
    if (in.channels != 3) throw std::invalid_argument("translate: image must have 3 channels");
    if (!(request.strength >= 0.0 && request.strength <= 1.0)) {
        throw std::invalid_argument("translate: strength must lie in [0, 1]");
    }
    const std::size_t npix = static_cast<std::size_t>(in.height) * in.width;
    if (request.mask && request.mask->size() != npix) throw std::invalid_argument("translate: mask size mismatch");

    ImageBuffer out = backend.run(request);
    if (!out.same_shape(in)) {
        throw BackendError("backend '" + backend.name() + "' returned " + std::to_string(out.width) + "x" +
                               std::to_string(out.height) + " for a " + std::to_string(in.width) + "x" +
                               std::to_string(in.height) + " request",
                           "");
    }
    if (request.mask) {
        for (std::size_t p = 0; p < npix; ++p) {
            if ((*request.mask)[p] != 0.0) continue;
            for (int c = 0; c < 3; ++c) out.pixels[p * 3 + c] = in.pixels[p * 3 + c];
        }
    }
    return out;
}

}  // namespace dg3d::priors
