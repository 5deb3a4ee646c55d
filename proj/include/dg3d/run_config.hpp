// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "dg3d/gan3d.hpp"
#include "dg3d/priors.hpp"
#include "dg3d/trainer.hpp"

namespace dg3d {

using trainer::ConfigError;

struct RefineConfig {
    int k = 1;
    int j = 1;
    double elevation_min = -15.0;
    double elevation_max = 15.0;
    int dilation = 5;
    int atlas_resolution = 64;
    int blend_iters = 200;
    double tv_weight = 0.01;
    int mc_resolution = 64;
    std::optional<double> iso;  // default_iso(mc_resolution) when unset
    double edge_low = 0.1;
    double edge_high = 0.3;
    double img2img_strength = 0.6;
    double inpaint_strength = 0.4;
    int view_resolution = 64;
    int view_samples = 48;
};

/// Everything a run needs. An empty JSON document is a valid toy run.
struct RunConfig {
    trainer::TrainConfig train;
    std::string preset;
    std::string backend = "procedural";
    std::optional<std::filesystem::path> output_dir;

    double prior_variance = 1.0;
    priors::WeightRule weighting = priors::WeightRule::one_minus_alpha_bar;

    std::uint64_t generator_seed = 0;
    std::optional<std::filesystem::path> generator_checkpoint;
    gan3d::GanDims dims;

    RefineConfig refine;

    /// Throws ConfigError naming the first invalid key.
    void validate() const;
};

/// Known presets: face, head, avatar-head, smoke.
void apply_preset(RunConfig& config, const std::string& name);

/// defaults, then the document's preset, then the document's values. Unknown
/// keys and mistyped values throw ConfigError.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig parse_run_config_text(const std::string& text);

/// Fully resolved document; parse_run_config(to_json(c)) reproduces c.
nlohmann::json to_json(const RunConfig& config);

/// Git blob hash: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(const std::string& bytes);
std::string file_blob_sha1(const std::filesystem::path& path);

/// Writes provenance.json with the blob hash of every input and of the
/// executable.
void write_provenance(const std::filesystem::path& out_dir, const std::map<std::string, std::filesystem::path>& inputs,
                      const std::filesystem::path& binary);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace dg3d
