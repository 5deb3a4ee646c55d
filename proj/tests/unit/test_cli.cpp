// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dg3d/run_config.hpp"

using namespace dg3d;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dg3d_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int cli(const std::string& args) {
    const std::string cmd = std::string(DG3D_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Trains the smoke preset once and returns the run directory.
const fs::path& smoke_run() {
    static const fs::path dir = [] {
        const fs::path d = scratch("smoke");
        write(d / "cfg.json", R"({"preset": "smoke", "steps": 5})");
        EXPECT_EQ(cli("adapt --config " + (d / "cfg.json").string() + " --out " + (d / "run").string()), 0);
        return d / "run";
    }();
    return dir;
}

}  // namespace

TEST(RunConfig, EmptyDocumentIsValid) {
    const RunConfig c = parse_run_config_text("{}");
    EXPECT_NO_THROW(c.validate());
    EXPECT_EQ(c.train.steps, 10000);
    EXPECT_EQ(c.train.cfg_scale, 50.0);
}

TEST(RunConfig, RoundTrip) {
    const RunConfig c = parse_run_config_text(R"({"preset": "face", "lr": 0.001, "refine": {"iso": 0.5, "k": 2}})");
    EXPECT_EQ(c.train.pose.azimuth_min, -45.0);
    const RunConfig d = parse_run_config(to_json(c));
    EXPECT_EQ(to_json(d).dump(), to_json(c).dump());
    EXPECT_EQ(*d.refine.iso, 0.5);
}

TEST(RunConfig, ErrorsNameTheKey) {
    try {
        parse_run_config_text(R"({"weights": {"lambda9": 1}})");
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "weights.lambda9");
    }
    try {
        parse_run_config_text(R"({"t_min": 900, "t_max": 300})").validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.key(), "t_max");
    }
    EXPECT_THROW(parse_run_config_text(R"({"preset": "nope"})"), ConfigError);
}

TEST(RunConfig, GitBlobHash) {
    EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Cli, AdaptWritesRunDirectory) {
    const fs::path& run = smoke_run();
    for (const char* f : {"config.json", "resolved_config.json", "provenance.json", "metrics.jsonl"})
        EXPECT_TRUE(fs::exists(run / f)) << f;
    std::ifstream in(run / "metrics.jsonl");
    std::string line;
    int n = 0;
    while (std::getline(in, line)) ++n;
    EXPECT_EQ(n, 5);
    const auto prov = nlohmann::json::parse(slurp(run / "provenance.json"));
    EXPECT_TRUE(prov.contains("inputs"));
}

TEST(Cli, RenderIsPeriodicInAzimuth) {
    const fs::path& run = smoke_run();
    fs::path ckpt = run / "checkpoint.dg3d";
    ASSERT_TRUE(fs::exists(ckpt));
    const fs::path a = run.parent_path() / "a.ppm", b = run.parent_path() / "b.ppm";
    EXPECT_EQ(cli("render --checkpoint " + ckpt.string() + " --azimuth 0 -o " + a.string()), 0);
    EXPECT_EQ(cli("render --checkpoint " + ckpt.string() + " --azimuth 360 -o " + b.string()), 0);
    EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Cli, ExitCodes) {
    const fs::path d = scratch("codes");
    write(d / "bad.dg3d", "NOPE0000");
    EXPECT_EQ(cli("render --checkpoint " + (d / "bad.dg3d").string() + " -o " + (d / "x.ppm").string()), 2);
    write(d / "t.json", R"({"t_min": 900, "t_max": 300})");
    EXPECT_EQ(cli("adapt --config " + (d / "t.json").string() + " --out " + (d / "r1").string()), 2);
    write(d / "u.json", R"({"unknown": 1})");
    EXPECT_EQ(cli("adapt --config " + (d / "u.json").string() + " --out " + (d / "r2").string()), 2);
    EXPECT_EQ(cli("refine --mesh " + (d / "missing.obj").string() + " --out " + (d / "r3").string()), 2);
}

TEST(Cli, RefineFromCheckpoint) {
    const fs::path& run = smoke_run();
    const fs::path d = scratch("refine");
    // An untrained field is nearly uniform, so the default level finds nothing.
    write(d / "default.json", R"({"preset": "smoke"})");
    EXPECT_EQ(cli("refine --config " + (d / "default.json").string() + " --checkpoint " +
                  (run / "checkpoint.dg3d").string() + " --out " + (d / "empty").string()),
              4);
    write(d / "iso.json", R"({"preset": "smoke", "refine": {"iso": 0.6}})");
    ASSERT_EQ(cli("refine --config " + (d / "iso.json").string() + " --checkpoint " +
                  (run / "checkpoint.dg3d").string() + " --out " + (d / "out").string()),
              0);
    for (int i = 0; i < 4; ++i)
        EXPECT_TRUE(fs::exists(d / "out" / "views" / ("view_" + std::to_string(i) + "_refined.ppm"))) << i;
    EXPECT_TRUE(fs::exists(d / "out" / "final_texture.ppm"));
    EXPECT_TRUE(fs::exists(d / "out" / "mesh.obj"));
}

TEST(Cli, GradcheckSucceeds) { EXPECT_EQ(cli("gradcheck"), 0); }
