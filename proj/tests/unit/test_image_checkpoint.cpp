// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <cstring>
#include <fstream>

#include "dg3d/checkpoint.hpp"
#include "dg3d/image.hpp"

using namespace dg3d;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dg3d_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Image, PpmRoundTripQuantizes) {
    const auto dir = temp_dir("ppm");
    ImageBuffer img(2, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i) / 17.0;
    img.pixels[0] = -1.0;
    img.pixels[1] = 2.0;
    write_ppm(dir / "a.ppm", img);
    const ImageBuffer back = read_ppm(dir / "a.ppm");
    ASSERT_TRUE(back.same_shape(img));
    EXPECT_EQ(back.pixels[0], 0.0);
    EXPECT_EQ(back.pixels[1], 1.0);
    for (std::size_t i = 2; i < img.pixels.size(); ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 0.5 / 255 + 1e-12);
}

TEST(Image, GrayPpmReplicates) {
    const auto dir = temp_dir("gray");
    ImageBuffer img(1, 2, 1);
    img.pixels = {0.0, 1.0};
    write_ppm(dir / "g.ppm", img);
    const ImageBuffer back = read_ppm(dir / "g.ppm");
    EXPECT_EQ(back.channels, 3);
    EXPECT_EQ(back.pixels, std::vector<double>({0, 0, 0, 1, 1, 1}));
}

TEST(Image, MaskRoundTrip) {
    const auto dir = temp_dir("mask");
    const std::vector<double> m{0, 1, 1, 0, 0, 1};
    write_mask_pgm(dir / "m.pgm", 2, 3, m);
    int h = 0, w = 0;
    EXPECT_EQ(read_mask_pgm(dir / "m.pgm", h, w), m);
    EXPECT_EQ(h, 2);
    EXPECT_EQ(w, 3);
}

TEST(Image, MissingFileThrowsIoError) { EXPECT_THROW(read_ppm("/nonexistent/x.ppm"), IoError); }

TEST(Image, GrayIsLuminance) {
    ImageBuffer img(1, 1);
    img.pixels = {1.0, 0.0, 0.0};
    EXPECT_NEAR(to_gray(img).pixels[0], 0.299, 1e-12);
}

TEST(Checkpoint, RoundTripIsBitwise) {
    const auto dir = temp_dir("ckpt");
    std::vector<NamedTensor> t{{"a", {2, 2}, {1.0, -0.0, 3.5e-300, 1e300}}, {"b.c", {1}, {0.1}}};
    write_checkpoint(dir / "x.dg3d", t);
    const auto back = read_checkpoint(dir / "x.dg3d");
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].name, "a");
    EXPECT_EQ(back[0].dims, t[0].dims);
    EXPECT_EQ(std::memcmp(back[0].values.data(), t[0].values.data(), 4 * sizeof(double)), 0);
    EXPECT_EQ(find_tensor(back, "b.c")->values[0], 0.1);
    EXPECT_EQ(find_tensor(back, "missing"), nullptr);
}

TEST(Checkpoint, BadMagicRejected) {
    const auto dir = temp_dir("magic");
    std::ofstream(dir / "bad.dg3d") << "NOPE and more bytes";
    EXPECT_THROW(read_checkpoint(dir / "bad.dg3d"), CheckpointError);
}

TEST(Checkpoint, TruncatedFileRejected) {
    const auto dir = temp_dir("trunc");
    write_checkpoint(dir / "x.dg3d", {{"a", {3}, {1, 2, 3}}});
    const auto size = fs::file_size(dir / "x.dg3d");
    fs::resize_file(dir / "x.dg3d", size - 4);
    EXPECT_THROW(read_checkpoint(dir / "x.dg3d"), CheckpointError);
}
