// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/image.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>

namespace dg3d {

namespace {

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(path, "cannot open for writing");
    return out;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string line;
            std::getline(in, line);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const ImageBuffer& image) {
    auto out = open_out(path);
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<std::uint8_t> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const int src = image.channels == 1 ? 0 : c;
                row[static_cast<std::size_t>(x) * 3 + c] = to_byte(image.at(y, x, src));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw IoError(path, "write failed");
}

ImageBuffer read_ppm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    if (header_token(in) != "P6") throw IoError(path, "not a binary PPM (P6)");
    const int w = std::stoi(header_token(in));
    const int h = std::stoi(header_token(in));
    const int maxval = std::stoi(header_token(in));
    if (w <= 0 || h <= 0 || maxval != 255) throw IoError(path, "unsupported PPM header");
    ImageBuffer img(h, w, 3);
    std::vector<std::uint8_t> data(img.size());
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (in.gcount() != static_cast<std::streamsize>(data.size())) throw IoError(path, "truncated PPM payload");
    for (std::size_t i = 0; i < data.size(); ++i) img.pixels[i] = data[i] / 255.0;
    return img;
}

void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth, double near, double far) {
    auto out = open_out(path);
    out << "P5\n" << depth.width << ' ' << depth.height << "\n65535\n";
    std::vector<std::uint8_t> bytes(depth.depth.size() * 2);
    for (std::size_t i = 0; i < depth.depth.size(); ++i) {
        const double d = depth.coverage[i] > 0.5 ? depth.depth[i] : far;
        const double s = std::clamp((d - near) / (far - near), 0.0, 1.0);
        const auto v = static_cast<std::uint16_t>(std::lround(s * 65535.0));
        bytes[2 * i] = static_cast<std::uint8_t>(v >> 8);
        bytes[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path, "write failed");
}

void write_mask_pgm(const std::filesystem::path& path, int height, int width, const std::vector<double>& mask) {
    auto out = open_out(path);
    out << "P5\n" << width << ' ' << height << "\n255\n";
    std::vector<std::uint8_t> bytes(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) bytes[i] = to_byte(mask[i]);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(path, "write failed");
}

std::vector<double> read_mask_pgm(const std::filesystem::path& path, int& height, int& width) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(path, "cannot open for reading");
    if (header_token(in) != "P5") throw IoError(path, "not a binary PGM (P5)");
    width = std::stoi(header_token(in));
    height = std::stoi(header_token(in));
    if (std::stoi(header_token(in)) != 255) throw IoError(path, "only 8-bit masks are supported");
    std::vector<std::uint8_t> data(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (in.gcount() != static_cast<std::streamsize>(data.size())) throw IoError(path, "truncated PGM payload");
    std::vector<double> mask(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) mask[i] = data[i] / 255.0;
    return mask;
}

ImageBuffer to_gray(const ImageBuffer& image) {
    ImageBuffer gray(image.height, image.width, 1);
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            if (image.channels == 1) {
                gray.at(y, x) = image.at(y, x);
            } else {
                gray.at(y, x) = 0.299 * image.at(y, x, 0) + 0.587 * image.at(y, x, 1) + 0.114 * image.at(y, x, 2);
            }
        }
    }
    return gray;
}

}  // namespace dg3d
