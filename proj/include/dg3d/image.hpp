// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace dg3d {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    Vec3 operator-() const { return {-x, -y, -z}; }
    double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) { return a * (1.0 / norm(a)); }

/// H x W x C float image, row-major with interleaved channels. Values are
/// unclamped; clamping happens only on export.
struct ImageBuffer {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<double> pixels;

    ImageBuffer() = default;
    ImageBuffer(int h, int w, int c = 3, double fill = 0.0)
        : height(h), width(w), channels(c), pixels(static_cast<std::size_t>(h) * w * c, fill) {}

    std::size_t size() const { return pixels.size(); }
    std::size_t index(int y, int x, int c = 0) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    double& at(int y, int x, int c = 0) { return pixels[index(y, x, c)]; }
    double at(int y, int x, int c = 0) const { return pixels[index(y, x, c)]; }
    bool same_shape(const ImageBuffer& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

/// Expected ray-termination distance plus accumulated opacity per pixel.
struct DepthMap {
    int height = 0;
    int width = 0;
    std::vector<double> depth;
    std::vector<double> coverage;

    DepthMap() = default;
    DepthMap(int h, int w)
        : height(h), width(w), depth(static_cast<std::size_t>(h) * w, 0.0),
          coverage(static_cast<std::size_t>(h) * w, 0.0) {}
    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * width + x; }
};

class IoError : public std::runtime_error {
public:
    IoError(const std::filesystem::path& path, const std::string& what)
        : std::runtime_error(path.string() + ": " + what), path_(path) {}
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

/// P6, 8-bit, round(clamp(v, 0, 1) * 255). Single-channel images are
/// replicated to gray.
void write_ppm(const std::filesystem::path& path, const ImageBuffer& image);
ImageBuffer read_ppm(const std::filesystem::path& path);

/// P5, 16-bit big-endian; depth mapped linearly from [near, far] onto
/// [0, 65535]. Pixels with coverage <= 0.5 are written as far.
void write_depth_pgm(const std::filesystem::path& path, const DepthMap& depth, double near, double far);

/// P5, 8-bit; values clamped to [0, 1].
void write_mask_pgm(const std::filesystem::path& path, int height, int width, const std::vector<double>& mask);
std::vector<double> read_mask_pgm(const std::filesystem::path& path, int& height, int& width);

/// ITU-R 601 luminance of a 3-channel image.
ImageBuffer to_gray(const ImageBuffer& image);

}  // namespace dg3d
