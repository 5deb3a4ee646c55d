// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/render.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>

#include "parallel.hpp"

namespace dg3d::render {

namespace {

constexpr double kBoundRadius = 1.7320508075688772;  // sqrt(3): sphere around [-1, 1]^3

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Stratification offset in [0, 1), a pure function of (seed, pixel, sample).
double jitter(std::uint64_t seed, std::uint64_t pixel, int sample) {
    const std::uint64_t h = splitmix64(seed ^ splitmix64(pixel * 0x100000001b3ull + static_cast<std::uint64_t>(sample)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

struct AxisTap {
    int i0 = 0;
    int i1 = 0;
    double w1 = 0.0;
};

AxisTap axis_tap(double a, int resolution) {
    const double s = (a + 1.0) * 0.5 * (resolution - 1);
    int i0 = static_cast<int>(std::floor(s));
    i0 = std::clamp(i0, 0, std::max(resolution - 2, 0));
    return {i0, std::min(i0 + 1, resolution - 1), s - i0};
}

bool inside_cube(const Vec3& p) {
    return std::abs(p.x) <= 1.0 && std::abs(p.y) <= 1.0 && std::abs(p.z) <= 1.0;
}

// (col coordinate, row coordinate) for each plane: XY, XZ, YZ.
inline void plane_coords(const Vec3& p, int plane, double& col, double& row) {
    switch (plane) {
        case 0: col = p.x; row = p.y; break;
        case 1: col = p.x; row = p.z; break;
        default: col = p.y; row = p.z; break;
    }
}

struct PlaneTaps {
    std::size_t offset[3][4];  // base offsets (channel 0) of the four taps per plane
    double weight[3][4];
};

PlaneTaps plane_taps(const Vec3& p, int resolution, int channels) {
    PlaneTaps taps{};
    const std::size_t rr = static_cast<std::size_t>(resolution) * resolution;
    for (int plane = 0; plane < 3; ++plane) {
        double a, b;
        plane_coords(p, plane, a, b);
        const AxisTap tc = axis_tap(a, resolution);
        const AxisTap tr = axis_tap(b, resolution);
        const std::size_t base = static_cast<std::size_t>(plane) * channels * rr;
        taps.offset[plane][0] = base + static_cast<std::size_t>(tr.i0) * resolution + tc.i0;
        taps.offset[plane][1] = base + static_cast<std::size_t>(tr.i0) * resolution + tc.i1;
        taps.offset[plane][2] = base + static_cast<std::size_t>(tr.i1) * resolution + tc.i0;
        taps.offset[plane][3] = base + static_cast<std::size_t>(tr.i1) * resolution + tc.i1;
        taps.weight[plane][0] = (1 - tr.w1) * (1 - tc.w1);
        taps.weight[plane][1] = (1 - tr.w1) * tc.w1;
        taps.weight[plane][2] = tr.w1 * (1 - tc.w1);
        taps.weight[plane][3] = tr.w1 * tc.w1;
    }
    return taps;
}

void gather_feature(const double* planes, const PlaneTaps& taps, int channels, int resolution, double* feature) {
    const std::size_t rr = static_cast<std::size_t>(resolution) * resolution;
    for (int c = 0; c < channels; ++c) {
        double acc = 0.0;
        for (int plane = 0; plane < 3; ++plane)
            for (int k = 0; k < 4; ++k) acc += taps.weight[plane][k] * planes[taps.offset[plane][k] + c * rr];
        feature[c] = acc;
    }
}

void scatter_feature(const PlaneTaps& taps, int channels, int resolution, const double* feature_grad, double* out) {
    const std::size_t rr = static_cast<std::size_t>(resolution) * resolution;
    for (int c = 0; c < channels; ++c) {
        const double g = feature_grad[c];
        if (g == 0.0) continue;
        for (int plane = 0; plane < 3; ++plane)
            for (int k = 0; k < 4; ++k) out[taps.offset[plane][k] + c * rr] += taps.weight[plane][k] * g;
    }
}

inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Evaluates a dense stack on raw pointers, keeping per-layer activations for
// the adjoint.
class DecoderKernel {
public:
    struct Layer {
        const double* weight;
        const double* bias;
        int in;
        int out;
    };

    DecoderKernel(const std::vector<std::vector<double>>& weights, const std::vector<std::vector<double>>& biases,
                  const std::vector<std::array<int, 2>>& dims, double slope)
        : slope_(slope) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            layers_.push_back({weights[l].data(), biases[l].data(), dims[l][1], dims[l][0]});
            scratch_size_ += static_cast<std::size_t>(dims[l][1] + dims[l][0]);
        }
        if (layers_.empty() || layers_.back().out != 4) {
            throw std::invalid_argument("decoder must end in 4 outputs (density + rgb)");
        }
    }

    std::size_t scratch_size() const { return scratch_size_; }
    int input_dim() const { return layers_.front().in; }

    // scratch: per layer [input activations | pre-activations]. Returns the
    // raw 4-vector (pointer into scratch).
    const double* forward(const double* feature, double* scratch) const {
        double* cur = scratch;
        std::copy(feature, feature + layers_.front().in, cur);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const Layer& L = layers_[l];
            double* pre = cur + L.in;
            for (int o = 0; o < L.out; ++o) {
                const double* row = L.weight + static_cast<std::size_t>(o) * L.in;
                double acc = L.bias[o];
                for (int i = 0; i < L.in; ++i) acc += row[i] * cur[i];
                pre[o] = acc;
            }
            if (l + 1 < layers_.size()) {
                double* next = pre + L.out;
                for (int o = 0; o < L.out; ++o) next[o] = pre[o] > 0.0 ? pre[o] : slope_ * pre[o];
                cur = next;
            } else {
                return pre;
            }
        }
        return nullptr;
    }

    // dout: gradient w.r.t. the raw outputs. Accumulates weight/bias
    // gradients (when the corresponding pointer is non-null) and writes the
    // feature gradient.
    void backward(const double* scratch, const double* dout, double* dfeature,
                  const std::vector<double*>& weight_grads, const std::vector<double*>& bias_grads,
                  double* work) const {
        // Locate per-layer blocks.
        std::vector<const double*> acts(layers_.size());
        std::vector<const double*> pres(layers_.size());
        const double* cur = scratch;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            acts[l] = cur;
            pres[l] = cur + layers_[l].in;
            cur = pres[l] + layers_[l].out;
        }
        double* g_out = work;  // size >= max width
        double* g_in = work + max_width();
        std::copy(dout, dout + 4, g_out);
        for (std::size_t l = layers_.size(); l-- > 0;) {
            const Layer& L = layers_[l];
            if (l + 1 < layers_.size()) {
                for (int o = 0; o < L.out; ++o) g_out[o] *= pres[l][o] > 0.0 ? 1.0 : slope_;
            }
            if (weight_grads[l] != nullptr) {
                for (int o = 0; o < L.out; ++o) {
                    const double g = g_out[o];
                    if (g == 0.0) continue;
                    double* row = weight_grads[l] + static_cast<std::size_t>(o) * L.in;
                    for (int i = 0; i < L.in; ++i) row[i] += g * acts[l][i];
                }
            }
            if (bias_grads[l] != nullptr)
                for (int o = 0; o < L.out; ++o) bias_grads[l][o] += g_out[o];
            std::fill(g_in, g_in + L.in, 0.0);
            for (int o = 0; o < L.out; ++o) {
                const double g = g_out[o];
                if (g == 0.0) continue;
                const double* row = L.weight + static_cast<std::size_t>(o) * L.in;
                for (int i = 0; i < L.in; ++i) g_in[i] += row[i] * g;
            }
            std::swap(g_out, g_in);
        }
        std::copy(g_out, g_out + layers_.front().in, dfeature);
    }

    int max_width() const {
        int w = 4;
        for (const auto& L : layers_) w = std::max({w, L.in, L.out});
        return w;
    }

    const std::vector<Layer>& layers() const { return layers_; }

private:
    std::vector<Layer> layers_;
    double slope_;
    std::size_t scratch_size_ = 0;
};

struct DecoderCopy {
    std::vector<std::vector<double>> weights;
    std::vector<std::vector<double>> biases;
    std::vector<std::array<int, 2>> dims;
    double slope = 0.2;

    explicit DecoderCopy(const DenseStack& stack) : slope(stack.slope) {
        for (const auto& layer : stack.layers) {
            weights.push_back(layer.weight.values);
            biases.push_back(layer.bias.values);
            dims.push_back({static_cast<int>(layer.weight.shape[0]), static_cast<int>(layer.weight.shape[1])});
        }
    }
    DecoderKernel kernel() const { return DecoderKernel(weights, biases, dims, slope); }
};

struct RenderSetup {
    CameraFrame frame;
    int height;
    int width;
    int samples;
    std::uint64_t seed;
    bool stratified;
};

// Per-ray forward pass; fills samples (sigma/rgb/delta/t) and, when
// `keep` is true, the decoder scratch and tap tables needed by the adjoint.
struct RayState {
    std::vector<RaySample> samples;
    std::vector<char> inside;
    std::vector<PlaneTaps> taps;
    std::vector<double> scratch;
    std::vector<double> raw;  // 4 per sample
    std::vector<double> feature;
};

bool trace_ray(const RenderSetup& s, int row, int col, const double* planes, int channels, int resolution,
               const DecoderKernel& dec, RayState& st, bool keep) {
    const Ray ray = pixel_ray(s.frame, s.height, s.width, row, col);
    double near, far;
    st.samples.clear();
    if (!sphere_bounds(ray, near, far)) return false;
    const int n = s.samples;
    const std::uint64_t pixel = static_cast<std::uint64_t>(row) * s.width + col;
    const double bin = (far - near) / n;
    st.samples.resize(n);
    st.inside.assign(n, 0);
    st.feature.resize(channels);
    if (keep) {
        st.taps.resize(n);
        st.scratch.resize(dec.scratch_size() * n);
        st.raw.resize(4u * n);
    }
    std::vector<double>& local = st.scratch;
    if (!keep && local.size() < dec.scratch_size()) local.resize(dec.scratch_size());
    for (int i = 0; i < n; ++i) {
        const double u = s.stratified ? jitter(s.seed, pixel, i) : 0.5;
        st.samples[i].t = near + (i + u) * bin;
    }
    for (int i = 0; i < n; ++i) {
        RaySample& smp = st.samples[i];
        smp.delta = (i + 1 < n ? st.samples[i + 1].t : far) - smp.t;
        const Vec3 p = ray.origin + ray.direction * smp.t;
        if (!inside_cube(p)) continue;
        st.inside[i] = 1;
        const PlaneTaps taps = plane_taps(p, resolution, channels);
        gather_feature(planes, taps, channels, resolution, st.feature.data());
        double* scratch = keep ? st.scratch.data() + dec.scratch_size() * i : local.data();
        const double* raw = dec.forward(st.feature.data(), scratch);
        smp.sigma = softplus(raw[0]);
        for (int c = 0; c < 3; ++c) smp.rgb[c] = sigmoid(raw[1 + c]);
        if (keep) {
            st.taps[i] = taps;
            std::copy(raw, raw + 4, st.raw.data() + 4 * i);
        }
    }
    return true;
}

void check_triplane_size(std::size_t size, int channels, int resolution) {
    if (resolution < 2 || size != TriplaneGrid::element_count(channels, resolution)) {
        throw std::invalid_argument("triplane of " + std::to_string(size) + " values does not match (3," +
                                    std::to_string(channels) + "," + std::to_string(resolution) + "," +
                                    std::to_string(resolution) + ")");
    }
}

RenderResult render_forward(const DecoderCopy& decoder, std::span<const double> planes, int channels,
                            int resolution, const Camera& camera, const RenderOptions& options) {
    check_triplane_size(planes.size(), channels, resolution);
    if (options.samples < 2) throw std::invalid_argument("render needs at least 2 samples per ray");
    const Camera cam = camera.normalized();
    const RenderSetup setup{camera_frame(cam), cam.height, cam.width, options.samples, options.seed,
                            options.stratified};
    const DecoderKernel dec = decoder.kernel();
    if (dec.input_dim() != channels) throw std::invalid_argument("decoder input width != triplane channels");
    RenderResult out{ImageBuffer(cam.height, cam.width, 3), DepthMap(cam.height, cam.width)};
    detail::parallel_for(cam.height, worker_count(), [&](int row) {
        RayState st;
        for (int col = 0; col < cam.width; ++col) {
            if (!trace_ray(setup, row, col, planes.data(), channels, resolution, dec, st, false)) continue;
            const CompositeResult c = composite(st.samples);
            for (int k = 0; k < 3; ++k) out.image.at(row, col, k) = c.rgb[k];
            out.depth.depth[out.depth.index(row, col)] = c.depth;
            out.depth.coverage[out.depth.index(row, col)] = c.opacity;
        }
    });
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Camera

double normalize_azimuth(double degrees) {
    double a = std::fmod(degrees + 180.0, 360.0);
    if (a < 0.0) a += 360.0;
    return a - 180.0;
}

Camera Camera::normalized() const {
    Camera c = *this;
    c.azimuth = normalize_azimuth(azimuth);
    return c;
}

Vec3 Camera::position() const {
    const double az = radians(azimuth), el = radians(elevation);
    return {radius * std::cos(el) * std::sin(az), radius * std::sin(el), radius * std::cos(el) * std::cos(az)};
}

CameraFrame camera_frame(const Camera& camera) {
    if (!(camera.fov_y > 0.0 && camera.fov_y < 180.0)) {
        throw std::invalid_argument("camera fov_y must lie in (0, 180), got " + std::to_string(camera.fov_y));
    }
    if (camera.height < 1 || camera.width < 1) throw std::invalid_argument("camera resolution must be >= 1x1");
    if (std::abs(camera.elevation) >= 90.0) throw std::invalid_argument("camera elevation must lie in (-90, 90)");
    CameraFrame f;
    f.origin = camera.position();
    f.forward = normalized(-f.origin);
    f.right = normalized(cross(f.forward, Vec3{0.0, 1.0, 0.0}));
    f.up = cross(f.right, f.forward);
    f.tan_half_fov = std::tan(radians(camera.fov_y) * 0.5);
    f.aspect = static_cast<double>(camera.width) / camera.height;
    return f;
}

Ray pixel_ray(const CameraFrame& frame, int height, int width, double row, double col) {
    const double sx = ((col + 0.5) / width * 2.0 - 1.0) * frame.tan_half_fov * frame.aspect;
    const double sy = (1.0 - (row + 0.5) / height * 2.0) * frame.tan_half_fov;
    return {frame.origin, normalized(frame.forward + frame.right * sx + frame.up * sy)};
}

std::vector<Ray> ray_grid(const Camera& camera) {
    const CameraFrame frame = camera_frame(camera.normalized());
    std::vector<Ray> rays;
    rays.reserve(static_cast<std::size_t>(camera.height) * camera.width);
    for (int r = 0; r < camera.height; ++r)
        for (int c = 0; c < camera.width; ++c) rays.push_back(pixel_ray(frame, camera.height, camera.width, r, c));
    return rays;
}

Projection project(const CameraFrame& frame, int height, int width, const Vec3& point) {
    Projection p;
    const Vec3 v = point - frame.origin;
    const double zc = dot(v, frame.forward);
    p.distance = norm(v);
    p.in_front = zc > 1e-9;
    if (!p.in_front) return p;
    const double xc = dot(v, frame.right) / zc;
    const double yc = dot(v, frame.up) / zc;
    p.col = (xc / (frame.tan_half_fov * frame.aspect) + 1.0) * 0.5 * width - 0.5;
    p.row = (1.0 - yc / frame.tan_half_fov) * 0.5 * height - 0.5;
    return p;
}

bool sphere_bounds(const Ray& ray, double& near, double& far) {
    const double b = dot(ray.origin, ray.direction);
    const double c = dot(ray.origin, ray.origin) - kBoundRadius * kBoundRadius;
    const double disc = b * b - c;
    if (disc <= 0.0) return false;
    const double root = std::sqrt(disc);
    near = std::max(-b - root, 0.0);
    far = -b + root;
    return far > near;
}

std::array<double, 2> depth_range(const Camera& camera) {
    return {std::max(camera.radius - kBoundRadius, 0.0), camera.radius + kBoundRadius};
}

// ---------------------------------------------------------------------------
// Triplane sampling

std::vector<double> sample_triplane(const TriplaneGrid& triplane, const Vec3& p) {
    check_triplane_size(triplane.values.size(), triplane.channels, triplane.resolution);
    std::vector<double> feature(static_cast<std::size_t>(triplane.channels), 0.0);
    if (!inside_cube(p)) return feature;
    const PlaneTaps taps = plane_taps(p, triplane.resolution, triplane.channels);
    gather_feature(triplane.values.data(), taps, triplane.channels, triplane.resolution, feature.data());
    return feature;
}

void sample_triplane_adjoint(const TriplaneGrid& triplane, const Vec3& p, std::span<const double> feature_grad,
                             std::span<double> plane_grad, Vec3* point_grad) {
    if (!inside_cube(p)) return;
    const int R = triplane.resolution, C = triplane.channels;
    const PlaneTaps taps = plane_taps(p, R, C);
    if (!plane_grad.empty()) scatter_feature(taps, C, R, feature_grad.data(), plane_grad.data());
    if (point_grad == nullptr) return;
    const std::size_t rr = static_cast<std::size_t>(R) * R;
    const double ds = 0.5 * (R - 1);
    double dp[3] = {0.0, 0.0, 0.0};
    for (int plane = 0; plane < 3; ++plane) {
        double a, b;
        plane_coords(p, plane, a, b);
        const AxisTap tc = axis_tap(a, R);
        const AxisTap tr = axis_tap(b, R);
        double dcol = 0.0, drow = 0.0;
        for (int c = 0; c < C; ++c) {
            const double* v = triplane.values.data() + taps.offset[plane][0] + c * rr;
            const double v00 = v[0];
            const double v01 = triplane.values[taps.offset[plane][1] + c * rr];
            const double v10 = triplane.values[taps.offset[plane][2] + c * rr];
            const double v11 = triplane.values[taps.offset[plane][3] + c * rr];
            dcol += feature_grad[c] * ((1 - tr.w1) * (v01 - v00) + tr.w1 * (v11 - v10)) * ds;
            drow += feature_grad[c] * ((1 - tc.w1) * (v10 - v00) + tc.w1 * (v11 - v01)) * ds;
        }
        const int ca = plane == 2 ? 1 : 0;
        const int ra = plane == 0 ? 1 : 2;
        dp[ca] += dcol;
        dp[ra] += drow;
    }
    point_grad->x += dp[0];
    point_grad->y += dp[1];
    point_grad->z += dp[2];
}

// ---------------------------------------------------------------------------
// Compositing

std::vector<double> composite_weights(std::span<const RaySample> samples) {
    std::vector<double> w(samples.size());
    double transmittance = 1.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double alpha = 1.0 - std::exp(-samples[i].sigma * samples[i].delta);
        w[i] = transmittance * alpha;
        transmittance *= 1.0 - alpha;
    }
    return w;
}

CompositeResult composite(std::span<const RaySample> samples) {
    CompositeResult r;
    double transmittance = 1.0;
    for (const auto& s : samples) {
        const double alpha = 1.0 - std::exp(-s.sigma * s.delta);
        const double w = transmittance * alpha;
        for (int c = 0; c < 3; ++c) r.rgb[c] += w * s.rgb[c];
        r.opacity += w;
        r.depth += w * s.t;
        transmittance *= 1.0 - alpha;
    }
    return r;
}

CompositeGrad composite_backward(std::span<const RaySample> samples, const std::array<double, 3>& rgb_grad) {
    const std::size_t n = samples.size();
    CompositeGrad g{std::vector<double>(n, 0.0), std::vector<std::array<double, 3>>(n)};
    const CompositeResult total = composite(samples);
    double transmittance = 1.0;
    std::array<double, 3> prefix{};  // color accumulated through sample i
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[i];
        const double alpha = 1.0 - std::exp(-s.sigma * s.delta);
        const double w = transmittance * alpha;
        const double t_next = transmittance * (1.0 - alpha);
        double dsigma = 0.0;
        for (int c = 0; c < 3; ++c) {
            prefix[c] += w * s.rgb[c];
            g.rgb[i][c] = w * rgb_grad[c];
            dsigma += rgb_grad[c] * s.delta * (t_next * s.rgb[c] - (total.rgb[c] - prefix[c]));
        }
        g.sigma[i] = dsigma;
        transmittance = t_next;
    }
    return g;
}

// ---------------------------------------------------------------------------
// Decoder

Decoded decode(const DenseStack& decoder, std::span<const double> feature) {
    const DecoderCopy copy(decoder);
    const DecoderKernel dec = copy.kernel();
    if (static_cast<int>(feature.size()) != dec.input_dim()) throw std::invalid_argument("decode: feature width");
    std::vector<double> scratch(dec.scratch_size());
    const double* raw = dec.forward(feature.data(), scratch.data());
    Decoded d;
    d.sigma = softplus(raw[0]);
    for (int c = 0; c < 3; ++c) d.rgb[c] = sigmoid(raw[1 + c]);
    return d;
}

// ---------------------------------------------------------------------------
// Volume rendering

int worker_count() {
    int n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
    if (const char* env = std::getenv("DG3D_THREADS")) {
        const int cap = std::atoi(env);
        if (cap > 0) n = std::min(n, cap);
    }
    return n;
}

RenderResult render(const DenseStack& decoder, const TriplaneGrid& triplane, const Camera& camera,
                    const RenderOptions& options) {
    return render_forward(DecoderCopy(decoder), triplane.values, triplane.channels, triplane.resolution, camera,
                          options);
}

RenderResult render(const gan3d::GeneratorParams& params, const TriplaneGrid& triplane, const Camera& camera,
                    const RenderOptions& options) {
    return render(params.decoder, triplane, camera, options);
}

namespace {

template <class Bind>
Var render_node_impl(Graph& g, const DenseStack& decoder, Bind bind, Var triplane, int channels, int resolution,
                     const Camera& camera, const RenderOptions& options, DepthMap* depth_out) {
    auto copy = std::make_shared<DecoderCopy>(decoder);
    std::vector<double> planes(g.value(triplane).begin(), g.value(triplane).end());
    RenderResult fwd = render_forward(*copy, planes, channels, resolution, camera, options);
    if (depth_out != nullptr) *depth_out = fwd.depth;

    std::vector<Var> inputs{triplane};
    for (std::size_t l = 0; l < decoder.layers.size(); ++l) {
        inputs.push_back(bind(l, true));
        inputs.push_back(bind(l, false));
    }
    const Camera cam = camera.normalized();
    const std::size_t H = static_cast<std::size_t>(cam.height), W = static_cast<std::size_t>(cam.width);
    auto backward = [copy, planes = std::move(planes), channels, resolution, cam, options](
                        std::span<const double> gout, std::vector<std::span<double>>& gin) {
        const DecoderKernel dec = copy->kernel();
        const RenderSetup setup{camera_frame(cam), cam.height, cam.width, options.samples, options.seed,
                                options.stratified};
        const std::size_t L = dec.layers().size();
        const bool want_planes = !gin[0].empty();
        // Fixed row chunks so the reduction order does not depend on threads.
        const int chunks = std::min(cam.height, 16);
        struct Acc {
            std::vector<double> planes;
            std::vector<std::vector<double>> w, b;
        };
        std::vector<Acc> acc(static_cast<std::size_t>(chunks));
        detail::parallel_for(chunks, worker_count(), [&](int chunk) {
            Acc& a = acc[static_cast<std::size_t>(chunk)];
            if (want_planes) a.planes.assign(planes.size(), 0.0);
            std::vector<double*> wptr(L, nullptr), bptr(L, nullptr);
            a.w.resize(L);
            a.b.resize(L);
            for (std::size_t l = 0; l < L; ++l) {
                if (!gin[1 + 2 * l].empty()) {
                    a.w[l].assign(gin[1 + 2 * l].size(), 0.0);
                    wptr[l] = a.w[l].data();
                }
                if (!gin[2 + 2 * l].empty()) {
                    a.b[l].assign(gin[2 + 2 * l].size(), 0.0);
                    bptr[l] = a.b[l].data();
                }
            }
            std::vector<double> work(2 * static_cast<std::size_t>(dec.max_width()));
            std::vector<double> dfeat(static_cast<std::size_t>(channels));
            RayState st;
            const int row0 = chunk * cam.height / chunks;
            const int row1 = (chunk + 1) * cam.height / chunks;
            for (int row = row0; row < row1; ++row) {
                for (int col = 0; col < cam.width; ++col) {
                    const std::size_t pix = (static_cast<std::size_t>(row) * cam.width + col) * 3;
                    const std::array<double, 3> grgb{gout[pix], gout[pix + 1], gout[pix + 2]};
                    if (grgb[0] == 0.0 && grgb[1] == 0.0 && grgb[2] == 0.0) continue;
                    if (!trace_ray(setup, row, col, planes.data(), channels, resolution, dec, st, true)) continue;
                    const CompositeGrad cg = composite_backward(st.samples, grgb);
                    for (std::size_t i = 0; i < st.samples.size(); ++i) {
                        if (!st.inside[i]) continue;
                        const double* raw = st.raw.data() + 4 * i;
                        double dout[4];
                        dout[0] = cg.sigma[i] * sigmoid(raw[0]);
                        for (int c = 0; c < 3; ++c) {
                            const double s = st.samples[i].rgb[c];
                            dout[1 + c] = cg.rgb[i][c] * s * (1.0 - s);
                        }
                        dec.backward(st.scratch.data() + dec.scratch_size() * i, dout, dfeat.data(), wptr, bptr,
                                     work.data());
                        if (want_planes) scatter_feature(st.taps[i], channels, resolution, dfeat.data(), a.planes.data());
                    }
                }
            }
        });
        for (const Acc& a : acc) {
            if (want_planes)
                for (std::size_t i = 0; i < a.planes.size(); ++i) gin[0][i] += a.planes[i];
            for (std::size_t l = 0; l < L; ++l) {
                for (std::size_t i = 0; i < a.w[l].size(); ++i) gin[1 + 2 * l][i] += a.w[l][i];
                for (std::size_t i = 0; i < a.b[l].size(); ++i) gin[2 + 2 * l][i] += a.b[l][i];
            }
        }
    };
    return g.custom("render", std::move(inputs), std::move(fwd.image.pixels), {H, W, 3}, std::move(backward));
}

}  // namespace

Var render_node(Graph& g, DenseStack& decoder, Var triplane, int channels, int resolution, const Camera& camera,
                const RenderOptions& options, DepthMap* depth_out) {
    return render_node_impl(
        g, decoder,
        [&](std::size_t l, bool weight) {
            auto& p = weight ? decoder.layers[l].weight : decoder.layers[l].bias;
            return p.trainable ? g.leaf(p) : g.input(p);
        },
        triplane, channels, resolution, camera, options, depth_out);
}

Var render_node(Graph& g, const DenseStack& decoder, Var triplane, int channels, int resolution,
                const Camera& camera, const RenderOptions& options, DepthMap* depth_out) {
    return render_node_impl(
        g, decoder,
        [&](std::size_t l, bool weight) {
            return g.input(weight ? decoder.layers[l].weight : decoder.layers[l].bias);
        },
        triplane, channels, resolution, camera, options, depth_out);
}

}  // namespace dg3d::render
