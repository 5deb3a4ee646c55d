// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <set>
#include <unordered_map>

#include "dg3d/meshtex.hpp"
#include "mc_tables.hpp"
#include "parallel.hpp"

namespace dg3d::meshtex {

// ---------------------------------------------------------------------------
// Mesh queries

void validate(const Mesh& mesh) {
    const int nv = static_cast<int>(mesh.vertices.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        for (int idx : mesh.faces[f]) {
            if (idx < 0 || idx >= nv) {
                throw std::invalid_argument("face " + std::to_string(f) + " references vertex " + std::to_string(idx) +
                                            " of " + std::to_string(nv));
            }
        }
    }
    if (!mesh.uv.empty()) {
        if (mesh.uv.size() != mesh.vertices.size()) throw std::invalid_argument("uv count differs from vertex count");
        for (std::size_t i = 0; i < mesh.uv.size(); ++i) {
            const auto& t = mesh.uv[i];
            if (!(t[0] >= 0.0 && t[0] <= 1.0 && t[1] >= 0.0 && t[1] <= 1.0)) {
                throw std::invalid_argument("uv of vertex " + std::to_string(i) + " outside [0, 1]^2");
            }
        }
    }
}

double face_area(const Mesh& mesh, std::size_t face) {
    const auto& f = mesh.faces[face];
    const Vec3 a = mesh.vertices[f[0]], b = mesh.vertices[f[1]], c = mesh.vertices[f[2]];
    return 0.5 * norm(cross(b - a, c - a));
}

namespace {

std::map<std::pair<int, int>, int> edge_counts(const Mesh& mesh) {
    std::map<std::pair<int, int>, int> counts;
    for (const auto& f : mesh.faces) {
        for (int e = 0; e < 3; ++e) {
            const int a = f[e], b = f[(e + 1) % 3];
            ++counts[{std::min(a, b), std::max(a, b)}];
        }
    }
    return counts;
}

}  // namespace

long euler_characteristic(const Mesh& mesh) {
    std::set<int> used;
    for (const auto& f : mesh.faces) used.insert(f.begin(), f.end());
    return static_cast<long>(used.size()) - static_cast<long>(edge_counts(mesh).size()) +
           static_cast<long>(mesh.faces.size());
}

bool is_watertight(const Mesh& mesh) {
    if (mesh.faces.empty()) return false;
    for (const auto& [edge, count] : edge_counts(mesh))
        if (count != 2) return false;
    return true;
}

double signed_volume(const Mesh& mesh) {
    double v = 0.0;
    for (const auto& f : mesh.faces) {
        v += dot(mesh.vertices[f[0]], cross(mesh.vertices[f[1]], mesh.vertices[f[2]]));
    }
    return v / 6.0;
}

// ---------------------------------------------------------------------------
// Marching cubes

double default_iso(int n) { return std::numbers::ln2 / (2.0 / n); }

namespace {

constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 0, 1}, {0, 0, 1},
                               {0, 1, 0}, {1, 1, 0}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

}  // namespace

std::optional<Mesh> marching_cubes_lattice(std::span<const double> values, int n, double iso) {
    if (n < 1) throw std::invalid_argument("marching_cubes: grid resolution must be >= 1");
    const std::size_t np = static_cast<std::size_t>(n) + 1;
    if (values.size() != np * np * np) throw std::invalid_argument("marching_cubes: lattice size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw std::domain_error("marching_cubes: non-finite field value at lattice point " + std::to_string(i));
    }
    auto lattice = [np](std::size_t i, std::size_t j, std::size_t k) { return (k * np + j) * np + i; };
    auto coord = [n](std::size_t i) { return -1.0 + 2.0 * static_cast<double>(i) / n; };

    Mesh mesh;
    std::unordered_map<std::size_t, int> vertex_of_edge;
    auto edge_vertex = [&](std::size_t i, std::size_t j, std::size_t k, int edge) {
        const int* ca = kCorner[kEdgeCorners[edge][0]];
        const int* cb = kCorner[kEdgeCorners[edge][1]];
        std::size_t pa[3] = {i + ca[0], j + ca[1], k + ca[2]};
        std::size_t pb[3] = {i + cb[0], j + cb[1], k + cb[2]};
        if (lattice(pb[0], pb[1], pb[2]) < lattice(pa[0], pa[1], pa[2])) std::swap(pa, pb);
        const int axis = pa[0] != pb[0] ? 0 : (pa[1] != pb[1] ? 1 : 2);
        const std::size_t key = lattice(pa[0], pa[1], pa[2]) * 3 + static_cast<std::size_t>(axis);
        auto it = vertex_of_edge.find(key);
        if (it != vertex_of_edge.end()) return it->second;
        const double va = values[lattice(pa[0], pa[1], pa[2])];
        const double vb = values[lattice(pb[0], pb[1], pb[2])];
        double mu = va == vb ? 0.5 : (iso - va) / (vb - va);
        // Keep vertices off lattice points so neighbouring edges never coincide.
        mu = std::clamp(mu, 1e-7, 1.0 - 1e-7);
        const Vec3 a{coord(pa[0]), coord(pa[1]), coord(pa[2])};
        const Vec3 b{coord(pb[0]), coord(pb[1]), coord(pb[2])};
        const int id = static_cast<int>(mesh.vertices.size());
        mesh.vertices.push_back(a + (b - a) * mu);
        vertex_of_edge.emplace(key, id);
        return id;
    };

    for (std::size_t k = 0; k < static_cast<std::size_t>(n); ++k) {
        for (std::size_t j = 0; j < static_cast<std::size_t>(n); ++j) {
            for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    if (values[lattice(i + kCorner[c][0], j + kCorner[c][1], k + kCorner[c][2])] < iso) cube |= 1 << c;
                }
                if (detail::kEdgeTable[cube] == 0) continue;
                const int* tri = detail::kTriTable[cube];
                for (int t = 0; tri[t] != -1; t += 3) {
                    const int a = edge_vertex(i, j, k, tri[t]);
                    const int b = edge_vertex(i, j, k, tri[t + 1]);
                    const int c = edge_vertex(i, j, k, tri[t + 2]);
                    // Table winding faces the low-valued side; flip so normals point outward
                    // (toward decreasing field).
                    mesh.faces.push_back({a, c, b});
                }
            }
        }
    }

    // Cleanup: drop faces that collapsed to zero area.
    std::vector<std::array<int, 3>> kept;
    kept.reserve(mesh.faces.size());
    for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
        if (face_area(mesh, f) <= 0.0) continue;
        kept.push_back(t);
    }
    if (kept.empty()) return std::nullopt;
    mesh.faces = std::move(kept);

    std::vector<int> remap(mesh.vertices.size(), -1);
    Mesh out;
    for (auto& f : mesh.faces) {
        for (int& idx : f) {
            if (remap[idx] < 0) {
                remap[idx] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(mesh.vertices[idx]);
            }
            idx = remap[idx];
        }
    }
    out.faces = std::move(mesh.faces);
    return out;
}

std::optional<Mesh> marching_cubes(const ScalarField& field, int n, double iso) {
    if (n < 1) throw std::invalid_argument("marching_cubes: grid resolution must be >= 1");
    const std::size_t np = static_cast<std::size_t>(n) + 1;
    std::vector<double> values(np * np * np);
    dg3d::detail::parallel_for(static_cast<int>(np), render::worker_count(), [&](int k) {
        for (std::size_t j = 0; j < np; ++j) {
            for (std::size_t i = 0; i < np; ++i) {
                const Vec3 p{-1.0 + 2.0 * i / n, -1.0 + 2.0 * j / n, -1.0 + 2.0 * k / n};
                values[(static_cast<std::size_t>(k) * np + j) * np + i] = field(p);
            }
        }
    });
    return marching_cubes_lattice(values, n, iso);
}

ScalarField density_field(const gan3d::DenseStack& decoder, const gan3d::TriplaneGrid& triplane) {
    return [decoder, triplane](const Vec3& p) {
        if (std::abs(p.x) > 1.0 || std::abs(p.y) > 1.0 || std::abs(p.z) > 1.0) return 0.0;
        return render::decode(decoder, render::sample_triplane(triplane, p)).sigma;
    };
}

// ---------------------------------------------------------------------------
// Cylinder unwrap

Mesh cylinder_unwrap(const Mesh& mesh) {
    if (mesh.vertices.empty() || mesh.faces.empty()) throw DegenerateMesh("cylinder_unwrap: empty mesh");
    validate(Mesh{mesh.vertices, mesh.faces, {}, {}});
    double ymin = mesh.vertices.front().y, ymax = ymin;
    for (const auto& v : mesh.vertices) {
        ymin = std::min(ymin, v.y);
        ymax = std::max(ymax, v.y);
    }
    if (!(ymax > ymin)) throw DegenerateMesh("cylinder_unwrap: y_max equals y_min (degenerate height)");

    Mesh out;
    out.vertices = mesh.vertices;
    out.faces = mesh.faces;
    out.uv.resize(mesh.vertices.size());
    out.seam_duplicate.assign(mesh.vertices.size(), 0);
    for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
        const Vec3& v = mesh.vertices[i];
        const double u = (std::atan2(v.x, v.z) + std::numbers::pi) / (2.0 * std::numbers::pi);
        out.uv[i] = {std::clamp(u, 0.0, 1.0), (v.y - ymin) / (ymax - ymin)};
    }
    std::vector<int> duplicate(mesh.vertices.size(), -1);
    for (auto& f : out.faces) {
        double lo = 1.0, hi = 0.0;
        for (int idx : f) {
            lo = std::min(lo, out.uv[idx][0]);
            hi = std::max(hi, out.uv[idx][0]);
        }
        if (hi - lo <= 0.5) continue;
        for (int& idx : f) {
            if (out.uv[idx][0] >= 0.5) continue;
            if (duplicate[idx] < 0) {
                duplicate[idx] = static_cast<int>(out.vertices.size());
                out.vertices.push_back(out.vertices[idx]);
                out.uv.push_back({std::min(out.uv[idx][0] + 1.0, 1.0), out.uv[idx][1]});
                out.seam_duplicate.push_back(1);
            }
            idx = duplicate[idx];
        }
    }
    // Originals whose every face crossed the seam are now unreferenced.
    std::vector<int> remap(out.vertices.size(), -1);
    for (const auto& f : out.faces)
        for (int idx : f) remap[idx] = 0;
    Mesh packed;
    for (std::size_t i = 0; i < remap.size(); ++i) {
        if (remap[i] < 0) continue;
        remap[i] = static_cast<int>(packed.vertices.size());
        packed.vertices.push_back(out.vertices[i]);
        packed.uv.push_back(out.uv[i]);
        packed.seam_duplicate.push_back(out.seam_duplicate[i]);
    }
    packed.faces = out.faces;
    for (auto& f : packed.faces)
        for (int& idx : f) idx = remap[idx];
    return packed;
}

}  // namespace dg3d::meshtex
