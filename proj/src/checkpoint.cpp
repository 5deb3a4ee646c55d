// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace dg3d {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& in, const std::filesystem::path& path) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (in.gcount() != sizeof(T)) throw CheckpointError(path.string() + ": truncated checkpoint");
    return v;
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError(path.string() + ": cannot open for writing");
    out.write("DG3D", 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    for (const auto& t : tensors) {
        std::uint64_t count = 1;
        for (auto d : t.dims) count *= d;
        if (count != t.values.size()) {
            throw CheckpointError("tensor '" + t.name + "' payload does not match its dims");
        }
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
        out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) put<std::uint64_t>(out, d);
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(double)));
    }
    if (!out) throw CheckpointError(path.string() + ": write failed");
}

std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError(path.string() + ": cannot open for reading");
    char magic[4] = {};
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "DG3D", 4) != 0) {
        throw CheckpointError(path.string() + ": bad magic (not a DG3D checkpoint)");
    }
    const auto version = get<std::uint32_t>(in, path);
    if (version != kCheckpointVersion) {
        throw CheckpointError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    std::vector<NamedTensor> tensors;
    while (in.peek() != std::char_traits<char>::eof()) {
        NamedTensor t;
        const auto name_len = get<std::uint32_t>(in, path);
        if (name_len > (1u << 16)) throw CheckpointError(path.string() + ": implausible tensor name length");
        t.name.resize(name_len);
        in.read(t.name.data(), name_len);
        const auto rank = get<std::uint32_t>(in, path);
        if (rank > 16) throw CheckpointError(path.string() + ": implausible rank for '" + t.name + "'");
        std::uint64_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            t.dims.push_back(get<std::uint64_t>(in, path));
            count *= t.dims.back();
        }
        if (count > (1ull << 32)) throw CheckpointError(path.string() + ": implausible size for '" + t.name + "'");
        t.values.resize(count);
        in.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
        if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) {
            throw CheckpointError(path.string() + ": truncated payload for '" + t.name + "'");
        }
        tensors.push_back(std::move(t));
    }
    return tensors;
}

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name) {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

}  // namespace dg3d
