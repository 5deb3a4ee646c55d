// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dg3d {

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<double> values;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian: "DG3D", u32 version, then per tensor u32 name length,
/// UTF-8 name, u32 rank, u64 dims[rank], f64 payload.
void write_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_checkpoint(const std::filesystem::path& path);

const NamedTensor* find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

}  // namespace dg3d
