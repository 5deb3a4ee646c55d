// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dg3d/numgrad.hpp"

namespace dg3d::gradcheck {

/// One differentiable operation: a scalar probe of it with analytic gradient,
/// a random evaluation point, and optionally a random coordinate subset (for
/// operations with too many inputs to difference exhaustively).
struct Entry {
    std::string name;
    numgrad::DifferentiableFn fn;
    std::function<std::vector<double>(std::mt19937_64&)> point;
    std::size_t max_coordinates = 0;  // 0 = all
};

struct Row {
    std::string name;
    int points = 0;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    bool passed = false;
};

struct Report {
    std::vector<Row> rows;
    double tolerance = 1e-4;

    bool passed() const;
    std::string to_text() const;
};

/// The full roster: triplane sampling (planes and point), decoder,
/// compositing, volume rendering, mapping network, upsampling, rasterization,
/// relative distance, diffusion-guided reconstruction, tv2d, multiscale TV,
/// clip loss and the Gaussian score.
std::vector<Entry> default_roster();

Report run_gradcheck(const std::vector<Entry>& entries, int points = 10, double tolerance = 1e-4,
                     std::uint64_t seed = 1234);

}  // namespace dg3d::gradcheck
