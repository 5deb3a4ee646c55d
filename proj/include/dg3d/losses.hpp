// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dg3d/image.hpp"
#include "dg3d/numgrad.hpp"
#include "dg3d/priors.hpp"

namespace dg3d::losses {

using numgrad::Graph;
using numgrad::Var;

struct LossWeights {
    double lambda1 = 1.0;   // relative distance
    double lambda2 = 10.0;  // diffusion-guided reconstruction
    double lambda3 = 0.1;   // multi-scale TV
};

// ---------------------------------------------------------------------------
// Score distillation

struct SdsResult {
    ImageBuffer grad;   // w_t (eps_hat - eps), the gradient with respect to x
    ImageBuffer gamma;  // |grad|
    ImageBuffer eps_hat;
    double weight = 0.0;
};

SdsResult sds_grad(const ImageBuffer& x, const std::string& prompt, int t, const ImageBuffer& eps,
                   const priors::NoiseSchedule& schedule, const priors::ScorePrior& prior, double cfg_scale = 1.0);

/// Surrogate scalar node with value 0 whose gradient with respect to `x` is
/// `grad` (the detached SDS residual).
Var sds_node(Graph& g, Var x, const ImageBuffer& grad);

double l2_norm(std::span<const double> v);

// ---------------------------------------------------------------------------
// Relative distance

class DegeneratePair : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// |d'(i,j) / d(i,j) - 1| with d = squared L2 distance. The primed
/// (frozen) pair is treated as a constant.
double relative_distance(std::span<const double> ti, std::span<const double> tj, std::span<const double> frozen_i,
                         std::span<const double> frozen_j);

/// Differentiable in ti and tj.
Var relative_distance_node(Graph& g, Var ti, Var tj, std::span<const double> frozen_i,
                           std::span<const double> frozen_j);

// ---------------------------------------------------------------------------
// Diffusion-guided reconstruction

class DegenerateGradient : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// mask = 1 - h / max(h) where h is the channel mean of gamma; H x W.
std::vector<double> gradient_mask(const ImageBuffer& gamma);

/// t * sum(((x - x_ref) * mask)^2), mask broadcast over channels.
double diffusion_guided_recon(const ImageBuffer& x, const ImageBuffer& x_ref, const ImageBuffer& gamma, int t);
double masked_recon(std::span<const double> x, std::span<const double> x_ref, std::span<const double> mask,
                    int channels, double t);

/// Differentiable in x only.
Var masked_recon_node(Graph& g, Var x, std::vector<double> x_ref, std::vector<double> mask, int channels, double t);

// ---------------------------------------------------------------------------
// Total variation. Planes are stored channel-major: [C][R][R].

double tv2d(std::span<const double> plane, int channels, int resolution);
void tv2d_grad(std::span<const double> plane, int channels, int resolution, std::span<double> grad);

/// 2x2 average pooling of a [C][R][R] block.
std::vector<double> avg_pool2(std::span<const double> plane, int channels, int resolution);

/// Sum over the three planes and over levels 0..levels-1 of tv2d of the
/// 2^level-downsampled plane.
double multiscale_tv(std::span<const double> triplane, int channels, int resolution, int levels);
void multiscale_tv_grad(std::span<const double> triplane, int channels, int resolution, int levels,
                        std::span<double> grad);

Var tv2d_node(Graph& g, Var plane, int channels, int resolution);
Var multiscale_tv_node(Graph& g, Var triplane, int channels, int resolution, int levels);

// ---------------------------------------------------------------------------
// Composite objectives

enum class Mode { adaptation, editing, avatar };

const char* mode_name(Mode mode);

struct ObjectiveParts {
    std::optional<Var> sds;
    std::optional<Var> l_dis;
    std::optional<Var> l_diff;
    std::optional<Var> l_mstv;
};

struct ObjectiveValues {
    std::optional<double> sds;
    std::optional<double> l_dis;
    std::optional<double> l_diff;
    std::optional<double> l_mstv;
};

/// L_sds + lambda * L_mode with the mode's weight. A term whose weight is
/// exactly 0 is left out of the graph.
Var composite_objective(Graph& g, Mode mode, const ObjectiveParts& parts, const LossWeights& weights);
double composite_objective(Mode mode, const ObjectiveValues& parts, const LossWeights& weights);

}  // namespace dg3d::losses
