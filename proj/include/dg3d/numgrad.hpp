// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dg3d::numgrad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Flat float64 tensor with a same-shape gradient accumulator.
struct ParamBuffer {
    std::string name;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool trainable = true;

    ParamBuffer() = default;
    ParamBuffer(std::string name, Shape shape, bool trainable = true);
    ParamBuffer(std::string name, Shape shape, std::vector<double> values, bool trainable = true);
    // Keeps a one-element brace list from binding to the `trainable` overload.
    ParamBuffer(std::string name, Shape shape, std::initializer_list<double> values, bool trainable = true)
        : ParamBuffer(std::move(name), std::move(shape), std::vector<double>(values), trainable) {}

    std::size_t size() const { return values.size(); }
    void zero_grad();
};

class GraphError : public std::runtime_error {
public:
    GraphError(std::size_t node, const std::string& what)
        : std::runtime_error(what), node_(node) {}
    std::size_t node() const { return node_; }

private:
    std::size_t node_;
};

class NonFiniteGradient : public std::runtime_error {
public:
    NonFiniteGradient(std::string buffer, std::size_t index);
    const std::string& buffer() const { return buffer_; }
    std::size_t index() const { return index_; }

private:
    std::string buffer_;
    std::size_t index_;
};

/// Handle to a node of a Graph.
struct Var {
    std::size_t id = static_cast<std::size_t>(-1);
};

/// Accumulates input gradients given the output gradient. `input_grads[k]` is
/// empty when input k does not require a gradient.
using BackwardFn =
    std::function<void(std::span<const double> out_grad, std::vector<std::span<double>>& input_grads)>;

/// Append-only tape for the fixed computation graphs used by this library.
/// Coarse kernels (rendering, rasterization, losses) register themselves via
/// `custom` with a hand-written adjoint.
class Graph {
public:
    Var leaf(ParamBuffer& param);
    /// Read-only input: contributes a value but never receives a gradient.
    Var input(const ParamBuffer& param);
    Var constant(std::vector<double> values, Shape shape);
    Var scalar(double value);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double factor);
    Var square(Var a);
    Var sin(Var a);
    Var sum(Var a);
    /// y = W x + b with W of shape [out, in].
    Var dense(Var x, Var weight, Var bias);
    Var leaky_relu(Var a, double slope);
    Var softplus(Var a);
    Var sigmoid(Var a);

    Var custom(std::string name, std::vector<Var> inputs, std::vector<double> value, Shape shape,
               BackwardFn backward);

    std::span<const double> value(Var v) const;
    const Shape& shape(Var v) const;
    const std::string& name(Var v) const;
    double item(Var v) const;
    bool requires_grad(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    /// Gradient of the last backward() output with respect to node v.
    std::span<const double> grad(Var v) const;

    /// Reverse sweep from a scalar node. Trainable leaves accumulate into
    /// their ParamBuffer::grad; frozen leaves are never written.
    void backward(Var output);

    /// Validates topological order and input references.
    void check() const;

private:
    struct Node {
        std::string name;
        std::vector<double> value;
        Shape shape;
        std::vector<Var> inputs;
        BackwardFn backward;
        ParamBuffer* param = nullptr;
        bool requires_grad = false;
    };

    const Node& node(Var v) const;
    Var push(Node node);
    void require_same_shape(const char* op, Var a, Var b) const;

    std::vector<Node> nodes_;
    std::vector<std::vector<double>> grads_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by buffer name and created
/// zero-initialized the first time a buffer is seen.
class Adam {
public:
    explicit Adam(AdamConfig config = {});

    /// Updates trainable buffers and zeroes every buffer's gradient. If any
    /// trainable gradient is non-finite nothing is modified and
    /// NonFiniteGradient is thrown.
    void step(std::span<ParamBuffer* const> params);

    std::int64_t steps() const { return step_; }
    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }

    struct Moments {
        std::vector<double> first;
        std::vector<double> second;
    };
    const std::map<std::string, Moments>& moments() const { return moments_; }

private:
    AdamConfig config_;
    std::int64_t step_ = 0;
    std::map<std::string, Moments> moments_;
};

/// A scalar function that writes its analytic gradient into `grad` when
/// `grad` is non-empty.
using DifferentiableFn = std::function<double(std::span<const double> x, std::span<double> grad)>;

struct FdResult {
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
FdResult fd_check(const DifferentiableFn& fn, std::span<const double> point, double h = 1e-5);

/// Same check restricted to the listed coordinates.
FdResult fd_check(const DifferentiableFn& fn, std::span<const double> point,
                  std::span<const std::size_t> coordinates, double h = 1e-5);

}  // namespace dg3d::numgrad
