// Copyright 2026 The dg3d Authors
// SPDX-License-Identifier: Apache-2.0

#include "dg3d/numgrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dg3d::numgrad {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

ParamBuffer::ParamBuffer(std::string name_, Shape shape_, bool trainable_)
    : name(std::move(name_)),
      shape(std::move(shape_)),
      values(shape_size(shape), 0.0),
      grad(values.size(), 0.0),
      trainable(trainable_) {}

ParamBuffer::ParamBuffer(std::string name_, Shape shape_, std::vector<double> values_, bool trainable_)
    : name(std::move(name_)), shape(std::move(shape_)), values(std::move(values_)), trainable(trainable_) {
    if (values.size() != shape_size(shape)) {
        throw std::invalid_argument("ParamBuffer '" + name + "': " + std::to_string(values.size()) +
                                    " values for shape " + shape_string(shape));
    }
    grad.assign(values.size(), 0.0);
}

void ParamBuffer::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }

NonFiniteGradient::NonFiniteGradient(std::string buffer, std::size_t index)
    : std::runtime_error("non-finite gradient in '" + buffer + "' at index " + std::to_string(index)),
      buffer_(std::move(buffer)),
      index_(index) {}

// ---------------------------------------------------------------------------
// Graph

const Graph::Node& Graph::node(Var v) const {
    if (v.id >= nodes_.size()) {
        throw GraphError(v.id, "reference to unknown node #" + std::to_string(v.id));
    }
    return nodes_[v.id];
}

Var Graph::push(Node n) {
    const std::size_t id = nodes_.size();
    for (auto in : n.inputs) {
        if (in.id >= id) {
            throw GraphError(id, "node #" + std::to_string(id) + " (" + n.name + ") references node #" +
                                     std::to_string(in.id) + " that is not upstream");
        }
    }
    if (n.value.size() != shape_size(n.shape)) {
        throw GraphError(id, "node #" + std::to_string(id) + " (" + n.name + ") value size " +
                                 std::to_string(n.value.size()) + " does not match shape " +
                                 shape_string(n.shape));
    }
    nodes_.push_back(std::move(n));
    return Var{id};
}

void Graph::require_same_shape(const char* op, Var a, Var b) const {
    if (node(a).shape != node(b).shape) {
        throw GraphError(nodes_.size(), std::string(op) + ": shape mismatch between node #" +
                                            std::to_string(a.id) + " " + shape_string(node(a).shape) +
                                            " and node #" + std::to_string(b.id) + " " +
                                            shape_string(node(b).shape));
    }
}

Var Graph::leaf(ParamBuffer& param) {
    if (param.grad.size() != param.values.size()) {
        throw GraphError(nodes_.size(), "buffer '" + param.name + "' has mismatched grad size");
    }
    Node n;
    n.name = param.name;
    n.value = param.values;
    n.shape = param.shape;
    n.param = &param;
    n.requires_grad = param.trainable;
    return push(std::move(n));
}

Var Graph::input(const ParamBuffer& param) {
    Node n;
    n.name = param.name;
    n.value = param.values;
    n.shape = param.shape;
    return push(std::move(n));
}

Var Graph::constant(std::vector<double> values, Shape shape) {
    Node n;
    n.name = "constant";
    n.value = std::move(values);
    n.shape = std::move(shape);
    return push(std::move(n));
}

Var Graph::scalar(double value) { return constant({value}, {1}); }

Var Graph::custom(std::string name, std::vector<Var> inputs, std::vector<double> value, Shape shape,
                  BackwardFn backward) {
    Node n;
    n.name = std::move(name);
    n.value = std::move(value);
    n.shape = std::move(shape);
    n.inputs = std::move(inputs);
    for (auto in : n.inputs) n.requires_grad = n.requires_grad || node(in).requires_grad;
    n.backward = std::move(backward);
    return push(std::move(n));
}

namespace {

template <class F>
std::vector<double> map_values(std::span<const double> a, F f) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
    return out;
}

}  // namespace

Var Graph::add(Var a, Var b) {
    require_same_shape("add", a, b);
    auto va = value(a), vb = value(b);
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return custom("add", {a, b}, std::move(out), shape(a), [](auto gout, auto& gin) {
        for (auto& g : gin)
            if (!g.empty())
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += gout[i];
    });
}

Var Graph::sub(Var a, Var b) {
    require_same_shape("sub", a, b);
    auto va = value(a), vb = value(b);
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return custom("sub", {a, b}, std::move(out), shape(a), [](auto gout, auto& gin) {
        if (!gin[0].empty())
            for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i];
        if (!gin[1].empty())
            for (std::size_t i = 0; i < gout.size(); ++i) gin[1][i] -= gout[i];
    });
}

Var Graph::mul(Var a, Var b) {
    require_same_shape("mul", a, b);
    std::vector<double> va(value(a).begin(), value(a).end());
    std::vector<double> vb(value(b).begin(), value(b).end());
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return custom("mul", {a, b}, std::move(out), shape(a),
                  [va = std::move(va), vb = std::move(vb)](auto gout, auto& gin) {
                      if (!gin[0].empty())
                          for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] * vb[i];
                      if (!gin[1].empty())
                          for (std::size_t i = 0; i < gout.size(); ++i) gin[1][i] += gout[i] * va[i];
                  });
}

Var Graph::scale(Var a, double factor) {
    return custom("scale", {a}, map_values(value(a), [factor](double x) { return factor * x; }), shape(a),
                  [factor](auto gout, auto& gin) {
                      for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += factor * gout[i];
                  });
}

Var Graph::square(Var a) {
    std::vector<double> va(value(a).begin(), value(a).end());
    auto out = map_values(va, [](double x) { return x * x; });
    return custom("square", {a}, std::move(out), shape(a), [va = std::move(va)](auto gout, auto& gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += 2.0 * va[i] * gout[i];
    });
}

Var Graph::sin(Var a) {
    std::vector<double> va(value(a).begin(), value(a).end());
    auto out = map_values(va, [](double x) { return std::sin(x); });
    return custom("sin", {a}, std::move(out), shape(a), [va = std::move(va)](auto gout, auto& gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += std::cos(va[i]) * gout[i];
    });
}

Var Graph::sum(Var a) {
    double s = 0.0;
    for (double x : value(a)) s += x;
    return custom("sum", {a}, {s}, {1}, [](auto gout, auto& gin) {
        for (auto& g : gin[0]) g += gout[0];
    });
}

Var Graph::dense(Var x, Var weight, Var bias) {
    const auto& ws = shape(weight);
    const auto& xs = shape(x);
    if (ws.size() != 2 || shape_size(xs) != ws[1] || shape_size(shape(bias)) != ws[0]) {
        throw GraphError(nodes_.size(), "dense: weight " + shape_string(ws) + " incompatible with input " +
                                            shape_string(xs) + " / bias " + shape_string(shape(bias)) +
                                            " (node '" + name(weight) + "')");
    }
    const std::size_t out_dim = ws[0], in_dim = ws[1];
    std::vector<double> vx(value(x).begin(), value(x).end());
    std::vector<double> vw(value(weight).begin(), value(weight).end());
    auto vb = value(bias);
    std::vector<double> out(out_dim);
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = vb[o];
        const double* row = vw.data() + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * vx[i];
        out[o] = acc;
    }
    return custom("dense", {x, weight, bias}, std::move(out), {out_dim},
                  [vx = std::move(vx), vw = std::move(vw), out_dim, in_dim](auto gout, auto& gin) {
                      if (!gin[0].empty()) {
                          for (std::size_t o = 0; o < out_dim; ++o) {
                              const double* row = vw.data() + o * in_dim;
                              for (std::size_t i = 0; i < in_dim; ++i) gin[0][i] += row[i] * gout[o];
                          }
                      }
                      if (!gin[1].empty()) {
                          for (std::size_t o = 0; o < out_dim; ++o) {
                              double* row = gin[1].data() + o * in_dim;
                              for (std::size_t i = 0; i < in_dim; ++i) row[i] += gout[o] * vx[i];
                          }
                      }
                      if (!gin[2].empty())
                          for (std::size_t o = 0; o < out_dim; ++o) gin[2][o] += gout[o];
                  });
}

Var Graph::leaky_relu(Var a, double slope) {
    std::vector<double> va(value(a).begin(), value(a).end());
    auto out = map_values(va, [slope](double x) { return x > 0.0 ? x : slope * x; });
    return custom("leaky_relu", {a}, std::move(out), shape(a),
                  [va = std::move(va), slope](auto gout, auto& gin) {
                      for (std::size_t i = 0; i < gout.size(); ++i)
                          gin[0][i] += (va[i] > 0.0 ? 1.0 : slope) * gout[i];
                  });
}

Var Graph::softplus(Var a) {
    std::vector<double> va(value(a).begin(), value(a).end());
    auto out = map_values(va, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); });
    return custom("softplus", {a}, std::move(out), shape(a), [va = std::move(va)](auto gout, auto& gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += gout[i] / (1.0 + std::exp(-va[i]));
    });
}

Var Graph::sigmoid(Var a) {
    auto out = map_values(value(a), [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    std::vector<double> s = out;
    return custom("sigmoid", {a}, std::move(out), shape(a), [s = std::move(s)](auto gout, auto& gin) {
        for (std::size_t i = 0; i < gout.size(); ++i) gin[0][i] += s[i] * (1.0 - s[i]) * gout[i];
    });
}

std::span<const double> Graph::value(Var v) const { return node(v).value; }
const Shape& Graph::shape(Var v) const { return node(v).shape; }
const std::string& Graph::name(Var v) const { return node(v).name; }
bool Graph::requires_grad(Var v) const { return node(v).requires_grad; }

double Graph::item(Var v) const {
    const auto& n = node(v);
    if (n.value.size() != 1) {
        throw GraphError(v.id, "node #" + std::to_string(v.id) + " (" + n.name + ") is not a scalar");
    }
    return n.value[0];
}

std::span<const double> Graph::grad(Var v) const {
    node(v);
    if (v.id >= grads_.size() || grads_[v.id].empty()) return {};
    return grads_[v.id];
}

void Graph::check() const {
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        const auto& n = nodes_[id];
        for (auto in : n.inputs) {
            if (in.id >= id) {
                throw GraphError(id, "cycle: node #" + std::to_string(id) + " (" + n.name +
                                         ") depends on node #" + std::to_string(in.id));
            }
        }
        if (n.value.size() != shape_size(n.shape)) {
            throw GraphError(id, "node #" + std::to_string(id) + " (" + n.name + ") shape mismatch");
        }
    }
}

void Graph::backward(Var output) {
    check();
    const auto& out = node(output);
    if (out.value.size() != 1) {
        throw GraphError(output.id, "backward from non-scalar node #" + std::to_string(output.id) + " (" +
                                        out.name + ") of shape " + shape_string(out.shape));
    }
    grads_.assign(nodes_.size(), {});
    if (!out.requires_grad) return;
    for (std::size_t id = 0; id <= output.id; ++id) {
        if (nodes_[id].requires_grad) grads_[id].assign(nodes_[id].value.size(), 0.0);
    }
    grads_[output.id][0] = 1.0;

    std::vector<std::span<double>> input_grads;
    for (std::size_t id = output.id + 1; id-- > 0;) {
        auto& n = nodes_[id];
        if (!n.requires_grad) continue;
        if (n.param != nullptr) {
            if (n.param->trainable) {
                auto& g = grads_[id];
                for (std::size_t i = 0; i < g.size(); ++i) n.param->grad[i] += g[i];
            }
            continue;
        }
        if (!n.backward) continue;
        input_grads.clear();
        for (auto in : n.inputs) {
            if (nodes_[in.id].requires_grad) {
                input_grads.emplace_back(grads_[in.id]);
            } else {
                input_grads.emplace_back();
            }
        }
        n.backward(grads_[id], input_grads);
    }
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(AdamConfig config) : config_(config) {}

void Adam::step(std::span<ParamBuffer* const> params) {
    for (const ParamBuffer* p : params) {
        if (!p->trainable) continue;
        for (std::size_t i = 0; i < p->grad.size(); ++i) {
            if (!std::isfinite(p->grad[i])) throw NonFiniteGradient(p->name, i);
        }
    }
    ++step_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
    for (ParamBuffer* p : params) {
        if (p->trainable) {
            auto& m = moments_[p->name];
            if (m.first.size() != p->values.size()) {
                m.first.assign(p->values.size(), 0.0);
                m.second.assign(p->values.size(), 0.0);
            }
            for (std::size_t i = 0; i < p->values.size(); ++i) {
                const double g = p->grad[i];
                m.first[i] = config_.beta1 * m.first[i] + (1.0 - config_.beta1) * g;
                m.second[i] = config_.beta2 * m.second[i] + (1.0 - config_.beta2) * g * g;
                const double mh = m.first[i] / c1;
                const double vh = m.second[i] / c2;
                p->values[i] -= config_.lr * mh / (std::sqrt(vh) + config_.eps);
            }
        }
        p->zero_grad();
    }
}

// ---------------------------------------------------------------------------
// Finite differences

FdResult fd_check(const DifferentiableFn& fn, std::span<const double> point,
                  std::span<const std::size_t> coordinates, double h) {
    std::vector<double> x(point.begin(), point.end());
    std::vector<double> analytic(x.size(), 0.0);
    fn(x, analytic);
    FdResult result;
    for (std::size_t idx : coordinates) {
        const double saved = x[idx];
        x[idx] = saved + h;
        const double fp = fn(x, {});
        x[idx] = saved - h;
        const double fm = fn(x, {});
        x[idx] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw std::domain_error("fd_check: function not finite when perturbing coordinate " +
                                    std::to_string(idx));
        }
        const double numeric = (fp - fm) / (2.0 * h);
        const double err = std::abs(analytic[idx] - numeric) / std::max(1.0, std::abs(analytic[idx]));
        if (err >= result.max_rel_error) {
            result.max_rel_error = err;
            result.worst_index = idx;
            result.analytic = analytic[idx];
            result.numeric = numeric;
        }
    }
    return result;
}

FdResult fd_check(const DifferentiableFn& fn, std::span<const double> point, double h) {
    std::vector<std::size_t> all(point.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return fd_check(fn, point, all, h);
}

}  // namespace dg3d::numgrad
