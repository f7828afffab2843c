// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bidedpo/rng.hpp"

namespace bidedpo {

// Flattened row-major storage; shape is carried separately.
using Array = Eigen::ArrayXd;
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<MatrixRM>;
using MapConstMat = Eigen::Map<const MatrixRM>;

namespace detail {
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    std::vector<int> shape;
    Array value;
    bool requires_grad = false;
    Array grad;  // empty until a backward pass touches this node
    std::vector<NodePtr> parents;
    // Accumulates this node's grad into its parents' grads.
    std::function<void(Node&)> backprop;
    // Scratch used by backward() topological sort.
    int topo_mark = 0;
};
}  // namespace detail

// Value-semantic handle onto a graph node. Copying a Tensor aliases the same
// node; ops build new nodes. Safe to move across threads; a single backward
// pass is single-threaded.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double fill, bool requires_grad = false);
    static Tensor from_array(std::vector<int> shape, Array data, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor randn(std::vector<int> shape, RngStream& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return static_cast<std::size_t>(node_->value.size()); }
    bool is_scalar() const { return numel() == 1; }

    const Array& value() const { return node_->value; }
    Array& value() { return node_->value; }
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }
    bool has_grad() const { return node_->grad.size() > 0; }
    const Array& grad() const { return node_->grad; }
    void zero_grad();

    int dim(int i) const { return node_->shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(node_->shape.size()); }

    detail::NodePtr node() const { return node_; }
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

private:
    detail::NodePtr node_;
};

// ---------------------------------------------------------------------------
// Op set. Closed by design: add, sub, mul (elementwise), scale by constant,
// matmul, bias broadcast, tanh, sigmoid, softplus, log, sum, mean,
// squared-norm (total and per-column), stop_gradient.
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
// {m,k} x {k,n} -> {m,n}; also {m,k} x {k} -> {m}.
Tensor matmul(const Tensor& a, const Tensor& b);
// M {r,c} + broadcast of v {r} over columns.
Tensor add_colvec(const Tensor& m, const Tensor& v);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// sum of squares over all entries -> scalar
Tensor squared_norm(const Tensor& a);
// per-column sum of squares of {r,c} -> {c}
Tensor colwise_squared_norm(const Tensor& m);
// Value-identical tensor that blocks backward flow.
Tensor stop_gradient(const Tensor& x);

// Runs reverse-mode accumulation from a scalar loss. Grad buffers of every
// reachable differentiable node are (re)set by this call.
void backward(const Tensor& loss);

// Gradients of loss w.r.t. each param; disconnected params get zeros.
std::vector<Tensor> reverse_grad(const Tensor& loss, std::span<const Tensor> params);

}  // namespace bidedpo
