// Copyright (c) 2026 bidedpo authors
// SPDX-License-Identifier: Apache-2.0
#include "bidedpo/tensor.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace bidedpo {

using detail::Node;
using detail::NodePtr;

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

NodePtr make_node(std::vector<int> shape, Array value, bool requires_grad) {
    if (static_cast<std::size_t>(value.size()) != shape_numel(shape))
        throw std::invalid_argument("tensor: shape/data size mismatch");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.size() != n.value.size()) n.grad = Array::Zero(n.value.size());
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Unary/binary op plumbing. The closure receives the output node and pushes
// into parents' grads; parents that do not require grad are skipped by the
// caller-side guards inside each closure.
Tensor make_op(std::vector<int> shape, Array value, std::vector<NodePtr> parents,
               std::function<void(Node&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto n = make_node(std::move(shape), std::move(value), rg);
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return Tensor(n);
}

MapConstMat as_mat(const Node& n) {
    if (n.shape.size() == 2)
        return MapConstMat(n.value.data(), n.shape[0], n.shape[1]);
    return MapConstMat(n.value.data(), static_cast<int>(n.value.size()), 1);
}

}  // namespace

// ----------------------------- Tensor -----------------------------

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape), Array::Zero(static_cast<int>(n)), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double fill, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(make_node(std::move(shape),
                            Array::Constant(static_cast<int>(n), fill), requires_grad));
}

Tensor Tensor::from_array(std::vector<int> shape, Array data, bool requires_grad) {
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) {
    return Tensor(make_node({1}, Array::Constant(1, v), false));
}

Tensor Tensor::randn(std::vector<int> shape, RngStream& rng, double stddev, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    Array data(static_cast<int>(n));
    for (int i = 0; i < data.size(); ++i) data[i] = stddev * rng.normal();
    return Tensor(make_node(std::move(shape), std::move(data), requires_grad));
}

double Tensor::item() const {
    if (!is_scalar()) throw std::invalid_argument("item: tensor is not scalar");
    return node_->value[0];
}

void Tensor::zero_grad() {
    if (node_) node_->grad = Array();
}

// ----------------------------- ops -----------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), a.value() + b.value(), {pa, pb}, [pa, pb](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad; }
        if (pb->requires_grad) { ensure_grad(*pb); pb->grad += out.grad; }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), a.value() - b.value(), {pa, pb}, [pa, pb](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad; }
        if (pb->requires_grad) { ensure_grad(*pb); pb->grad -= out.grad; }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    auto pa = a.node(), pb = b.node();
    return make_op(a.shape(), a.value() * b.value(), {pa, pb}, [pa, pb](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad * pb->value; }
        if (pb->requires_grad) { ensure_grad(*pb); pb->grad += out.grad * pa->value; }
    });
}

Tensor scale(const Tensor& a, double c) {
    auto pa = a.node();
    return make_op(a.shape(), a.value() * c, {pa}, [pa, c](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad * c; }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2) throw std::invalid_argument("matmul: lhs must be 2-D");
    const int m = a.dim(0), k = a.dim(1);
    const bool vec_rhs = (b.ndim() == 1);
    const int k2 = vec_rhs ? b.dim(0) : b.dim(0);
    const int n = vec_rhs ? 1 : b.dim(1);
    if (k != k2) throw std::invalid_argument("matmul: inner dimension mismatch");

    auto pa = a.node(), pb = b.node();
    MapConstMat A(pa->value.data(), m, k);
    MapConstMat B(pb->value.data(), k, n);
    Array out(static_cast<int>(static_cast<std::size_t>(m) * n));
    MapMat(out.data(), m, n) = A * B;

    std::vector<int> out_shape = vec_rhs ? std::vector<int>{m} : std::vector<int>{m, n};
    return make_op(std::move(out_shape), std::move(out), {pa, pb},
                   [pa, pb, m, k, n](Node& out_node) {
        MapConstMat G(out_node.grad.data(), m, n);
        if (pa->requires_grad) {
            ensure_grad(*pa);
            MapConstMat B(pb->value.data(), k, n);
            MapMat(pa->grad.data(), m, k) += G * B.transpose();
        }
        if (pb->requires_grad) {
            ensure_grad(*pb);
            MapConstMat A(pa->value.data(), m, k);
            MapMat(pb->grad.data(), k, n) += A.transpose() * G;
        }
    });
}

Tensor add_colvec(const Tensor& m, const Tensor& v) {
    if (m.ndim() != 2 || v.ndim() != 1 || m.dim(0) != v.dim(0))
        throw std::invalid_argument("add_colvec: expected {r,c} and {r}");
    const int r = m.dim(0), c = m.dim(1);
    auto pm = m.node(), pv = v.node();
    Array out(m.value().size());
    MapMat(out.data(), r, c) = as_mat(*pm).colwise() + MapConstMat(pv->value.data(), r, 1).col(0);
    return make_op(m.shape(), std::move(out), {pm, pv}, [pm, pv, r, c](Node& out_node) {
        MapConstMat G(out_node.grad.data(), r, c);
        if (pm->requires_grad) { ensure_grad(*pm); pm->grad += out_node.grad; }
        if (pv->requires_grad) {
            ensure_grad(*pv);
            Eigen::Map<Eigen::VectorXd>(pv->grad.data(), r) += G.rowwise().sum();
        }
    });
}

Tensor tanh(const Tensor& a) {
    auto pa = a.node();
    Array y = a.value().tanh();
    return make_op(a.shape(), y, {pa}, [pa](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            pa->grad += out.grad * (1.0 - out.value.square());
        }
    });
}

Tensor sigmoid(const Tensor& a) {
    auto pa = a.node();
    // Stable form: never exponentiate a positive argument.
    Array y(a.value().size());
    for (int i = 0; i < y.size(); ++i) {
        const double x = a.value()[i];
        if (x >= 0.0) {
            y[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            y[i] = e / (1.0 + e);
        }
    }
    return make_op(a.shape(), std::move(y), {pa}, [pa](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            pa->grad += out.grad * out.value * (1.0 - out.value);
        }
    });
}

Tensor softplus(const Tensor& a) {
    auto pa = a.node();
    Array y(a.value().size());
    for (int i = 0; i < y.size(); ++i) {
        const double x = a.value()[i];
        y[i] = std::fmax(x, 0.0) + std::log1p(std::exp(-std::fabs(x)));
    }
    return make_op(a.shape(), std::move(y), {pa}, [pa](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            for (int i = 0; i < out.grad.size(); ++i) {
                const double x = pa->value[i];
                const double s = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                                          : std::exp(x) / (1.0 + std::exp(x));
                pa->grad[i] += out.grad[i] * s;
            }
        }
    });
}

Tensor log(const Tensor& a) {
    auto pa = a.node();
    return make_op(a.shape(), a.value().log(), {pa}, [pa](Node& out) {
        if (pa->requires_grad) {
            ensure_grad(*pa);
            pa->grad += out.grad / pa->value;
        }
    });
}

Tensor sum(const Tensor& a) {
    auto pa = a.node();
    return make_op({1}, Array::Constant(1, a.value().sum()), {pa}, [pa](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad[0]; }
    });
}

Tensor mean(const Tensor& a) {
    auto pa = a.node();
    const double inv_n = 1.0 / static_cast<double>(a.numel());
    return make_op({1}, Array::Constant(1, a.value().mean()), {pa}, [pa, inv_n](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad[0] * inv_n; }
    });
}

Tensor squared_norm(const Tensor& a) {
    auto pa = a.node();
    return make_op({1}, Array::Constant(1, a.value().square().sum()), {pa}, [pa](Node& out) {
        if (pa->requires_grad) { ensure_grad(*pa); pa->grad += out.grad[0] * 2.0 * pa->value; }
    });
}

Tensor colwise_squared_norm(const Tensor& m) {
    if (m.ndim() != 2) throw std::invalid_argument("colwise_squared_norm: expected 2-D");
    const int r = m.dim(0), c = m.dim(1);
    auto pm = m.node();
    MapConstMat M(pm->value.data(), r, c);
    Array out(c);
    Eigen::Map<Eigen::VectorXd>(out.data(), c) = M.colwise().squaredNorm();
    return make_op({c}, std::move(out), {pm}, [pm, r, c](Node& out_node) {
        if (pm->requires_grad) {
            ensure_grad(*pm);
            MapConstMat M(pm->value.data(), r, c);
            MapMat Gm(pm->grad.data(), r, c);
            for (int j = 0; j < c; ++j) Gm.col(j) += 2.0 * out_node.grad[j] * M.col(j);
        }
    });
}

Tensor stop_gradient(const Tensor& x) {
    // Value copy is bit-exact; no parents, so backward flow stops here.
    return Tensor(make_node(x.shape(), x.value(), false));
}

// ----------------------------- backward -----------------------------

void backward(const Tensor& loss) {
    if (!loss.defined() || !loss.is_scalar())
        throw std::invalid_argument("backward: loss must be a defined scalar");

    // Iterative post-order DFS over parents; reversed gives topological order.
    std::vector<Node*> topo;
    std::vector<std::pair<Node*, std::size_t>> stack;
    constexpr int kInProgress = 1, kDone = 2;

    Node* root = loss.node().get();
    if (!root->requires_grad) return;  // constant loss: nothing to do

    stack.emplace_back(root, 0);
    root->topo_mark = kInProgress;
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && p->topo_mark == 0) {
                p->topo_mark = kInProgress;
                stack.emplace_back(p, 0);
            }
        } else {
            node->topo_mark = kDone;
            topo.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : topo) {
        n->grad = Array::Zero(n->value.size());
        n->topo_mark = 0;
    }
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

std::vector<Tensor> reverse_grad(const Tensor& loss, std::span<const Tensor> params) {
    for (const Tensor& p : params) p.node()->grad = Array();
    backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(params.size());
    for (const Tensor& p : params) {
        if (p.has_grad()) {
            grads.push_back(Tensor::from_array(p.shape(), p.grad()));
        } else {
            grads.push_back(Tensor::zeros(p.shape()));
        }
    }
    return grads;
}

}  // namespace bidedpo
