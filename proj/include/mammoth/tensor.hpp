// Copyright (c) 2026 The mammoth-mil Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "mammoth/errors.hpp"

namespace mammoth {

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

/// One vertex of the dynamically built computation graph. Leaves have no
/// parents and no backward function. `backward_fn` reads this node's grad and
/// accumulates into the parents that require grad.
template <typename T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::string_view op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
};

namespace detail {
inline thread_local bool grad_mode = true;
}  // namespace detail

inline bool grad_enabled() noexcept { return detail::grad_mode; }

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
public:
    NoGradGuard() noexcept : prev_(detail::grad_mode) { detail::grad_mode = false; }
    ~NoGradGuard() { detail::grad_mode = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major tensor of rank 1..3 with reverse-mode autodiff.
///
/// Tensors are cheap handles: copies share the underlying node. Operations in
/// ops.hpp create new nodes, recording parents when any input requires grad
/// and grad mode is on.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    explicit Tensor(Shape shape, bool requires_grad = false)
        : Tensor(shape, std::vector<T>(shape_numel(shape), T(0)), requires_grad) {}

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) {
        check_shape(shape);
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("tensor: shape " + shape_str(shape) + " holds " +
                                 std::to_string(shape_numel(shape)) + " values, got " +
                                 std::to_string(data.size()));
        }
        node_ = std::make_shared<Node<T>>();
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        set_requires_grad(requires_grad);
    }

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> values,
                         bool requires_grad = false) {
        return Tensor({rows, cols}, std::vector<T>(values), requires_grad);
    }

    /// 1×n row vector.
    static Tensor row(std::initializer_list<T> values, bool requires_grad = false) {
        return Tensor({1, values.size()}, std::vector<T>(values), requires_grad);
    }

    static Tensor filled(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->data.size(); }
    std::size_t rows() const { return node_->shape.front(); }
    std::size_t cols() const { return node_->shape.back(); }

    std::span<const T> data() const { return node_->data; }
    std::span<T> data() { return node_->data; }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> grad() { return node_->grad; }
    std::vector<T> to_vector() const { return node_->data; }

    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }

    /// Only valid on leaves.
    void set_requires_grad(bool flag) {
        if (!node_->parents.empty()) throw std::logic_error("set_requires_grad on a non-leaf tensor");
        node_->requires_grad = flag;
        if (flag) {
            node_->grad.assign(node_->data.size(), T(0));
        } else {
            node_->grad.clear();
        }
    }

    T item() const {
        if (numel() != 1) throw DimensionError("item: tensor " + shape_str(shape()) + " is not a scalar");
        return node_->data[0];
    }

    T operator()(std::size_t i, std::size_t j) const {
        return node_->data[i * cols() + j];
    }
    T& operator()(std::size_t i, std::size_t j) { return node_->data[i * cols() + j]; }

    std::string_view op() const { return node_->op; }
    Node<T>* node() const noexcept { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

    void zero_grad() {
        if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Leaf copy of the values, detached from any graph.
    Tensor detach(bool requires_grad = false) const { return Tensor(shape(), node_->data, requires_grad); }

    template <typename U>
    Tensor<U> cast(bool requires_grad = false) const {
        std::vector<U> out(node_->data.begin(), node_->data.end());
        return Tensor<U>(shape(), std::move(out), requires_grad);
    }

    /// Reverse sweep from a scalar. Each reachable node that requires grad is
    /// visited once, in reverse topological order.
    void backward() const {
        if (numel() != 1) {
            throw DimensionError("backward: output must be a scalar, got " + shape_str(shape()));
        }
        if (!node_->requires_grad) throw std::logic_error("backward: output does not require grad");
        const auto order = topological_order();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn(**it);
        }
    }

    /// Nodes reachable from this one that require grad, parents before children.
    std::vector<Node<T>*> topological_order() const {
        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> visited;
        std::vector<std::pair<Node<T>*, std::size_t>> stack;
        stack.emplace_back(node_.get(), 0);
        visited.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node<T>* p = n->parents[next++].get();
                if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }
        return order;
    }

private:
    static void check_shape(const Shape& shape) {
        if (shape.empty() || shape.size() > 3) {
            throw DimensionError("tensor rank must be 1..3, got shape " + shape_str(shape));
        }
    }

    std::shared_ptr<Node<T>> node_;
};

namespace detail {

/// Builds an op output node. Parents are recorded (and grad allocated) only
/// when grad mode is on and at least one input requires grad.
template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string_view op,
                      std::initializer_list<const Tensor<T>*> inputs) {
    Tensor<T> out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto* in : inputs) any = any || in->requires_grad();
    if (!any) return out;
    Node<T>* n = out.node();
    n->op = op;
    n->requires_grad = true;
    n->grad.assign(n->data.size(), T(0));
    for (const auto* in : inputs) n->parents.push_back(in->node_ptr());
    return out;
}

template <typename T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::string_view op,
                      const std::vector<Tensor<T>>& inputs) {
    Tensor<T> out(std::move(shape), std::move(data));
    if (!grad_enabled()) return out;
    bool any = std::any_of(inputs.begin(), inputs.end(), [](const auto& t) { return t.requires_grad(); });
    if (!any) return out;
    Node<T>* n = out.node();
    n->op = op;
    n->requires_grad = true;
    n->grad.assign(n->data.size(), T(0));
    for (const auto& in : inputs) n->parents.push_back(in.node_ptr());
    return out;
}

}  // namespace detail

}  // namespace mammoth
