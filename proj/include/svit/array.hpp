#pragma once

// Reverse-mode differentiable n-d array.
//
// An Array is a cheap handle onto an immutable node of a computation graph.
// Operations (see ops.hpp) create new nodes that remember their parents and a
// closure that pushes the node's gradient back to them. Leaves created with
// Array::parameter() accumulate gradients across backward() calls until
// zero_grad(); they are the only nodes whose value may be mutated in place, and
// only by the optimizer.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "svit/errors.hpp"

namespace svit {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows in
    bool requires_grad = false;
    bool leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward;

    T* grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad.data();
    }
};

}  // namespace detail

template <class T>
class Array {
   public:
    using value_type = T;
    using NodePtr = std::shared_ptr<detail::Node<T>>;

    Array() = default;

    static Array constant(Shape shape, std::vector<T> data) {
        if (numel(shape) != data.size()) {
            throw DimensionError("element count " + std::to_string(data.size()) +
                                 " does not match shape " + to_string(shape));
        }
        for (auto e : shape) {
            if (e == 0) throw DimensionError("zero extent in shape " + to_string(shape));
        }
        auto n = std::make_shared<detail::Node<T>>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Array(std::move(n));
    }

    static Array zeros(Shape shape) {
        const auto count = numel(shape);
        return constant(std::move(shape), std::vector<T>(count, T(0)));
    }

    static Array full(Shape shape, T v) {
        const auto count = numel(shape);
        return constant(std::move(shape), std::vector<T>(count, v));
    }

    static Array scalar(T v) { return constant({1}, {v}); }

    // Trainable leaf with a zero gradient buffer of identical shape.
    static Array parameter(Shape shape, std::vector<T> data, bool trainable = true) {
        Array a = constant(std::move(shape), std::move(data));
        a.node_->requires_grad = trainable;
        a.node_->grad.assign(a.node_->value.size(), T(0));
        return a;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::size_t dim(int axis) const {
        const int r = static_cast<int>(rank());
        const int a = axis < 0 ? axis + r : axis;
        if (a < 0 || a >= r) throw DimensionError("axis out of range for shape " + to_string(shape()));
        return node_->shape[static_cast<std::size_t>(a)];
    }

    std::span<const T> data() const { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    // Gradient, or an empty span when nothing has flowed into this node.
    std::span<const T> grad() const { return node_->grad; }

    bool requires_grad() const { return node_->requires_grad; }
    bool is_leaf() const { return node_->leaf; }

    T item() const {
        if (size() != 1) throw DimensionError("item() on shape " + to_string(shape()));
        return node_->value[0];
    }

    T operator[](std::size_t i) const { return node_->value[i]; }

    // Mutable views are for the training loop's single writer (optimizer,
    // checkpoint loading). They must not be used on graph intermediates.
    std::span<T> mutable_data() { return node_->value; }
    std::span<T> mutable_grad() { return {node_->grad_buffer(), node_->value.size()}; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    // Same values, cut from the graph.
    Array detach() const { return constant(shape(), node_->value); }

    const NodePtr& node() const { return node_; }

    explicit Array(NodePtr n) : node_(std::move(n)) {}

   private:
    NodePtr node_;
};

// Builds an op result. The node only keeps its parents and backward closure
// when at least one parent participates in differentiation.
template <class T>
Array<T> make_result(Shape shape, std::vector<T> value, std::vector<Array<T>> parents,
                     std::function<void(detail::Node<T>&)> backward) {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->leaf = false;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (any) {
        n->requires_grad = true;
        n->parents.reserve(parents.size());
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward = std::move(backward);
    }
    return Array<T>(std::move(n));
}

// Reverse sweep from a scalar root. `seed` scales the root gradient, which
// lets a caller average over per-sample graphs without an extra node.
template <class T>
void backward(const Array<T>& root, T seed = T(1)) {
    if (root.size() != 1) throw DimensionError("backward() needs a scalar root, got " + to_string(root.shape()));
    if (!root.requires_grad()) return;

    using NodeT = detail::Node<T>;
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += seed;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    for (NodeT* n : order) {
        if (!n->leaf) {
            n->grad.clear();
            n->grad.shrink_to_fit();
        }
    }
}

// Converts element type; the result is a constant (graph is not carried over).
template <class U, class T>
Array<U> cast(const Array<T>& a) {
    std::vector<U> v(a.data().begin(), a.data().end());
    return Array<U>::constant(a.shape(), std::move(v));
}

}  // namespace svit
