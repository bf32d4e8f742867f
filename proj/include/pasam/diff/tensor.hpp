#pragma once

// Dense row-major tensor with a dynamic reverse-mode tape.
//
// A Tensor is a shared handle onto a graph node. Operations that see at least
// one input with requires_grad record a backward closure on their result; the
// graph is walked once by Tensor::backward() and the closures are released
// afterwards, so a tape lives exactly as long as one forward/backward pass.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "pasam/diff/error.hpp"

namespace pasam {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace diff {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<Node<T>>()) {
        for (auto d : shape) {
            if (d == 0) throw DimensionError("tensor shape " + shape_str(shape) + " has a zero extent");
        }
        if (shape_numel(shape) != data.size()) {
            throw DimensionError("data length " + std::to_string(data.size()) +
                                 " does not match shape " + shape_str(shape));
        }
        node_->shape = std::move(shape);
        node_->value = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
    }

    static Tensor full(Shape shape, T v, bool requires_grad = false) {
        auto n = shape_numel(shape);
        return Tensor(std::move(shape), std::vector<T>(n, v), requires_grad);
    }

    static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    // Direct write access; intended for leaves (parameter updates, test setup).
    std::span<T> mutable_data() { return node_->value; }
    const std::vector<T>& values() const { return node_->value; }

    T at(std::size_t i) const {
        if (i >= numel()) throw BoundsError("flat index " + std::to_string(i) + " out of range " + std::to_string(numel()));
        return node_->value[i];
    }
    // Row-major multi-index.
    T at(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw DimensionError("index of rank " + std::to_string(idx.size()) + " for " + shape_str(shape()));
        std::size_t flat = 0, d = 0;
        for (auto i : idx) {
            if (i >= dim(d)) throw BoundsError("index " + std::to_string(i) + " out of range on axis " + std::to_string(d));
            flat = flat * dim(d++) + i;
        }
        return node_->value[flat];
    }
    T item() const {
        if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    bool is_leaf() const { return !node_->backward_fn; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    /// Copy of the values with no graph attached.
    Tensor detach() const { return Tensor(shape(), node_->value, false); }

    bool all_finite() const {
        return std::all_of(node_->value.begin(), node_->value.end(), [](T v) { return std::isfinite(v); });
    }

    /// Backpropagates from a single-element tensor with seed 1.
    void backward() {
        if (numel() != 1) throw ContractError("backward() requires a scalar, got shape " + shape_str(shape()));
        if (!requires_grad()) return;

        std::vector<Node<T>*> order;
        std::unordered_set<Node<T>*> seen;
        std::vector<std::pair<Node<T>*, std::size_t>> stack{{node_.get(), 0}};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto& [n, next] = stack.back();
            if (next < n->parents.size()) {
                Node<T>* p = n->parents[next++].get();
                if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
            } else {
                order.push_back(n);
                stack.pop_back();
            }
        }

        node_->ensure_grad();
        node_->grad[0] += T(1);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node<T>* n = *it;
            if (n->backward_fn && !n->grad.empty()) n->backward_fn();
        }
        for (Node<T>* n : order) {
            if (n->backward_fn) {
                n->backward_fn = nullptr;
                n->parents.clear();
            }
        }
    }

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Builds an op result. `backward` is invoked with the result node once its
/// gradient is complete; it is dropped when no input participates in the tape.
template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
    Tensor<T> out(std::move(shape), std::move(value), false);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        Node<T>* self = out.node();
        self->requires_grad = true;
        for (const auto& in : inputs) self->parents.push_back(in.node_ptr());
        self->backward_fn = [self, fn = std::forward<Backward>(backward)]() { fn(*self); };
    }
    return out;
}

template <class T, class Backward>
Tensor<T> make_result(Shape shape, std::vector<T> value, const std::vector<Tensor<T>>& inputs, Backward&& backward) {
    Tensor<T> out(std::move(shape), std::move(value), false);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
        Node<T>* self = out.node();
        self->requires_grad = true;
        for (const auto& in : inputs) self->parents.push_back(in.node_ptr());
        self->backward_fn = [self, fn = std::forward<Backward>(backward)]() { fn(*self); };
    }
    return out;
}

/// Accumulation target for a parent gradient, or nullptr when that parent is
/// outside the tape.
template <class T>
T* grad_sink(const Tensor<T>& t) {
    Node<T>* n = t.node();
    if (!n->requires_grad) return nullptr;
    n->ensure_grad();
    return n->grad.data();
}

/// Same values converted to another scalar type; no graph.
template <class U, class T>
Tensor<U> cast(const Tensor<T>& t, bool requires_grad = false) {
    std::vector<U> v(t.data().begin(), t.data().end());
    return Tensor<U>(t.shape(), std::move(v), requires_grad);
}

}  // namespace diff
}  // namespace pasam
