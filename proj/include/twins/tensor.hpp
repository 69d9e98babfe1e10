#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace twins {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Raised when a forward op produces NaN/Inf from finite inputs.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {
inline thread_local bool grad_enabled = true;
}

// Disables graph recording for the enclosing scope (inference paths).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
    ~NoGradGuard() { detail::grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::grad_enabled; }

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily, same length as data
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorImpl<T>>> parents;
    std::function<void(TensorImpl<T>&)> backward_op;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    }
};

// Value-semantics handle to a shared dense buffer. Copies alias the
// same storage; ops produce fresh tensors.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, bool requires_grad = false)
        : impl_(std::make_shared<TensorImpl<T>>()) {
        impl_->shape = std::move(shape);
        impl_->data.assign(numel(impl_->shape), T(0));
        impl_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
        return t;
    }

    static Tensor scalar(T value) { return full({1}, value); }

    static Tensor from(Shape shape, std::vector<T> data) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(data);
        return t;
    }

    bool valid() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t size() const { return impl_->data.size(); }
    std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

    T* data() { return impl_->data.data(); }
    const T* data() const { return impl_->data.data(); }
    std::vector<T>& vec() { return impl_->data; }
    const std::vector<T>& vec() const { return impl_->data; }

    T item() const {
        if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->data[0];
    }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    Tensor& set_requires_grad(bool v) {
        impl_->requires_grad = v;
        return *this;
    }

    const std::vector<T>& grad() const {
        impl_->ensure_grad();
        return impl_->grad;
    }
    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

namespace detail {

template <typename T>
inline void check_finite(const std::vector<T>& data, const char* op) {
    for (const T& v : data)
        if (!std::isfinite(v))
            throw NumericError(std::string(op) + " produced a non-finite value");
}

// Wraps the forward result: attaches parents and the backward closure
// only when recording is on and some input is tracked.
template <typename T>
Tensor<T> make_op(const char* op, Shape shape, std::vector<T> data,
                  std::vector<Tensor<T>> parents,
                  std::function<void(TensorImpl<T>&)> backward,
                  bool finite_check = true) {
    if (finite_check) check_finite(data, op);
    Tensor<T> out = Tensor<T>::from(std::move(shape), std::move(data));
    bool track = grad_enabled &&
                 std::any_of(parents.begin(), parents.end(),
                             [](const Tensor<T>& p) { return p.valid() && p.requires_grad(); });
    if (track) {
        out.set_requires_grad(true);
        auto impl = out.impl();
        for (auto& p : parents)
            if (p.valid()) impl->parents.push_back(p.impl());
        impl->backward_op = std::move(backward);
    }
    return out;
}

}  // namespace detail

// Topologically ordered record of the nodes reachable from one root.
template <typename T>
struct Graph {
    std::vector<TensorImpl<T>*> order;  // parents before children
};

template <typename T>
Graph<T> build_graph(const Tensor<T>& root) {
    Graph<T> g;
    std::unordered_set<TensorImpl<T>*> seen;
    // iterative post-order DFS
    std::vector<std::pair<TensorImpl<T>*, std::size_t>> stack;
    stack.emplace_back(root.impl().get(), 0);
    seen.insert(root.impl().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorImpl<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            g.order.push_back(node);
            stack.pop_back();
        }
    }
    return g;
}

// Reverse-mode sweep from a scalar loss; gradients accumulate into
// every reachable tensor with requires_grad set.
template <typename T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1)
        throw ShapeError("backward expects a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw ShapeError("backward on a detached tensor (no graph recorded)");
    Graph<T> g = build_graph(loss);
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] = T(1);
    for (auto it = g.order.rbegin(); it != g.order.rend(); ++it) {
        TensorImpl<T>* node = *it;
        if (node->backward_op) {
            node->ensure_grad();
            for (auto& p : node->parents) p->ensure_grad();
            node->backward_op(*node);
        }
    }
}

}  // namespace twins
