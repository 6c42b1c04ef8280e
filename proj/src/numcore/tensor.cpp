// SPDX-License-Identifier: Apache-2.0
#include "llmkt/numcore/tensor.hpp"

#include <numeric>
#include <sstream>
#include <unordered_set>

namespace llmkt::numcore {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Buffer& TensorImpl::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>();
    impl->data.assign(shape_numel(shape), value);
    impl->shape = std::move(shape);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
    return from_buffer(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, Buffer values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw ContractError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                            shape_str(shape));
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return from_buffer({}, Buffer{value}, requires_grad); }

std::size_t Tensor::rows() const {
    const auto& s = shape();
    if (s.size() <= 1) return 1;
    if (s.size() == 2) return s[0];
    throw ContractError("rows() on tensor of rank " + std::to_string(s.size()));
}

std::size_t Tensor::cols() const {
    const auto& s = shape();
    if (s.empty()) return 1;
    if (s.size() == 1) return s[0];
    if (s.size() == 2) return s[1];
    throw ContractError("cols() on tensor of rank " + std::to_string(s.size()));
}

Real Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor with shape " + shape_str(shape()));
    return impl().data[0];
}

void Tensor::set_requires_grad(bool flag) {
    if (!impl().is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
    impl().requires_grad = flag;
}

std::vector<Real> Tensor::grad() const {
    if (impl().grad.empty()) return std::vector<Real>(numel(), 0.0);
    return {impl().grad.begin(), impl().grad.end()};
}

Tensor Tensor::detach() const { return from_buffer(shape(), impl().data, false); }

Tensor Tensor::clone(bool requires_grad) const { return from_buffer(shape(), impl().data, requires_grad); }

Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> parents,
                   std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (g_grad_enabled) {
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            impl->requires_grad = true;
            impl->parents.reserve(parents.size());
            for (auto& p : parents) impl->parents.push_back(p.impl_ptr());
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order. Nodes are held by
    // owning pointers because clearing a node's tape may release its parents.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    stack.emplace_back(loss.impl_ptr(), 0);
    seen.insert(&loss.impl());
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            std::shared_ptr<TensorImpl> parent = top.first->parents[top.second++];
            if (parent->requires_grad && seen.insert(parent.get()).second) stack.emplace_back(std::move(parent), 0);
        } else {
            order.push_back(std::move(top.first));
            stack.pop_back();
        }
    }

    loss.impl().ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = it->get();
        if (node->is_leaf()) continue;
        if (!node->grad.empty() && node->backward_fn) node->backward_fn(*node);
        node->backward_fn = nullptr;
        node->parents.clear();
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

}  // namespace llmkt::numcore
