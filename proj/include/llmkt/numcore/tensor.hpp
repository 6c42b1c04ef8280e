// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdlib>
#include <functional>
#include <new>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace llmkt::numcore {

using Real = double;
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// 64-byte aligned storage. Vectorised kernels pick their peeling and
/// reduction order from the address, so fixed alignment keeps results
/// bitwise reproducible from run to run.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t kAlign = 64;
    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}
    T* allocate(std::size_t n) {
        const std::size_t bytes = (n * sizeof(T) + kAlign - 1) / kAlign * kAlign;
        void* p = std::aligned_alloc(kAlign, bytes == 0 ? kAlign : bytes);
        if (!p) throw std::bad_alloc();
        return static_cast<T*>(p);
    }
    void deallocate(T* p, std::size_t) noexcept { std::free(p); }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

/// Raised when a caller breaks an operation's shape or argument contract.
class ContractError : public std::invalid_argument {
   public:
    using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
    Shape shape;
    Buffer data;
    Buffer grad;  // empty until a gradient is accumulated
    bool requires_grad = false;

    // Graph edges; empty for leaves.
    std::vector<std::shared_ptr<TensorImpl>> parents;
    // Reads this->grad and accumulates into parents' grads.
    std::function<void(TensorImpl&)> backward_fn;

    bool is_leaf() const { return parents.empty(); }
    Buffer& ensure_grad();
};

/// Dense row-major tensor with an optional reverse-mode tape.
///
/// Copies share storage (handle semantics). Rank-1 tensors behave as a single
/// row wherever a matrix is expected; rank-0 tensors hold one scalar.
class Tensor {
   public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Real value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
    static Tensor from_buffer(Shape shape, Buffer values, bool requires_grad = false);
    static Tensor scalar(Real value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(impl_); }
    explicit operator bool() const { return defined(); }

    const Shape& shape() const { return impl().shape; }
    std::size_t dim() const { return impl().shape.size(); }
    std::size_t numel() const { return impl().data.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const Real> data() const { return impl().data; }
    std::span<Real> mutable_data() { return impl().data; }
    Real item() const;
    Real at(std::size_t i) const { return impl().data.at(i); }
    Real at(std::size_t r, std::size_t c) const { return impl().data.at(r * cols() + c); }

    bool requires_grad() const { return impl().requires_grad; }
    void set_requires_grad(bool flag);
    bool has_grad() const { return !impl().grad.empty(); }
    /// Gradient values; all zeros when nothing was accumulated.
    std::vector<Real> grad() const;
    std::span<const Real> grad_span() const { return impl().grad; }
    void zero_grad() { impl().grad.clear(); }

    /// Value copy with no graph history.
    Tensor detach() const;
    Tensor clone(bool requires_grad) const;

    TensorImpl& impl() const {
        if (!impl_) throw ContractError("use of an undefined tensor");
        return *impl_;
    }
    const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

   private:
    std::shared_ptr<TensorImpl> impl_;
};

/// Builds the result node of an operation. `backward` runs only when the
/// result requires a gradient (any parent does).
Tensor make_result(Shape shape, Buffer data, std::vector<Tensor> parents,
                   std::function<void(TensorImpl&)> backward);

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls until zero_grad(); intermediate nodes drop their tape afterwards.
void backward(const Tensor& loss);

/// Scope guard disabling tape recording (inference paths).
class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

bool grad_enabled();

}  // namespace llmkt::numcore
