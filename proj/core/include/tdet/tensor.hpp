#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Tensor storage is 64-byte aligned, so vectorized kernels take the same
// peeling path on every run and float reductions are bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlignment));
  }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const {
    return true;
  }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Graph recording is on by default. While a guard is alive on the current
// thread, ops produce plain tensors with no backward node.
bool grad_mode_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  AlignedVector<T> data;
  // Empty until the first accumulation; same size as data afterwards.
  AlignedVector<T> grad;
  bool requires_grad = false;

  // Non-empty only for interior graph nodes. backward_fn reads this->grad and
  // accumulates into the parents that require grad.
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void(TensorImpl&)> backward_fn;

  TensorImpl() = default;
  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  // Releases the parent chain iteratively; long graphs would otherwise
  // recurse once per node on destruction.
  ~TensorImpl() {
    std::vector<std::shared_ptr<TensorImpl>> pending = std::move(parents);
    while (!pending.empty()) {
      std::shared_ptr<TensorImpl> node = std::move(pending.back());
      pending.pop_back();
      if (node.use_count() == 1) {
        for (auto& p : node->parents) pending.push_back(std::move(p));
        node->parents.clear();
      }
    }
  }

  bool is_leaf() const { return !backward_fn; }

  T* grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad.data();
  }
};

}  // namespace detail

template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  BasicTensor() = default;

  // Zero-filled tensor.
  explicit BasicTensor(Shape shape, bool requires_grad = false);
  BasicTensor(Shape shape, std::vector<T> values, bool requires_grad = false);

  // Takes ownership of already-aligned storage without copying.
  static BasicTensor from_storage(Shape shape, AlignedVector<T> values, bool requires_grad = false);

  static BasicTensor scalar(T value);
  static BasicTensor full(Shape shape, T value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> values() { return impl_->data; }
  std::span<const T> values() const { return impl_->data; }
  T item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool flag);
  bool has_grad() const { return !impl_->grad.empty(); }
  // Zeros when no gradient has been accumulated yet.
  std::vector<T> grad() const;
  std::span<T> grad_mut() { return {impl_->grad_buffer(), impl_->data.size()}; }
  void zero_grad();

  // Reverse-mode sweep from a scalar. Leaf gradients accumulate across calls;
  // interior gradients are recomputed from scratch on every call.
  void backward() const;

  // Same values, no graph history, requires_grad off.
  BasicTensor detached() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(impl_->data.begin(), impl_->data.end());
    return BasicTensor<U>(impl_->shape, std::move(out));
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }
  static BasicTensor from_impl(std::shared_ptr<Impl> impl) {
    BasicTensor t;
    t.impl_ = std::move(impl);
    return t;
  }

 private:
  std::shared_ptr<Impl> impl_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace tdet
