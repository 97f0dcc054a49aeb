#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle: copies alias the same storage and grad slot.
// Operations record a backward rule on the active GradTape when at least one
// input requires a gradient; with no active tape they only compute values.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace yynet {

class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const { return dims_.size(); }
  std::size_t operator[](std::size_t i) const { return dims_[i]; }
  const std::vector<std::size_t>& dims() const { return dims_; }
  std::size_t numel() const;
  std::string to_string() const;

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<std::size_t> dims_;
};

template <class Real>
class GradTape;

namespace detail {

/// Allocator whose value-less construct leaves trivially constructible
/// elements uninitialized, so outputs that a kernel fully overwrites skip the
/// zero fill.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  DefaultInitAllocator() = default;
  template <class U>
  DefaultInitAllocator(const DefaultInitAllocator<U>&) noexcept {}
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

template <class Real>
using Storage = std::vector<Real, DefaultInitAllocator<Real>>;

template <class Real>
struct TensorImpl {
  Shape shape;
  Storage<Real> data;
  Storage<Real> grad;  // empty == absent
  bool requires_grad = false;
  bool is_leaf = true;
  const GradTape<Real>* tape = nullptr;
  std::size_t node = 0;
};

}  // namespace detail

template <class Real>
class Tensor {
 public:
  using value_type = Real;
  using Impl = detail::TensorImpl<Real>;

  Tensor() = default;
  /// Zero-filled tensor.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<Real> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  /// Storage with unspecified contents; the caller must overwrite every element.
  static Tensor uninitialized(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor scalar(Real value) { return full(Shape{1}, value); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->data.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }

  std::span<const Real> data() const { return impl_->data; }
  std::span<Real> mutable_data() { return impl_->data; }
  Real item() const;

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::span<const Real> grad() const { return impl_->grad; }
  /// Allocates a zero grad slot if none exists.
  std::span<Real> mutable_grad();
  /// Drops the grad slot.
  void zero_grad() { impl_->grad.clear(); }

  /// Value copy with no gradient linkage.
  Tensor detach() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  const std::shared_ptr<Impl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<Impl> impl_;
};

/// Ordered record of differentiable operations. Nodes are appended in
/// execution order, so the record is topologically sorted by construction.
template <class Real>
class GradTape {
 public:
  using BackwardFn = std::function<void(std::span<const Real> grad_out)>;

  class Scope {
   public:
    explicit Scope(GradTape* tape);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    GradTape* previous_;
  };

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Makes this tape the thread's recording target until the scope ends.
  [[nodiscard]] Scope activate() { return Scope(this); }
  static GradTape* active();

  std::size_t size() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return visits_; }

  /// Links output to a new node whose rule receives d(loss)/d(output).
  void record(Tensor<Real>& output, BackwardFn fn);
  void backward(const Tensor<Real>& loss);
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    std::shared_ptr<detail::TensorImpl<Real>> output;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

/// Backpropagates from a scalar loss through the active tape.
template <class Real>
void backward(const Tensor<Real>& loss);

namespace detail {

/// The active tape if any of the inputs requires a gradient, else nullptr.
template <class Real>
GradTape<Real>* recording_tape(std::initializer_list<const Tensor<Real>*> inputs);

/// Grad slot of a tensor that requires grad (zero-allocated on first use).
template <class Real>
std::span<Real> grad_slot(const std::shared_ptr<TensorImpl<Real>>& impl);

void check_same_shape(const Shape& a, const Shape& b, const char* op);

}  // namespace detail

enum class ElementwiseOp { kAdd, kSub, kMul, kOneMinus };

/// Elementwise primitive; b is ignored for kOneMinus.
template <class Real>
Tensor<Real> elementwise(ElementwiseOp op, const Tensor<Real>& a, const Tensor<Real>& b = {});

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
/// Hadamard product.
template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
/// 1 - a.
template <class Real>
Tensor<Real> one_minus(const Tensor<Real>& a);
template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor);

/// (N,K) x (K,M) -> (N,M).
template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

/// Sum of all elements, shape {1}.
template <class Real>
Tensor<Real> sum(const Tensor<Real>& a);
template <class Real>
Tensor<Real> mean(const Tensor<Real>& a);

/// Same storage order, new shape with equal element count.
template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape);

}  // namespace yynet
