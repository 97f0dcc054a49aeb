#include "yynet/tensor.hpp"

#include <cmath>
#include <sstream>

#include "yynet/errors.hpp"
#include "yynet/linalg.hpp"
#include "yynet/simd/kernels.hpp"

namespace yynet {

// ---------------------------------------------------------------------------
// Shape

Shape::Shape(std::initializer_list<std::size_t> dims) : dims_(dims) {}
Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {}

std::size_t Shape::numel() const {
  std::size_t n = 1;
  for (auto d : dims_) n *= d;
  return n;
}

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

// ---------------------------------------------------------------------------
// Tensor

namespace {
void check_shape_valid(const Shape& shape) {
  if (shape.rank() == 0) throw ShapeError("tensor rank must be at least 1");
  for (auto d : shape.dims()) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape.to_string());
  }
}
}  // namespace

template <class Real>
Tensor<Real>::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  check_shape_valid(shape);
  impl_->data.assign(shape.numel(), Real(0));
  impl_->shape = std::move(shape);
}

template <class Real>
Tensor<Real>::Tensor(Shape shape, std::vector<Real> values) : impl_(std::make_shared<Impl>()) {
  check_shape_valid(shape);
  if (shape.numel() != values.size()) {
    throw ShapeError("shape " + shape.to_string() + " holds " + std::to_string(shape.numel()) +
                     " values, got " + std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

template <class Real>
Tensor<Real> Tensor<Real>::uninitialized(Shape shape) {
  check_shape_valid(shape);
  auto impl = std::make_shared<Impl>();
  impl->data.resize(shape.numel());
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

template <class Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

template <class Real>
Real Tensor<Real>::item() const {
  if (numel() != 1) throw ShapeError("item() on a tensor of shape " + shape().to_string());
  return impl_->data[0];
}

template <class Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

template <class Real>
std::span<Real> Tensor<Real>::mutable_grad() {
  return detail::grad_slot(impl_);
}

template <class Real>
Tensor<Real> Tensor<Real>::detach() const {
  return Tensor(impl_->shape, std::vector<Real>(impl_->data.begin(), impl_->data.end()));
}

// ---------------------------------------------------------------------------
// GradTape

namespace {
template <class Real>
GradTape<Real>*& active_slot() {
  thread_local GradTape<Real>* active = nullptr;
  return active;
}
}  // namespace

template <class Real>
GradTape<Real>::Scope::Scope(GradTape* tape) : previous_(active_slot<Real>()) {
  active_slot<Real>() = tape;
}

template <class Real>
GradTape<Real>::Scope::~Scope() {
  active_slot<Real>() = previous_;
}

template <class Real>
GradTape<Real>* GradTape<Real>::active() {
  return active_slot<Real>();
}

template <class Real>
void GradTape<Real>::record(Tensor<Real>& output, BackwardFn fn) {
  auto& impl = *output.impl();
  impl.requires_grad = true;
  impl.is_leaf = false;
  impl.tape = this;
  impl.node = nodes_.size();
  nodes_.push_back(Node{output.impl(), std::move(fn)});
}

template <class Real>
void GradTape<Real>::backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward() needs a scalar loss, got shape " +
                     (loss.defined() ? loss.shape().to_string() : std::string("(undefined)")));
  }
  const auto& limpl = loss.impl();
  if (limpl->is_leaf || limpl->tape != this || limpl->node >= nodes_.size() ||
      nodes_[limpl->node].output != limpl) {
    throw StateError("loss was not produced under this gradient tape");
  }
  limpl->grad.assign(1, Real(1));
  visits_ = 0;
  for (std::size_t i = limpl->node + 1; i-- > 0;) {
    Node& node = nodes_[i];
    auto& out = *node.output;
    if (out.grad.empty()) continue;
    node.fn(out.grad);
    ++visits_;
    // Intermediate grads are consumed exactly once; free them eagerly.
    if (node.output != limpl) {
      out.grad.clear();
      out.grad.shrink_to_fit();
    }
  }
  nodes_.clear();
}

template <class Real>
void backward(const Tensor<Real>& loss) {
  GradTape<Real>* tape = GradTape<Real>::active();
  if (tape == nullptr) throw StateError("backward() called with no active gradient tape");
  tape->backward(loss);
}

namespace detail {

template <class Real>
GradTape<Real>* recording_tape(std::initializer_list<const Tensor<Real>*> inputs) {
  GradTape<Real>* tape = GradTape<Real>::active();
  if (tape == nullptr) return nullptr;
  for (const auto* t : inputs) {
    if (t != nullptr && t->requires_grad()) return tape;
  }
  return nullptr;
}

template <class Real>
std::span<Real> grad_slot(const std::shared_ptr<TensorImpl<Real>>& impl) {
  if (impl->grad.empty()) impl->grad.assign(impl->data.size(), Real(0));
  return impl->grad;
}

void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.to_string() + " vs " + b.to_string());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "add");
  auto out = Tensor<Real>::uninitialized(a.shape());
  const auto& k = simd::kernels<Real>();
  k.add(a.numel(), a.data().data(), b.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl()](std::span<const Real> g) {
      const auto& kk = simd::kernels<Real>();
      if (ai->requires_grad) kk.axpy(g.size(), Real(1), g.data(), detail::grad_slot(ai).data());
      if (bi->requires_grad) kk.axpy(g.size(), Real(1), g.data(), detail::grad_slot(bi).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "sub");
  auto out = Tensor<Real>::uninitialized(a.shape());
  simd::kernels<Real>().sub(a.numel(), a.data().data(), b.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl()](std::span<const Real> g) {
      const auto& kk = simd::kernels<Real>();
      if (ai->requires_grad) kk.axpy(g.size(), Real(1), g.data(), detail::grad_slot(ai).data());
      if (bi->requires_grad) kk.axpy(g.size(), Real(-1), g.data(), detail::grad_slot(bi).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  detail::check_same_shape(a.shape(), b.shape(), "mul");
  auto out = Tensor<Real>::uninitialized(a.shape());
  simd::kernels<Real>().mul(a.numel(), a.data().data(), b.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl()](std::span<const Real> g) {
      const auto& kk = simd::kernels<Real>();
      if (ai->requires_grad) kk.mul_acc(g.size(), g.data(), bi->data.data(), detail::grad_slot(ai).data());
      if (bi->requires_grad) kk.mul_acc(g.size(), g.data(), ai->data.data(), detail::grad_slot(bi).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> one_minus(const Tensor<Real>& a) {
  auto out = Tensor<Real>::uninitialized(a.shape());
  simd::kernels<Real>().affine(a.numel(), Real(-1), Real(1), a.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&a})) {
    tape->record(out, [ai = a.impl()](std::span<const Real> g) {
      simd::kernels<Real>().axpy(g.size(), Real(-1), g.data(), detail::grad_slot(ai).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> scale(const Tensor<Real>& a, Real factor) {
  auto out = Tensor<Real>::uninitialized(a.shape());
  simd::kernels<Real>().affine(a.numel(), factor, Real(0), a.data().data(), out.mutable_data().data());
  if (auto* tape = detail::recording_tape({&a})) {
    tape->record(out, [ai = a.impl(), factor](std::span<const Real> g) {
      simd::kernels<Real>().axpy(g.size(), factor, g.data(), detail::grad_slot(ai).data());
    });
  }
  return out;
}

template <class Real>
Tensor<Real> elementwise(ElementwiseOp op, const Tensor<Real>& a, const Tensor<Real>& b) {
  switch (op) {
    case ElementwiseOp::kAdd:
      return add(a, b);
    case ElementwiseOp::kSub:
      return sub(a, b);
    case ElementwiseOp::kMul:
      return mul(a, b);
    case ElementwiseOp::kOneMinus:
      return one_minus(a);
  }
  throw StateError("unknown elementwise op");
}

// ---------------------------------------------------------------------------
// Linear algebra and reductions

template <class Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.shape().rank() != 2 || b.shape().rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + a.shape().to_string() + " x " +
                     b.shape().to_string());
  }
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  auto out = Tensor<Real>::uninitialized(Shape{n, m});
  using linalg::Trans;
  linalg::gemm(Trans::kNo, Trans::kNo, n, m, k, a.data().data(), b.data().data(),
               out.mutable_data().data(), false);
  if (auto* tape = detail::recording_tape({&a, &b})) {
    tape->record(out, [ai = a.impl(), bi = b.impl(), n, k, m](std::span<const Real> g) {
      if (ai->requires_grad) {
        linalg::gemm(Trans::kNo, Trans::kYes, n, k, m, g.data(), bi->data.data(),
                     detail::grad_slot(ai).data(), true);
      }
      if (bi->requires_grad) {
        linalg::gemm(Trans::kYes, Trans::kNo, k, m, n, ai->data.data(), g.data(),
                     detail::grad_slot(bi).data(), true);
      }
    });
  }
  return out;
}

template <class Real>
Tensor<Real> sum(const Tensor<Real>& a) {
  Tensor<Real> out(Shape{1});
  out.mutable_data()[0] = simd::kernels<Real>().sum(a.numel(), a.data().data());
  if (auto* tape = detail::recording_tape({&a})) {
    tape->record(out, [ai = a.impl()](std::span<const Real> g) {
      auto slot = detail::grad_slot(ai);
      const Real gv = g[0];
      for (auto& v : slot) v += gv;
    });
  }
  return out;
}

template <class Real>
Tensor<Real> mean(const Tensor<Real>& a) {
  return scale(sum(a), Real(1) / static_cast<Real>(a.numel()));
}

template <class Real>
Tensor<Real> reshape(const Tensor<Real>& a, Shape shape) {
  if (shape.numel() != a.numel()) {
    throw ShapeError("reshape: " + a.shape().to_string() + " -> " + shape.to_string());
  }
  Tensor<Real> out(std::move(shape), std::vector<Real>(a.data().begin(), a.data().end()));
  if (auto* tape = detail::recording_tape({&a})) {
    tape->record(out, [ai = a.impl()](std::span<const Real> g) {
      simd::kernels<Real>().axpy(g.size(), Real(1), g.data(), detail::grad_slot(ai).data());
    });
  }
  return out;
}

#define YYNET_INSTANTIATE(Real)                                                               \
  template class Tensor<Real>;                                                                \
  template class GradTape<Real>;                                                              \
  template void backward<Real>(const Tensor<Real>&);                                          \
  template GradTape<Real>* detail::recording_tape<Real>(std::initializer_list<const Tensor<Real>*>); \
  template std::span<Real> detail::grad_slot<Real>(const std::shared_ptr<detail::TensorImpl<Real>>&); \
  template Tensor<Real> elementwise<Real>(ElementwiseOp, const Tensor<Real>&, const Tensor<Real>&); \
  template Tensor<Real> add<Real>(const Tensor<Real>&, const Tensor<Real>&);                   \
  template Tensor<Real> sub<Real>(const Tensor<Real>&, const Tensor<Real>&);                   \
  template Tensor<Real> mul<Real>(const Tensor<Real>&, const Tensor<Real>&);                   \
  template Tensor<Real> one_minus<Real>(const Tensor<Real>&);                                  \
  template Tensor<Real> scale<Real>(const Tensor<Real>&, Real);                                \
  template Tensor<Real> matmul<Real>(const Tensor<Real>&, const Tensor<Real>&);                \
  template Tensor<Real> sum<Real>(const Tensor<Real>&);                                        \
  template Tensor<Real> mean<Real>(const Tensor<Real>&);                                       \
  template Tensor<Real> reshape<Real>(const Tensor<Real>&, Shape);

YYNET_INSTANTIATE(float)
YYNET_INSTANTIATE(double)
#undef YYNET_INSTANTIATE

}  // namespace yynet
