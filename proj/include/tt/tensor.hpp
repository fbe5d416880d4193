#pragma once

// Dense row-major tensor templated on scalar type, plus the reverse-mode tape.
//
// Tensors are value-semantic handles onto shared storage: copying a Tensor is
// cheap and both handles see the same data.  Operations in ops.hpp are pure
// (they allocate fresh outputs); parameters are mutated in place only by the
// optimizer.  Gradients live beside the data and accumulate across backward
// passes until zero_grad() is called.

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tt/errors.hpp"

namespace tt {

using Shape = std::vector<int>;
using Index = std::int64_t;

inline Index numel(const Shape& s) {
  Index n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string format_shape(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << ']';
  return os.str();
}

// Row-major strides, in elements.
inline std::vector<Index> row_major_strides(const Shape& s) {
  std::vector<Index> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
    st[i] = st[i + 1] * s[i + 1];
  return st;
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::unique_ptr<std::vector<T>> grad;  // lazily allocated, same length as data
  bool requires_grad = false;            // leaf flag set by the caller
  bool tracked = false;                  // set on outputs recorded on a tape
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : impl_(std::make_shared<detail::TensorImpl<T>>()) {
    validate_shape(shape);
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(numel(impl_->shape)), T(0));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    for (auto& v : t.impl_->data) v = value;
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor from_data(Shape shape, std::vector<T> data) {
    validate_shape(shape);
    if (numel(shape) != static_cast<Index>(data.size()))
      throw ShapeError("from_data: shape " + format_shape(shape) + " wants " +
                       std::to_string(numel(shape)) + " elements, got " +
                       std::to_string(data.size()));
    Tensor t;
    t.impl_ = std::make_shared<detail::TensorImpl<T>>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  static Tensor scalar(T value) { return from_data({1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return check()->shape; }
  int rank() const { return static_cast<int>(check()->shape.size()); }
  int dim(int i) const { return check()->shape.at(static_cast<size_t>(i)); }
  Index size() const { return static_cast<Index>(check()->data.size()); }

  const std::vector<T>& data() const { return check()->data; }
  std::vector<T>& data_mut() const { return check()->data; }

  T at(const std::vector<int>& idx) const { return check()->data[offset(idx)]; }
  T& at_mut(const std::vector<int>& idx) const { return check()->data[offset(idx)]; }

  bool requires_grad() const { return check()->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    check()->requires_grad = v;
    return *this;
  }

  // True when this tensor should take part in gradient recording: either a
  // leaf that wants gradients or an intermediate already on a tape.
  bool entangled() const { return check()->requires_grad || check()->tracked; }
  void mark_tracked() const { check()->tracked = true; }

  bool has_grad() const { return check()->grad != nullptr; }

  // Gradient buffer, allocated as zeros on first use.
  std::vector<T>& grad_accum() const {
    auto* im = check();
    if (!im->grad) im->grad = std::make_unique<std::vector<T>>(im->data.size(), T(0));
    return *im->grad;
  }

  const std::vector<T>* grad_if() const { return check()->grad.get(); }

  const std::vector<T>& grad_ref() const {
    auto* im = check();
    if (!im->grad)
      throw ContractError("grad_ref: tensor has no gradient (no backward pass reached it)");
    return *im->grad;
  }

  // Copy of the gradient as a tensor of the same shape.
  Tensor grad() const { return Tensor::from_data(shape(), grad_ref()); }

  void zero_grad() const {
    auto* im = check();
    if (im->grad) std::fill(im->grad->begin(), im->grad->end(), T(0));
  }

  // Identity of the underlying storage; used by tests and the tape.
  const void* id() const { return impl_.get(); }

 private:
  static void validate_shape(const Shape& s) {
    for (int d : s)
      if (d <= 0)
        throw ShapeError("tensor shape must have positive extents, got " + format_shape(s));
    if (s.empty()) throw ShapeError("tensor rank must be >= 1 (scalars use shape [1])");
  }

  Index offset(const std::vector<int>& idx) const {
    const auto& s = check()->shape;
    if (idx.size() != s.size())
      throw ShapeError("index rank " + std::to_string(idx.size()) + " does not match tensor " +
                       format_shape(s));
    Index off = 0;
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= s[i])
        throw ShapeError("index out of bounds for " + format_shape(s));
      off = off * s[i] + idx[i];
    }
    return off;
  }

  detail::TensorImpl<T>* check() const {
    if (!impl_) throw ContractError("use of undefined tensor");
    return impl_.get();
  }

  std::shared_ptr<detail::TensorImpl<T>> impl_;
};

// Ordered record of differentiable operations.  Ops push one node each while a
// tape is active; backward() seeds d(loss)/d(loss) = 1 and replays the nodes in
// reverse, so every node is visited exactly once per call.  Gradients
// accumulate across repeated backward() calls until tensors are zeroed.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_; }

  // RAII activation; nests correctly.
  class Scope {
   public:
    explicit Scope(Tape& t) : prev_(active_) { active_ = &t; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

  void record(const char* op, Tensor<T> out, std::function<void()> backward) {
    nodes_.push_back(Node{op, std::move(out), std::move(backward)});
  }

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  // Seeds d(loss)/d(loss) = 1 and replays the recorded closures in reverse.
  // Intermediate (op-output) gradients are reset at the start of each call so
  // that a repeated backward re-propagates from a clean slate; leaf gradients
  // are left untouched and therefore accumulate across calls.
  void backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw ContractError("backward: loss must be a scalar, got shape " +
                          format_shape(loss.shape()));
    if (nodes_.empty()) throw ContractError("backward: tape is empty");
    if (!loss.entangled())
      throw ContractError("backward: loss is not connected to this tape");
    for (auto& n : nodes_) n.out.zero_grad();
    loss.grad_accum()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
  }

 private:
  struct Node {
    const char* op;
    Tensor<T> out;
    std::function<void()> backward;
  };

  std::vector<Node> nodes_;
  inline static thread_local Tape* active_ = nullptr;
};

// Thread-local FLOP meter.  Ops report their analytic cost through add();
// when no counter is active the call is a no-op.  Used to cross-check the
// closed-form cost model against an instrumented forward pass.
class FlopCounter {
 public:
  class Scope {
   public:
    explicit Scope(FlopCounter& c) : prev_(active_) { active_ = &c; }
    ~Scope() { active_ = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    FlopCounter* prev_;
  };

  static void add(std::uint64_t n) {
    if (active_) active_->total_ += n;
  }

  std::uint64_t total() const { return total_; }
  void reset() { total_ = 0; }

 private:
  std::uint64_t total_ = 0;
  inline static thread_local FlopCounter* active_ = nullptr;
};

// Deterministic random stream.  Derives uniforms from raw mt19937_64 bits so
// the sequence does not depend on the standard library's distribution
// implementations; the same seed yields the same stream on every platform.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  double uniform() {  // [0, 1)
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double normal() {  // Box-Muller, cosine branch only (deterministic draw count: 2)
    double u1 = uniform();
    double u2 = uniform();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  // Normal with stddev sigma, redrawn until within clip standard deviations.
  double trunc_normal(double sigma, double clip = 2.0) {
    double z = normal();
    while (std::fabs(z) > clip) z = normal();
    return sigma * z;
  }

 private:
  std::mt19937_64 eng_;
};

// Every op funnels its output through this check: NaN/Inf aborts with a
// diagnostic naming the op instead of propagating silently.
template <typename T>
inline void ensure_finite(const char* op, const Tensor<T>& t) {
  for (T v : t.data())
    if (!std::isfinite(static_cast<double>(v)))
      throw NumericError(std::string(op) + ": produced non-finite values");
}

}  // namespace tt
