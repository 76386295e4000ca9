#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet {

using Shape = std::vector<std::int64_t>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ')';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;         // same length as values once touched by backward
  bool requires_grad = false;  // set on leaves (parameters)
  bool grad_flow = false;      // true for outputs recorded on the active tape

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

}  // namespace detail

// Dense n-dimensional array over float or double. Copying a Tensor copies a
// shared handle; the underlying buffer is treated as immutable once it has
// been consumed by a forward op. `mutable_values` exists for parameter
// initialization and optimizer updates, which happen between tapes.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    impl_->shape = std::move(shape);
    impl_->values.assign(static_cast<std::size_t>(shape_numel(impl_->shape)), fill);
  }
  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<Impl>()) {
    check_shape(shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size())) {
      throw ShapeError("tensor init: shape " + shape_str(shape) + " expects " +
                       std::to_string(shape_numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    impl_->shape = std::move(shape);
    impl_->values = std::move(values);
  }
  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(impl_->values.size()); }

  const std::vector<T>& values() const { return impl_->values; }
  std::vector<T>& mutable_values() { return impl_->values; }
  T item() const {
    if (size() != 1) throw ShapeError("item(): tensor " + shape_str(shape()) + " is not scalar");
    return impl_->values[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag) {
    impl_->requires_grad = flag;
    return *this;
  }
  bool grad_flows() const { return impl_ && (impl_->requires_grad || impl_->grad_flow); }

  bool has_grad() const { return impl_ && impl_->grad.size() == impl_->values.size(); }
  const std::vector<T>& grad() const {
    if (!has_grad()) throw Error("grad(): no gradient populated; run backward first");
    return impl_->grad;
  }
  void zero_grad() {
    if (impl_) impl_->grad.assign(impl_->values.size(), T(0));
  }

  // Value copy detached from any graph.
  Tensor detach() const {
    Tensor out(impl_->shape, impl_->values);
    return out;
  }

  std::shared_ptr<Impl> impl() const { return impl_; }

 private:
  static void check_shape(const Shape& shape) {
    for (auto d : shape) {
      if (d <= 0) throw ShapeError("tensor shapes must have positive extents, got " + shape_str(shape));
    }
  }

  std::shared_ptr<Impl> impl_;
};

// Eager gradient tape. Ops append one backward step per recorded primitive;
// appending order is a topological order of the forward graph, so running the
// steps in reverse visits every node exactly once. One tape per training
// thread; without an active tape ops run in pure inference mode.
template <typename T>
class Tape {
 public:
  Tape() { stack().push_back(this); }
  ~Tape() { stack().pop_back(); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() {
    auto& s = stack();
    return s.empty() ? nullptr : s.back();
  }

  void record(std::function<void()> step) { steps_.push_back(std::move(step)); }
  std::size_t size() const { return steps_.size(); }

  // Seeds d(loss)/d(loss) = 1 and plays the tape backwards, accumulating into
  // every grad-flowing tensor. The tape is cleared afterwards; calling
  // backward again without recording a new forward pass is an error.
  void backward(const Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw Error("backward: loss must be a scalar tensor, got " +
                  (loss.defined() ? shape_str(loss.shape()) : std::string("<null>")));
    }
    if (steps_.empty()) {
      throw Error("backward: tape is empty (already consumed by a previous backward, or no "
                  "grad-requiring ops were recorded)");
    }
    if (!loss.grad_flows()) {
      throw Error("backward: loss does not depend on any tensor that requires gradients");
    }
    auto impl = loss.impl();
    impl->ensure_grad();
    impl->grad[0] += T(1);
    for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
    steps_.clear();
  }

 private:
  static std::vector<Tape*>& stack() {
    thread_local std::vector<Tape*> s;
    return s;
  }
  std::vector<std::function<void()>> steps_;
};

// Records `step` on the active tape and marks `out` as grad-flowing, provided
// some input actually flows gradients. Ops call this after computing values.
template <typename T, typename Fn>
void record_op(bool any_input_flows, Tensor<T>& out, Fn&& step) {
  Tape<T>* tape = Tape<T>::active();
  if (!tape || !any_input_flows) return;
  out.impl()->grad_flow = true;
  tape->record(std::forward<Fn>(step));
}

}  // namespace sleepnet
