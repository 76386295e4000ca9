#pragma once

// Differentiable primitives over Tensor<T>. Every op computes its forward
// value eagerly and, when a tape is active and an input flows gradients,
// records one backward step. Broadcasting is trailing-dimension only: a
// smaller operand must match a suffix of the larger operand's shape (or be a
// scalar); anything else is rejected.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "sleepnet/tensor.hpp"

namespace sleepnet {

namespace detail {

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  const std::size_t off = big.size() - small.size();
  for (std::size_t i = 0; i < small.size(); ++i) {
    if (small[i] != big[off + i]) return false;
  }
  return true;
}

template <typename T>
inline T stable_sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <typename T>
inline T stable_softplus(T x) {
  const T ax = x < T(0) ? -x : x;
  return std::max(x, T(0)) + std::log1p(std::exp(-ax));
}

// dst[j] += sum over repeats of src (src has repeat*numel(dst) elements).
template <typename T>
inline void reduce_into(const std::vector<T>& src, std::vector<T>& dst) {
  const std::size_t s = dst.size();
  const std::size_t reps = src.size() / s;
  for (std::size_t r = 0; r < reps; ++r) {
    const T* p = src.data() + r * s;
    for (std::size_t j = 0; j < s; ++j) dst[j] += p[j];
  }
}

// C(M,N) += A(M,K) * B(K,N)
template <typename T>
inline void mm_nn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    T* ci = c + i * n;
    const T* ai = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      const T* bp = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C(M,N) += A(M,K) * B(N,K)^T
template <typename T>
inline void mm_nt(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    T* ci = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const T* bj = b + j * k;
      T acc = T(0);
      for (std::int64_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
      ci[j] += acc;
    }
  }
}

// C(K,N) += A(M,K)^T * B(M,N)
template <typename T>
inline void mm_tn(const T* a, const T* b, T* c, std::int64_t m, std::int64_t k, std::int64_t n) {
  for (std::int64_t i = 0; i < m; ++i) {
    const T* ai = a + i * k;
    const T* bi = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const T aip = ai[p];
      T* cp = c + p * n;
      for (std::int64_t j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with trailing broadcast
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename DfdA, typename DfdB>
Tensor<T> broadcast_binary(const char* name, const Tensor<T>& a, const Tensor<T>& b, Fwd fwd,
                           DfdA dfda, DfdB dfdb) {
  const bool a_big = a.size() >= b.size();
  const Tensor<T>& big = a_big ? a : b;
  const Tensor<T>& small = a_big ? b : a;
  if (!detail::is_suffix(small.shape(), big.shape())) {
    throw ShapeError(std::string(name) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not trailing-broadcast compatible");
  }
  const std::size_t ns = static_cast<std::size_t>(small.size());
  const auto& av = a.values();
  const auto& bv = b.values();
  Tensor<T> out(big.shape());
  auto& ov = out.mutable_values();
  const std::size_t n = ov.size();
  if (a_big) {
    for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i % ns]);
  } else {
    for (std::size_t i = 0; i < n; ++i) ov[i] = fwd(av[i % ns], bv[i]);
  }
  record_op(a.grad_flows() || b.grad_flows(), out,
            [ai = a.impl(), bi = b.impl(), oi = out.impl(), a_big, ns, dfda, dfdb]() {
              const auto& go = oi->grad;
              const auto& av = ai->values;
              const auto& bv = bi->values;
              const auto& yv = oi->values;
              const std::size_t n = yv.size();
              const bool da = ai->requires_grad || ai->grad_flow;
              const bool db = bi->requires_grad || bi->grad_flow;
              if (da) ai->ensure_grad();
              if (db) bi->ensure_grad();
              for (std::size_t i = 0; i < n; ++i) {
                const std::size_t j = i % ns;
                const std::size_t iA = a_big ? i : j;
                const std::size_t iB = a_big ? j : i;
                const T x = av[iA];
                const T y = bv[iB];
                if (da) ai->grad[iA] += go[i] * dfda(x, y, yv[i]);
                if (db) bi->grad[iB] += go[i] * dfdb(x, y, yv[i]);
              }
            });
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "add", a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "sub", a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "mul", a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; });
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      "div", a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T out) { return -out / y; });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T, typename Fwd, typename Dfdx>
Tensor<T> unary_op(const Tensor<T>& x, Fwd fwd, Dfdx dfdx) {
  const auto& xv = x.values();
  Tensor<T> out(x.shape());
  auto& ov = out.mutable_values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), dfdx]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    const auto& go = oi->grad;
    for (std::size_t i = 0; i < go.size(); ++i) {
      xi->grad[i] += go[i] * dfdx(xi->values[i], oi->values[i]);
    }
  });
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}
template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}
template <typename T>
Tensor<T> sqrt(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::sqrt(v); },
                  [](T, T y) { return T(0.5) / y; });
}
template <typename T>
Tensor<T> rsqrt(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return T(1) / std::sqrt(v); },
                  [](T v, T y) { return T(-0.5) * y / v; });
}
template <typename T>
Tensor<T> square(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}
template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v > T(0) ? v : T(0); },
                  [](T v, T) { return v > T(0) ? T(1) : T(0); });
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return detail::stable_sigmoid(v); },
                  [](T, T y) { return y * (T(1) - y); });
}
template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return std::tanh(v); },
                  [](T, T y) { return T(1) - y * y; });
}
template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return v * detail::stable_sigmoid(v); },
                  [](T v, T) {
                    const T s = detail::stable_sigmoid(v);
                    return s * (T(1) + v * (T(1) - s));
                  });
}
template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary_op(x, [](T v) { return detail::stable_softplus(v); },
                  [](T v, T) { return detail::stable_sigmoid(v); });
}
template <typename T>
Tensor<T> clip(const Tensor<T>& x, T lo, T hi) {
  return unary_op(x, [lo, hi](T v) { return std::min(std::max(v, lo), hi); },
                  [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
}
// 0.5*d^2 inside |d|<=delta, linear tails outside; derivative is clamp(d).
template <typename T>
Tensor<T> huber_elem(const Tensor<T>& d, T delta) {
  return unary_op(d,
                  [delta](T v) {
                    const T a = v < T(0) ? -v : v;
                    return a <= delta ? T(0.5) * v * v : delta * (a - T(0.5) * delta);
                  },
                  [delta](T v, T) { return std::min(std::max(v, -delta), delta); });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary_op(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
  return unary_op(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

// ---------------------------------------------------------------------------
// Matrix multiply
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<T> out(Shape{m, n});
  detail::mm_nn(a.values().data(), b.values().data(), out.mutable_values().data(), m, k, n);
  record_op(a.grad_flows() || b.grad_flows(), out,
            [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n]() {
              if (ai->requires_grad || ai->grad_flow) {
                ai->ensure_grad();
                detail::mm_nt(oi->grad.data(), bi->values.data(), ai->grad.data(), m, n, k);
              }
              if (bi->requires_grad || bi->grad_flow) {
                bi->ensure_grad();
                detail::mm_tn(ai->values.data(), oi->grad.data(), bi->grad.data(), m, k, n);
              }
            });
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

namespace detail {
// Maps each linear index of `shape` to the linear index of the shape with
// `axes` removed. Walker form to avoid per-element division.
struct ReduceMap {
  Shape in_shape;
  std::vector<bool> reduced;
  std::vector<std::int64_t> out_strides;  // per input axis (0 when reduced)
  std::int64_t out_numel = 1;

  ReduceMap(const Shape& shape, const std::vector<int>& axes) : in_shape(shape) {
    reduced.assign(shape.size(), false);
    for (int a : axes) {
      if (a < 0 || a >= static_cast<int>(shape.size())) {
        throw ShapeError("reduce: axis " + std::to_string(a) + " out of range for " +
                         shape_str(shape));
      }
      reduced[static_cast<std::size_t>(a)] = true;
    }
    Shape out_shape;
    for (std::size_t i = 0; i < shape.size(); ++i) {
      if (!reduced[i]) out_shape.push_back(shape[i]);
    }
    out_numel = shape_numel(out_shape);
    out_strides.assign(shape.size(), 0);
    std::int64_t stride = 1;
    for (std::size_t i = shape.size(); i-- > 0;) {
      if (!reduced[i]) {
        out_strides[i] = stride;
        stride *= shape[i];
      }
    }
  }

  Shape out_shape() const {
    Shape s;
    for (std::size_t i = 0; i < in_shape.size(); ++i) {
      if (!reduced[i]) s.push_back(in_shape[i]);
    }
    return s;
  }

  template <typename Fn>
  void for_each(Fn&& fn) const {
    const std::size_t rank = in_shape.size();
    std::vector<std::int64_t> idx(rank, 0);
    const std::int64_t total = shape_numel(in_shape);
    std::int64_t oidx = 0;
    for (std::int64_t i = 0; i < total; ++i) {
      fn(i, oidx);
      for (std::size_t d = rank; d-- > 0;) {
        idx[d]++;
        oidx += out_strides[d];
        if (idx[d] < in_shape[d]) break;
        idx[d] = 0;
        oidx -= out_strides[d] * in_shape[d];
      }
    }
  }
};
}  // namespace detail

template <typename T>
Tensor<T> reduce_sum(const Tensor<T>& x, const std::vector<int>& axes) {
  detail::ReduceMap map(x.shape(), axes);
  Tensor<T> out(map.out_shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  map.for_each([&](std::int64_t i, std::int64_t o) { ov[static_cast<std::size_t>(o)] += xv[static_cast<std::size_t>(i)]; });
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), map]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    map.for_each([&](std::int64_t i, std::int64_t o) {
      xi->grad[static_cast<std::size_t>(i)] += oi->grad[static_cast<std::size_t>(o)];
    });
  });
  return out;
}

template <typename T>
Tensor<T> reduce_mean(const Tensor<T>& x, const std::vector<int>& axes) {
  detail::ReduceMap map(x.shape(), axes);
  const T inv = static_cast<T>(static_cast<double>(map.out_numel) / static_cast<double>(x.size()));
  Tensor<T> out(map.out_shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  map.for_each([&](std::int64_t i, std::int64_t o) { ov[static_cast<std::size_t>(o)] += xv[static_cast<std::size_t>(i)]; });
  for (auto& v : ov) v *= inv;
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), map, inv]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    map.for_each([&](std::int64_t i, std::int64_t o) {
      xi->grad[static_cast<std::size_t>(i)] += inv * oi->grad[static_cast<std::size_t>(o)];
    });
  });
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_sum(x, axes);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<std::size_t>(x.rank()));
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
  return reduce_mean(x, axes);
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), x.values());
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl()]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
  });
  return out;
}

namespace detail {
struct AxisBlocks {
  std::int64_t outer, axis, inner;
};
inline AxisBlocks axis_blocks(const Shape& s, int axis) {
  AxisBlocks b{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) b.outer *= s[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) b.inner *= s[i];
  return b;
}
}  // namespace detail

template <typename T>
Tensor<T> slice_axis(const Tensor<T>& x, int axis, std::int64_t start, std::int64_t len) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("slice_axis: bad axis");
  if (start < 0 || len <= 0 || start + len > x.dim(axis)) {
    throw ShapeError("slice_axis: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for " + shape_str(x.shape()));
  }
  auto b = detail::axis_blocks(x.shape(), axis);
  Shape oshape = x.shape();
  oshape[static_cast<std::size_t>(axis)] = len;
  Tensor<T> out(oshape);
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::int64_t o = 0; o < b.outer; ++o) {
    const T* src = xv.data() + (o * b.axis + start) * b.inner;
    T* dst = ov.data() + o * len * b.inner;
    std::copy(src, src + len * b.inner, dst);
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), b, start, len]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::int64_t o = 0; o < b.outer; ++o) {
      T* dst = xi->grad.data() + (o * b.axis + start) * b.inner;
      const T* src = oi->grad.data() + o * len * b.inner;
      for (std::int64_t i = 0; i < len * b.inner; ++i) dst[i] += src[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& items, int axis) {
  if (items.empty()) throw ShapeError("concat: no tensors given");
  const Shape& base = items[0].shape();
  std::int64_t total_axis = 0;
  for (const auto& t : items) {
    if (t.rank() != static_cast<int>(base.size())) {
      throw ShapeError("concat: rank mismatch " + shape_str(t.shape()) + " vs " + shape_str(base));
    }
    for (int d = 0; d < t.rank(); ++d) {
      if (d != axis && t.dim(d) != base[static_cast<std::size_t>(d)]) {
        throw ShapeError("concat: shape mismatch " + shape_str(t.shape()) + " vs " +
                         shape_str(base) + " outside axis " + std::to_string(axis));
      }
    }
    total_axis += t.dim(axis);
  }
  Shape oshape = base;
  oshape[static_cast<std::size_t>(axis)] = total_axis;
  Tensor<T> out(oshape);
  auto& ov = out.mutable_values();
  auto ob = detail::axis_blocks(oshape, axis);
  std::int64_t offset = 0;
  bool any = false;
  for (const auto& t : items) {
    any = any || t.grad_flows();
    auto tb = detail::axis_blocks(t.shape(), axis);
    const auto& tv = t.values();
    for (std::int64_t o = 0; o < tb.outer; ++o) {
      const T* src = tv.data() + o * tb.axis * tb.inner;
      T* dst = ov.data() + (o * ob.axis + offset) * ob.inner;
      std::copy(src, src + tb.axis * tb.inner, dst);
    }
    offset += tb.axis;
  }
  std::vector<std::shared_ptr<detail::TensorImpl<T>>> impls;
  impls.reserve(items.size());
  for (const auto& t : items) impls.push_back(t.impl());
  record_op(any, out, [impls, oi = out.impl(), ob, axis]() {
    std::int64_t offset = 0;
    for (const auto& xi : impls) {
      auto tb = detail::axis_blocks(xi->shape, axis);
      if (xi->requires_grad || xi->grad_flow) {
        xi->ensure_grad();
        for (std::int64_t o = 0; o < tb.outer; ++o) {
          T* dst = xi->grad.data() + o * tb.axis * tb.inner;
          const T* src = oi->grad.data() + (o * ob.axis + offset) * ob.inner;
          for (std::int64_t i = 0; i < tb.axis * tb.inner; ++i) dst[i] += src[i];
        }
      }
      offset += tb.axis;
    }
  });
  return out;
}

template <typename T>
Tensor<T> flip_axis(const Tensor<T>& x, int axis) {
  if (axis < 0 || axis >= x.rank()) throw ShapeError("flip_axis: bad axis");
  auto b = detail::axis_blocks(x.shape(), axis);
  Tensor<T> out(x.shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::int64_t o = 0; o < b.outer; ++o) {
    for (std::int64_t a = 0; a < b.axis; ++a) {
      const T* src = xv.data() + (o * b.axis + a) * b.inner;
      T* dst = ov.data() + (o * b.axis + (b.axis - 1 - a)) * b.inner;
      std::copy(src, src + b.inner, dst);
    }
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), b]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::int64_t o = 0; o < b.outer; ++o) {
      for (std::int64_t a = 0; a < b.axis; ++a) {
        const T* src = oi->grad.data() + (o * b.axis + (b.axis - 1 - a)) * b.inner;
        T* dst = xi->grad.data() + (o * b.axis + a) * b.inner;
        for (std::int64_t i = 0; i < b.inner; ++i) dst[i] += src[i];
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  if (x.rank() < 1) throw ShapeError("softmax: needs rank >= 1");
  const std::int64_t cols = x.dim(x.rank() - 1);
  const std::int64_t rows = x.size() / cols;
  Tensor<T> out(x.shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = xv.data() + r * cols;
    T* dst = ov.data() + r * cols;
    T m = src[0];
    for (std::int64_t j = 1; j < cols; ++j) m = std::max(m, src[j]);
    T s = T(0);
    for (std::int64_t j = 0; j < cols; ++j) {
      dst[j] = std::exp(src[j] - m);
      s += dst[j];
    }
    const T inv = T(1) / s;
    for (std::int64_t j = 0; j < cols; ++j) dst[j] *= inv;
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), rows, cols]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = oi->values.data() + r * cols;
      const T* go = oi->grad.data() + r * cols;
      T* gx = xi->grad.data() + r * cols;
      T dot = T(0);
      for (std::int64_t j = 0; j < cols; ++j) dot += go[j] * y[j];
      for (std::int64_t j = 0; j < cols; ++j) gx[j] += y[j] * (go[j] - dot);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Convolutions (channels-last, TF-style SAME padding)
// ---------------------------------------------------------------------------

namespace detail {
struct ConvGeom {
  std::int64_t n, h, w, cin, kh, kw, f;
  std::int64_t sh, sw, dh, dw;
  std::int64_t oh, ow;
  std::int64_t pad_top, pad_left;

  static std::int64_t same_out(std::int64_t in, std::int64_t stride) {
    return (in + stride - 1) / stride;
  }
  static std::int64_t same_pad_begin(std::int64_t in, std::int64_t out, std::int64_t stride,
                                     std::int64_t k, std::int64_t dil) {
    const std::int64_t eff_k = (k - 1) * dil + 1;
    const std::int64_t total = std::max<std::int64_t>((out - 1) * stride + eff_k - in, 0);
    return total / 2;
  }
};

// Gathers input patches into cols[(n*oh*ow) x (kh*kw*cin)].
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const std::int64_t patch = g.kh * g.kw * g.cin;
  for (std::int64_t n = 0; n < g.n; ++n) {
    const T* xn = x + n * g.h * g.w * g.cin;
    for (std::int64_t oy = 0; oy < g.oh; ++oy) {
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        T* dst = cols + ((n * g.oh + oy) * g.ow + ox) * patch;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.sh - g.pad_top + ky * g.dh;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.sw - g.pad_left + kx * g.dw;
            T* cell = dst + (ky * g.kw + kx) * g.cin;
            if (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) {
              const T* src = xn + (iy * g.w + ix) * g.cin;
              std::copy(src, src + g.cin, cell);
            } else {
              std::fill(cell, cell + g.cin, T(0));
            }
          }
        }
      }
    }
  }
}

// Scatter-add of dcols back into dx; the exact transpose of im2col.
template <typename T>
void col2im_add(const T* dcols, const ConvGeom& g, T* dx) {
  const std::int64_t patch = g.kh * g.kw * g.cin;
  for (std::int64_t n = 0; n < g.n; ++n) {
    T* xn = dx + n * g.h * g.w * g.cin;
    for (std::int64_t oy = 0; oy < g.oh; ++oy) {
      for (std::int64_t ox = 0; ox < g.ow; ++ox) {
        const T* src = dcols + ((n * g.oh + oy) * g.ow + ox) * patch;
        for (std::int64_t ky = 0; ky < g.kh; ++ky) {
          const std::int64_t iy = oy * g.sh - g.pad_top + ky * g.dh;
          if (iy < 0 || iy >= g.h) continue;
          for (std::int64_t kx = 0; kx < g.kw; ++kx) {
            const std::int64_t ix = ox * g.sw - g.pad_left + kx * g.dw;
            if (ix < 0 || ix >= g.w) continue;
            const T* cell = src + (ky * g.kw + kx) * g.cin;
            T* dst = xn + (iy * g.w + ix) * g.cin;
            for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += cell[c];
          }
        }
      }
    }
  }
}
}  // namespace detail

// x: (N,H,W,Cin), w: (KH,KW,Cin,F), b: (F). SAME padding, out (N,OH,OW,F)
// with OH = ceil(H/stride_h).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride_h,
                 int stride_w, int dil_h, int dil_w) {
  if (x.rank() != 4 || w.rank() != 4) {
    throw ShapeError("conv2d: expected x(N,H,W,C) and w(KH,KW,C,F), got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  if (dil_h < 1 || dil_w < 1) throw ShapeError("conv2d: dilation must be >= 1");
  if (stride_h < 1 || stride_w < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (x.dim(3) != w.dim(2)) {
    throw ShapeError("conv2d: input channels " + shape_str(x.shape()) +
                     " do not match kernel channels " + shape_str(w.shape()));
  }
  if (b.rank() != 1 || b.dim(0) != w.dim(3)) {
    throw ShapeError("conv2d: bias " + shape_str(b.shape()) + " does not match filters " +
                     shape_str(w.shape()));
  }
  detail::ConvGeom g;
  g.n = x.dim(0); g.h = x.dim(1); g.w = x.dim(2); g.cin = x.dim(3);
  g.kh = w.dim(0); g.kw = w.dim(1); g.f = w.dim(3);
  g.sh = stride_h; g.sw = stride_w; g.dh = dil_h; g.dw = dil_w;
  g.oh = detail::ConvGeom::same_out(g.h, g.sh);
  g.ow = detail::ConvGeom::same_out(g.w, g.sw);
  g.pad_top = detail::ConvGeom::same_pad_begin(g.h, g.oh, g.sh, g.kh, g.dh);
  g.pad_left = detail::ConvGeom::same_pad_begin(g.w, g.ow, g.sw, g.kw, g.dw);

  const std::int64_t rows = g.n * g.oh * g.ow;
  const std::int64_t patch = g.kh * g.kw * g.cin;
  std::vector<T> cols(static_cast<std::size_t>(rows * patch));
  detail::im2col(x.values().data(), g, cols.data());

  Tensor<T> out(Shape{g.n, g.oh, g.ow, g.f});
  auto& ov = out.mutable_values();
  const auto& bv = b.values();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(bv.begin(), bv.end(), ov.begin() + r * g.f);
  }
  detail::mm_nn(cols.data(), w.values().data(), ov.data(), rows, patch, g.f);

  // Backward recomputes im2col rather than capturing `cols`; this trades a
  // second gather pass for a much smaller live set during training.
  record_op(x.grad_flows() || w.grad_flows() || b.grad_flows(), out,
            [xi = x.impl(), wi = w.impl(), bi = b.impl(), oi = out.impl(), g, rows, patch]() {
              const T* go = oi->grad.data();
              if (bi->requires_grad || bi->grad_flow) {
                bi->ensure_grad();
                for (std::int64_t r = 0; r < rows; ++r) {
                  const T* row = go + r * g.f;
                  for (std::int64_t f = 0; f < g.f; ++f) bi->grad[static_cast<std::size_t>(f)] += row[f];
                }
              }
              const bool need_w = wi->requires_grad || wi->grad_flow;
              const bool need_x = xi->requires_grad || xi->grad_flow;
              if (!need_w && !need_x) return;
              std::vector<T> cols;
              if (need_w) {
                cols.resize(static_cast<std::size_t>(rows * patch));
                detail::im2col(xi->values.data(), g, cols.data());
                wi->ensure_grad();
                detail::mm_tn(cols.data(), go, wi->grad.data(), rows, patch, g.f);
              }
              if (need_x) {
                std::vector<T> dcols(static_cast<std::size_t>(rows * patch), T(0));
                detail::mm_nt(go, wi->values.data(), dcols.data(), rows, g.f, patch);
                xi->ensure_grad();
                detail::col2im_add(dcols.data(), g, xi->grad.data());
              }
            });
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int dilation = 1) {
  return conv2d(x, w, b, stride, stride, dilation, dilation);
}

// x: (N,T,C), w: (K,C,F), b: (F). SAME padding over time.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride = 1,
                 int dilation = 1) {
  if (x.rank() != 3 || w.rank() != 3) {
    throw ShapeError("conv1d: expected x(N,T,C) and w(K,C,F), got " + shape_str(x.shape()) +
                     " and " + shape_str(w.shape()));
  }
  auto x4 = reshape(x, Shape{x.dim(0), 1, x.dim(1), x.dim(2)});
  auto w4 = reshape(w, Shape{1, w.dim(0), w.dim(1), w.dim(2)});
  auto y4 = conv2d(x4, w4, b, 1, stride, 1, dilation);
  return reshape(y4, Shape{y4.dim(0), y4.dim(2), y4.dim(3)});
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Non-overlapping 2x2 max pool with floor semantics: trailing rows/columns
// that do not fill a window are dropped.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("maxpool2d: expected (N,H,W,C), got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::int64_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw ShapeError("maxpool2d: input too small " + shape_str(x.shape()));
  Tensor<T> out(Shape{n, oh, ow, c});
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.size()));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
          T best = -std::numeric_limits<T>::infinity();
          std::int64_t best_idx = -1;
          for (std::int64_t dy = 0; dy < 2; ++dy) {
            for (std::int64_t dx = 0; dx < 2; ++dx) {
              const std::int64_t idx = ((b * h + oy * 2 + dy) * w + ox * 2 + dx) * c + ch;
              if (xv[static_cast<std::size_t>(idx)] > best) {
                best = xv[static_cast<std::size_t>(idx)];
                best_idx = idx;
              }
            }
          }
          const std::int64_t oidx = ((b * oh + oy) * ow + ox) * c + ch;
          ov[static_cast<std::size_t>(oidx)] = best;
          (*argmax)[static_cast<std::size_t>(oidx)] = best_idx;
        }
      }
    }
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), argmax]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < argmax->size(); ++i) {
      xi->grad[static_cast<std::size_t>((*argmax)[i])] += oi->grad[i];
    }
  });
  return out;
}

// Non-overlapping width-2 max pool over (N,T,C), floor semantics.
template <typename T>
Tensor<T> maxpool1d(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("maxpool1d: expected (N,T,C), got " + shape_str(x.shape()));
  const std::int64_t n = x.dim(0), t = x.dim(1), c = x.dim(2);
  const std::int64_t ot = t / 2;
  if (ot == 0) throw ShapeError("maxpool1d: input too small " + shape_str(x.shape()));
  Tensor<T> out(Shape{n, ot, c});
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<std::size_t>(out.size()));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t o = 0; o < ot; ++o) {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t i0 = (b * t + o * 2) * c + ch;
        const std::int64_t i1 = i0 + c;
        const bool first = xv[static_cast<std::size_t>(i0)] >= xv[static_cast<std::size_t>(i1)];
        const std::int64_t oidx = (b * ot + o) * c + ch;
        ov[static_cast<std::size_t>(oidx)] = first ? xv[static_cast<std::size_t>(i0)] : xv[static_cast<std::size_t>(i1)];
        (*argmax)[static_cast<std::size_t>(oidx)] = first ? i0 : i1;
      }
    }
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), argmax]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < argmax->size(); ++i) {
      xi->grad[static_cast<std::size_t>((*argmax)[i])] += oi->grad[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> global_avg_pool2d(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool2d: expected (N,H,W,C)");
  return reduce_mean(x, {1, 2});
}

template <typename T>
Tensor<T> global_avg_pool1d(const Tensor<T>& x) {
  if (x.rank() != 3) throw ShapeError("global_avg_pool1d: expected (N,T,C)");
  return reduce_mean(x, {1});
}

// ---------------------------------------------------------------------------
// Channel gating: y[n,...,c] = x[n,...,c] * gates[n,c]
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> scale_channels(const Tensor<T>& x, const Tensor<T>& gates) {
  if (x.rank() < 2 || gates.rank() != 2 || gates.dim(0) != x.dim(0) ||
      gates.dim(1) != x.dim(x.rank() - 1)) {
    throw ShapeError("scale_channels: x " + shape_str(x.shape()) + " vs gates " +
                     shape_str(gates.shape()));
  }
  const std::int64_t n = x.dim(0);
  const std::int64_t c = x.dim(x.rank() - 1);
  const std::int64_t mid = x.size() / (n * c);
  Tensor<T> out(x.shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  const auto& gv = gates.values();
  for (std::int64_t b = 0; b < n; ++b) {
    const T* gb = gv.data() + b * c;
    for (std::int64_t m = 0; m < mid; ++m) {
      const std::int64_t base = (b * mid + m) * c;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        ov[static_cast<std::size_t>(base + ch)] = xv[static_cast<std::size_t>(base + ch)] * gb[ch];
      }
    }
  }
  record_op(x.grad_flows() || gates.grad_flows(), out,
            [xi = x.impl(), gi = gates.impl(), oi = out.impl(), n, c, mid]() {
              const bool dx = xi->requires_grad || xi->grad_flow;
              const bool dg = gi->requires_grad || gi->grad_flow;
              if (dx) xi->ensure_grad();
              if (dg) gi->ensure_grad();
              for (std::int64_t b = 0; b < n; ++b) {
                for (std::int64_t m = 0; m < mid; ++m) {
                  const std::int64_t base = (b * mid + m) * c;
                  for (std::int64_t ch = 0; ch < c; ++ch) {
                    const auto i = static_cast<std::size_t>(base + ch);
                    const auto gidx = static_cast<std::size_t>(b * c + ch);
                    if (dx) xi->grad[i] += oi->grad[i] * gi->values[gidx];
                    if (dg) gi->grad[gidx] += oi->grad[i] * xi->values[i];
                  }
                }
              }
            });
  return out;
}

// ---------------------------------------------------------------------------
// Dropout (inverted scaling; identity in inference mode)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) throw Error("dropout: rate must be in [0,1)");
  if (!training || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(static_cast<std::size_t>(x.size()));
  for (auto& m : *mask) m = rng.uniform() < rate ? T(0) : scale;
  Tensor<T> out(x.shape());
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] * (*mask)[i];
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), mask]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::size_t i = 0; i < mask->size(); ++i) xi->grad[i] += oi->grad[i] * (*mask)[i];
  });
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear resize (half-pixel centers) over (N,H,W,C)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::int64_t oh, std::int64_t ow) {
  if (x.rank() != 4) throw ShapeError("resize_bilinear: expected (N,H,W,C)");
  if (oh <= 0 || ow <= 0) throw ShapeError("resize_bilinear: bad target size");
  const std::int64_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  struct Lin {
    std::int64_t i0, i1;
    T w0, w1;
  };
  auto make_axis = [](std::int64_t in, std::int64_t out) {
    std::vector<Lin> m(static_cast<std::size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::int64_t o = 0; o < out; ++o) {
      double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
      src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      const std::int64_t i1 = std::min(i0 + 1, in - 1);
      const T frac = static_cast<T>(src - static_cast<double>(i0));
      m[static_cast<std::size_t>(o)] = {i0, i1, T(1) - frac, frac};
    }
    return m;
  };
  auto ymap = std::make_shared<std::vector<Lin>>(make_axis(h, oh));
  auto xmap = std::make_shared<std::vector<Lin>>(make_axis(w, ow));
  Tensor<T> out(Shape{n, oh, ow, c});
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t oy = 0; oy < oh; ++oy) {
      const Lin& ly = (*ymap)[static_cast<std::size_t>(oy)];
      for (std::int64_t ox = 0; ox < ow; ++ox) {
        const Lin& lx = (*xmap)[static_cast<std::size_t>(ox)];
        const T* p00 = xv.data() + ((b * h + ly.i0) * w + lx.i0) * c;
        const T* p01 = xv.data() + ((b * h + ly.i0) * w + lx.i1) * c;
        const T* p10 = xv.data() + ((b * h + ly.i1) * w + lx.i0) * c;
        const T* p11 = xv.data() + ((b * h + ly.i1) * w + lx.i1) * c;
        T* dst = ov.data() + ((b * oh + oy) * ow + ox) * c;
        for (std::int64_t ch = 0; ch < c; ++ch) {
          dst[ch] = ly.w0 * (lx.w0 * p00[ch] + lx.w1 * p01[ch]) +
                    ly.w1 * (lx.w0 * p10[ch] + lx.w1 * p11[ch]);
        }
      }
    }
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), ymap, xmap, n, h, w, c, oh, ow]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t oy = 0; oy < oh; ++oy) {
        const Lin& ly = (*ymap)[static_cast<std::size_t>(oy)];
        for (std::int64_t ox = 0; ox < ow; ++ox) {
          const Lin& lx = (*xmap)[static_cast<std::size_t>(ox)];
          const T* src = oi->grad.data() + ((b * oh + oy) * ow + ox) * c;
          T* g00 = xi->grad.data() + ((b * h + ly.i0) * w + lx.i0) * c;
          T* g01 = xi->grad.data() + ((b * h + ly.i0) * w + lx.i1) * c;
          T* g10 = xi->grad.data() + ((b * h + ly.i1) * w + lx.i0) * c;
          T* g11 = xi->grad.data() + ((b * h + ly.i1) * w + lx.i1) * c;
          for (std::int64_t ch = 0; ch < c; ++ch) {
            g00[ch] += ly.w0 * lx.w0 * src[ch];
            g01[ch] += ly.w0 * lx.w1 * src[ch];
            g10[ch] += ly.w1 * lx.w0 * src[ch];
            g11[ch] += ly.w1 * lx.w1 * src[ch];
          }
        }
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// B-spline basis expansion for KAN layers
// ---------------------------------------------------------------------------

namespace detail {
// Evaluates all (intervals+order) B-spline basis functions and derivatives at
// xv on a uniform knot grid over [lo,hi]. Outside the grid the boundary
// segment's polynomial is extrapolated for up to one interval width, then the
// evaluation point saturates.
template <typename T>
void bspline_eval(T xv, int intervals, int order, T lo, T hi, T* basis, T* deriv) {
  const int g = intervals, p = order;
  const T h = (hi - lo) / static_cast<T>(g);
  T xe = std::min(std::max(xv, lo - h), hi + h);
  int idx = static_cast<int>(std::floor((xe - lo) / h));
  idx = std::min(std::max(idx, 0), g - 1);
  const int nknots = g + 1 + 2 * p;
  auto knot = [&](int j) { return lo + (static_cast<T>(j - p)) * h; };
  // Degree-0 indicator on the clamped interval; recursion uses the true
  // (saturated) evaluation point, which extrapolates at the boundary.
  std::vector<T> N(static_cast<std::size_t>(nknots - 1), T(0));
  N[static_cast<std::size_t>(p + idx)] = T(1);
  std::vector<T> Nm1;  // degree p-1 copy for the derivative
  for (int d = 1; d <= p; ++d) {
    if (d == p) Nm1.assign(N.begin(), N.end());
    for (int j = 0; j < nknots - 1 - d; ++j) {
      const T left = (xe - knot(j)) / (knot(j + d) - knot(j));
      const T right = (knot(j + d + 1) - xe) / (knot(j + d + 1) - knot(j + 1));
      N[static_cast<std::size_t>(j)] =
          left * N[static_cast<std::size_t>(j)] + right * N[static_cast<std::size_t>(j + 1)];
    }
  }
  // Uniform knots: t_{j+p}-t_j == p*h, so dB_j = (N'_j - N'_{j+1}) / h.
  const int nb = g + p;
  const T inv_h = T(1) / h;
  for (int j = 0; j < nb; ++j) {
    basis[j] = N[static_cast<std::size_t>(j)];
    deriv[j] = inv_h * (Nm1[static_cast<std::size_t>(j)] - Nm1[static_cast<std::size_t>(j + 1)]);
  }
}
}  // namespace detail

// x: (N,F) -> (N,F,B) with B = intervals + order basis values per input.
template <typename T>
Tensor<T> spline_basis(const Tensor<T>& x, int intervals, int order, T lo, T hi) {
  if (x.rank() != 2) throw ShapeError("spline_basis: expected (N,F), got " + shape_str(x.shape()));
  if (intervals < 1 || order < 1) throw Error("spline_basis: intervals and order must be >= 1");
  const std::int64_t n = x.dim(0), f = x.dim(1);
  const std::int64_t nb = intervals + order;
  Tensor<T> out(Shape{n, f, nb});
  auto deriv = std::make_shared<std::vector<T>>(static_cast<std::size_t>(n * f * nb));
  auto& ov = out.mutable_values();
  const auto& xv = x.values();
  for (std::int64_t i = 0; i < n * f; ++i) {
    detail::bspline_eval(xv[static_cast<std::size_t>(i)], intervals, order, lo, hi,
                         ov.data() + i * nb, deriv->data() + i * nb);
  }
  record_op(x.grad_flows(), out, [xi = x.impl(), oi = out.impl(), deriv, nb]() {
    if (!(xi->requires_grad || xi->grad_flow)) return;
    xi->ensure_grad();
    const std::int64_t cells = static_cast<std::int64_t>(xi->values.size());
    for (std::int64_t i = 0; i < cells; ++i) {
      T acc = T(0);
      const T* go = oi->grad.data() + i * nb;
      const T* dv = deriv->data() + i * nb;
      for (std::int64_t k = 0; k < nb; ++k) acc += go[k] * dv[k];
      xi->grad[static_cast<std::size_t>(i)] += acc;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

template <typename T>
void assert_finite(const Tensor<T>& t, const char* context) {
  for (const T v : t.values()) {
    if (!std::isfinite(static_cast<double>(v))) {
      throw NumericError(std::string(context) + ": non-finite value encountered");
    }
  }
}

}  // namespace sleepnet
