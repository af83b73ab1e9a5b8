#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "touchbench/common.hpp"

// Minimal dense tensor engine with reverse-mode differentiation.
// Shapes are dynamic; broadcasting is limited to a right-hand operand whose
// shape is a trailing suffix of the left-hand one (leading-batch dims only).

namespace tb::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

template <class T>
struct Node {
  Shape shape;
  std::vector<T> values;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // consumes this->grad, accumulates into parents' grad
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), T(0));
  }
};

template <class T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node<T>> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T value, bool requires_grad = false) {
    auto n = std::make_shared<Node<T>>();
    n->values.assign(numel(shape), value);
    n->shape = std::move(shape);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor from_values(Shape shape, std::vector<T> values,
                            bool requires_grad = false) {
    if (values.size() != numel(shape))
      throw ShapeError("tensor: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    auto n = std::make_shared<Node<T>>();
    n->shape = std::move(shape);
    n->values = std::move(values);
    n->requires_grad = requires_grad;
    return Tensor(n);
  }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(dist(rng)) * stddev;
    return from_values(std::move(shape), std::move(v), requires_grad);
  }

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  const std::vector<T>& values() const { return node_->values; }
  std::vector<T>& values_mut() { return node_->values; }
  const std::vector<T>& grad() const { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  std::shared_ptr<Node<T>> node() const { return node_; }

  T item() const {
    if (size() != 1) throw ShapeError("item: tensor is not scalar");
    return node_->values[0];
  }

  void zero_grad() { node_->grad.assign(node_->values.size(), T(0)); }

  bool defined() const { return node_ != nullptr; }

 private:
  std::shared_ptr<Node<T>> node_;
};

namespace detail {

template <class T>
std::shared_ptr<Node<T>> make_result(Shape shape,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->values.assign(numel(shape), T(0));
  n->shape = std::move(shape);
  for (auto& p : parents)
    if (p->requires_grad) n->requires_grad = true;
  n->parents = std::move(parents);
  return n;
}

#ifndef NDEBUG
template <class T>
void check_finite(const Node<T>& n, const char* op) {
  for (T v : n.values)
    if (!std::isfinite(static_cast<double>(v)))
      throw Error(std::string("non-finite value produced by ") + op);
}
#else
template <class T>
void check_finite(const Node<T>&, const char*) {}
#endif

// b must be equal-shaped or a trailing suffix of a's shape
template <class T>
std::size_t suffix_repeat(const Node<T>& a, const Node<T>& b, const char* op) {
  if (b.shape.size() > a.shape.size())
    throw ShapeError(std::string(op) + ": " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  const std::size_t off = a.shape.size() - b.shape.size();
  for (std::size_t i = 0; i < b.shape.size(); ++i)
    if (a.shape[off + i] != b.shape[i])
      throw ShapeError(std::string(op) + ": " + shape_str(a.shape) + " vs " +
                       shape_str(b.shape));
  return b.values.empty() ? 0 : a.values.size() / b.values.size();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops (right operand may broadcast over leading dims)

template <class T, class Fwd, class BwdA, class BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd,
                    BwdA bwd_a, BwdB bwd_b) {
  auto an = a.node();
  auto bn = b.node();
  detail::suffix_repeat(*an, *bn, name);
  auto out = detail::make_result<T>(an->shape, {an, bn});
  const std::size_t bs = bn->values.size();
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = fwd(an->values[i], bn->values[i % bs]);
  detail::check_finite(*out, name);
  if (out->requires_grad) {
    out->backward_fn = [an, bn, bs, bwd_a, bwd_b](Node<T>& o) {
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i)
          an->grad[i] += o.grad[i] * bwd_a(an->values[i], bn->values[i % bs]);
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::size_t i = 0; i < o.values.size(); ++i)
          bn->grad[i % bs] += o.grad[i] * bwd_b(an->values[i], bn->values[i % bs]);
      }
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(
      a, b, "div", [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
      [](T x, T y) { return -x / (y * y); });
}

// ---------------------------------------------------------------------------
// Elementwise unary ops

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& a, const char* name, Fwd fwd, Bwd bwd) {
  auto an = a.node();
  auto out = detail::make_result<T>(an->shape, {an});
  for (std::size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = fwd(an->values[i]);
  detail::check_finite(*out, name);
  if (out->requires_grad) {
    out->backward_fn = [an, bwd](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.values.size(); ++i)
        an->grad[i] += o.grad[i] * bwd(an->values[i], o.values[i]);
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T k) {
  return unary_op(
      a, "scale", [k](T x) { return x * k; }, [k](T, T) { return k; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T k) {
  return unary_op(
      a, "add_scalar", [k](T x) { return x + k; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> neg(const Tensor<T>& a) {
  return scale(a, T(-1));
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary_op(
      a, "sigmoid",
      [](T x) {
        return x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                         : std::exp(x) / (T(1) + std::exp(x));
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> gelu(const Tensor<T>& a) {
  // exact erf form
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return unary_op(
      a, "gelu",
      [=](T x) {
        return static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
      },
      [=](T x, T) {
        const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * double(x) * double(x));
        return static_cast<T>(cdf + x * pdf);
      });
}

template <class T>
Tensor<T> sqrt_t(const Tensor<T>& a) {
  return unary_op(
      a, "sqrt", [](T x) { return std::sqrt(x); },
      [](T, T y) { return T(1) / (T(2) * y); });
}

template <class T>
Tensor<T> abs_t(const Tensor<T>& a) {
  return unary_op(
      a, "abs", [](T x) { return std::abs(x); },
      [](T x, T) { return x >= T(0) ? T(1) : T(-1); });
}

// ---------------------------------------------------------------------------
// Shape ops

template <class T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  auto an = a.node();
  if (numel(shape) != an->values.size())
    throw ShapeError("reshape: " + shape_str(an->shape) + " -> " + shape_str(shape));
  auto out = detail::make_result<T>(shape, {an});
  out->values = an->values;
  if (out->requires_grad) {
    out->backward_fn = [an](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t i = 0; i < o.values.size(); ++i) an->grad[i] += o.grad[i];
    };
  }
  return Tensor<T>(out);
}

// swaps the last two axes; leading axes are batch
template <class T>
Tensor<T> transpose(const Tensor<T>& a) {
  auto an = a.node();
  if (an->shape.size() < 2) throw ShapeError("transpose: rank < 2");
  Shape shape = an->shape;
  const int rows = shape[shape.size() - 2];
  const int cols = shape[shape.size() - 1];
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  auto out = detail::make_result<T>(shape, {an});
  const std::size_t mat = static_cast<std::size_t>(rows) * cols;
  const std::size_t batches = an->values.size() / mat;
  for (std::size_t b = 0; b < batches; ++b)
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c)
        out->values[b * mat + c * rows + r] = an->values[b * mat + r * cols + c];
  if (out->requires_grad) {
    out->backward_fn = [an, rows, cols, mat, batches](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t b = 0; b < batches; ++b)
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            an->grad[b * mat + r * cols + c] += o.grad[b * mat + c * rows + r];
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> slice(const Tensor<T>& a, int axis, int start, int len) {
  auto an = a.node();
  const int rank = static_cast<int>(an->shape.size());
  if (axis < 0 || axis >= rank) throw ShapeError("slice: bad axis");
  if (start < 0 || len < 1 || start + len > an->shape[axis])
    throw ShapeError("slice: range out of bounds on axis " + std::to_string(axis));
  Shape shape = an->shape;
  shape[axis] = len;
  std::size_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= an->shape[i];
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= an->shape[i];
  const std::size_t src_axis = an->shape[axis];
  auto out = detail::make_result<T>(shape, {an});
  for (std::size_t o = 0; o < outer; ++o)
    for (int j = 0; j < len; ++j)
      std::copy_n(&an->values[(o * src_axis + start + j) * inner], inner,
                  &out->values[(o * len + j) * inner]);
  if (out->requires_grad) {
    out->backward_fn = [an, start, len, inner, outer, src_axis](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t b = 0; b < outer; ++b)
        for (int j = 0; j < len; ++j) {
          const T* g = &o.grad[(b * len + j) * inner];
          T* dst = &an->grad[(b * src_axis + start + j) * inner];
          for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
        }
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: bad axis");
  Shape shape = s0;
  int total = 0;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != rank) throw ShapeError("concat: rank mismatch");
    for (int i = 0; i < rank; ++i)
      if (i != axis && s[i] != s0[i])
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " +
                         shape_str(s));
    total += s[axis];
    nodes.push_back(p.node());
  }
  shape[axis] = total;
  std::size_t inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= s0[i];
  std::size_t outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  auto out = detail::make_result<T>(shape, nodes);
  std::size_t off = 0;
  for (const auto& n : nodes) {
    const std::size_t n_axis = n->shape[axis];
    for (std::size_t b = 0; b < outer; ++b)
      std::copy_n(&n->values[b * n_axis * inner], n_axis * inner,
                  &out->values[(b * total + off) * inner]);
    off += n_axis;
  }
  if (out->requires_grad) {
    out->backward_fn = [nodes, inner, outer, total, axis](Node<T>& o) {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        const std::size_t n_axis = n->shape[axis];
        if (n->requires_grad) {
          n->ensure_grad();
          for (std::size_t b = 0; b < outer; ++b) {
            const T* g = &o.grad[(b * total + off) * inner];
            T* dst = &n->grad[b * n_axis * inner];
            for (std::size_t i = 0; i < n_axis * inner; ++i) dst[i] += g[i];
          }
        }
        off += n_axis;
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// Matmul: 2-D x 2-D, or batched with a shared leading batch (3-D x 3-D),
// or 3-D x 2-D (shared right matrix).

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  auto an = a.node();
  auto bn = b.node();
  const Shape& sa = an->shape;
  const Shape& sb = bn->shape;
  if (sa.size() < 2 || sb.size() < 2 || sa.size() > 3 || sb.size() > 3 ||
      sb.size() > sa.size())
    throw ShapeError("matmul: unsupported ranks " + shape_str(sa) + " x " +
                     shape_str(sb));
  const int m = sa[sa.size() - 2], k = sa[sa.size() - 1];
  const int kb = sb[sb.size() - 2], n = sb[sb.size() - 1];
  if (k != kb)
    throw ShapeError("matmul: inner dims " + shape_str(sa) + " x " + shape_str(sb));
  const int batch = sa.size() == 3 ? sa[0] : 1;
  const bool b_batched = sb.size() == 3;
  if (b_batched && sb[0] != batch)
    throw ShapeError("matmul: batch mismatch " + shape_str(sa) + " x " + shape_str(sb));
  Shape shape = sa.size() == 3 ? Shape{batch, m, n} : Shape{m, n};

  auto out = detail::make_result<T>(shape, {an, bn});
  const std::size_t a_mat = static_cast<std::size_t>(m) * k;
  const std::size_t b_mat = static_cast<std::size_t>(k) * n;
  const std::size_t o_mat = static_cast<std::size_t>(m) * n;
  for (int bt = 0; bt < batch; ++bt) {
    const T* A = &an->values[bt * a_mat];
    const T* B = &bn->values[(b_batched ? bt : 0) * b_mat];
    T* O = &out->values[bt * o_mat];
    for (int i = 0; i < m; ++i)
      for (int kk = 0; kk < k; ++kk) {
        const T av = A[i * k + kk];
        const T* Br = &B[kk * n];
        T* Or = &O[i * n];
        for (int j = 0; j < n; ++j) Or[j] += av * Br[j];
      }
  }
  detail::check_finite(*out, "matmul");
  if (out->requires_grad) {
    out->backward_fn = [=](Node<T>& o) {
      if (an->requires_grad) {
        an->ensure_grad();
        // dA = dO * B^T
        for (int bt = 0; bt < batch; ++bt) {
          const T* G = &o.grad[bt * o_mat];
          const T* B = &bn->values[(b_batched ? bt : 0) * b_mat];
          T* dA = &an->grad[bt * a_mat];
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
              const T gv = G[i * n + j];
              const T* Bc = &B[j];
              T* dAr = &dA[i * k];
              for (int kk = 0; kk < k; ++kk) dAr[kk] += gv * Bc[kk * n];
            }
        }
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        // dB = A^T * dO (summed over batch when B is shared)
        for (int bt = 0; bt < batch; ++bt) {
          const T* G = &o.grad[bt * o_mat];
          const T* A = &an->values[bt * a_mat];
          T* dB = &bn->grad[(b_batched ? bt : 0) * b_mat];
          for (int kk = 0; kk < k; ++kk)
            for (int i = 0; i < m; ++i) {
              const T av = A[i * k + kk];
              const T* Gr = &G[i * n];
              T* dBr = &dB[kk * n];
              for (int j = 0; j < n; ++j) dBr[j] += av * Gr[j];
            }
        }
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// Reductions

namespace detail {
template <class T>
void axis_strides(const Shape& s, int axis, std::size_t& outer, std::size_t& n,
                  std::size_t& inner) {
  const int rank = static_cast<int>(s.size());
  if (axis < 0 || axis >= rank) throw ShapeError("reduction: bad axis");
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  n = s[axis];
  inner = 1;
  for (int i = axis + 1; i < rank; ++i) inner *= s[i];
}
}  // namespace detail

template <class T>
Tensor<T> sum(const Tensor<T>& a, int axis) {
  auto an = a.node();
  std::size_t outer, n, inner;
  detail::axis_strides<T>(an->shape, axis, outer, n, inner);
  Shape shape = an->shape;
  shape.erase(shape.begin() + axis);
  if (shape.empty()) shape = {1};
  auto out = detail::make_result<T>(shape, {an});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < inner; ++i)
        out->values[o * inner + i] += an->values[(o * n + j) * inner + i];
  if (out->requires_grad) {
    out->backward_fn = [an, outer, n, inner](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t b = 0; b < outer; ++b)
        for (std::size_t j = 0; j < n; ++j)
          for (std::size_t i = 0; i < inner; ++i)
            an->grad[(b * n + j) * inner + i] += o.grad[b * inner + i];
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> mean(const Tensor<T>& a, int axis) {
  const T inv = T(1) / T(a.shape()[axis]);
  return scale(sum(a, axis), inv);
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& a) {
  auto flat = reshape(a, {static_cast<int>(a.size())});
  return sum(flat, 0);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), T(1) / T(a.size()));
}

// ---------------------------------------------------------------------------
// Softmax / layernorm along the last axis

template <class T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  auto an = a.node();
  std::size_t outer, n, inner;
  detail::axis_strides<T>(an->shape, axis, outer, n, inner);
  auto out = detail::make_result<T>(an->shape, {an});
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < n; ++j)
        mx = std::max(mx, an->values[(o * n + j) * inner + i]);
      T z = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        const T e = std::exp(an->values[(o * n + j) * inner + i] - mx);
        out->values[(o * n + j) * inner + i] = e;
        z += e;
      }
      for (std::size_t j = 0; j < n; ++j) out->values[(o * n + j) * inner + i] /= z;
    }
  if (out->requires_grad) {
    out->backward_fn = [an, outer, n, inner](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t b = 0; b < outer; ++b)
        for (std::size_t i = 0; i < inner; ++i) {
          T dot = T(0);
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = (b * n + j) * inner + i;
            dot += o.grad[idx] * o.values[idx];
          }
          for (std::size_t j = 0; j < n; ++j) {
            const std::size_t idx = (b * n + j) * inner + i;
            an->grad[idx] += o.values[idx] * (o.grad[idx] - dot);
          }
        }
    };
  }
  return Tensor<T>(out);
}

template <class T>
Tensor<T> layernorm(const Tensor<T>& a, T eps = T(1e-5)) {
  auto an = a.node();
  if (an->shape.empty()) throw ShapeError("layernorm: rank 0");
  const std::size_t n = an->shape.back();
  const std::size_t rows = an->values.size() / n;
  auto out = detail::make_result<T>(an->shape, {an});
  // keep per-row mean and inv-std for the backward pass
  auto stats = std::make_shared<std::vector<T>>(rows * 2);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = &an->values[r * n];
    T mu = T(0);
    for (std::size_t i = 0; i < n; ++i) mu += x[i];
    mu /= T(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) var += (x[i] - mu) * (x[i] - mu);
    var /= T(n);
    const T rstd = T(1) / std::sqrt(var + eps);
    (*stats)[r * 2] = mu;
    (*stats)[r * 2 + 1] = rstd;
    for (std::size_t i = 0; i < n; ++i) out->values[r * n + i] = (x[i] - mu) * rstd;
  }
  if (out->requires_grad) {
    out->backward_fn = [an, stats, n, rows](Node<T>& o) {
      an->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T mu = (*stats)[r * 2];
        const T rstd = (*stats)[r * 2 + 1];
        const T* x = &an->values[r * n];
        const T* g = &o.grad[r * n];
        T g_sum = T(0), gx_sum = T(0);
        for (std::size_t i = 0; i < n; ++i) {
          g_sum += g[i];
          gx_sum += g[i] * (x[i] - mu) * rstd;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const T xhat = (x[i] - mu) * rstd;
          an->grad[r * n + i] +=
              rstd * (g[i] - g_sum / T(n) - xhat * gx_sum / T(n));
        }
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// Embedding lookup: table [V, D], indices -> [len(indices), D]

template <class T>
Tensor<T> embedding_lookup(const Tensor<T>& table, const std::vector<int>& indices) {
  auto tn = table.node();
  if (tn->shape.size() != 2) throw ShapeError("embedding_lookup: table must be 2-D");
  const int vocab = tn->shape[0];
  const int dim = tn->shape[1];
  auto out =
      detail::make_result<T>({static_cast<int>(indices.size()), dim}, {tn});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= vocab)
      throw ShapeError("embedding_lookup: index out of range");
    std::copy_n(&tn->values[indices[i] * dim], dim, &out->values[i * dim]);
  }
  if (out->requires_grad) {
    out->backward_fn = [tn, indices, dim](Node<T>& o) {
      tn->ensure_grad();
      for (std::size_t i = 0; i < indices.size(); ++i)
        for (int d = 0; d < dim; ++d)
          tn->grad[indices[i] * dim + d] += o.grad[i * dim + d];
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// Attention: softmax(Q K^T / sqrt(d) + mask) V.
// Q [.., n_q, d], K/V [.., n_k, d]; optional additive mask [n_q, n_k].

template <class T>
Tensor<T> scaled_dot_product_attention(const Tensor<T>& q, const Tensor<T>& k,
                                       const Tensor<T>& v,
                                       const Tensor<T>* mask = nullptr) {
  const int d = q.shape().back();
  auto scores = matmul(q, transpose(k));
  scores = scale(scores, static_cast<T>(1.0 / std::sqrt(double(d))));
  if (mask) scores = add(scores, *mask);
  return matmul(softmax(scores, static_cast<int>(scores.shape().size()) - 1), v);
}

// ---------------------------------------------------------------------------
// Reverse pass

template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) throw Error("backward: loss must be scalar");
  auto root = loss.node();
  // reverse topological order over the reachable graph
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  std::unordered_map<Node<T>*, std::shared_ptr<Node<T>>> keep;
  keep[root.get()] = root;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      auto child = node->parents[idx++];
      if (child->requires_grad && !seen.count(child.get())) {
        seen.insert(child.get());
        keep[child.get()] = child;
        stack.push_back({child.get(), 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  root->ensure_grad();
  root->grad[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checker. fn maps leaf tensors to a scalar.

template <class T>
double grad_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& fn,
                  const std::vector<Shape>& shapes, std::uint64_t seed,
                  double h = 1e-5) {
  Rng rng(seed);
  std::vector<Tensor<T>> inputs;
  for (const auto& s : shapes)
    inputs.push_back(Tensor<T>::randn(s, rng, T(1), /*requires_grad=*/true));

  auto loss = fn(inputs);
  for (auto& in : inputs) in.zero_grad();
  backward(loss);

  double max_rel = 0.0;
  for (auto& in : inputs) {
    auto& vals = in.values_mut();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const T orig = vals[i];
      vals[i] = orig + static_cast<T>(h);
      const double fp = static_cast<double>(fn(inputs).item());
      vals[i] = orig - static_cast<T>(h);
      const double fm = static_cast<double>(fn(inputs).item());
      vals[i] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double analytic = static_cast<double>(in.grad()[i]);
      const double denom =
          std::max({std::abs(numeric), std::abs(analytic), 1e-8});
      max_rel = std::max(max_rel, std::abs(numeric - analytic) / denom);
    }
  }
  return max_rel;
}

}  // namespace tb::ad
