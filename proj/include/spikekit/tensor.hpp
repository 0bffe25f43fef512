#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "spikekit/errors.hpp"

namespace spikekit {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

class Tape;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<float> data;  // flat, row-major
  bool requires_grad = false;
  std::vector<float> grad;  // empty until first touched; data.size() once allocated
  Tape* tape = nullptr;     // producing tape, if recorded
  int64_t node = -1;        // index of the producing node on `tape`
};

inline std::vector<float>& grad_buf(TensorImpl& t) {
  if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0f);
  return t.grad;
}

}  // namespace detail

/// Dense float32 tensor participating in reverse-mode autodiff.
///
/// A Tensor is a cheap handle onto shared storage. Values are written once at
/// construction; parameter updates (optimizer) mutate leaves between tapes.
/// Gradients of leaves accumulate across backward() calls until zero_grad().
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), 0.0f, requires_grad);
  }

  static Tensor filled(Shape shape, float value, bool requires_grad = false) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<size_t>(shape_numel(t.impl_->shape)), value);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  static Tensor scalar(float v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size())) {
      throw ShapeError("data length " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    t.impl_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return !impl_->shape.empty() || !impl_->data.empty(); }
  const Shape& shape() const { return impl_->shape; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  int64_t dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }

  const std::vector<float>& values() const { return impl_->data; }
  // Direct write access for leaves (parameter init / optimizer updates only).
  std::vector<float>& mutable_values() { return impl_->data; }

  float item() const {
    if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
    return impl_->data[0];
  }

  float at(std::initializer_list<int64_t> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw ShapeError("index rank mismatch for " + shape_str(s));
    int64_t lin = 0;
    size_t d = 0;
    for (int64_t i : idx) {
      lin = lin * s[d] + i;
      ++d;
    }
    return impl_->data[static_cast<size_t>(lin)];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    impl_->requires_grad = b;
    return *this;
  }
  bool on_tape() const { return impl_->node >= 0; }
  // True when this tensor participates in gradient computation.
  bool tracked() const { return impl_->requires_grad || impl_->node >= 0; }

  const std::vector<float>& grad() const { return detail::grad_buf(*impl_); }
  std::vector<float>& mutable_grad() { return detail::grad_buf(*impl_); }
  void zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f); }

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Reverse-mode tape. Nodes are replayed in strict reverse insertion order.
/// One tape per training step; forward passes rebuild the graph (define-by-run).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_tape_; }

  int64_t record(const Tensor& out, std::function<void()> backward_fn) {
    nodes_.push_back(Node{out.impl(), std::move(backward_fn)});
    out.impl()->tape = this;
    out.impl()->node = static_cast<int64_t>(nodes_.size()) - 1;
    return out.impl()->node;
  }

  size_t size() const { return nodes_.size(); }

  void backward_from(const std::shared_ptr<detail::TensorImpl>& loss) {
    if (shape_numel(loss->shape) != 1) {
      throw ContractError("backward requires a scalar loss, got " + shape_str(loss->shape));
    }
    if (loss->tape != this || loss->node < 0) {
      throw ContractError("loss tensor is not on this tape");
    }
    // Fresh adjoints for every intermediate feeding the loss; leaf gradients
    // accumulate across calls.
    for (int64_t i = 0; i <= loss->node; ++i) {
      auto& out = nodes_[static_cast<size_t>(i)].out;
      out->grad.assign(out->data.size(), 0.0f);
    }
    loss->grad[0] = 1.0f;
    for (int64_t i = loss->node; i >= 0; --i) nodes_[static_cast<size_t>(i)].backward();
  }

 private:
  friend struct TapeScope;
  struct Node {
    std::shared_ptr<detail::TensorImpl> out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  inline static thread_local Tape* active_tape_ = nullptr;
};

/// RAII activation of a tape for the current thread.
struct TapeScope {
  explicit TapeScope(Tape& t) : prev_(Tape::active_tape_) { Tape::active_tape_ = &t; }
  ~TapeScope() { Tape::active_tape_ = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

inline void backward(const Tensor& loss) {
  if (!loss.impl()->tape) throw ContractError("loss tensor is not on any tape");
  loss.impl()->tape->backward_from(loss.impl());
}

// ---------------------------------------------------------------------------
// Broadcasting helpers. Operands must have equal rank with dims equal or 1,
// or be single-element tensors (broadcast everywhere).
// ---------------------------------------------------------------------------

namespace detail {

inline bool should_record(std::initializer_list<const Tensor*> ins) {
  if (!Tape::active()) return false;
  for (const Tensor* t : ins) {
    if (t->tracked()) return true;
  }
  return false;
}

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (shape_numel(a) == 1 && shape_numel(b) != 1) return b;
  if (shape_numel(b) == 1) return a;
  if (a.size() != b.size()) {
    throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                     " are not broadcast-compatible");
  }
  Shape out(a.size());
  for (size_t d = 0; d < a.size(); ++d) {
    if (a[d] == b[d] || a[d] == 1 || b[d] == 1) {
      out[d] = std::max(a[d], b[d]);
    } else {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) +
                       " are not broadcast-compatible");
    }
  }
  return out;
}

// Row-major strides of `in` viewed against `out`; 0 on broadcast dims.
inline std::vector<int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<int64_t> st(out.size(), 0);
  if (shape_numel(in) == 1) return st;  // scalar: stride 0 everywhere
  int64_t acc = 1;
  for (int64_t d = static_cast<int64_t>(out.size()) - 1; d >= 0; --d) {
    const size_t ud = static_cast<size_t>(d);
    if (in[ud] == out[ud]) {
      st[ud] = acc;
      acc *= in[ud];
    } else {
      st[ud] = 0;  // dim is 1 in `in`
      acc *= in[ud];
    }
  }
  return st;
}

// Walks the index space of `out`, reporting linear offsets into two operands.
template <class Fn>
inline void for_each_broadcast(const Shape& out, const std::vector<int64_t>& sa,
                               const std::vector<int64_t>& sb, Fn fn) {
  const int64_t n = shape_numel(out);
  const size_t r = out.size();
  if (r == 0) {
    fn(int64_t{0}, int64_t{0}, int64_t{0});
    return;
  }
  std::vector<int64_t> idx(r, 0);
  int64_t oa = 0, ob = 0;
  for (int64_t lin = 0; lin < n; ++lin) {
    fn(lin, oa, ob);
    for (int64_t d = static_cast<int64_t>(r) - 1; d >= 0; --d) {
      const size_t ud = static_cast<size_t>(d);
      ++idx[ud];
      oa += sa[ud];
      ob += sb[ud];
      if (idx[ud] < out[ud]) break;
      oa -= sa[ud] * out[ud];
      ob -= sb[ud] * out[ud];
      idx[ud] = 0;
    }
  }
}

// Elementwise binary op with broadcasting. `f` computes the forward value,
// `da`/`db` the local gradients as functions of (g_out, a_val, b_val).
template <class F, class DA, class DB>
inline Tensor ew_binary(const Tensor& a, const Tensor& b, F f, DA da, DB db) {
  const Shape os = broadcast_shape(a.shape(), b.shape());
  Tensor out = Tensor::zeros(os);
  auto& od = out.impl()->data;
  const auto& ad = a.impl()->data;
  const auto& bd = b.impl()->data;

  const bool a_full = (a.shape() == os);
  const bool b_full = (b.shape() == os);
  const auto sa = broadcast_strides(a.shape(), os);
  const auto sb = broadcast_strides(b.shape(), os);

  if (a_full && b_full) {
    for (size_t i = 0; i < od.size(); ++i) od[i] = f(ad[i], bd[i]);
  } else {
    for_each_broadcast(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
      od[static_cast<size_t>(lin)] =
          f(ad[static_cast<size_t>(oa)], bd[static_cast<size_t>(ob)]);
    });
  }

  if (should_record({&a, &b})) {
    const bool need_a = a.tracked();
    const bool need_b = b.tracked();
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, bi, oi, os, sa, sb, a_full, b_full, need_a, need_b, da,
                                 db]() {
      const auto& g = oi->grad;
      const auto& av = ai->data;
      const auto& bv = bi->data;
      if (a_full && b_full) {
        if (need_a) {
          auto& ga = grad_buf(*ai);
          for (size_t i = 0; i < g.size(); ++i) ga[i] += da(g[i], av[i], bv[i]);
        }
        if (need_b) {
          auto& gb = grad_buf(*bi);
          for (size_t i = 0; i < g.size(); ++i) gb[i] += db(g[i], av[i], bv[i]);
        }
        return;
      }
      // Broadcast case: accumulate reductions in double.
      std::vector<double> ta(need_a ? av.size() : 0, 0.0);
      std::vector<double> tb(need_b ? bv.size() : 0, 0.0);
      for_each_broadcast(os, sa, sb, [&](int64_t lin, int64_t oa, int64_t ob) {
        const float gv = g[static_cast<size_t>(lin)];
        const float x = av[static_cast<size_t>(oa)];
        const float y = bv[static_cast<size_t>(ob)];
        if (need_a) ta[static_cast<size_t>(oa)] += da(gv, x, y);
        if (need_b) tb[static_cast<size_t>(ob)] += db(gv, x, y);
      });
      if (need_a) {
        auto& ga = grad_buf(*ai);
        for (size_t i = 0; i < ga.size(); ++i) ga[i] += static_cast<float>(ta[i]);
      }
      if (need_b) {
        auto& gb = grad_buf(*bi);
        for (size_t i = 0; i < gb.size(); ++i) gb[i] += static_cast<float>(tb[i]);
      }
    });
  }
  return out;
}

template <class F, class DX>
inline Tensor ew_unary(const Tensor& x, F f, DX dx) {
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.impl()->data;
  auto& od = out.impl()->data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = f(xd[i]);
  if (should_record({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [xi, oi, dx]() {
      auto& gx = grad_buf(*xi);
      const auto& g = oi->grad;
      const auto& xv = xi->data;
      const auto& ov = oi->data;
      for (size_t i = 0; i < g.size(); ++i) gx[i] += dx(g[i], xv[i], ov[i]);
    });
  }
  return out;
}

// outer*inner decomposition for reductions along one axis
inline void axis_extents(const Shape& s, int axis, int64_t* outer, int64_t* dim, int64_t* inner) {
  *outer = 1;
  *inner = 1;
  for (int d = 0; d < axis; ++d) *outer *= s[static_cast<size_t>(d)];
  *dim = s[static_cast<size_t>(axis)];
  for (size_t d = static_cast<size_t>(axis) + 1; d < s.size(); ++d) *inner *= s[d];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear ops
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(
      a, b, [](float x, float y) { return x + y; },
      [](float g, float, float) { return g; }, [](float g, float, float) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(
      a, b, [](float x, float y) { return x - y; },
      [](float g, float, float) { return g; }, [](float g, float, float) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(
      a, b, [](float x, float y) { return x * y; },
      [](float g, float, float y) { return g * y; },
      [](float g, float x, float) { return g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::ew_binary(
      a, b, [](float x, float y) { return x / y; },
      [](float g, float, float y) { return g / y; },
      [](float g, float x, float y) { return -g * x / (y * y); });
}

inline Tensor scalar_mul(const Tensor& a, float c) {
  return detail::ew_unary(
      a, [c](float x) { return c * x; }, [c](float g, float, float) { return c * g; });
}

inline Tensor square(const Tensor& a) {
  return detail::ew_unary(
      a, [](float x) { return x * x; }, [](float g, float x, float) { return 2.0f * x * g; });
}

inline Tensor exp(const Tensor& a) {
  return detail::ew_unary(
      a, [](float x) { return std::exp(x); }, [](float g, float, float o) { return g * o; });
}

inline Tensor log(const Tensor& a) {
  return detail::ew_unary(
      a, [](float x) { return std::log(x); }, [](float g, float x, float) { return g / x; });
}

/// Copy of `a` cut off from the tape; gradients do not flow into `a`.
inline Tensor detach(const Tensor& a) {
  return Tensor::from_data(a.shape(), a.values(), false);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  Tensor out = Tensor::from_data(std::move(shape), a.values());
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi]() {
      auto& ga = detail::grad_buf(*ai);
      const auto& g = oi->grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

/// Matrix product of 2-D tensors: [M,K]x[K,N], or [M,K]x[N,K]^T when transpose_b.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeError("matmul expects rank-2 tensors, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1);
  const int64_t bk = transpose_b ? b.dim(1) : b.dim(0);
  const int64_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != bk) {
    throw ShapeError("matmul inner dims disagree: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }

  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const RowMat>;
  using Map = Eigen::Map<RowMat>;

  Tensor out = Tensor::zeros({m, n});
  {
    CMap A(a.values().data(), m, k);
    Map C(out.impl()->data.data(), m, n);
    if (transpose_b) {
      CMap B(b.values().data(), n, k);
      C.noalias() = A * B.transpose();
    } else {
      CMap B(b.values().data(), k, n);
      C.noalias() = A * B;
    }
  }

  if (detail::should_record({&a, &b})) {
    const bool need_a = a.tracked();
    const bool need_b = b.tracked();
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, bi, oi, m, k, n, transpose_b, need_a, need_b]() {
      CMap G(oi->grad.data(), m, n);
      CMap A(ai->data.data(), m, k);
      if (need_a) {
        Map GA(detail::grad_buf(*ai).data(), m, k);
        if (transpose_b) {
          CMap B(bi->data.data(), n, k);
          GA.noalias() += G * B;
        } else {
          CMap B(bi->data.data(), k, n);
          GA.noalias() += G * B.transpose();
        }
      }
      if (need_b) {
        if (transpose_b) {
          Map GB(detail::grad_buf(*bi).data(), n, k);
          GB.noalias() += G.transpose() * A;
        } else {
          Map GB(detail::grad_buf(*bi).data(), k, n);
          GB.noalias() += A.transpose() * G;
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc));
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi]() {
      auto& ga = detail::grad_buf(*ai);
      const float g = oi->grad[0];
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DataError("mean of empty tensor");
  double acc = 0.0;
  for (float v : a.values()) acc += v;
  const int64_t n = a.numel();
  Tensor out = Tensor::scalar(static_cast<float>(acc / static_cast<double>(n)));
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi, n]() {
      auto& ga = detail::grad_buf(*ai);
      const float g = oi->grad[0] / static_cast<float>(n);
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor sum_axis(const Tensor& a, int axis, bool keepdim = false) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("sum_axis: bad axis");
  int64_t outer, dim, inner;
  detail::axis_extents(a.shape(), axis, &outer, &dim, &inner);
  Shape os = a.shape();
  if (keepdim) {
    os[static_cast<size_t>(axis)] = 1;
  } else {
    os.erase(os.begin() + axis);
  }
  Tensor out = Tensor::zeros(os);
  const auto& ad = a.values();
  auto& od = out.impl()->data;
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      double acc = 0.0;
      for (int64_t d = 0; d < dim; ++d) {
        acc += ad[static_cast<size_t>((o * dim + d) * inner + i)];
      }
      od[static_cast<size_t>(o * inner + i)] = static_cast<float>(acc);
    }
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi, outer, dim, inner]() {
      auto& ga = detail::grad_buf(*ai);
      const auto& g = oi->grad;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t d = 0; d < dim; ++d) {
          for (int64_t i = 0; i < inner; ++i) {
            ga[static_cast<size_t>((o * dim + d) * inner + i)] +=
                g[static_cast<size_t>(o * inner + i)];
          }
        }
      }
    });
  }
  return out;
}

/// Max over one axis. Gradient routes to the first maximal element.
inline Tensor max_axis(const Tensor& a, int axis, bool keepdim = false) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("max_axis: bad axis");
  int64_t outer, dim, inner;
  detail::axis_extents(a.shape(), axis, &outer, &dim, &inner);
  Shape os = a.shape();
  if (keepdim) {
    os[static_cast<size_t>(axis)] = 1;
  } else {
    os.erase(os.begin() + axis);
  }
  Tensor out = Tensor::zeros(os);
  std::vector<int64_t> arg(static_cast<size_t>(outer * inner), 0);
  const auto& ad = a.values();
  auto& od = out.impl()->data;
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      float best = ad[static_cast<size_t>(o * dim * inner + i)];
      int64_t bd = 0;
      for (int64_t d = 1; d < dim; ++d) {
        const float v = ad[static_cast<size_t>((o * dim + d) * inner + i)];
        if (v > best) {
          best = v;
          bd = d;
        }
      }
      od[static_cast<size_t>(o * inner + i)] = best;
      arg[static_cast<size_t>(o * inner + i)] = bd;
    }
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi, arg = std::move(arg), outer, dim, inner]() {
      auto& ga = detail::grad_buf(*ai);
      const auto& g = oi->grad;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          const int64_t d = arg[static_cast<size_t>(o * inner + i)];
          ga[static_cast<size_t>((o * dim + d) * inner + i)] +=
              g[static_cast<size_t>(o * inner + i)];
        }
      }
    });
  }
  return out;
}

/// Numerically stabilized softmax along `axis`.
inline Tensor softmax(const Tensor& a, int axis) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("softmax: bad axis");
  int64_t outer, dim, inner;
  detail::axis_extents(a.shape(), axis, &outer, &dim, &inner);
  Tensor out = Tensor::zeros(a.shape());
  const auto& ad = a.values();
  auto& od = out.impl()->data;
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t i = 0; i < inner; ++i) {
      float m = ad[static_cast<size_t>(o * dim * inner + i)];
      for (int64_t d = 1; d < dim; ++d) {
        m = std::max(m, ad[static_cast<size_t>((o * dim + d) * inner + i)]);
      }
      double s = 0.0;
      for (int64_t d = 0; d < dim; ++d) {
        const size_t k = static_cast<size_t>((o * dim + d) * inner + i);
        od[k] = std::exp(ad[k] - m);
        s += od[k];
      }
      const float inv = static_cast<float>(1.0 / s);
      for (int64_t d = 0; d < dim; ++d) {
        od[static_cast<size_t>((o * dim + d) * inner + i)] *= inv;
      }
    }
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi, outer, dim, inner]() {
      auto& ga = detail::grad_buf(*ai);
      const auto& g = oi->grad;
      const auto& y = oi->data;
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
          double dot = 0.0;
          for (int64_t d = 0; d < dim; ++d) {
            const size_t k = static_cast<size_t>((o * dim + d) * inner + i);
            dot += static_cast<double>(g[k]) * y[k];
          }
          for (int64_t d = 0; d < dim; ++d) {
            const size_t k = static_cast<size_t>((o * dim + d) * inner + i);
            ga[k] += y[k] * (g[k] - static_cast<float>(dot));
          }
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

/// Slice out index `index` along `axis`, removing that axis.
inline Tensor select(const Tensor& a, int axis, int64_t index) {
  if (axis < 0 || axis >= a.rank()) throw ShapeError("select: bad axis");
  int64_t outer, dim, inner;
  detail::axis_extents(a.shape(), axis, &outer, &dim, &inner);
  if (index < 0 || index >= dim) throw ShapeError("select: index out of range");
  Shape os = a.shape();
  os.erase(os.begin() + axis);
  Tensor out = Tensor::zeros(os);
  const auto& ad = a.values();
  auto& od = out.impl()->data;
  for (int64_t o = 0; o < outer; ++o) {
    const float* src = ad.data() + (o * dim + index) * inner;
    float* dst = od.data() + o * inner;
    std::copy(src, src + inner, dst);
  }
  if (detail::should_record({&a})) {
    auto ai = a.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [ai, oi, outer, dim, inner, index]() {
      auto& ga = detail::grad_buf(*ai);
      const auto& g = oi->grad;
      for (int64_t o = 0; o < outer; ++o) {
        const float* src = g.data() + o * inner;
        float* dst = ga.data() + (o * dim + index) * inner;
        for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

/// Stack equally-shaped tensors along a new axis at position `axis`.
inline Tensor stack(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("stack: empty input list");
  const Shape& base = parts[0].shape();
  for (const Tensor& t : parts) {
    if (t.shape() != base) {
      throw ShapeError("stack: mismatched shapes " + shape_str(base) + " vs " +
                       shape_str(t.shape()));
    }
  }
  if (axis < 0 || axis > static_cast<int>(base.size())) throw ShapeError("stack: bad axis");
  const int64_t n = static_cast<int64_t>(parts.size());
  Shape os = base;
  os.insert(os.begin() + axis, n);
  int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= base[static_cast<size_t>(d)];
  for (size_t d = static_cast<size_t>(axis); d < base.size(); ++d) inner *= base[d];

  Tensor out = Tensor::zeros(os);
  auto& od = out.impl()->data;
  for (int64_t p = 0; p < n; ++p) {
    const auto& src = parts[static_cast<size_t>(p)].values();
    for (int64_t o = 0; o < outer; ++o) {
      std::copy(src.data() + o * inner, src.data() + (o + 1) * inner,
                od.data() + (o * n + p) * inner);
    }
  }

  bool any_tracked = false;
  for (const Tensor& t : parts) any_tracked = any_tracked || t.tracked();
  if (Tape::active() && any_tracked) {
    std::vector<std::shared_ptr<detail::TensorImpl>> impls;
    std::vector<char> need;
    impls.reserve(parts.size());
    for (const Tensor& t : parts) {
      impls.push_back(t.impl());
      need.push_back(t.tracked() ? 1 : 0);
    }
    auto oi = out.impl();
    Tape::active()->record(out, [impls = std::move(impls), need = std::move(need), oi, n, outer,
                                 inner]() {
      const auto& g = oi->grad;
      for (int64_t p = 0; p < n; ++p) {
        if (!need[static_cast<size_t>(p)]) continue;
        auto& gp = detail::grad_buf(*impls[static_cast<size_t>(p)]);
        for (int64_t o = 0; o < outer; ++o) {
          const float* src = g.data() + (o * n + p) * inner;
          float* dst = gp.data() + o * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spike threshold: Heaviside forward, scaled sigmoid-derivative backward.
// ---------------------------------------------------------------------------

namespace detail {

// a * sig_a(x) * sig_a(-x), evaluated symmetrically with |a*x| clamped to 30.
inline float surrogate_factor(float x, float scale_a) {
  float z = scale_a * x;
  z = std::min(std::fabs(z), 30.0f);
  const float e = std::exp(-z);
  const float denom = (1.0f + e) * (1.0f + e);
  return scale_a * e / denom;
}

}  // namespace detail

/// Forward: Theta(x) with Theta(0)=0 (spike requires strict crossing).
/// Backward: incoming gradient times a*sig_a(x)*sig_a(-x).
inline Tensor spike_threshold(const Tensor& x, float scale_a) {
  if (!(scale_a > 0.0f)) throw DomainError("spike_threshold: scale_a must be positive");
  Tensor out = Tensor::zeros(x.shape());
  const auto& xd = x.values();
  auto& od = out.impl()->data;
  for (size_t i = 0; i < od.size(); ++i) od[i] = xd[i] > 0.0f ? 1.0f : 0.0f;
  if (detail::should_record({&x})) {
    auto xi = x.impl();
    auto oi = out.impl();
    Tape::active()->record(out, [xi, oi, scale_a]() {
      auto& gx = detail::grad_buf(*xi);
      const auto& g = oi->grad;
      const auto& xv = xi->data;
      for (size_t i = 0; i < g.size(); ++i) {
        gx[i] += g[i] * detail::surrogate_factor(xv[i], scale_a);
      }
    });
  }
  return out;
}

// Operator sugar for readability in layer code.
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, float c) { return scalar_mul(a, c); }
inline Tensor operator*(float c, const Tensor& a) { return scalar_mul(a, c); }

/// Fraction of elements equal to 1 (spike-train density).
inline double spike_rate(const Tensor& s) {
  if (s.numel() == 0) return 0.0;
  double ones = 0.0;
  for (float v : s.values()) ones += (v == 1.0f) ? 1.0 : 0.0;
  return ones / static_cast<double>(s.numel());
}

}  // namespace spikekit
