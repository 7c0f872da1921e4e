#pragma once

// Reverse-mode automatic differentiation on an append-only tape.
// Operations evaluate eagerly (values are known at node-build time, so
// data-dependent control flow is ordinary C++) and record a backward
// closure.  backward() walks the tape strictly in reverse insertion
// order, which makes gradient accumulation deterministic.
//
// Memory contract: backward() releases the value and gradient buffers
// of interior nodes as soon as they have been consumed, so a tape is
// single-use after backward(); leaves, params, and the root keep their
// buffers so callers can read gradients afterwards.

#include <functional>
#include <memory>
#include <utility>

#include "vflow/array.hpp"
#include "vflow/fftcore.hpp"

namespace vflow {

// A persistent trainable tensor.  Lives outside any tape; tapes bind to
// it by pointer and accumulate into grad during backward().
struct Param {
  std::string name;
  Array value;
  Array grad;

  Param() = default;
  Param(std::string n, Array v) : name(std::move(n)), value(std::move(v)) {
    grad = Array::zeros(value.shape);
  }
  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
  std::size_t numel() const { return value.numel(); }
};

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
 public:
  struct Node {
    Array value;
    Array grad;                      // allocated on first accumulation
    std::function<void(Tape&)> backward;  // empty for leaves
    const char* kind = "";
    Param* param = nullptr;          // set for param leaves
    bool needs_grad = false;
    bool is_leaf = false;
  };

  Var leaf(Array v, bool needs_grad = true) {
    Node n;
    n.value = std::move(v);
    n.kind = "leaf";
    n.needs_grad = needs_grad;
    n.is_leaf = true;
    return push(std::move(n));
  }

  Var constant(Array v) { return leaf(std::move(v), false); }
  Var scalar(double v) { return constant(Array::scalar(v)); }

  Var param(Param& p) {
    Node n;
    n.value = p.value;  // copy keeps tape reads stable if the param is updated mid-build
    n.kind = "param";
    n.param = &p;
    n.needs_grad = true;
    n.is_leaf = true;
    Var out = push(std::move(n));
    return out;
  }

  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, int(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[std::size_t(id)]; }
  const Node& node(int id) const { return nodes_[std::size_t(id)]; }
  const Array& value(Var v) const { return nodes_[std::size_t(v.id)].value; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulate g into the gradient buffer of node id.
  void accum(int id, const Array& g) {
    Node& n = nodes_[std::size_t(id)];
    if (!n.needs_grad) return;
    if (n.grad.numel() == 0) n.grad = Array::zeros(n.value.shape);
    if (n.grad.shape != g.shape)
      throw ShapeError("gradient accumulation shape mismatch on " + std::string(n.kind));
    double* d = n.grad.data.data();
    const double* s = g.data.data();
    for (std::size_t i = 0; i < g.numel(); ++i) d[i] += s[i];
  }

  // Gradient buffer of a node (empty Array if it never received one).
  const Array& grad(Var v) const { return nodes_[std::size_t(v.id)].grad; }

  void backward(Var root) {
    Node& r = nodes_[std::size_t(root.id)];
    if (r.value.numel() != 1)
      throw ShapeError("backward root must be scalar, got " + shape_str(r.value.shape));
    if (!std::isfinite(r.value(0)))
      throw NumericError("backward root is not finite");
    r.grad = Array::full(r.value.shape, 1.0);
    for (int id = root.id; id >= 0; --id) {
      Node& n = nodes_[std::size_t(id)];
      if (n.grad.numel() != 0 && n.backward) n.backward(*this);
      if (n.param != nullptr && n.grad.numel() != 0) {
        double* d = n.param->grad.data.data();
        const double* s = n.grad.data.data();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) d[i] += s[i];
      }
      if (!n.is_leaf && id != root.id) {
        n.value = Array();
        n.grad = Array();
      } else if (!n.is_leaf) {
        n.grad = Array();
      }
    }
  }

  void reset() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

inline Tape* same_tape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw ShapeError(std::string(op) + ": vars from different tapes");
  return a.tape;
}

}  // namespace detail

// ====================== Elementwise binary ======================

inline Var add(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "add");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  require_same_shape(av, bv, "add");
  Tape::Node n;
  n.kind = "add";
  n.value = Array(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value(i) = av(i) + bv(i);
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [ai, bi, oi](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    tp.accum(ai, g);
    tp.accum(bi, g);
  };
  return out;
}

inline Var sub(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "sub");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  require_same_shape(av, bv, "sub");
  Tape::Node n;
  n.kind = "sub";
  n.value = Array(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value(i) = av(i) - bv(i);
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [ai, bi, oi](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    tp.accum(ai, g);
    Array ng(g.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) ng(i) = -g(i);
    tp.accum(bi, ng);
  };
  return out;
}

inline Var mul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "mul");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  require_same_shape(av, bv, "mul");
  Tape::Node n;
  n.kind = "mul";
  n.value = Array(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value(i) = av(i) * bv(i);
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [ai, bi, oi](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& av2 = tp.node(ai).value;
    const Array& bv2 = tp.node(bi).value;
    if (tp.node(ai).needs_grad) {
      Array da(g.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) da(i) = g(i) * bv2(i);
      tp.accum(ai, da);
    }
    if (tp.node(bi).needs_grad) {
      Array db(g.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) db(i) = g(i) * av2(i);
      tp.accum(bi, db);
    }
  };
  return out;
}

inline Var div(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "div");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  require_same_shape(av, bv, "div");
  Tape::Node n;
  n.kind = "div";
  n.value = Array(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value(i) = av(i) / bv(i);
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [ai, bi, oi](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& av2 = tp.node(ai).value;
    const Array& bv2 = tp.node(bi).value;
    if (tp.node(ai).needs_grad) {
      Array da(g.shape);
      for (std::size_t i = 0; i < g.numel(); ++i) da(i) = g(i) / bv2(i);
      tp.accum(ai, da);
    }
    if (tp.node(bi).needs_grad) {
      Array db(g.shape);
      for (std::size_t i = 0; i < g.numel(); ++i)
        db(i) = -g(i) * av2(i) / (bv2(i) * bv2(i));
      tp.accum(bi, db);
    }
  };
  return out;
}

// ====================== Elementwise unary ======================

namespace detail {

template <class FwdFn, class BwdFn>
Var unary_op(Var a, const char* kind, FwdFn fwd, BwdFn bwd) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  Tape::Node n;
  n.kind = kind;
  n.value = Array(av.shape);
  for (std::size_t i = 0; i < av.numel(); ++i) n.value(i) = fwd(av(i));
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, bwd](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& x = tp.node(ai).value;
    const Array& y = tp.node(oi).value;
    Array da(g.shape);
    for (std::size_t i = 0; i < g.numel(); ++i) da(i) = g(i) * bwd(x(i), y(i));
    tp.accum(ai, da);
  };
  return out;
}

}  // namespace detail

inline Var neg(Var a) {
  return detail::unary_op(
      a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

inline Var vexp(Var a) {
  return detail::unary_op(
      a, "exp", [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

inline Var vlog(Var a) {
  const Array& av = a.tape->value(a);
  for (double x : av.data)
    if (!(x > 0.0)) throw NumericError("log of non-positive value " + std::to_string(x));
  return detail::unary_op(
      a, "log", [](double x) { return std::log(x); },
      [](double x, double) { return 1.0 / x; });
}

inline Var vtanh(Var a) {
  return detail::unary_op(
      a, "tanh", [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

inline double softplus_val(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double sigmoid_val(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Var softplus(Var a) {
  return detail::unary_op(
      a, "softplus", [](double x) { return softplus_val(x); },
      [](double x, double) { return sigmoid_val(x); });
}

inline Var vsqrt(Var a) {
  const Array& av = a.tape->value(a);
  for (double x : av.data)
    if (x < 0.0) throw NumericError("sqrt of negative value " + std::to_string(x));
  return detail::unary_op(
      a, "sqrt", [](double x) { return std::sqrt(x); },
      [](double, double y) { return 0.5 / y; });
}

inline Var square(Var a) {
  return detail::unary_op(
      a, "square", [](double x) { return x * x; },
      [](double x, double) { return 2.0 * x; });
}

// tanh-form smooth gated linear unit used between spectral layers.
inline Var gelu(Var a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  return detail::unary_op(
      a, "gelu",
      [](double x) {
        const double u = kC * (x + kA * x * x * x);
        return 0.5 * x * (1.0 + std::tanh(u));
      },
      [](double x, double) {
        const double u = kC * (x + kA * x * x * x);
        const double th = std::tanh(u);
        const double du = kC * (1.0 + 3.0 * kA * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

inline Var scale(Var a, double c) {
  return detail::unary_op(
      a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_const(Var a, double c) {
  return detail::unary_op(
      a, "add_const", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// Soft clamp c * tanh(x / c): identity near zero, saturating at +/-c.
inline Var soft_clamp(Var a, double c) { return scale(vtanh(scale(a, 1.0 / c)), c); }

// ====================== Matrix product ======================
// Contraction over the last axis of a and the first of w (w rank 2).
// a may carry leading batch axes: [..., K] x [K, N] -> [..., N].

inline Var matmul(Var a, Var w) {
  Tape* t = detail::same_tape(a, w, "matmul");
  const Array& av = t->value(a);
  const Array& wv = t->value(w);
  if (av.rank() < 2 || wv.rank() != 2)
    throw ShapeError("matmul: need lhs rank>=2 and rhs rank 2, got " +
                     shape_str(av.shape) + " x " + shape_str(wv.shape));
  const std::size_t K = av.shape.back();
  if (K != wv.shape[0])
    throw ShapeError("matmul: inner dims " + shape_str(av.shape) + " x " +
                     shape_str(wv.shape));
  const std::size_t N = wv.shape[1];
  const std::size_t M = av.numel() / K;
  Shape os = av.shape;
  os.back() = N;
  Tape::Node n;
  n.kind = "matmul";
  n.value = Array(os);
  gemm_nn_acc(av.data.data(), wv.data.data(), n.value.data.data(), M, K, N);
  n.needs_grad = t->node(a.id).needs_grad || t->node(w.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, wi = w.id, oi = out.id;
  t->node(oi).backward = [ai, wi, oi, M, K, N](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& av2 = tp.node(ai).value;
    const Array& wv2 = tp.node(wi).value;
    if (tp.node(ai).needs_grad) {
      Array da = Array::zeros(av2.shape);
      gemm_nt_acc(g.data.data(), wv2.data.data(), da.data.data(), M, N, K);
      tp.accum(ai, da);
    }
    if (tp.node(wi).needs_grad) {
      Array dw = Array::zeros(wv2.shape);
      gemm_tn_acc(av2.data.data(), g.data.data(), dw.data.data(), K, M, N);
      tp.accum(wi, dw);
    }
  };
  return out;
}

// ====================== Broadcasts ======================

// x[..., C] + b[C]
inline Var add_rowvec(Var x, Var b) {
  Tape* t = detail::same_tape(x, b, "add_rowvec");
  const Array& xv = t->value(x);
  const Array& bv = t->value(b);
  const std::size_t C = xv.shape.back();
  if (bv.rank() != 1 || bv.shape[0] != C)
    throw ShapeError("add_rowvec: " + shape_str(xv.shape) + " + " + shape_str(bv.shape));
  const std::size_t R = xv.numel() / C;
  Tape::Node n;
  n.kind = "add_rowvec";
  n.value = Array(xv.shape);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) n.value(r * C + c) = xv(r * C + c) + bv(c);
  n.needs_grad = t->node(x.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int xi = x.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [xi, bi, oi, R, C](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    tp.accum(xi, g);
    if (tp.node(bi).needs_grad) {
      Array db = Array::zeros({C});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) db(c) += g(r * C + c);
      tp.accum(bi, db);
    }
  };
  return out;
}

// Broadcast a length-C vector across R rows: [C] -> [R, C].
inline Var broadcast_row(Var b, std::size_t R) {
  Tape* t = b.tape;
  const Array& bv = t->value(b);
  if (bv.rank() != 1) throw ShapeError("broadcast_row: need rank-1, got " + shape_str(bv.shape));
  const std::size_t C = bv.shape[0];
  Tape::Node n;
  n.kind = "broadcast";
  n.value = Array({R, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) n.value(r, c) = bv(c);
  n.needs_grad = t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int bi = b.id, oi = out.id;
  t->node(oi).backward = [bi, oi, R, C](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array db = Array::zeros({C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) db(c) += g(r, c);
    tp.accum(bi, db);
  };
  return out;
}

// x[R, C] op v[R] broadcast across columns.
namespace detail {

template <class Fn, class BwdX, class BwdV>
Var colvec_op(Var x, Var v, const char* kind, Fn fwd, BwdX bx, BwdV bv_) {
  Tape* t = same_tape(x, v, kind);
  const Array& xv = t->value(x);
  const Array& vv = t->value(v);
  if (xv.rank() != 2 || vv.rank() != 1 || vv.shape[0] != xv.shape[0])
    throw ShapeError(std::string(kind) + ": " + shape_str(xv.shape) + " with " +
                     shape_str(vv.shape));
  const std::size_t R = xv.shape[0], C = xv.shape[1];
  Tape::Node n;
  n.kind = kind;
  n.value = Array(xv.shape);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) n.value(r, c) = fwd(xv(r, c), vv(r));
  n.needs_grad = t->node(x.id).needs_grad || t->node(v.id).needs_grad;
  Var out = t->push(std::move(n));
  int xi = x.id, vi = v.id, oi = out.id;
  t->node(oi).backward = [xi, vi, oi, R, C, bx, bv_](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& xv2 = tp.node(xi).value;
    const Array& vv2 = tp.node(vi).value;
    if (tp.node(xi).needs_grad) {
      Array dx(xv2.shape);
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) dx(r, c) = g(r, c) * bx(xv2(r, c), vv2(r));
      tp.accum(xi, dx);
    }
    if (tp.node(vi).needs_grad) {
      Array dv = Array::zeros({R});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) dv(r) += g(r, c) * bv_(xv2(r, c), vv2(r));
      tp.accum(vi, dv);
    }
  };
  return out;
}

}  // namespace detail

inline Var sub_colvec(Var x, Var v) {
  return detail::colvec_op(
      x, v, "sub_colvec", [](double a, double b) { return a - b; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

inline Var mul_colvec(Var x, Var v) {
  return detail::colvec_op(
      x, v, "mul_colvec", [](double a, double b) { return a * b; },
      [](double, double b) { return b; }, [](double a, double) { return a; });
}

// ====================== Reductions ======================

inline Var sum_all(Var a) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  double s = 0.0;
  for (double v : av.data) s += v;
  Tape::Node n;
  n.kind = "sum";
  n.value = Array::scalar(s);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi](Tape& tp) {
    const double g = tp.node(oi).grad(0);
    Array da = Array::full(tp.node(ai).value.shape, g);
    tp.accum(ai, da);
  };
  return out;
}

inline Var mean_all(Var a) {
  const std::size_t n = a.tape->value(a).numel();
  return scale(sum_all(a), 1.0 / double(n));
}

// Row sums: [R, C] -> [R].
inline Var sum_axis1(Var a) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2) throw ShapeError("sum_axis1: need rank-2, got " + shape_str(av.shape));
  const std::size_t R = av.shape[0], C = av.shape[1];
  Tape::Node n;
  n.kind = "sum_axis1";
  n.value = Array({R});
  for (std::size_t r = 0; r < R; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += av(r, c);
    n.value(r) = s;
  }
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, C](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) da(r, c) = g(r);
    tp.accum(ai, da);
  };
  return out;
}

// Column sums: [R, C] -> [C].
inline Var sum_axis0(Var a) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2) throw ShapeError("sum_axis0: need rank-2, got " + shape_str(av.shape));
  const std::size_t R = av.shape[0], C = av.shape[1];
  Tape::Node n;
  n.kind = "sum_axis0";
  n.value = Array({C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) n.value(c) += av(r, c);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, C](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) da(r, c) = g(c);
    tp.accum(ai, da);
  };
  return out;
}

// ====================== Slicing and rearrangement ======================

// Same data, different shape; element count must match.
inline Var reshape(Var a, Shape shape) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  Array v(shape);
  if (v.numel() != av.numel())
    throw ShapeError("reshape: " + shape_str(av.shape) + " to " + shape_str(shape));
  v.data = av.data;
  Tape::Node n;
  n.kind = "reshape";
  n.value = std::move(v);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi](Tape& tp) {
    Array da(tp.node(ai).value.shape);
    da.data = tp.node(oi).grad.data;
    tp.accum(ai, da);
  };
  return out;
}

inline Var slice_cols(Var a, std::size_t j0, std::size_t w) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2 || j0 + w > av.shape[1])
    throw ShapeError("slice_cols: [" + std::to_string(j0) + "," + std::to_string(j0 + w) +
                     ") of " + shape_str(av.shape));
  const std::size_t R = av.shape[0], C = av.shape[1];
  Tape::Node n;
  n.kind = "slice";
  n.value = Array({R, w});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < w; ++c) n.value(r, c) = av(r, j0 + c);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, C, j0, w](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da = Array::zeros({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < w; ++c) da(r, j0 + c) = g(r, c);
    tp.accum(ai, da);
  };
  return out;
}

inline Var concat_cols(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "concat_cols");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[0] != bv.shape[0])
    throw ShapeError("concat_cols: " + shape_str(av.shape) + " | " + shape_str(bv.shape));
  const std::size_t R = av.shape[0], Ca = av.shape[1], Cb = bv.shape[1];
  Tape::Node n;
  n.kind = "concat";
  n.value = Array({R, Ca + Cb});
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < Ca; ++c) n.value(r, c) = av(r, c);
    for (std::size_t c = 0; c < Cb; ++c) n.value(r, Ca + c) = bv(r, c);
  }
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, bi = b.id, oi = out.id;
  t->node(oi).backward = [ai, bi, oi, R, Ca, Cb](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    if (tp.node(ai).needs_grad) {
      Array da({R, Ca});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < Ca; ++c) da(r, c) = g(r, c);
      tp.accum(ai, da);
    }
    if (tp.node(bi).needs_grad) {
      Array db({R, Cb});
      for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < Cb; ++c) db(r, c) = g(r, Ca + c);
      tp.accum(bi, db);
    }
  };
  return out;
}

// y[:, j] = x[:, perm[j]]
inline Var permute_cols(Var a, std::vector<std::size_t> perm) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2 || perm.size() != av.shape[1])
    throw ShapeError("permute_cols: perm size vs " + shape_str(av.shape));
  const std::size_t R = av.shape[0], C = av.shape[1];
  Tape::Node n;
  n.kind = "permute";
  n.value = Array({R, C});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) n.value(r, c) = av(r, perm[c]);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, C, perm](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da = Array::zeros({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) da(r, perm[c]) += g(r, c);
    tp.accum(ai, da);
  };
  return out;
}

inline Var gather_cols(Var a, std::vector<std::size_t> idx) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2) throw ShapeError("gather_cols: need rank-2, got " + shape_str(av.shape));
  const std::size_t R = av.shape[0], C = av.shape[1], W = idx.size();
  for (std::size_t j : idx)
    if (j >= C) throw ShapeError("gather_cols: index out of range");
  Tape::Node n;
  n.kind = "gather";
  n.value = Array({R, W});
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < W; ++c) n.value(r, c) = av(r, idx[c]);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, C, idx](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da = Array::zeros({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < idx.size(); ++c) da(r, idx[c]) += g(r, c);
    tp.accum(ai, da);
  };
  return out;
}

// y[b, i, c] = x[b, idx[i], c]
inline Var gather_axis1(Var a, std::vector<std::size_t> idx) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 3) throw ShapeError("gather_axis1: need rank-3, got " + shape_str(av.shape));
  const std::size_t B = av.shape[0], N = av.shape[1], C = av.shape[2], W = idx.size();
  for (std::size_t j : idx)
    if (j >= N) throw ShapeError("gather_axis1: index out of range");
  Tape::Node n;
  n.kind = "gather";
  n.value = Array({B, W, C});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < W; ++i)
      for (std::size_t c = 0; c < C; ++c) n.value(b, i, c) = av(b, idx[i], c);
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, B, N, C, idx](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array da = Array::zeros({B, N, C});
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) da(b, idx[i], c) += g(b, i, c);
    tp.accum(ai, da);
  };
  return out;
}

// ====================== Axis-1 basis contraction ======================
// y[b] = basis^T x[b]: x[B, n, C] contracted with basis[n, K] -> [B, K, C].
// basis is typically a fixed truncated Fourier matrix.

inline Var contract_axis1(Var basis, Var x) {
  Tape* t = detail::same_tape(basis, x, "contract_axis1");
  const Array& bv = t->value(basis);
  const Array& xv = t->value(x);
  if (bv.rank() != 2 || xv.rank() != 3 || bv.shape[0] != xv.shape[1])
    throw ShapeError("contract_axis1: basis " + shape_str(bv.shape) + " with x " +
                     shape_str(xv.shape));
  const std::size_t B = xv.shape[0], N = xv.shape[1], C = xv.shape[2], K = bv.shape[1];
  Tape::Node n;
  n.kind = "contract_axis1";
  n.value = Array({B, K, C});
  for (std::size_t b = 0; b < B; ++b)
    gemm_tn_acc(bv.data.data(), xv.data.data() + b * N * C,
                n.value.data.data() + b * K * C, K, N, C);
  n.needs_grad = t->node(basis.id).needs_grad || t->node(x.id).needs_grad;
  Var out = t->push(std::move(n));
  int bi = basis.id, xi = x.id, oi = out.id;
  t->node(oi).backward = [bi, xi, oi, B, N, C, K](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& bv2 = tp.node(bi).value;
    const Array& xv2 = tp.node(xi).value;
    if (tp.node(xi).needs_grad) {
      Array dx = Array::zeros({B, N, C});
      for (std::size_t b = 0; b < B; ++b)
        gemm_nn_acc(bv2.data.data(), g.data.data() + b * K * C,
                    dx.data.data() + b * N * C, N, K, C);
      tp.accum(xi, dx);
    }
    if (tp.node(bi).needs_grad) {
      Array db = Array::zeros({N, K});
      for (std::size_t b = 0; b < B; ++b)
        gemm_nt_acc(xv2.data.data() + b * N * C, g.data.data() + b * K * C,
                    db.data.data(), N, C, K);
      tp.accum(bi, db);
    }
  };
  return out;
}

// Inverse direction: coef[B, K, C] with basis[K, n] -> field [B, n, C].
inline Var expand_axis1(Var basis, Var coef) {
  Tape* t = detail::same_tape(basis, coef, "expand_axis1");
  const Array& bv = t->value(basis);
  const Array& cv = t->value(coef);
  if (bv.rank() != 2 || cv.rank() != 3 || bv.shape[0] != cv.shape[1])
    throw ShapeError("expand_axis1: basis " + shape_str(bv.shape) + " with coef " +
                     shape_str(cv.shape));
  const std::size_t B = cv.shape[0], K = cv.shape[1], C = cv.shape[2], N = bv.shape[1];
  Tape::Node n;
  n.kind = "expand_axis1";
  n.value = Array({B, N, C});
  for (std::size_t b = 0; b < B; ++b)
    gemm_tn_acc(bv.data.data(), cv.data.data() + b * K * C,
                n.value.data.data() + b * N * C, N, K, C);
  n.needs_grad = t->node(basis.id).needs_grad || t->node(coef.id).needs_grad;
  Var out = t->push(std::move(n));
  int bi = basis.id, ci = coef.id, oi = out.id;
  t->node(oi).backward = [bi, ci, oi, B, N, C, K](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& bv2 = tp.node(bi).value;
    const Array& cv2 = tp.node(ci).value;
    if (tp.node(ci).needs_grad) {
      Array dc = Array::zeros({B, K, C});
      for (std::size_t b = 0; b < B; ++b)
        gemm_nn_acc(bv2.data.data(), g.data.data() + b * N * C,
                    dc.data.data() + b * K * C, K, N, C);
      tp.accum(ci, dc);
    }
    if (tp.node(bi).needs_grad) {
      Array db = Array::zeros({K, N});
      for (std::size_t b = 0; b < B; ++b)
        gemm_nt_acc(cv2.data.data() + b * K * C, g.data.data() + b * N * C,
                    db.data.data(), K, C, N);
      tp.accum(bi, db);
    }
  };
  return out;
}

// ====================== Complex ops ======================
// Complex arrays are real arrays whose last axis has extent 2 (re, im).

inline Var cmul(Var a, Var b) {
  Tape* t = detail::same_tape(a, b, "cmul");
  const Array& av = t->value(a);
  const Array& bv = t->value(b);
  require_same_shape(av, bv, "cmul");
  if (av.shape.back() != 2) throw ShapeError("cmul: last axis must be 2");
  const std::size_t P = av.numel() / 2;
  Tape::Node n;
  n.kind = "cmul";
  n.value = Array(av.shape);
  for (std::size_t p = 0; p < P; ++p) {
    const double ar = av(2 * p), ai = av(2 * p + 1);
    const double br = bv(2 * p), bi_ = bv(2 * p + 1);
    n.value(2 * p) = ar * br - ai * bi_;
    n.value(2 * p + 1) = ar * bi_ + ai * br;
  }
  n.needs_grad = t->node(a.id).needs_grad || t->node(b.id).needs_grad;
  Var out = t->push(std::move(n));
  int aid = a.id, bid = b.id, oi = out.id;
  t->node(oi).backward = [aid, bid, oi, P](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& av2 = tp.node(aid).value;
    const Array& bv2 = tp.node(bid).value;
    if (tp.node(aid).needs_grad) {
      Array da(av2.shape);
      for (std::size_t p = 0; p < P; ++p) {
        const double gr = g(2 * p), gi = g(2 * p + 1);
        const double br = bv2(2 * p), bi_ = bv2(2 * p + 1);
        da(2 * p) = gr * br + gi * bi_;
        da(2 * p + 1) = -gr * bi_ + gi * br;
      }
      tp.accum(aid, da);
    }
    if (tp.node(bid).needs_grad) {
      Array db(bv2.shape);
      for (std::size_t p = 0; p < P; ++p) {
        const double gr = g(2 * p), gi = g(2 * p + 1);
        const double ar = av2(2 * p), ai = av2(2 * p + 1);
        db(2 * p) = gr * ar + gi * ai;
        db(2 * p + 1) = -gr * ai + gi * ar;
      }
      tp.accum(bid, db);
    }
  };
  return out;
}

// Real-to-complex DFT over the last axis: [R, n] -> [R, n/2+1, 2].
inline Var rfft(Var a) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  if (av.rank() != 2) throw ShapeError("rfft: need rank-2, got " + shape_str(av.shape));
  const std::size_t R = av.shape[0], N = av.shape[1], F = N / 2 + 1;
  Tape::Node n;
  n.kind = "rfft";
  n.value = Array({R, F, 2});
  std::vector<cplx> buf(N);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t j = 0; j < N; ++j) buf[j] = cplx(av(r, j), 0.0);
    cfft(buf, -1);
    for (std::size_t k = 0; k < F; ++k) {
      n.value(r, k, 0) = buf[k].real();
      n.value(r, k, 1) = buf[k].imag();
    }
  }
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, N, F](Tape& tp) {
    // Adjoint of the R^n -> R^{2F} map: x_grad = Re[sum_k g_k e^{+i 2 pi j k / n}]
    // with the stored half-spectrum taken as independent coefficients.
    const Array& g = tp.node(oi).grad;
    Array da({R, N});
    std::vector<cplx> buf(N);
    for (std::size_t r = 0; r < R; ++r) {
      std::fill(buf.begin(), buf.end(), cplx(0.0, 0.0));
      for (std::size_t k = 0; k < F; ++k) buf[k] = cplx(g(r, k, 0), g(r, k, 1));
      cfft(buf, +1);
      for (std::size_t j = 0; j < N; ++j) da(r, j) = buf[j].real();
    }
    tp.accum(ai, da);
  };
  return out;
}

// Hermitian inverse of rfft: [R, n/2+1, 2] -> [R, n] real.
inline Var irfft(Var a, std::size_t N) {
  Tape* t = a.tape;
  const Array& av = t->value(a);
  const std::size_t F = N / 2 + 1;
  if (av.rank() != 3 || av.shape[1] != F || av.shape[2] != 2)
    throw ShapeError("irfft: got " + shape_str(av.shape) + " for n=" + std::to_string(N));
  const std::size_t R = av.shape[0];
  Tape::Node n;
  n.kind = "irfft";
  n.value = Array({R, N});
  std::vector<cplx> buf(N);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t k = 0; k < F; ++k) buf[k] = cplx(av(r, k, 0), av(r, k, 1));
    for (std::size_t k = F; k < N; ++k) buf[k] = std::conj(buf[N - k]);
    cfft(buf, +1);
    for (std::size_t j = 0; j < N; ++j) n.value(r, j) = buf[j].real() / double(N);
  }
  n.needs_grad = t->node(a.id).needs_grad;
  Var out = t->push(std::move(n));
  int ai = a.id, oi = out.id;
  t->node(oi).backward = [ai, oi, R, N, F](Tape& tp) {
    // Adjoint: dX_k = (c_k / n) FFT(g)_k with c_k = 2 on interior bins.
    const Array& g = tp.node(oi).grad;
    Array da({R, F, 2});
    std::vector<cplx> buf(N);
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t j = 0; j < N; ++j) buf[j] = cplx(g(r, j), 0.0);
      cfft(buf, -1);
      for (std::size_t k = 0; k < F; ++k) {
        const bool edge = (k == 0) || (2 * k == N);
        const double c = (edge ? 1.0 : 2.0) / double(N);
        da(r, k, 0) = c * buf[k].real();
        da(r, k, 1) = c * buf[k].imag();
      }
    }
    tp.accum(ai, da);
  };
  return out;
}

// ====================== Spectral channel mixing ======================
// coef[B, 2K, Cin] holds K (cos, sin) coefficient row pairs; weights
// w[K, 2, Cin, Cout] act as per-mode complex channel matrices:
//   out_c = cos_in * Wr - sin_in * Wi,  out_s = cos_in * Wi + sin_in * Wr.

inline Var cpair_mix(Var coef, Var w) {
  Tape* t = detail::same_tape(coef, w, "cpair_mix");
  const Array& cv = t->value(coef);
  const Array& wv = t->value(w);
  if (cv.rank() != 3 || wv.rank() != 4 || wv.shape[1] != 2 || cv.shape[1] != 2 * wv.shape[0] ||
      cv.shape[2] != wv.shape[2])
    throw ShapeError("cpair_mix: coef " + shape_str(cv.shape) + " with w " +
                     shape_str(wv.shape));
  const std::size_t B = cv.shape[0], K = wv.shape[0], Ci = wv.shape[2], Co = wv.shape[3];
  Tape::Node n;
  n.kind = "cpair_mix";
  n.value = Array::zeros({B, 2 * K, Co});
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < K; ++k) {
      const double* cin = cv.data.data() + (b * 2 * K + 2 * k) * Ci;
      const double* sin_ = cin + Ci;
      const double* wr = wv.data.data() + (k * 2 + 0) * Ci * Co;
      const double* wi = wv.data.data() + (k * 2 + 1) * Ci * Co;
      double* oc = n.value.data.data() + (b * 2 * K + 2 * k) * Co;
      double* os = oc + Co;
      gemm_nn_acc(cin, wr, oc, 1, Ci, Co);
      gemm_nn_acc(cin, wi, os, 1, Ci, Co);
      for (std::size_t j = 0; j < Co; ++j) {
        double accC = 0.0, accS = 0.0;
        for (std::size_t i = 0; i < Ci; ++i) {
          accC += sin_[i] * wi[i * Co + j];
          accS += sin_[i] * wr[i * Co + j];
        }
        oc[j] -= accC;
        os[j] += accS;
      }
    }
  }
  n.needs_grad = t->node(coef.id).needs_grad || t->node(w.id).needs_grad;
  Var out = t->push(std::move(n));
  int ci = coef.id, wi_id = w.id, oi = out.id;
  t->node(oi).backward = [ci, wi_id, oi, B, K, Ci, Co](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    const Array& cv2 = tp.node(ci).value;
    const Array& wv2 = tp.node(wi_id).value;
    const bool need_c = tp.node(ci).needs_grad;
    const bool need_w = tp.node(wi_id).needs_grad;
    Array dc = need_c ? Array::zeros(cv2.shape) : Array();
    Array dw = need_w ? Array::zeros(wv2.shape) : Array();
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t k = 0; k < K; ++k) {
        const double* cin = cv2.data.data() + (b * 2 * K + 2 * k) * Ci;
        const double* sin_ = cin + Ci;
        const double* wr = wv2.data.data() + (k * 2 + 0) * Ci * Co;
        const double* wi = wv2.data.data() + (k * 2 + 1) * Ci * Co;
        const double* gc = g.data.data() + (b * 2 * K + 2 * k) * Co;
        const double* gs = gc + Co;
        if (need_c) {
          double* dcc = dc.data.data() + (b * 2 * K + 2 * k) * Ci;
          double* dcs = dcc + Ci;
          // d cos_in = gc * Wr^T + gs * Wi^T ; d sin_in = -gc * Wi^T + gs * Wr^T
          gemm_nt_acc(gc, wr, dcc, 1, Co, Ci);
          gemm_nt_acc(gs, wi, dcc, 1, Co, Ci);
          gemm_nt_acc(gs, wr, dcs, 1, Co, Ci);
          for (std::size_t i = 0; i < Ci; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < Co; ++j) acc += gc[j] * wi[i * Co + j];
            dcs[i] -= acc;
          }
        }
        if (need_w) {
          double* dwr = dw.data.data() + (k * 2 + 0) * Ci * Co;
          double* dwi = dw.data.data() + (k * 2 + 1) * Ci * Co;
          // dWr += cos^T gc + sin^T gs ; dWi += cos^T gs - sin^T gc
          for (std::size_t i = 0; i < Ci; ++i) {
            const double cvi = cin[i], svi = sin_[i];
            double* r1 = dwr + i * Co;
            double* r2 = dwi + i * Co;
            for (std::size_t j = 0; j < Co; ++j) {
              r1[j] += cvi * gc[j] + svi * gs[j];
              r2[j] += cvi * gs[j] - svi * gc[j];
            }
          }
        }
      }
    }
    if (need_c) tp.accum(ci, dc);
    if (need_w) tp.accum(wi_id, dw);
  };
  return out;
}

// ====================== External value/Jacobian bridge ======================
// Splices a function evaluated off this tape (value phi[R] with Jacobian
// J[R, C] w.r.t. the tape input x[R, C], rows independent) into the graph.
// Used to feed chunked surrogate evaluations into a light outer tape.

inline Var rowwise_external(Var x, Array phi, Array jac, const char* kind = "external") {
  Tape* t = x.tape;
  const Array& xv = t->value(x);
  if (xv.rank() != 2 || phi.rank() != 1 || jac.rank() != 2 || phi.shape[0] != xv.shape[0] ||
      jac.shape != xv.shape)
    throw ShapeError("rowwise_external: x " + shape_str(xv.shape) + ", phi " +
                     shape_str(phi.shape) + ", jac " + shape_str(jac.shape));
  const std::size_t R = xv.shape[0], C = xv.shape[1];
  Tape::Node n;
  n.kind = kind;
  n.value = std::move(phi);
  n.needs_grad = t->node(x.id).needs_grad;
  Var out = t->push(std::move(n));
  int xi = x.id, oi = out.id;
  auto J = std::make_shared<Array>(std::move(jac));
  t->node(oi).backward = [xi, oi, R, C, J](Tape& tp) {
    const Array& g = tp.node(oi).grad;
    Array dx({R, C});
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) dx(r, c) = g(r) * (*J)(r, c);
    tp.accum(xi, dx);
  };
  return out;
}

// Operator sugar.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace vflow
