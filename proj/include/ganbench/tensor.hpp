#pragma once

// Dense f64 tensors and reverse-mode automatic differentiation on a flat
// expression tape.
//
// Design notes:
//  - Tensors are immutable after construction; storage is shared, so copies
//    are cheap and read-only sharing across threads is safe.
//  - A Graph is a tape of primitive nodes built eagerly: emitting an
//    operation computes its forward value immediately (when all operands are
//    bound) and validates shapes and finiteness. A Graph is confined to one
//    thread.
//  - backward() performs the reverse sweep by emitting ordinary graph nodes
//    for every vector-Jacobian product, so gradients are themselves
//    differentiable. Taking a gradient of an expression that contains a
//    gradient (double backward) needs no special casing.
//  - Elementwise broadcasting is deliberately narrow: equal shapes, a scalar
//    on either side, or a 1-D (m) tensor against the rows of an (n, m)
//    matrix. Anything richer must be spelled with explicit broadcast nodes.
//  - log() clamps its argument to [1e-7, inf) and the gradient follows the
//    clamped branch (zero below the floor).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ganbench/common.hpp"

namespace ganbench {

inline constexpr double kLogFloor = 1e-7;

// --- shapes --------------------------------------------------------------

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  out += ")";
  return out;
}

// --- Tensor ----------------------------------------------------------------

class Tensor {
 public:
  Tensor() : Tensor(Shape{}, std::vector<double>{0.0}) {}

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<const std::vector<double>>(std::move(data))),
        requires_grad_(requires_grad) {
    if (static_cast<std::int64_t>(data_->size()) != shape_numel(shape_))
      throw Error("Tensor: data size " + std::to_string(data_->size()) +
                  " does not match shape " + shape_str(shape_));
    for (int d : shape_)
      if (d < 0) throw Error("Tensor: negative extent in " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  static Tensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }

  static Tensor full(Shape shape, double v) {
    auto n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_->size()); }
  const std::vector<double>& data() const { return *data_; }

  bool requires_grad() const { return requires_grad_; }
  Tensor with_requires_grad(bool flag) const {
    Tensor t = *this;
    t.requires_grad_ = flag;
    return t;
  }

  // 2-D accessors.
  int rows() const { require_ndim(2); return shape_[0]; }
  int cols() const { require_ndim(2); return shape_[1]; }
  double at(int i, int j) const {
    require_ndim(2);
    return (*data_)[static_cast<std::size_t>(i) * shape_[1] + j];
  }
  double at(int i) const {
    require_ndim(1);
    return (*data_)[static_cast<std::size_t>(i)];
  }
  double item() const {
    if (numel() != 1) throw Error("Tensor::item: not a scalar, shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool same_storage(const Tensor& other) const { return data_ == other.data_; }

  // Same storage under a different shape; element count must be preserved.
  Tensor reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw Error("Tensor::reshaped: " + shape_str(shape_) + " does not hold " +
                  shape_str(shape) + " elements");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    for (double v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

 private:
  void require_ndim(int k) const {
    if (ndim() != k)
      throw Error("Tensor: expected " + std::to_string(k) + "-D, got " + shape_str(shape_));
  }

  Shape shape_;
  std::shared_ptr<const std::vector<double>> data_;
  bool requires_grad_ = false;
};

using GradientMap = std::map<std::string, Tensor>;

// --- expression tape ---------------------------------------------------------

enum class Op : std::uint8_t {
  kInput, kConstant,
  kMatMul, kTranspose,
  kAdd, kSub, kMul, kDiv,
  kNeg, kScale, kAddConst,
  kRelu, kLeakyRelu, kTanh, kSigmoid, kSoftmax,
  kLogCore, kSqrt, kSquare, kClip,
  kReluMask, kLeakyMask, kRangeMask,
  kSumAll, kSumCols, kSumRows,
  kBroadcastScalar, kBroadcastCols, kBroadcastRows,
  kConcatCols, kSliceCols, kPadCols,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kInput: return "input";
    case Op::kConstant: return "constant";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kRelu: return "relu";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kLogCore: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kSquare: return "square";
    case Op::kClip: return "clip";
    case Op::kReluMask: return "relu_mask";
    case Op::kLeakyMask: return "leaky_mask";
    case Op::kRangeMask: return "range_mask";
    case Op::kSumAll: return "sum_all";
    case Op::kSumCols: return "sum_cols";
    case Op::kSumRows: return "sum_rows";
    case Op::kBroadcastScalar: return "broadcast_scalar";
    case Op::kBroadcastCols: return "broadcast_cols";
    case Op::kBroadcastRows: return "broadcast_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kPadCols: return "pad_cols";
  }
  return "?";
}

struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

class Graph {
 public:
  // ---- leaves ----

  // Binds a named leaf. Binding the same name twice is allowed only when it
  // refers to the same underlying tensor (a network applied repeatedly in
  // one graph re-binds its parameters); anything else is an error.
  Var input(const std::string& name, const Tensor& value) {
    auto it = named_.find(name);
    if (it != named_.end()) {
      Node& n = nodes_[it->second];
      if (!n.has_value || !n.value.same_storage(value))
        throw GraphError("input '" + name + "' rebound with a different tensor",
                         it->second);
      return Var{it->second};
    }
    Node n;
    n.op = Op::kInput;
    n.name = name;
    n.shape = value.shape();
    n.requires_grad = value.requires_grad();
    n.needs_grad = value.requires_grad();
    n.value = value;
    n.has_value = true;
    int idx = push(std::move(n));
    named_[name] = idx;
    return Var{idx};
  }

  // Shape-only leaf; must be bound through evaluate() before any value or
  // gradient is read.
  Var placeholder(const std::string& name, Shape shape, bool requires_grad = false) {
    if (named_.count(name))
      throw GraphError("placeholder '" + name + "' already exists", named_[name]);
    Node n;
    n.op = Op::kInput;
    n.name = name;
    n.shape = std::move(shape);
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    n.has_value = false;
    int idx = push(std::move(n));
    named_[name] = idx;
    return Var{idx};
  }

  Var constant(const Tensor& value) {
    Node n;
    n.op = Op::kConstant;
    n.shape = value.shape();
    n.value = value;
    n.has_value = true;
    return Var{push(std::move(n))};
  }

  Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

  // ---- linear algebra ----

  Var matmul(Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    if (na.shape.size() != 2 || nb.shape.size() != 2)
      throw GraphError(std::string("matmul: operands must be 2-D, got ") +
                       shape_str(na.shape) + " and " + shape_str(nb.shape));
    if (na.shape[1] != nb.shape[0])
      throw GraphError("matmul: inner extents differ, " + shape_str(na.shape) +
                       " x " + shape_str(nb.shape));
    return emit(Op::kMatMul, a.i, b.i, Shape{na.shape[0], nb.shape[1]});
  }

  Var transpose(Var a) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("transpose: operand must be 2-D, got " + shape_str(na.shape));
    return emit(Op::kTranspose, a.i, -1, Shape{na.shape[1], na.shape[0]});
  }

  // ---- elementwise binary (broadcast: equal | scalar | (m) vs (n, m)) ----

  Var add(Var a, Var b) { return binary(Op::kAdd, a, b); }
  Var sub(Var a, Var b) { return binary(Op::kSub, a, b); }
  Var mul(Var a, Var b) { return binary(Op::kMul, a, b); }
  Var div(Var a, Var b) { return binary(Op::kDiv, a, b); }

  // ---- elementwise unary ----

  Var neg(Var a) { return unary(Op::kNeg, a); }
  Var scale(Var a, double c) { return unary(Op::kScale, a, c); }
  Var add_const(Var a, double c) { return unary(Op::kAddConst, a, c); }
  Var relu(Var a) { return unary(Op::kRelu, a); }
  Var leaky_relu(Var a, double slope) { return unary(Op::kLeakyRelu, a, slope); }
  Var tanh(Var a) { return unary(Op::kTanh, a); }
  Var sigmoid(Var a) { return unary(Op::kSigmoid, a); }
  Var sqrt(Var a) { return unary(Op::kSqrt, a); }
  Var square(Var a) { return unary(Op::kSquare, a); }
  Var clip(Var a, double lo, double hi) {
    if (!(lo <= hi)) throw GraphError("clip: lo > hi");
    return unary(Op::kClip, a, lo, hi);
  }

  // Natural log on max(x, 1e-7); the gradient is zero below the floor.
  Var log(Var a) {
    Var c = clip(a, kLogFloor, std::numeric_limits<double>::infinity());
    return unary(Op::kLogCore, c);
  }

  // Row-wise softmax over the last axis of an (n, k) matrix.
  Var softmax(Var a) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("softmax: operand must be 2-D, got " + shape_str(na.shape));
    return emit(Op::kSoftmax, a.i, -1, na.shape);
  }

  // ---- reductions and shape movement ----

  Var sum_all(Var a) { return emit(Op::kSumAll, a.i, -1, Shape{}); }

  Var mean_all(Var a) {
    const Node& na = node_at(a);
    std::int64_t n = shape_numel(na.shape);
    if (n == 0) throw GraphError("mean_all: empty operand");
    return scale(sum_all(a), 1.0 / static_cast<double>(n));
  }

  Var sum_cols(Var a) {  // (n, m) -> (n)
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("sum_cols: operand must be 2-D, got " + shape_str(na.shape));
    return emit(Op::kSumCols, a.i, -1, Shape{na.shape[0]});
  }

  Var sum_rows(Var a) {  // (n, m) -> (m)
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("sum_rows: operand must be 2-D, got " + shape_str(na.shape));
    return emit(Op::kSumRows, a.i, -1, Shape{na.shape[1]});
  }

  Var broadcast_scalar(Var a, Shape target) {
    const Node& na = node_at(a);
    if (!na.shape.empty())
      throw GraphError("broadcast_scalar: operand must be a 0-D scalar, got " +
                       shape_str(na.shape));
    return emit(Op::kBroadcastScalar, a.i, -1, std::move(target));
  }

  Var broadcast_cols(Var a, int m) {  // (n) -> (n, m)
    const Node& na = node_at(a);
    if (na.shape.size() != 1)
      throw GraphError("broadcast_cols: operand must be 1-D, got " + shape_str(na.shape));
    if (m <= 0) throw GraphError("broadcast_cols: m must be positive");
    return emit(Op::kBroadcastCols, a.i, -1, Shape{na.shape[0], m});
  }

  Var broadcast_rows(Var a, int n) {  // (m) -> (n, m)
    const Node& na = node_at(a);
    if (na.shape.size() != 1)
      throw GraphError("broadcast_rows: operand must be 1-D, got " + shape_str(na.shape));
    if (n <= 0) throw GraphError("broadcast_rows: n must be positive");
    return emit(Op::kBroadcastRows, a.i, -1, Shape{n, na.shape[0]});
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw GraphError("concat_cols: no operands");
    int n = -1, total = 0;
    for (Var p : parts) {
      const Node& np = node_at(p);
      if (np.shape.size() != 2)
        throw GraphError("concat_cols: operands must be 2-D, got " + shape_str(np.shape));
      if (n < 0) n = np.shape[0];
      else if (np.shape[0] != n)
        throw GraphError("concat_cols: row counts differ (" + std::to_string(n) +
                         " vs " + std::to_string(np.shape[0]) + ")");
      total += np.shape[1];
    }
    Node node;
    node.op = Op::kConcatCols;
    for (Var p : parts) node.extra.push_back(p.i);
    node.shape = Shape{n, total};
    return finish(std::move(node));
  }

  Var slice_cols(Var a, int start, int len) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("slice_cols: operand must be 2-D, got " + shape_str(na.shape));
    if (start < 0 || len <= 0 || start + len > na.shape[1])
      throw GraphError("slice_cols: range [" + std::to_string(start) + ", " +
                       std::to_string(start + len) + ") outside " + shape_str(na.shape));
    Node n;
    n.op = Op::kSliceCols;
    n.a = a.i;
    n.i0 = start;
    n.i1 = len;
    n.shape = Shape{na.shape[0], len};
    return finish(std::move(n));
  }

  Var pad_cols(Var a, int start, int total) {
    const Node& na = node_at(a);
    if (na.shape.size() != 2)
      throw GraphError("pad_cols: operand must be 2-D, got " + shape_str(na.shape));
    if (start < 0 || start + na.shape[1] > total)
      throw GraphError("pad_cols: slice does not fit the target width");
    Node n;
    n.op = Op::kPadCols;
    n.a = a.i;
    n.i0 = start;
    n.shape = Shape{na.shape[0], total};
    return finish(std::move(n));
  }

  // ---- evaluation ----

  const Tensor& value(Var v) const {
    const Node& n = node_at(v);
    if (!n.has_value)
      throw GraphError("node " + std::to_string(v.i) + " (" + op_name(n.op) +
                       ") has no value; bind all placeholders via evaluate()", v.i);
    return n.value;
  }

  const Shape& shape_of(Var v) const { return node_at(v).shape; }
  std::size_t node_count() const { return nodes_.size(); }
  bool has_value(Var v) const { return node_at(v).has_value; }

  // Re-binds named leaves and replays the whole tape in order. Shapes must
  // match the declared leaf shapes. Returns the value at `out`.
  Tensor evaluate(const std::vector<std::pair<std::string, Tensor>>& bindings, Var out) {
    node_at(out);
    for (const auto& [name, tensor] : bindings) {
      auto it = named_.find(name);
      if (it == named_.end())
        throw GraphError("evaluate: no input named '" + name + "'");
      Node& leaf = nodes_[it->second];
      if (tensor.shape() != leaf.shape)
        throw GraphError("evaluate: input '" + name + "' expects shape " +
                         shape_str(leaf.shape) + ", got " + shape_str(tensor.shape()),
                         it->second);
      leaf.value = tensor;
      leaf.has_value = true;
    }
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      Node& n = nodes_[i];
      if (n.op == Op::kInput || n.op == Op::kConstant) {
        if (!n.has_value)
          throw GraphError("evaluate: input '" + n.name + "' is unbound",
                           static_cast<int>(i));
        continue;
      }
      recompute(n);
    }
    return value(out);
  }

  // Reverse sweep from a scalar node. Returns the gradient for every named
  // leaf that requires grad; leaves with no path to `out` get exact zeros.
  GradientMap backward(Var out) {
    std::vector<int> adj = build_adjoints(out);
    GradientMap grads;
    const std::size_t scanned = nodes_.size();
    for (std::size_t i = 0; i < scanned; ++i) {
      const Node& n = nodes_[i];
      if (n.op != Op::kInput || !n.requires_grad) continue;
      int ai = i < adj.size() ? adj[i] : -1;
      if (ai >= 0)
        grads[n.name] = value(Var{ai});
      else
        grads[n.name] = Tensor::zeros(n.shape);
    }
    return grads;
  }

  // Gradient of a scalar node with respect to one leaf, returned as a graph
  // node so it can participate in further expressions (and be differentiated
  // again). `wrt` must require grad.
  Var grad(Var out, Var wrt) {
    const Node& w = node_at(wrt);
    if (!w.needs_grad)
      throw GraphError("grad: target node does not require grad", wrt.i);
    std::vector<int> adj = build_adjoints(out);
    if (adj[wrt.i] >= 0) return Var{adj[wrt.i]};
    return constant(Tensor::zeros(w.shape));
  }

 private:
  struct Node {
    Op op = Op::kConstant;
    int a = -1, b = -1;
    std::vector<int> extra;   // concat operands
    double x0 = 0.0, x1 = 0.0;
    int i0 = 0, i1 = 0;
    Shape shape;
    std::string name;
    bool requires_grad = false;
    bool needs_grad = false;
    bool has_value = false;
    Tensor value;
  };

  const Node& node_at(Var v) const {
    if (v.i < 0 || v.i >= static_cast<int>(nodes_.size()))
      throw GraphError("invalid node reference " + std::to_string(v.i), v.i);
    return nodes_[v.i];
  }

  int push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
  }

  Var unary(Op op, Var a, double x0 = 0.0, double x1 = 0.0) {
    const Node& na = node_at(a);
    Node n;
    n.op = op;
    n.a = a.i;
    n.x0 = x0;
    n.x1 = x1;
    n.shape = na.shape;
    return Var{finish(std::move(n)).i};
  }

  // Broadcast legality for elementwise binaries; returns the output shape.
  static bool trailing_of(const Shape& small, const Shape& big) {
    return big.size() == 2 && small.size() == 1 && small[0] == big[1];
  }

  Var binary(Op op, Var a, Var b) {
    const Node& na = node_at(a);
    const Node& nb = node_at(b);
    Shape out;
    if (na.shape == nb.shape) out = na.shape;
    else if (nb.shape.empty()) out = na.shape;
    else if (na.shape.empty()) out = nb.shape;
    else if (trailing_of(nb.shape, na.shape)) out = na.shape;
    else if (trailing_of(na.shape, nb.shape)) out = nb.shape;
    else
      throw GraphError(std::string(op_name(op)) + ": shapes " + shape_str(na.shape) +
                       " and " + shape_str(nb.shape) + " do not broadcast");
    Node n;
    n.op = op;
    n.a = a.i;
    n.b = b.i;
    n.shape = std::move(out);
    return Var{finish(std::move(n)).i};
  }

  Var emit(Op op, int a, int b, Shape shape) {
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.shape = std::move(shape);
    return finish(std::move(n));
  }

  Var finish(Node&& n) {
    // Mask nodes are piecewise-constant: derivative zero almost everywhere,
    // so they never propagate grad requirements.
    bool mask = n.op == Op::kReluMask || n.op == Op::kLeakyMask || n.op == Op::kRangeMask;
    bool needs = false;
    bool ready = true;
    auto scan = [&](int idx) {
      if (idx < 0) return;
      needs = needs || nodes_[idx].needs_grad;
      ready = ready && nodes_[idx].has_value;
    };
    scan(n.a);
    scan(n.b);
    for (int e : n.extra) scan(e);
    n.needs_grad = mask ? false : needs;
    int idx = push(std::move(n));
    if (ready) recompute(nodes_[idx]);
    return Var{idx};
  }

  void recompute(Node& n) {
    if (n.op == Op::kInput || n.op == Op::kConstant) return;
    compute_value(n);
    n.has_value = true;
    if (!n.value.all_finite()) {
      int idx = static_cast<int>(&n - nodes_.data());
      throw GraphError(std::string("non-finite value produced by ") + op_name(n.op) +
                       " (node " + std::to_string(idx) + ")", idx);
    }
  }

  void compute_value(Node& n) {
    const auto val = [&](int idx) -> const std::vector<double>& {
      return nodes_[idx].value.data();
    };
    const auto shp = [&](int idx) -> const Shape& { return nodes_[idx].shape; };

    std::vector<double> out(static_cast<std::size_t>(shape_numel(n.shape)));

    auto ew2 = [&](auto f) {
      const Shape& sa = shp(n.a);
      const Shape& sb = shp(n.b);
      const auto& A = val(n.a);
      const auto& B = val(n.b);
      if (sa == sb) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
      } else if (sb.empty()) {
        double s = B[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], s);
      } else if (sa.empty()) {
        double s = A[0];
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(s, B[i]);
      } else if (trailing_of(sb, sa)) {
        std::int64_t rows = sa[0], m = sa[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j)
            out[i * m + j] = f(A[i * m + j], B[j]);
      } else {  // trailing_of(sa, sb)
        std::int64_t rows = sb[0], m = sb[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j)
            out[i * m + j] = f(A[j], B[i * m + j]);
      }
    };

    auto ew1 = [&](auto f) {
      const auto& A = val(n.a);
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i]);
    };

    switch (n.op) {
      case Op::kMatMul: {
        const auto& A = val(n.a);
        const auto& B = val(n.b);
        std::int64_t rows = shp(n.a)[0], k = shp(n.a)[1], m = shp(n.b)[1];
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* arow = A.data() + i * k;
          double* orow = out.data() + i * m;
          for (std::int64_t kk = 0; kk < k; ++kk) {
            const double aik = arow[kk];
            const double* brow = B.data() + kk * m;
            for (std::int64_t j = 0; j < m; ++j) orow[j] += aik * brow[j];
          }
        }
        break;
      }
      case Op::kTranspose: {
        const auto& A = val(n.a);
        std::int64_t rows = shp(n.a)[0], cols = shp(n.a)[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < cols; ++j) out[j * rows + i] = A[i * cols + j];
        break;
      }
      case Op::kAdd: ew2([](double x, double y) { return x + y; }); break;
      case Op::kSub: ew2([](double x, double y) { return x - y; }); break;
      case Op::kMul: ew2([](double x, double y) { return x * y; }); break;
      case Op::kDiv: ew2([](double x, double y) { return x / y; }); break;
      case Op::kNeg: ew1([](double x) { return -x; }); break;
      case Op::kScale: ew1([c = n.x0](double x) { return c * x; }); break;
      case Op::kAddConst: ew1([c = n.x0](double x) { return x + c; }); break;
      case Op::kRelu: ew1([](double x) { return x > 0.0 ? x : 0.0; }); break;
      case Op::kLeakyRelu:
        ew1([s = n.x0](double x) { return x > 0.0 ? x : s * x; });
        break;
      case Op::kTanh: ew1([](double x) { return std::tanh(x); }); break;
      case Op::kSigmoid:
        ew1([](double x) {
          if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
          double e = std::exp(x);
          return e / (1.0 + e);
        });
        break;
      case Op::kSoftmax: {
        const auto& A = val(n.a);
        std::int64_t rows = n.shape[0], m = n.shape[1];
        for (std::int64_t i = 0; i < rows; ++i) {
          const double* arow = A.data() + i * m;
          double* orow = out.data() + i * m;
          double mx = arow[0];
          for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, arow[j]);
          double sum = 0.0;
          for (std::int64_t j = 0; j < m; ++j) {
            orow[j] = std::exp(arow[j] - mx);
            sum += orow[j];
          }
          for (std::int64_t j = 0; j < m; ++j) orow[j] /= sum;
        }
        break;
      }
      case Op::kLogCore: ew1([](double x) { return std::log(x); }); break;
      case Op::kSqrt: ew1([](double x) { return std::sqrt(x); }); break;
      case Op::kSquare: ew1([](double x) { return x * x; }); break;
      case Op::kClip:
        ew1([lo = n.x0, hi = n.x1](double x) { return std::min(std::max(x, lo), hi); });
        break;
      case Op::kReluMask: ew1([](double x) { return x > 0.0 ? 1.0 : 0.0; }); break;
      case Op::kLeakyMask:
        ew1([s = n.x0](double x) { return x > 0.0 ? 1.0 : s; });
        break;
      case Op::kRangeMask:
        ew1([lo = n.x0, hi = n.x1](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
        break;
      case Op::kSumAll: {
        const auto& A = val(n.a);
        double s = 0.0;
        for (double v : A) s += v;
        out[0] = s;
        break;
      }
      case Op::kSumCols: {
        const auto& A = val(n.a);
        std::int64_t rows = shp(n.a)[0], m = shp(n.a)[1];
        for (std::int64_t i = 0; i < rows; ++i) {
          double s = 0.0;
          for (std::int64_t j = 0; j < m; ++j) s += A[i * m + j];
          out[i] = s;
        }
        break;
      }
      case Op::kSumRows: {
        const auto& A = val(n.a);
        std::int64_t rows = shp(n.a)[0], m = shp(n.a)[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j) out[j] += A[i * m + j];
        break;
      }
      case Op::kBroadcastScalar: {
        double s = val(n.a)[0];
        std::fill(out.begin(), out.end(), s);
        break;
      }
      case Op::kBroadcastCols: {
        const auto& A = val(n.a);
        std::int64_t rows = n.shape[0], m = n.shape[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j) out[i * m + j] = A[i];
        break;
      }
      case Op::kBroadcastRows: {
        const auto& A = val(n.a);
        std::int64_t rows = n.shape[0], m = n.shape[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j) out[i * m + j] = A[j];
        break;
      }
      case Op::kConcatCols: {
        std::int64_t rows = n.shape[0], total = n.shape[1];
        std::int64_t off = 0;
        for (int e : n.extra) {
          const auto& A = val(e);
          std::int64_t m = shp(e)[1];
          for (std::int64_t i = 0; i < rows; ++i)
            for (std::int64_t j = 0; j < m; ++j) out[i * total + off + j] = A[i * m + j];
          off += m;
        }
        break;
      }
      case Op::kSliceCols: {
        const auto& A = val(n.a);
        std::int64_t rows = n.shape[0], len = n.shape[1], m = shp(n.a)[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < len; ++j) out[i * len + j] = A[i * m + n.i0 + j];
        break;
      }
      case Op::kPadCols: {
        const auto& A = val(n.a);
        std::int64_t rows = n.shape[0], total = n.shape[1], m = shp(n.a)[1];
        for (std::int64_t i = 0; i < rows; ++i)
          for (std::int64_t j = 0; j < m; ++j) out[i * total + n.i0 + j] = A[i * m + j];
        break;
      }
      case Op::kInput:
      case Op::kConstant:
        return;
    }
    n.value = Tensor(n.shape, std::move(out));
  }

  Var relu_mask(Var a) { return unary(Op::kReluMask, a); }
  Var leaky_mask(Var a, double slope) { return unary(Op::kLeakyMask, a, slope); }
  Var range_mask(Var a, double lo, double hi) { return unary(Op::kRangeMask, a, lo, hi); }

  // Undo elementwise broadcasting: reduce `v` back to `target` shape.
  Var reduce_to(Var v, const Shape& target) {
    if (shape_of(v) == target) return v;
    if (target.empty()) return sum_all(v);
    if (shape_of(v).size() == 2 && target.size() == 1 && target[0] == shape_of(v)[1])
      return sum_rows(v);
    throw GraphError("internal: cannot reduce " + shape_str(shape_of(v)) + " to " +
                     shape_str(target));
  }

  // Emits vector-Jacobian product nodes for every ancestor of `out` that
  // needs a gradient. Returns adjoint node index per node (-1 where none).
  // Indexing is frozen at `out`: nodes appended by this sweep are adjoint
  // nodes and get no adjoints themselves here.
  std::vector<int> build_adjoints(Var out) {
    const Node& no = node_at(out);
    if (!no.has_value)
      throw GraphError("backward: graph not evaluated at node " + std::to_string(out.i) +
                       "; call evaluate() first", out.i);
    if (shape_numel(no.shape) != 1)
      throw GraphError("backward: output must be scalar, got " + shape_str(no.shape), out.i);

    const int top = out.i;
    std::vector<char> anc(top + 1, 0);
    {
      std::vector<int> stack{top};
      anc[top] = 1;
      while (!stack.empty()) {
        int i = stack.back();
        stack.pop_back();
        const Node& n = nodes_[i];
        auto visit = [&](int o) {
          if (o >= 0 && !anc[o]) {
            anc[o] = 1;
            stack.push_back(o);
          }
        };
        visit(n.a);
        visit(n.b);
        for (int e : n.extra) visit(e);
      }
    }

    std::vector<int> adj(top + 1, -1);
    adj[top] = constant(Tensor::ones(no.shape)).i;

    auto acc = [&](int target, Var contrib) {
      if (target < 0 || !nodes_[target].needs_grad) return;
      adj[target] = adj[target] < 0 ? contrib.i : add(Var{adj[target]}, contrib).i;
    };

    for (int i = top; i >= 0; --i) {
      if (!anc[i] || adj[i] < 0 || !nodes_[i].needs_grad) continue;
      Var g{adj[i]};
      Var y{i};
      // Copy the operand indices before emitting: emitting may reallocate nodes_.
      const Op op = nodes_[i].op;
      const int a = nodes_[i].a, b = nodes_[i].b;
      const double x0 = nodes_[i].x0, x1 = nodes_[i].x1;
      const int i0 = nodes_[i].i0;
      const std::vector<int> extra = nodes_[i].extra;
      const Shape sa = a >= 0 ? nodes_[a].shape : Shape{};
      const Shape sb = b >= 0 ? nodes_[b].shape : Shape{};

      switch (op) {
        case Op::kInput:
        case Op::kConstant:
        case Op::kReluMask:
        case Op::kLeakyMask:
        case Op::kRangeMask:
          break;
        case Op::kMatMul:
          acc(a, matmul(g, transpose(Var{b})));
          acc(b, matmul(transpose(Var{a}), g));
          break;
        case Op::kTranspose:
          acc(a, transpose(g));
          break;
        case Op::kAdd:
          acc(a, reduce_to(g, sa));
          acc(b, reduce_to(g, sb));
          break;
        case Op::kSub:
          acc(a, reduce_to(g, sa));
          acc(b, reduce_to(neg(g), sb));
          break;
        case Op::kMul:
          if (nodes_[a].needs_grad) acc(a, reduce_to(mul(g, Var{b}), sa));
          if (nodes_[b].needs_grad) acc(b, reduce_to(mul(g, Var{a}), sb));
          break;
        case Op::kDiv:
          if (nodes_[a].needs_grad) acc(a, reduce_to(div(g, Var{b}), sa));
          if (nodes_[b].needs_grad)
            acc(b, reduce_to(neg(div(mul(g, Var{a}), square(Var{b}))), sb));
          break;
        case Op::kNeg: acc(a, neg(g)); break;
        case Op::kScale: acc(a, scale(g, x0)); break;
        case Op::kAddConst: acc(a, g); break;
        case Op::kRelu: acc(a, mul(g, relu_mask(Var{a}))); break;
        case Op::kLeakyRelu: acc(a, mul(g, leaky_mask(Var{a}, x0))); break;
        case Op::kTanh:
          acc(a, mul(g, add_const(neg(square(y)), 1.0)));
          break;
        case Op::kSigmoid:
          acc(a, mul(g, mul(y, add_const(neg(y), 1.0))));
          break;
        case Op::kSoftmax: {
          Var dot = sum_cols(mul(g, y));
          acc(a, mul(y, sub(g, broadcast_cols(dot, nodes_[i].shape[1]))));
          break;
        }
        case Op::kLogCore: acc(a, div(g, Var{a})); break;
        case Op::kSqrt: acc(a, div(scale(g, 0.5), y)); break;
        case Op::kSquare: acc(a, mul(g, scale(Var{a}, 2.0))); break;
        case Op::kClip: acc(a, mul(g, range_mask(Var{a}, x0, x1))); break;
        case Op::kSumAll: acc(a, broadcast_scalar(g, sa)); break;
        case Op::kSumCols: acc(a, broadcast_cols(g, sa[1])); break;
        case Op::kSumRows: acc(a, broadcast_rows(g, sa[0])); break;
        case Op::kBroadcastScalar: acc(a, reduce_to(sum_all(g), sa)); break;
        case Op::kBroadcastCols: acc(a, sum_cols(g)); break;
        case Op::kBroadcastRows: acc(a, sum_rows(g)); break;
        case Op::kConcatCols: {
          int off = 0;
          for (int e : extra) {
            int w = nodes_[e].shape[1];
            if (nodes_[e].needs_grad) acc(e, slice_cols(g, off, w));
            off += w;
          }
          break;
        }
        case Op::kSliceCols: acc(a, pad_cols(g, i0, sa[1])); break;
        case Op::kPadCols: acc(a, slice_cols(g, i0, sa[1])); break;
      }
    }
    return adj;
  }

  std::vector<Node> nodes_;
  std::map<std::string, int> named_;
};

}  // namespace ganbench
