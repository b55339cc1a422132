#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "popmech/errors.hpp"
#include "popmech/ops.hpp"

namespace popmech::ad {

const char* op_name(OpKind op) {
  switch (op) {
    case OpKind::Leaf: return "leaf";
    case OpKind::Constant: return "constant";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Div: return "div";
    case OpKind::Neg: return "negate";
    case OpKind::Matmul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::Reshape: return "reshape";
    case OpKind::Concat: return "concat";
    case OpKind::Slice: return "slice";
    case OpKind::SumAll: return "sum";
    case OpKind::SumAxis: return "sum-axis";
    case OpKind::Broadcast: return "broadcast";
    case OpKind::Exp: return "exp";
    case OpKind::Log: return "log";
    case OpKind::Power: return "power";
    case OpKind::Tanh: return "tanh";
    case OpKind::Sqrt: return "sqrt";
    case OpKind::ClampMin: return "minimum-clamp";
    case OpKind::Softmax: return "softmax";
    case OpKind::LogSumExp: return "log-sum-exp";
  }
  return "?";
}

namespace {

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void shape_fail(OpKind op, const std::string& detail) {
  throw ShapeError(std::string(op_name(op)) + ": " + detail);
}

void expect_arity(OpKind op, std::span<const Var> in, std::size_t n) {
  if (in.size() != n)
    shape_fail(op, "expected " + std::to_string(n) + " inputs, got " +
                       std::to_string(in.size()));
}

long normalize_axis(OpKind op, long axis, std::size_t rank) {
  long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r)
    shape_fail(op, "axis " + std::to_string(axis) + " out of range for rank " +
                       std::to_string(rank));
  return axis;
}

// Decompose a shape around `axis` into (outer, len, inner) extents.
void axis_split(const std::vector<std::size_t>& shape, long axis,
                std::size_t& outer, std::size_t& len, std::size_t& inner) {
  outer = 1;
  inner = 1;
  for (long d = 0; d < axis; ++d) outer *= shape[d];
  len = shape[axis];
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
}

Array ew_binary(OpKind op, const Array& a, const Array& b) {
  if (!a.same_shape(b))
    shape_fail(op, "shape mismatch " + shape_str(a.shape()) + " vs " +
                       shape_str(b.shape()));
  Array out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  std::size_t n = a.size();
  switch (op) {
    case OpKind::Add:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      break;
    case OpKind::Sub:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      break;
    case OpKind::Mul:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      break;
    case OpKind::Div:
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
      break;
    default:
      shape_fail(op, "not a binary elementwise op");
  }
  return out;
}

Array eval_matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2)
    shape_fail(OpKind::Matmul, "needs 2-D operands, got " +
                                   shape_str(a.shape()) + " and " +
                                   shape_str(b.shape()));
  std::size_t m = a.shape()[0], k = a.shape()[1];
  std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2)
    shape_fail(OpKind::Matmul, "inner dimensions differ: " +
                                   shape_str(a.shape()) + " vs " +
                                   shape_str(b.shape()));
  Array out({m, n});
  Eigen::Map<const RowMat> A(a.data(), static_cast<long>(m),
                             static_cast<long>(k));
  Eigen::Map<const RowMat> B(b.data(), static_cast<long>(k),
                             static_cast<long>(n));
  Eigen::Map<RowMat> C(out.data(), static_cast<long>(m),
                       static_cast<long>(n));
  C.noalias() = A * B;
  return out;
}

Array eval_transpose(const Array& a) {
  if (a.rank() != 2)
    shape_fail(OpKind::Transpose, "needs a 2-D operand, got " +
                                      shape_str(a.shape()));
  std::size_t m = a.shape()[0], n = a.shape()[1];
  Array out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

Array eval_concat(std::span<const Var> in, long axis) {
  const auto& s0 = in[0].value().shape();
  std::size_t rank = s0.size();
  std::size_t total = 0;
  for (const Var& v : in) {
    const auto& s = v.value().shape();
    if (s.size() != rank)
      shape_fail(OpKind::Concat, "rank mismatch " + shape_str(s0) + " vs " +
                                     shape_str(s));
    for (std::size_t d = 0; d < rank; ++d)
      if (static_cast<long>(d) != axis && s[d] != s0[d])
        shape_fail(OpKind::Concat, "shape mismatch off the concat axis: " +
                                       shape_str(s0) + " vs " + shape_str(s));
    total += s[axis];
  }
  std::vector<std::size_t> oshape = s0;
  oshape[axis] = total;
  Array out(oshape);
  std::size_t outer, len, inner;
  axis_split(oshape, axis, outer, len, inner);
  std::size_t offset = 0;
  for (const Var& v : in) {
    const Array& a = v.value();
    std::size_t li = a.shape()[axis];
    for (std::size_t o = 0; o < outer; ++o)
      std::copy(a.data() + o * li * inner, a.data() + (o + 1) * li * inner,
                out.data() + (o * len + offset) * inner);
    offset += li;
  }
  return out;
}

Array eval_slice(const Array& a, long axis, long start, long stop) {
  long dim = static_cast<long>(a.shape()[axis]);
  if (start < 0 || stop <= start || stop > dim)
    shape_fail(OpKind::Slice, "range [" + std::to_string(start) + "," +
                                  std::to_string(stop) + ") invalid for axis " +
                                  std::to_string(axis) + " of " +
                                  shape_str(a.shape()));
  std::vector<std::size_t> oshape = a.shape();
  oshape[axis] = static_cast<std::size_t>(stop - start);
  Array out(oshape);
  std::size_t outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  std::size_t olen = oshape[axis];
  for (std::size_t o = 0; o < outer; ++o)
    std::copy(a.data() + (o * len + start) * inner,
              a.data() + (o * len + start + olen) * inner,
              out.data() + o * olen * inner);
  return out;
}

Array eval_sum_axis(const Array& a, long axis, bool keepdims) {
  std::size_t outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  std::vector<std::size_t> oshape;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (static_cast<long>(d) == axis) {
      if (keepdims) oshape.push_back(1);
    } else {
      oshape.push_back(a.shape()[d]);
    }
  }
  Array out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) s += a[(o * len + k) * inner + i];
      out[o * inner + i] = s;
    }
  return out;
}

// Right-aligned broadcast compatibility; returns the padded input shape.
std::vector<std::size_t> padded_for_broadcast(
    const std::vector<std::size_t>& in, const std::vector<std::size_t>& target) {
  if (in.size() > target.size())
    shape_fail(OpKind::Broadcast, "input rank exceeds target: " +
                                      shape_str(in) + " vs " +
                                      shape_str(target));
  std::vector<std::size_t> padded(target.size(), 1);
  std::size_t off = target.size() - in.size();
  for (std::size_t d = 0; d < in.size(); ++d) padded[off + d] = in[d];
  for (std::size_t d = 0; d < target.size(); ++d)
    if (padded[d] != target[d] && padded[d] != 1)
      shape_fail(OpKind::Broadcast, "cannot broadcast " + shape_str(in) +
                                        " to " + shape_str(target));
  return padded;
}

Array eval_broadcast(const Array& a, const std::vector<std::size_t>& target) {
  std::vector<std::size_t> padded = padded_for_broadcast(a.shape(), target);
  std::size_t rank = target.size();
  Array out(target);
  if (a.size() == 1) {
    double v = a[0];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = v;
    return out;
  }
  // Strides of the padded input, zeroed on broadcast axes.
  std::vector<std::size_t> istride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t d = rank; d-- > 0;) {
    istride[d] = (padded[d] == 1) ? 0 : acc;
    if (padded[d] != 1) acc *= padded[d];
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t in_off = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[in_off];
    for (std::size_t d = rank; d-- > 0;) {
      idx[d]++;
      in_off += istride[d];
      if (idx[d] < target[d]) break;
      in_off -= istride[d] * target[d];
      idx[d] = 0;
    }
  }
  return out;
}

Array eval_unary(OpKind op, const Array& a, double attr_scalar) {
  Array out(a.shape());
  std::size_t n = a.size();
  switch (op) {
    case OpKind::Neg:
      for (std::size_t i = 0; i < n; ++i) out[i] = -a[i];
      break;
    case OpKind::Exp:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]);
      break;
    case OpKind::Log:
      for (std::size_t i = 0; i < n; ++i) {
        if (a[i] <= 0.0)
          throw DomainError("log: non-positive argument " +
                            std::to_string(a[i]) + " at flat index " +
                            std::to_string(i));
        out[i] = std::log(a[i]);
      }
      break;
    case OpKind::Sqrt:
      for (std::size_t i = 0; i < n; ++i) {
        if (a[i] < 0.0)
          throw DomainError("sqrt: negative argument " + std::to_string(a[i]) +
                            " at flat index " + std::to_string(i));
        out[i] = std::sqrt(a[i]);
      }
      break;
    case OpKind::Tanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
      break;
    case OpKind::Power: {
      double p = attr_scalar;
      bool integral = p == std::floor(p);
      for (std::size_t i = 0; i < n; ++i) {
        if (!integral && a[i] < 0.0)
          throw DomainError("power: negative base " + std::to_string(a[i]) +
                            " with non-integer exponent " + std::to_string(p));
        out[i] = std::pow(a[i], p);
      }
      break;
    }
    case OpKind::ClampMin:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::max(a[i], attr_scalar);
      break;
    default:
      shape_fail(op, "not a unary elementwise op");
  }
  return out;
}

Array eval_softmax(const Array& a, long axis) {
  std::size_t outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  Array out(a.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * len * inner + i;
      double m = a[base];
      for (std::size_t k = 1; k < len; ++k)
        m = std::max(m, a[base + k * inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k) {
        double e = std::exp(a[base + k * inner] - m);
        out[base + k * inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] /= s;
    }
  return out;
}

Array eval_logsumexp(const Array& a, long axis, bool keepdims) {
  std::size_t outer, len, inner;
  axis_split(a.shape(), axis, outer, len, inner);
  std::vector<std::size_t> oshape;
  for (std::size_t d = 0; d < a.rank(); ++d) {
    if (static_cast<long>(d) == axis) {
      if (keepdims) oshape.push_back(1);
    } else {
      oshape.push_back(a.shape()[d]);
    }
  }
  Array out(oshape);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      std::size_t base = o * len * inner + i;
      double m = a[base];
      for (std::size_t k = 1; k < len; ++k)
        m = std::max(m, a[base + k * inner]);
      if (!std::isfinite(m)) {
        // All -inf reduces to -inf; a +-inf mix falls through to NaN.
        out[o * inner + i] = m;
        continue;
      }
      double s = 0.0;
      for (std::size_t k = 0; k < len; ++k)
        s += std::exp(a[base + k * inner] - m);
      out[o * inner + i] = m + std::log(s);
    }
  return out;
}

Array eval_op(OpKind op, std::span<const Var> in, Attrs& attrs) {
  switch (op) {
    case OpKind::Leaf:
    case OpKind::Constant:
      shape_fail(op, "cannot be applied; use Graph::leaf/constant");
    case OpKind::Add:
    case OpKind::Sub:
    case OpKind::Mul:
    case OpKind::Div:
      expect_arity(op, in, 2);
      return ew_binary(op, in[0].value(), in[1].value());
    case OpKind::Neg:
    case OpKind::Exp:
    case OpKind::Log:
    case OpKind::Sqrt:
    case OpKind::Tanh:
    case OpKind::Power:
    case OpKind::ClampMin:
      expect_arity(op, in, 1);
      return eval_unary(op, in[0].value(), attrs.scalar);
    case OpKind::Matmul:
      expect_arity(op, in, 2);
      return eval_matmul(in[0].value(), in[1].value());
    case OpKind::Transpose:
      expect_arity(op, in, 1);
      return eval_transpose(in[0].value());
    case OpKind::Reshape: {
      expect_arity(op, in, 1);
      const Array& a = in[0].value();
      if (shape_size(attrs.shape) != a.size())
        shape_fail(op, "cannot reshape " + shape_str(a.shape()) + " to " +
                           shape_str(attrs.shape));
      return Array(attrs.shape,
                   std::vector<double>(a.data(), a.data() + a.size()));
    }
    case OpKind::Concat: {
      if (in.empty()) shape_fail(op, "needs at least one input");
      attrs.axis = normalize_axis(op, attrs.axis, in[0].value().rank());
      return eval_concat(in, attrs.axis);
    }
    case OpKind::Slice:
      expect_arity(op, in, 1);
      attrs.axis = normalize_axis(op, attrs.axis, in[0].value().rank());
      return eval_slice(in[0].value(), attrs.axis, attrs.start, attrs.stop);
    case OpKind::SumAll: {
      expect_arity(op, in, 1);
      const Array& a = in[0].value();
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
      return Array::scalar(s);
    }
    case OpKind::SumAxis:
      expect_arity(op, in, 1);
      attrs.axis = normalize_axis(op, attrs.axis, in[0].value().rank());
      return eval_sum_axis(in[0].value(), attrs.axis, attrs.keepdims);
    case OpKind::Broadcast:
      expect_arity(op, in, 1);
      return eval_broadcast(in[0].value(), attrs.shape);
    case OpKind::Softmax:
      expect_arity(op, in, 1);
      attrs.axis = normalize_axis(op, attrs.axis, in[0].value().rank());
      return eval_softmax(in[0].value(), attrs.axis);
    case OpKind::LogSumExp:
      expect_arity(op, in, 1);
      attrs.axis = normalize_axis(op, attrs.axis, in[0].value().rank());
      return eval_logsumexp(in[0].value(), attrs.axis, attrs.keepdims);
  }
  shape_fail(op, "unknown op");
}

}  // namespace

Var Graph::leaf(Array value, bool requires_grad) {
  Node n;
  n.op = OpKind::Leaf;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::constant(Array value) {
  Node n;
  n.op = OpKind::Constant;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Graph::apply(OpKind op, std::span<const Var> inputs, const Attrs& attrs) {
  Node n;
  n.attrs = attrs;
  for (const Var& v : inputs) {
    if (!v.valid() || v.graph() != this)
      throw Error(std::string(op_name(op)) +
                  ": input Var does not belong to this graph");
    n.inputs.push_back(v.id());
  }
  n.op = op;
  n.value = eval_op(op, inputs, n.attrs);
  if (recording_)
    for (const Var& v : inputs) n.requires_grad |= v.requires_grad();
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

// ---- typed wrappers ----

namespace {

std::vector<std::size_t> broadcast_target(OpKind op,
                                          const std::vector<std::size_t>& a,
                                          const std::vector<std::size_t>& b) {
  std::size_t rank = std::max(a.size(), b.size());
  std::vector<std::size_t> out(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    std::size_t da = d < rank - a.size() ? 1 : a[d - (rank - a.size())];
    std::size_t db = d < rank - b.size() ? 1 : b[d - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      shape_fail(op, "shapes " + shape_str(a) + " and " + shape_str(b) +
                         " do not broadcast");
    out[d] = std::max(da, db);
  }
  return out;
}

Var binary(OpKind op, Var a, Var b) {
  Graph& g = *a.graph();
  if (a.shape() != b.shape()) {
    auto target = broadcast_target(op, a.shape(), b.shape());
    if (a.shape() != target) a = broadcast_to(a, target);
    if (b.shape() != target) b = broadcast_to(b, target);
  }
  Var in[2] = {a, b};
  return g.apply(op, in);
}

Var unary(OpKind op, Var a, const Attrs& attrs = {}) {
  return a.graph()->apply(op, std::span<const Var>(&a, 1), attrs);
}

}  // namespace

Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }
Var div(Var a, Var b) { return binary(OpKind::Div, a, b); }
Var neg(Var a) { return unary(OpKind::Neg, a); }

Var matmul(Var a, Var b) {
  Var in[2] = {a, b};
  return a.graph()->apply(OpKind::Matmul, in);
}

Var transpose(Var a) { return unary(OpKind::Transpose, a); }

Var reshape(Var a, std::vector<std::size_t> shape) {
  Attrs at;
  at.shape = std::move(shape);
  return unary(OpKind::Reshape, a, at);
}

Var concat(std::span<const Var> parts, long axis) {
  if (parts.empty()) throw ShapeError("concat: needs at least one input");
  Attrs at;
  at.axis = axis;
  return parts[0].graph()->apply(OpKind::Concat, parts, at);
}

Var slice(Var a, long axis, long start, long stop) {
  Attrs at;
  at.axis = axis;
  at.start = start;
  at.stop = stop;
  return unary(OpKind::Slice, a, at);
}

Var sum(Var a) { return unary(OpKind::SumAll, a); }

Var sum(Var a, long axis, bool keepdims) {
  Attrs at;
  at.axis = axis;
  at.keepdims = keepdims;
  return unary(OpKind::SumAxis, a, at);
}

Var mean(Var a) {
  return sum(a) * (1.0 / static_cast<double>(a.size()));
}

Var mean(Var a, long axis, bool keepdims) {
  long ax = normalize_axis(OpKind::SumAxis, axis, a.value().rank());
  double n = static_cast<double>(a.shape()[ax]);
  return sum(a, ax, keepdims) * (1.0 / n);
}

Var broadcast_to(Var a, std::vector<std::size_t> shape) {
  Attrs at;
  at.shape = std::move(shape);
  return unary(OpKind::Broadcast, a, at);
}

Var exp(Var a) { return unary(OpKind::Exp, a); }
Var log(Var a) { return unary(OpKind::Log, a); }

Var pow(Var a, double p) {
  Attrs at;
  at.scalar = p;
  return unary(OpKind::Power, a, at);
}

Var tanh(Var a) { return unary(OpKind::Tanh, a); }
Var sqrt(Var a) { return unary(OpKind::Sqrt, a); }

Var clamp_min(Var a, double bound) {
  Attrs at;
  at.scalar = bound;
  return unary(OpKind::ClampMin, a, at);
}

Var softmax(Var a, long axis) {
  Attrs at;
  at.axis = axis;
  return unary(OpKind::Softmax, a, at);
}

Var logsumexp(Var a, long axis, bool keepdims) {
  Attrs at;
  at.axis = axis;
  at.keepdims = keepdims;
  return unary(OpKind::LogSumExp, a, at);
}

Var sigmoid(Var a) { return (tanh(a * 0.5) + 1.0) * 0.5; }

Var silu(Var a) { return a * sigmoid(a); }

Var layer_norm(Var a, double eps) {
  long ax = static_cast<long>(a.value().rank()) - 1;
  if (ax < 0) throw ShapeError("layer-normalize: needs rank >= 1");
  Var m = mean(a, ax, true);
  Var c = a - m;
  Var v = mean(c * c, ax, true);
  return c / sqrt(v + eps);
}

}  // namespace popmech::ad
