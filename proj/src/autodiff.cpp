#include "popmech/autodiff.hpp"

#include <cmath>
#include <string>

#include "popmech/errors.hpp"
#include "popmech/ops.hpp"

namespace popmech::ad {

namespace {

// Reduce `gbar` (shaped like the broadcast target) back to `in_shape`:
// sum away the padded leading axes, then sum the expanded size-1 axes.
// `in_shape` is taken by value: emitting ops below can reallocate the
// graph's node storage, which would invalidate a reference into it.
Var reduce_like(Var gbar, std::vector<std::size_t> in_shape) {
  while (gbar.value().rank() > in_shape.size()) gbar = sum(gbar, 0, false);
  for (std::size_t d = 0; d < in_shape.size(); ++d)
    if (in_shape[d] == 1 && gbar.shape()[d] != 1)
      gbar = sum(gbar, static_cast<long>(d), true);
  if (gbar.value().rank() == 0 && !in_shape.empty())
    gbar = reshape(gbar, in_shape);
  return gbar;
}

std::vector<std::size_t> keepdims_shape(const std::vector<std::size_t>& in,
                                        long axis) {
  std::vector<std::size_t> s = in;
  s[axis] = 1;
  return s;
}

// Gradients of `node` w.r.t. each of its inputs given upstream `gbar`.
// Emitted with graph ops so that create_graph can differentiate through
// them again.
std::vector<Var> vjp(Graph& g, std::uint32_t node_id, Var gbar) {
  // Copy the node's fields before emitting anything: every op below appends
  // to the graph and can reallocate its node storage, so a held Node& (or a
  // reference into its attrs/inputs) would dangle mid-backward.
  const OpKind op = g.node(node_id).op;
  const Attrs attrs = g.node(node_id).attrs;
  const std::vector<std::uint32_t> input_ids = g.node(node_id).inputs;
  Var out(&g, node_id);
  std::vector<Var> in;
  in.reserve(input_ids.size());
  for (std::uint32_t id : input_ids) in.emplace_back(&g, id);

  switch (op) {
    case OpKind::Add:
      return {gbar, gbar};
    case OpKind::Sub:
      return {gbar, neg(gbar)};
    case OpKind::Mul:
      return {mul(gbar, in[1]), mul(gbar, in[0])};
    case OpKind::Div:
      return {div(gbar, in[1]), neg(div(mul(gbar, out), in[1]))};
    case OpKind::Neg:
      return {neg(gbar)};
    case OpKind::Matmul:
      return {matmul(gbar, transpose(in[1])), matmul(transpose(in[0]), gbar)};
    case OpKind::Transpose:
      return {transpose(gbar)};
    case OpKind::Reshape:
      return {reshape(gbar, in[0].shape())};
    case OpKind::Concat: {
      std::vector<Var> grads;
      long off = 0;
      for (const Var& v : in) {
        long ext = static_cast<long>(v.shape()[attrs.axis]);
        grads.push_back(slice(gbar, attrs.axis, off, off + ext));
        off += ext;
      }
      return grads;
    }
    case OpKind::Slice: {
      // Zero-pad the gradient back into the input extent.
      const std::vector<std::size_t> ishape = in[0].shape();
      long dim = static_cast<long>(ishape[attrs.axis]);
      std::vector<Var> parts;
      if (attrs.start > 0) {
        auto s = ishape;
        s[attrs.axis] = static_cast<std::size_t>(attrs.start);
        parts.push_back(g.constant(Array::zeros(s)));
      }
      parts.push_back(gbar);
      if (attrs.stop < dim) {
        auto s = ishape;
        s[attrs.axis] = static_cast<std::size_t>(dim - attrs.stop);
        parts.push_back(g.constant(Array::zeros(s)));
      }
      if (parts.size() == 1) return {gbar};
      return {concat(parts, attrs.axis)};
    }
    case OpKind::SumAll:
      return {broadcast_to(gbar, in[0].shape())};
    case OpKind::SumAxis: {
      Var gk = attrs.keepdims
                   ? gbar
                   : reshape(gbar, keepdims_shape(in[0].shape(), attrs.axis));
      return {broadcast_to(gk, in[0].shape())};
    }
    case OpKind::Broadcast:
      return {reduce_like(gbar, in[0].shape())};
    case OpKind::Exp:
      return {mul(gbar, out)};
    case OpKind::Log:
      return {div(gbar, in[0])};
    case OpKind::Power: {
      double p = attrs.scalar;
      return {mul(gbar, mul(pow(in[0], p - 1.0), g.scalar(p)))};
    }
    case OpKind::Tanh:
      return {mul(gbar, sub(g.scalar(1.0), mul(out, out)))};
    case OpKind::Sqrt:
      return {div(mul(gbar, g.scalar(0.5)), out)};
    case OpKind::ClampMin: {
      // Subgradient: pass where the input was not clamped (>= bound).
      const Array& x = in[0].value();
      Array mask(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i)
        mask[i] = x[i] >= attrs.scalar ? 1.0 : 0.0;
      return {mul(gbar, g.constant(std::move(mask)))};
    }
    case OpKind::Softmax: {
      Var gy = mul(gbar, out);
      Var s = sum(gy, attrs.axis, true);
      return {mul(out, sub(gbar, broadcast_to(s, out.shape())))};
    }
    case OpKind::LogSumExp: {
      auto kshape = keepdims_shape(in[0].shape(), attrs.axis);
      Var yk = attrs.keepdims ? out : reshape(out, kshape);
      Var gk = attrs.keepdims ? gbar : reshape(gbar, kshape);
      Var w = exp(sub(in[0], broadcast_to(yk, in[0].shape())));
      return {mul(broadcast_to(gk, in[0].shape()), w)};
    }
    case OpKind::Leaf:
    case OpKind::Constant:
      return {};
  }
  return {};
}

}  // namespace

std::vector<Var> grad(Var output, std::span<const Var> wrt,
                      const GradOptions& opt) {
  if (!output.valid()) throw Error("grad: null output");
  Graph& g = *output.graph();
  if (output.size() != 1)
    throw ShapeError("grad: output must be a scalar, got shape " +
                     shape_str(output.shape()));
  for (std::size_t k = 0; k < wrt.size(); ++k)
    if (!wrt[k].valid() || wrt[k].graph() != &g)
      throw Error("grad: wrt #" + std::to_string(k) +
                  " does not belong to the output's graph");

  const std::uint32_t out_id = output.id();

  // Nodes with an adjoint: ancestors of the output along requires_grad paths.
  std::vector<std::uint8_t> needed(out_id + 1, 0);
  if (g.node(out_id).requires_grad) needed[out_id] = 1;
  for (std::uint32_t id = out_id;; --id) {
    if (needed[id])
      for (std::uint32_t p : g.node(id).inputs)
        if (g.node(p).requires_grad) needed[p] = 1;
    if (id == 0) break;
  }

  RecordingGuard rec(g, opt.create_graph);

  std::vector<Var> adj(out_id + 1);
  if (needed[out_id])
    adj[out_id] = g.constant(Array::full(output.shape(), 1.0));

  for (std::uint32_t id = out_id;; --id) {
    if (needed[id] && adj[id].valid()) {
      // Copy: vjp and the add() below append nodes, which can reallocate
      // the graph's storage and invalidate references into this node.
      const std::vector<std::uint32_t> inputs = g.node(id).inputs;
      if (!inputs.empty()) {
        std::vector<Var> gs = vjp(g, id, adj[id]);
        for (std::size_t k = 0; k < inputs.size(); ++k) {
          std::uint32_t p = inputs[k];
          if (!g.node(p).requires_grad || !needed[p]) continue;
          adj[p] = adj[p].valid() ? add(adj[p], gs[k]) : gs[k];
        }
      }
    }
    if (id == 0) break;
  }

  std::vector<Var> result;
  result.reserve(wrt.size());
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    const Var& w = wrt[k];
    bool reachable = w.id() <= out_id && needed[w.id()] && adj[w.id()].valid();
    if (reachable) {
      result.push_back(adj[w.id()]);
    } else if (opt.allow_unused) {
      result.push_back(g.constant(Array::zeros(w.shape())));
    } else {
      throw Error("grad: output does not depend on wrt #" + std::to_string(k) +
                  (w.requires_grad()
                       ? " (unreachable from the output)"
                       : " (it does not require grad)") +
                  "; pass allow_unused to get zeros");
    }
  }
  return result;
}

GradCheckReport check_grad(const ScalarFn& fn, std::span<const Array> point,
                           double step) {
  Graph g;
  std::vector<Var> leaves;
  leaves.reserve(point.size());
  for (const Array& a : point) leaves.push_back(g.leaf(a, true));
  Var y = fn(g, leaves);
  GradOptions opt;
  opt.allow_unused = true;
  std::vector<Var> grads = grad(y, leaves, opt);

  auto eval_at = [&](std::size_t arg, std::size_t idx, double v) {
    Graph h;
    std::vector<Var> ls;
    ls.reserve(point.size());
    for (std::size_t a = 0; a < point.size(); ++a) {
      Array shifted = point[a];
      if (a == arg) shifted[idx] = v;
      ls.push_back(h.leaf(std::move(shifted), false));
    }
    return fn(h, ls).value().item();
  };

  GradCheckReport rep;
  for (std::size_t a = 0; a < point.size(); ++a) {
    const Array& x = point[a];
    for (std::size_t i = 0; i < x.size(); ++i) {
      double fp = eval_at(a, i, x[i] + step);
      double fm = eval_at(a, i, x[i] - step);
      double fd = (fp - fm) / (2.0 * step);
      double ad = grads[a].value()[i];
      double denom = std::max({1.0, std::fabs(ad), std::fabs(fd)});
      double err = std::fabs(ad - fd) / denom;
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.arg = a;
        rep.index = i;
        rep.ad = ad;
        rep.fd = fd;
      }
    }
  }
  return rep;
}

}  // namespace popmech::ad
