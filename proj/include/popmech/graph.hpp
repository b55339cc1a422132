#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "popmech/array.hpp"

namespace popmech::ad {

enum class OpKind {
  Leaf,
  Constant,
  Add,
  Sub,
  Mul,
  Div,
  Neg,
  Matmul,
  Transpose,
  Reshape,
  Concat,
  Slice,
  SumAll,
  SumAxis,
  Broadcast,
  Exp,
  Log,
  Power,
  Tanh,
  Sqrt,
  ClampMin,
  Softmax,
  LogSumExp,
};

const char* op_name(OpKind op);

// Per-node attributes; which fields are meaningful depends on the op.
struct Attrs {
  long axis = -1;                  // SumAxis, Concat, Slice, Softmax, LogSumExp
  bool keepdims = false;           // SumAxis, LogSumExp
  double scalar = 0.0;             // Power exponent, ClampMin bound
  std::vector<std::size_t> shape;  // Reshape / Broadcast target
  long start = 0;                  // Slice
  long stop = 0;                   // Slice
};

class Graph;

// Lightweight handle to a node in a Graph. Copyable; valid as long as the
// graph lives. A default-constructed Var is null and unusable.
class Var {
 public:
  Var() = default;
  Var(Graph* g, std::uint32_t id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Array& value() const;
  const std::vector<std::size_t>& shape() const { return value().shape(); }
  std::size_t size() const { return value().size(); }
  bool requires_grad() const;

 private:
  Graph* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

struct Node {
  OpKind op;
  Array value;
  std::vector<std::uint32_t> inputs;  // parent node ids
  Attrs attrs;
  bool requires_grad = false;
};

// Append-only expression graph. Node ids are topologically ordered by
// construction, which is what the reverse sweep in grad() relies on.
//
// `recording` controls whether new nodes participate in differentiation:
// while it is off, applied ops still produce values but their results are
// marked as not requiring grad. grad(create_graph=false) uses this to keep
// backward arithmetic out of any future differentiation.
class Graph {
 public:
  Var leaf(Array value, bool requires_grad = true);
  Var constant(Array value);
  Var scalar(double v) { return constant(Array::scalar(v)); }

  Var apply(OpKind op, std::span<const Var> inputs, const Attrs& attrs = {});

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  const Node& node(std::uint32_t id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
  bool recording_ = true;
};

// RAII toggle for Graph::recording.
class RecordingGuard {
 public:
  RecordingGuard(Graph& g, bool on) : g_(g), prev_(g.recording()) {
    g_.set_recording(on);
  }
  ~RecordingGuard() { g_.set_recording(prev_); }

 private:
  Graph& g_;
  bool prev_;
};

inline const Array& Var::value() const { return graph_->node(id_).value; }
inline bool Var::requires_grad() const {
  return graph_->node(id_).requires_grad;
}

}  // namespace popmech::ad
