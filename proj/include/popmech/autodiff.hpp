#pragma once

#include <functional>
#include <span>
#include <vector>

#include "popmech/graph.hpp"

namespace popmech::ad {

struct GradOptions {
  // Record the backward pass onto the graph so the returned gradients are
  // themselves differentiable. Off by default: gradients come back as plain
  // values that later grad() calls treat as constants.
  bool create_graph = false;
  // Return a zero gradient for inputs the output does not depend on instead
  // of throwing.
  bool allow_unused = false;
};

// Reverse-mode gradient of a scalar output with respect to each node in
// `wrt`. Throws ShapeError if the output is not size 1 and Error if some
// wrt node is unreachable (unless allow_unused).
std::vector<Var> grad(Var output, std::span<const Var> wrt,
                      const GradOptions& opt = {});

inline Var grad(Var output, Var wrt, const GradOptions& opt = {}) {
  return grad(output, std::span<const Var>(&wrt, 1), opt)[0];
}

// Builds a scalar expression from leaf inputs; used by check_grad.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t arg = 0;    // input index of the worst component
  std::size_t index = 0;  // flat index of the worst component
  double ad = 0.0;
  double fd = 0.0;
};

// Compares reverse-mode gradients against central finite differences,
// componentwise over every input. The error metric is
// |ad - fd| / max(1, |ad|, |fd|), i.e. absolute for small gradients and
// relative for large ones.
GradCheckReport check_grad(const ScalarFn& fn, std::span<const Array> point,
                           double step = 1e-5);

}  // namespace popmech::ad
