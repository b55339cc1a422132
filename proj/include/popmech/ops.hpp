#pragma once

#include <span>
#include <vector>

#include "popmech/graph.hpp"

// Typed wrappers over Graph::apply. Binary wrappers insert explicit
// Broadcast nodes when shapes differ (scalar against anything, or a shape
// that right-aligns against the other), so the primitives themselves only
// ever see exact shape matches.
namespace popmech::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);

Var matmul(Var a, Var b);    // 2-D only
Var transpose(Var a);        // 2-D only
Var reshape(Var a, std::vector<std::size_t> shape);
Var concat(std::span<const Var> parts, long axis);
Var slice(Var a, long axis, long start, long stop);

Var sum(Var a);                                      // scalar (rank 0)
Var sum(Var a, long axis, bool keepdims = false);
Var mean(Var a);                                     // composite
Var mean(Var a, long axis, bool keepdims = false);   // composite
Var broadcast_to(Var a, std::vector<std::size_t> shape);

Var exp(Var a);
Var log(Var a);
Var pow(Var a, double p);
Var tanh(Var a);
Var sqrt(Var a);
Var clamp_min(Var a, double bound);

Var softmax(Var a, long axis);
Var logsumexp(Var a, long axis, bool keepdims = false);

// Composites built from the primitives above.
Var silu(Var a);
Var sigmoid(Var a);
// Normalizes over the last axis; affine scale/shift are up to the caller.
Var layer_norm(Var a, double eps = 1e-5);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

inline Var operator+(Var a, double c) { return add(a, a.graph()->scalar(c)); }
inline Var operator+(double c, Var a) { return a + c; }
inline Var operator-(Var a, double c) { return sub(a, a.graph()->scalar(c)); }
inline Var operator-(double c, Var a) { return sub(a.graph()->scalar(c), a); }
inline Var operator*(Var a, double c) { return mul(a, a.graph()->scalar(c)); }
inline Var operator*(double c, Var a) { return a * c; }
inline Var operator/(Var a, double c) { return div(a, a.graph()->scalar(c)); }
inline Var operator/(double c, Var a) { return div(a.graph()->scalar(c), a); }

}  // namespace popmech::ad
