#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "popmech/array.hpp"
#include "popmech/autodiff.hpp"

namespace popmech::divergence {

// Debiased entropic Sinkhorn divergence
//   S_eps(a, b) = OT_eps(a, b) - OT_eps(a, a)/2 - OT_eps(b, b)/2
// with ground cost |x - y|^p / p and eps = blur^p, solved by log-domain
// Sinkhorn fixed-point iterations on the dual potentials. Every solve
// starts with an eps-annealing prefix (one sweep per halving of eps from
// the cost scale down to blur^p), so small blurs converge in practice;
// max_iters then budgets the sweeps at the target eps.
struct DivergenceConfig {
  int p = 2;           // cost exponent, 1 or 2
  double blur = 0.05;  // entropic length scale; resolve "auto" upstream
                       // via estimate_blur before constructing this
  int max_iters = 200;  // sweeps at the target eps, after the prefix
  double tol = 1e-6;  // sup-norm tolerance on dual updates; 0 disables
                      // early stopping so prefix + max_iters sweeps run
                      // exactly (useful for finite-difference checks)
  // When set, the fixed-point iterations run detached and only one final
  // update is recorded with the converged duals held constant (the
  // envelope/detached-potentials gradient, exact at convergence). Keeps
  // graph memory O(N^2) instead of O(iters * N^2).
  bool envelope = false;

  void validate() const;
};

struct SinkhornReport {
  bool converged = true;
  int iters = 0;  // total sweeps (prefix included), worst of the three terms
  double value = 0.0;
};

// Differentiable divergence between clouds Xa (Na x d) and Xb (Nb x d)
// recorded on g (both must live on g). Optional weights are per-cloud
// probability vectors (length Na / Nb, summing to 1); uniform if omitted.
ad::Var sinkhorn_divergence(ad::Graph& g, ad::Var Xa, ad::Var Xb,
                            const DivergenceConfig& cfg,
                            SinkhornReport* report = nullptr,
                            const Array* weights_a = nullptr,
                            const Array* weights_b = nullptr);

// Plain numeric value, no graph involved.
double sinkhorn_divergence(const Array& Xa, const Array& Xb,
                           const DivergenceConfig& cfg,
                           SinkhornReport* report = nullptr,
                           const Array* weights_a = nullptr,
                           const Array* weights_b = nullptr);

struct W1Report {
  bool exact = true;  // false when the assignment cap forced the entropic
                      // annealed approximation
  int iters = 0;      // Sinkhorn iterations of the fallback (0 when exact)
  bool converged = true;  // fallback duals hit tol (always true when exact)
};

// Exact 1-Wasserstein distance between equal-size clouds under uniform
// weights: (1/N) min over assignments of sum |x_i - y_pi(i)|, via an O(N^3)
// shortest-augmenting-path solver. Above `exact_cap` particles it falls
// back to a blur-annealed p=1 Sinkhorn divergence and flags the report.
double exact_w1(const Array& Xa, const Array& Xb, W1Report* report = nullptr,
                std::size_t exact_cap = 2048);

// Minimum-cost perfect matching between two equal-size clouds under
// squared-euclidean cost: result[i] is the row of Xb assigned to row i of
// Xa. Exact O(N^3) Hungarian; both clouds must be (N, d) with equal N.
std::vector<std::size_t> optimal_assignment(const Array& Xa, const Array& Xb);

// Blur heuristic: 0.05 x median pairwise distance of the snapshot,
// computed on at most 512 particles (evenly strided subsample), floored
// at 1e-3 for degenerate clouds.
double estimate_blur(const Array& snapshot);

}  // namespace popmech::divergence
