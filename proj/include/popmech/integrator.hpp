#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popmech/array.hpp"
#include "popmech/autodiff.hpp"
#include "popmech/energy.hpp"

namespace popmech::integ {

// Damped second-order stepping: dx/dt = v, dv/dt = a(x) - gamma*v, where
// a is the conservative acceleration (no damping term). Damping enters the
// schemes as exact exponential factors, so both are unconditionally stable
// in gamma and reduce to their undamped forms at gamma = 0.
enum class Scheme {
  DampedVelocityVerlet,
  SemiImplicitEuler,
};

Scheme parse_scheme(const std::string& name);
std::string scheme_name(Scheme s);

struct IntegratorConfig {
  Scheme scheme = Scheme::DampedVelocityVerlet;
  double dt = 0.01;    // physical length of one interval
  int substeps = 1;    // internal steps per interval
  void validate() const;
};

// Positions, velocities (N x d each), and the current time.
template <class F>
struct MechState {
  F X;
  F V;
  double t = 0.0;
};

using State = MechState<Array>;
using VarState = MechState<ad::Var>;

// Conservative acceleration field a(X, t) -> N x d.
using AccelFn = std::function<Array(const Array& X, double t)>;
using VarAccelFn = std::function<ad::Var(ad::Var X, double t)>;

// One step of size dt. Returns the new state plus an acceleration usable as
// `cached_a` for the next step from that state, so that a chain of Verlet
// steps costs one accel evaluation each after the first. Semi-implicit
// Euler consumes the cache if given but has none to hand forward.
// `step_index` only labels error messages.
struct StepResult {
  State state;
  std::optional<Array> cached_a;
};
struct VarStepResult {
  VarState state;
  std::optional<ad::Var> cached_a;
};

StepResult step(const State& s, const AccelFn& accel, double gamma, double dt,
                Scheme scheme = Scheme::DampedVelocityVerlet,
                const Array* cached_a = nullptr, long step_index = 0);
VarStepResult step(const VarState& s, const VarAccelFn& accel, ad::Var gamma,
                   double dt, Scheme scheme = Scheme::DampedVelocityVerlet,
                   const ad::Var* cached_a = nullptr, long step_index = 0);

// Integrate K intervals of physical length dt, each covered by `substeps`
// internal steps of size dt/substeps. Returns the K+1 states at interval
// boundaries, starting with s0. The Var overload records every operation
// on gamma's graph, so losses on the returned states differentiate through
// the whole rollout (including through gamma).
std::vector<State> rollout(const State& s0, const AccelFn& accel, double gamma,
                           double dt, int num_intervals, int substeps = 1,
                           Scheme scheme = Scheme::DampedVelocityVerlet);
std::vector<VarState> rollout(const VarState& s0, const VarAccelFn& accel,
                              ad::Var gamma, double dt, int num_intervals,
                              int substeps = 1,
                              Scheme scheme = Scheme::DampedVelocityVerlet);

// Energy bookkeeping along a trajectory: kinetic = mean_i ||v_i||^2 / 2,
// potential = analytic Psi if provided (else 0), total = sum. max_drift is
// max_k |H_k - H_0|, the conserved-energy drift when gamma = 0.
struct DiagnosticsRow {
  double t = 0.0;
  double kinetic = 0.0;
  double potential = 0.0;
  double total = 0.0;
};

struct DiagnosticsReport {
  std::vector<DiagnosticsRow> rows;
  double max_drift = 0.0;
};

DiagnosticsReport diagnostics(std::span<const State> trajectory,
                              const energy::AnalyticEnergy* analytic = nullptr);

}  // namespace popmech::integ
