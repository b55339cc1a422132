#include "popmech/integrator.hpp"

#include <cmath>
#include <string>

#include "popmech/errors.hpp"
#include "popmech/ops.hpp"

namespace popmech::integ {

namespace {

using ad::Var;

void check_step_inputs(const std::vector<std::size_t>& xs,
                       const std::vector<std::size_t>& vs, double gamma,
                       double dt) {
  if (xs != vs)
    throw ShapeError("step: X " + shape_str(xs) + " and V " + shape_str(vs) +
                     " differ");
  if (xs.size() != 2)
    throw ShapeError("step: state must be N x d, got " + shape_str(xs));
  if (!(dt > 0.0))
    throw DomainError("step: dt must be > 0, got " + std::to_string(dt));
  if (!(gamma >= 0.0))
    throw DomainError("step: gamma must be >= 0, got " + std::to_string(gamma));
}

void check_finite(const Array& a, const char* what, long step_index) {
  if (a.all_finite()) return;
  std::size_t i = a.first_non_finite();
  std::size_t d = a.shape().back();
  throw NumericError("step " + std::to_string(step_index) + ": non-finite " +
                     what + " at particle " + std::to_string(i / d) +
                     " axis " + std::to_string(i % d));
}

Array lincomb(const Array& a, double s, const Array& b) {
  Array out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + s * b[i];
  return out;
}

Array scaled(const Array& a, double s) {
  Array out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = s * a[i];
  return out;
}

}  // namespace

Scheme parse_scheme(const std::string& name) {
  if (name == "damped-velocity-verlet") return Scheme::DampedVelocityVerlet;
  if (name == "semi-implicit-euler") return Scheme::SemiImplicitEuler;
  throw ConfigError("unknown integrator scheme '" + name +
                    "'; expected damped-velocity-verlet or semi-implicit-euler");
}

std::string scheme_name(Scheme s) {
  return s == Scheme::DampedVelocityVerlet ? "damped-velocity-verlet"
                                           : "semi-implicit-euler";
}

void IntegratorConfig::validate() const {
  if (!(dt > 0.0))
    throw ConfigError("integrator: dt must be > 0, got " + std::to_string(dt));
  if (substeps < 1)
    throw ConfigError("integrator: substeps must be >= 1, got " +
                      std::to_string(substeps));
}

StepResult step(const State& s, const AccelFn& accel, double gamma, double dt,
                Scheme scheme, const Array* cached_a, long step_index) {
  check_step_inputs(s.X.shape(), s.V.shape(), gamma, dt);

  if (scheme == Scheme::SemiImplicitEuler) {
    Array a0 = cached_a ? *cached_a : accel(s.X, s.t);
    check_finite(a0, "acceleration", step_index);
    double damp = std::exp(-gamma * dt);
    Array v1 = scaled(lincomb(s.V, dt, a0), damp);
    Array x1 = lincomb(s.X, dt, v1);
    check_finite(x1, "position", step_index);
    return {State{std::move(x1), std::move(v1), s.t + dt}, std::nullopt};
  }

  // Damped velocity Verlet: exponential half-step damping wrapped around a
  // kick-drift-kick with the conservative acceleration.
  double damp = std::exp(-gamma * dt / 2.0);
  Array a0 = cached_a ? *cached_a : accel(s.X, s.t);
  check_finite(a0, "acceleration", step_index);
  Array v = lincomb(scaled(s.V, damp), dt / 2.0, a0);
  Array x1 = lincomb(s.X, dt, v);
  check_finite(x1, "position", step_index);
  Array a1 = accel(x1, s.t + dt);
  check_finite(a1, "acceleration", step_index);
  Array v1 = scaled(lincomb(v, dt / 2.0, a1), damp);
  return {State{std::move(x1), std::move(v1), s.t + dt}, std::move(a1)};
}

VarStepResult step(const VarState& s, const VarAccelFn& accel, Var gamma,
                   double dt, Scheme scheme, const Var* cached_a,
                   long step_index) {
  if (!gamma.valid() || gamma.size() != 1)
    throw ShapeError("step: gamma must be a valid scalar Var");
  check_step_inputs(s.X.shape(), s.V.shape(), gamma.value().item(), dt);

  if (scheme == Scheme::SemiImplicitEuler) {
    Var a0 = cached_a ? *cached_a : accel(s.X, s.t);
    check_finite(a0.value(), "acceleration", step_index);
    Var damp = ad::exp(gamma * (-dt));
    Var v1 = (s.V + a0 * dt) * damp;
    Var x1 = s.X + v1 * dt;
    check_finite(x1.value(), "position", step_index);
    return {VarState{x1, v1, s.t + dt}, std::nullopt};
  }

  Var damp = ad::exp(gamma * (-dt / 2.0));
  Var a0 = cached_a ? *cached_a : accel(s.X, s.t);
  check_finite(a0.value(), "acceleration", step_index);
  Var v = s.V * damp + a0 * (dt / 2.0);
  Var x1 = s.X + v * dt;
  check_finite(x1.value(), "position", step_index);
  Var a1 = accel(x1, s.t + dt);
  check_finite(a1.value(), "acceleration", step_index);
  Var v1 = (v + a1 * (dt / 2.0)) * damp;
  return {VarState{x1, v1, s.t + dt}, a1};
}

namespace {

// Shared interval/substep loop; St is State or VarState.
template <class St, class Fn, class G, class Cache>
std::vector<St> rollout_impl(const St& s0, const Fn& accel, G gamma, double dt,
                             int num_intervals, int substeps, Scheme scheme,
                             Cache cache) {
  if (num_intervals < 0)
    throw DomainError("rollout: num_intervals must be >= 0");
  if (substeps < 1) throw DomainError("rollout: substeps must be >= 1");
  if (!(dt > 0.0))
    throw DomainError("rollout: dt must be > 0, got " + std::to_string(dt));

  std::vector<St> out;
  out.reserve(static_cast<std::size_t>(num_intervals) + 1);
  out.push_back(s0);
  double h = dt / substeps;
  St cur = s0;
  for (int k = 0; k < num_intervals; ++k) {
    for (int j = 0; j < substeps; ++j) {
      cur.t = s0.t + k * dt + j * h;
      try {
        auto r = step(cur, accel, gamma, h, scheme,
                      cache ? &*cache : nullptr, k * substeps + j);
        cur = std::move(r.state);
        cache = std::move(r.cached_a);
      } catch (const NumericError& e) {
        throw NumericError("rollout interval " + std::to_string(k) + " (t=" +
                           std::to_string(cur.t) + "): " + e.what());
      }
    }
    cur.t = s0.t + (k + 1) * dt;
    out.push_back(cur);
  }
  return out;
}

}  // namespace

std::vector<State> rollout(const State& s0, const AccelFn& accel, double gamma,
                           double dt, int num_intervals, int substeps,
                           Scheme scheme) {
  return rollout_impl(s0, accel, gamma, dt, num_intervals, substeps, scheme,
                      std::optional<Array>{});
}

std::vector<VarState> rollout(const VarState& s0, const VarAccelFn& accel,
                              Var gamma, double dt, int num_intervals,
                              int substeps, Scheme scheme) {
  return rollout_impl(s0, accel, gamma, dt, num_intervals, substeps, scheme,
                      std::optional<Var>{});
}

DiagnosticsReport diagnostics(std::span<const State> trajectory,
                              const energy::AnalyticEnergy* analytic) {
  if (trajectory.empty())
    throw DomainError("diagnostics: trajectory must be nonempty");
  DiagnosticsReport rep;
  rep.rows.reserve(trajectory.size());
  for (const State& s : trajectory) {
    DiagnosticsRow row;
    row.t = s.t;
    std::size_t n = s.V.shape()[0];
    double sq = 0.0;
    for (std::size_t i = 0; i < s.V.size(); ++i) sq += s.V[i] * s.V[i];
    row.kinetic = 0.5 * sq / static_cast<double>(n);
    row.potential = analytic ? analytic->psi(s.X) : 0.0;
    row.total = row.kinetic + row.potential;
    rep.rows.push_back(row);
  }
  for (const DiagnosticsRow& r : rep.rows)
    rep.max_drift =
        std::max(rep.max_drift, std::fabs(r.total - rep.rows[0].total));
  return rep;
}

}  // namespace popmech::integ
