#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "popmech/autodiff.hpp"
#include "popmech/errors.hpp"
#include "popmech/energy.hpp"
#include "popmech/integrator.hpp"
#include "popmech/ops.hpp"
#include "popmech/potentials.hpp"
#include "popmech/rng.hpp"

using namespace popmech;
using namespace popmech::integ;
using popmech::ad::Var;

namespace {

double frob(const Array& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
  return std::sqrt(s);
}

double frob_diff(const Array& a, const Array& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

AccelFn zero_accel() {
  return [](const Array& x, double) { return Array::zeros(x.shape()); };
}

AccelFn harmonic_accel(double omega) {
  double w2 = omega * omega;
  return [w2](const Array& x, double) {
    Array a(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = -w2 * x[i];
    return a;
  };
}

}  // namespace

TEST_CASE("free flight and exact exponential damping") {
  State s{Array::zeros({1, 2}), Array::matrix(1, 2, {1.0, 0.0}), 0.0};

  auto r = step(s, zero_accel(), 0.0, 0.5);
  CHECK(r.state.X[0] == 0.5);
  CHECK(r.state.X[1] == 0.0);
  CHECK(r.state.V[0] == 1.0);
  CHECK(r.state.t == 0.5);

  double gamma = 3.7, dt = 0.2;
  State s2{Array::zeros({1, 2}), Array::matrix(1, 2, {2.0, -1.5}), 0.0};

  // Verlet damps by e^{-gamma dt/2} twice; the product matches e^{-gamma dt}
  // up to rounding.
  auto rv = step(s2, zero_accel(), gamma, dt, Scheme::DampedVelocityVerlet);
  double half = std::exp(-gamma * dt / 2.0);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(rv.state.V[i] == s2.V[i] * half * half);
    CHECK(rv.state.V[i] / s2.V[i] ==
          doctest::Approx(std::exp(-gamma * dt)).epsilon(1e-14));
  }

  // Semi-implicit Euler applies the full factor in one multiply: exact.
  auto re = step(s2, zero_accel(), gamma, dt, Scheme::SemiImplicitEuler);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(re.state.V[i] == s2.V[i] * std::exp(-gamma * dt));
}

TEST_CASE("harmonic oscillator returns after one period") {
  double omega = 2.0 * std::acos(-1.0);
  Rng rng(5);
  State s{rng.normal_array({3, 2}), rng.normal_array({3, 2}), 0.0};

  auto traj = rollout(s, harmonic_accel(omega), 0.0, 1e-3, 1000, 1);
  REQUIRE(traj.size() == 1001);
  CHECK(frob_diff(traj.back().X, s.X) <= 5e-3 * frob(s.X));
  CHECK(traj.back().t == doctest::Approx(1.0));
}

TEST_CASE("second-order convergence on the harmonic oracle") {
  double omega = 2.0 * std::acos(-1.0);
  double T = 0.7;
  Array x0 = Array::matrix(1, 2, {1.0, -0.5});
  Array v0 = Array::matrix(1, 2, {0.3, 0.8});

  // Closed form: x(t) = x0 cos(wt) + (v0/w) sin(wt).
  Array xT({1, 2});
  for (std::size_t i = 0; i < 2; ++i)
    xT[i] = x0[i] * std::cos(omega * T) + v0[i] / omega * std::sin(omega * T);

  auto err_at = [&](int substeps) {
    State s{x0, v0, 0.0};
    auto traj = rollout(s, harmonic_accel(omega), 0.0, T, 1, substeps);
    return frob_diff(traj.back().X, xT);
  };
  double e1 = err_at(350);   // dt = 2e-3
  double e2 = err_at(700);   // dt = 1e-3
  double ratio = e1 / e2;
  CHECK(ratio >= 3.5);
  CHECK(ratio <= 4.5);
}

TEST_CASE("time reversibility at gamma = 0") {
  double omega = 3.0;
  Rng rng(9);
  State s{rng.normal_array({2, 2}), rng.normal_array({2, 2}), 0.0};

  auto fwd = rollout(s, harmonic_accel(omega), 0.0, 0.5, 1, 50);
  State back{fwd.back().X, Array(fwd.back().V.shape()), 0.0};
  for (std::size_t i = 0; i < back.V.size(); ++i)
    back.V[i] = -fwd.back().V[i];
  auto rev = rollout(back, harmonic_accel(omega), 0.0, 0.5, 1, 50);

  for (std::size_t i = 0; i < s.X.size(); ++i) {
    CHECK(rev.back().X[i] == doctest::Approx(s.X[i]).epsilon(1e-10));
    CHECK(-rev.back().V[i] == doctest::Approx(s.V[i]).epsilon(1e-10));
  }
}

TEST_CASE("ballistic closed form and K=0 rollout") {
  Array g = Array::matrix(1, 2, {0.0, -9.8});
  AccelFn accel = [&](const Array& x, double) {
    Array a(x.shape());
    for (std::size_t r = 0; r < x.shape()[0]; ++r)
      for (std::size_t c = 0; c < 2; ++c) a[r * 2 + c] = g[c];
    return a;
  };
  State s{Array::zeros({2, 2}), Array::zeros({2, 2}), 0.0};

  auto traj = rollout(s, accel, 0.0, 1.0, 1, 100);
  for (std::size_t r = 0; r < 2; ++r) {
    CHECK(traj.back().X[r * 2 + 0] == doctest::Approx(0.0));
    CHECK(traj.back().X[r * 2 + 1] == doctest::Approx(-4.9).epsilon(1e-10));
  }

  auto only = rollout(s, accel, 0.0, 1.0, 0, 4);
  REQUIRE(only.size() == 1);
  CHECK(only[0].X[0] == s.X[0]);
  CHECK(only[0].t == s.t);
}

TEST_CASE("decaying mode of the inverted quadratic") {
  // V(x) = 5||x||^2 inverted: force +100x. With v0 = -10 x0 the decaying
  // mode x0 e^{-10t} is selected; at t = 0.1 that is x0/e.
  Rng rng(3);
  Array x0 = rng.normal_array({3, 2});
  State s{x0, Array(x0.shape()), 0.0};
  for (std::size_t i = 0; i < x0.size(); ++i) s.V[i] = -10.0 * x0[i];

  AccelFn accel = [](const Array& x, double) {
    Array a(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = 100.0 * x[i];
    return a;
  };
  auto traj = rollout(s, accel, 0.0, 1e-3, 100, 1);

  Array want(x0.shape());
  for (std::size_t i = 0; i < x0.size(); ++i) want[i] = x0[i] * std::exp(-1.0);
  CHECK(frob_diff(traj.back().X, want) / frob(want) <= 1e-3);
}

TEST_CASE("acceleration caching reuses the previous evaluation") {
  double omega = 2.0;
  int evals = 0;
  AccelFn counting = [&](const Array& x, double) {
    ++evals;
    Array a(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) a[i] = -omega * omega * x[i];
    return a;
  };
  Rng rng(7);
  State s{rng.normal_array({2, 2}), rng.normal_array({2, 2}), 0.0};

  auto traj = rollout(s, counting, 0.1, 0.05, 10, 1);
  // Verlet: one eval for the initial state, then one per step.
  CHECK(evals == 11);

  // And the cached chain matches stepping without a cache bit for bit.
  State cur = s;
  for (int k = 0; k < 10; ++k)
    cur = step(cur, counting, 0.1, 0.05).state;
  for (std::size_t i = 0; i < cur.X.size(); ++i) {
    CHECK(cur.X[i] == traj.back().X[i]);
    CHECK(cur.V[i] == traj.back().V[i]);
  }
}

TEST_CASE("overdamped limit follows the gradient-descent path") {
  // Anisotropic quadratic V(x) = (x1^2 + 4 x2^2)/2. The gradient flow from
  // (1,1) traces x2 = x1^4; at gamma = 1000 the damped dynamics must stay
  // within 1% of it.
  AccelFn accel = [](const Array& x, double) {
    Array a(x.shape());
    for (std::size_t r = 0; r < x.shape()[0]; ++r) {
      a[r * 2 + 0] = -1.0 * x[r * 2 + 0];
      a[r * 2 + 1] = -4.0 * x[r * 2 + 1];
    }
    return a;
  };
  State cur{Array::matrix(1, 2, {1.0, 1.0}), Array::zeros({1, 2}), 0.0};

  std::optional<Array> cache;
  double worst = 0.0;
  for (int k = 0; k < 700 && cur.X[0] > 0.05; ++k) {
    auto r = step(cur, accel, 1000.0, 0.1, Scheme::DampedVelocityVerlet,
                  cache ? &*cache : nullptr, k);
    cur = r.state;
    cache = r.cached_a;
    double pred = std::pow(cur.X[0], 4.0);
    double norm = std::hypot(cur.X[0], cur.X[1]);
    worst = std::max(worst, std::fabs(cur.X[1] - pred) / norm);
  }
  CHECK(cur.X[0] <= 0.05);  // actually descended
  CHECK(worst <= 0.01);
}

TEST_CASE("diagnostics: conservation and dissipation") {
  double omega = 2.0 * std::acos(-1.0);
  energy::AnalyticEnergy psi{energy::AnalyticKind::Expectation,
                             Potential{PotentialKind::Harmonic, omega, {}}};
  Rng rng(11);
  State s{rng.normal_array({4, 2}), rng.normal_array({4, 2}), 0.0};

  SUBCASE("gamma=0 harmonic: relative drift over 10 periods <= 1e-4") {
    auto traj = rollout(s, harmonic_accel(omega), 0.0, 0.1, 100, 100);
    auto rep = diagnostics(traj, &psi);
    REQUIRE(rep.rows.size() == 101);
    CHECK(rep.max_drift / std::fabs(rep.rows[0].total) <= 1e-4);
  }

  SUBCASE("constant potential conserves kinetic energy exactly") {
    auto traj = rollout(s, zero_accel(), 0.0, 0.2, 5, 3);
    auto rep = diagnostics(traj);
    for (const auto& row : rep.rows) CHECK(row.kinetic == rep.rows[0].kinetic);
    CHECK(rep.max_drift == 0.0);
  }

  SUBCASE("gamma>0 with zero force dissipates monotonically") {
    auto traj = rollout(s, zero_accel(), 0.8, 0.2, 6, 2);
    auto rep = diagnostics(traj);
    for (std::size_t k = 1; k < rep.rows.size(); ++k)
      CHECK(rep.rows[k].total < rep.rows[k - 1].total);
  }
}

TEST_CASE("recorded rollout differentiates through states and gamma") {
  auto var_accel = [](Var x, double) { return x * (-4.0); };

  auto run = [&](Scheme scheme) {
    auto fn = [&](ad::Graph& g, std::span<const Var> in) {
      (void)g;
      VarState s{in[0], in[1], 0.0};
      auto traj = rollout(s, var_accel, in[2], 0.05, 3, 2, scheme);
      Var last = traj.back().X;
      return sum(last * last) + sum(traj[2].V * traj[2].V);
    };
    Rng rng(21);
    std::vector<Array> point = {rng.normal_array({2, 2}),
                                rng.normal_array({2, 2}),
                                Array::scalar(0.3)};
    return ad::check_grad(fn, point, 1e-5);
  };

  CHECK(run(Scheme::DampedVelocityVerlet).max_rel_err <= 1e-7);
  CHECK(run(Scheme::SemiImplicitEuler).max_rel_err <= 1e-7);
}

TEST_CASE("recorded and numeric rollouts agree") {
  double omega = 1.7, gamma = 0.4;
  Rng rng(13);
  Array x0 = rng.normal_array({3, 2});
  Array v0 = rng.normal_array({3, 2});

  auto traj = rollout(State{x0, v0, 0.0}, harmonic_accel(omega), gamma, 0.1,
                      4, 3);

  ad::Graph g;
  VarState vs{g.leaf(x0, true), g.leaf(v0, true), 0.0};
  auto vtraj = rollout(vs, [&](Var x, double) { return x * (-omega * omega); },
                       g.constant(Array::scalar(gamma)), 0.1, 4, 3);

  REQUIRE(vtraj.size() == traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k)
    for (std::size_t i = 0; i < x0.size(); ++i) {
      CHECK(vtraj[k].X.value()[i] ==
            doctest::Approx(traj[k].X[i]).epsilon(1e-12));
      CHECK(vtraj[k].V.value()[i] ==
            doctest::Approx(traj[k].V[i]).epsilon(1e-12));
    }
}

TEST_CASE("error paths") {
  State s{Array::zeros({1, 2}), Array::zeros({1, 2}), 0.0};

  CHECK_THROWS_AS(step(s, zero_accel(), 0.0, 0.0), DomainError);
  CHECK_THROWS_AS(step(s, zero_accel(), -0.1, 0.1), DomainError);
  CHECK_THROWS_AS(step(State{Array::zeros({1, 2}), Array::zeros({2, 2}), 0.0},
                       zero_accel(), 0.0, 0.1),
                  ShapeError);
  CHECK_THROWS_AS(rollout(s, zero_accel(), 0.0, 0.1, 3, 0), DomainError);

  // A NaN acceleration appearing at t = 0.02 surfaces with the index of the
  // interval that evaluated it: Verlet already needs it when finishing the
  // step from t = 0.01, semi-implicit Euler only when leaving t = 0.02.
  AccelFn bad = [](const Array& x, double t) {
    Array a = Array::zeros(x.shape());
    if (t >= 0.02 - 1e-12) a[0] = std::nan("");
    return a;
  };
  State m{Array::zeros({1, 2}), Array::matrix(1, 2, {1.0, 0.0}), 0.0};
  CHECK_THROWS_WITH_AS(rollout(m, bad, 0.0, 0.01, 5, 1),
                       doctest::Contains("interval 1"), NumericError);
  CHECK_THROWS_WITH_AS(
      rollout(m, bad, 0.0, 0.01, 5, 1, Scheme::SemiImplicitEuler),
      doctest::Contains("interval 2"), NumericError);

  CHECK_THROWS_AS(parse_scheme("rk4"), ConfigError);
  CHECK(parse_scheme(scheme_name(Scheme::SemiImplicitEuler)) ==
        Scheme::SemiImplicitEuler);
  IntegratorConfig cfg;
  cfg.dt = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.dt = 0.01;
  cfg.substeps = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.substeps = 5;
  CHECK_NOTHROW(cfg.validate());
}
