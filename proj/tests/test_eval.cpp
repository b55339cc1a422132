#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "popmech/datagen.hpp"
#include "popmech/divergence.hpp"
#include "popmech/energy.hpp"
#include "popmech/errors.hpp"
#include "popmech/eval.hpp"
#include "popmech/integrator.hpp"
#include "popmech/ops.hpp"
#include "popmech/rng.hpp"

using namespace popmech;
using namespace popmech::eval;
namespace fs = std::filesystem;

namespace {

// Psi = 0.5 w^2 mean_i |x_i|^2: the zero-parameter twin of the analytic
// Expectation energy with a harmonic potential.
class HarmonicModel : public energy::PotentialModel {
 public:
  HarmonicModel(std::size_t dim, double w) : dim_(dim), w_(w) {}
  std::size_t dim() const override { return dim_; }
  std::vector<energy::ParamSpec> param_specs() const override { return {}; }
  energy::EnergyParams init_params(std::uint64_t seed) const override {
    energy::EnergyParams p;
    p.seed = seed;
    return p;
  }
  ad::Var energy(ad::Graph&, std::span<const ad::Var>, ad::Var X,
                 std::optional<double>, bool, Rng*) const override {
    double n = static_cast<double>(X.shape()[0]);
    return ad::sum(ad::mul(X, X)) * (0.5 * w_ * w_ / n);
  }

 private:
  std::size_t dim_;
  double w_;
};

energy::AnalyticEnergy harmonic_ref(double w) {
  energy::AnalyticEnergy ref;
  ref.kind = energy::AnalyticKind::Expectation;
  ref.potential = Potential{PotentialKind::Harmonic, w, {}};
  return ref;
}

Mechanics zero_mechanics(double gamma) {
  Mechanics m;
  m.gamma = gamma;
  m.accel = [](const Array& X, double) { return Array::zeros(X.shape()); };
  return m;
}

datagen::SnapshotDataset dataset_from_states(
    const std::vector<integ::State>& states, std::size_t dim,
    bool with_velocities) {
  datagen::SnapshotDataset ds;
  ds.dim = dim;
  ds.paired = true;
  for (const integ::State& s : states) {
    ds.times.push_back(s.t);
    ds.snapshots.push_back(s.X);
    if (with_velocities) ds.velocities.push_back(s.V);
  }
  return ds;
}

Array shifted(const Array& X, double dx, double dy) {
  Array out = X;
  std::size_t n = X.shape()[0];
  for (std::size_t i = 0; i < n; ++i) {
    out[i * 2] += dx;
    out[i * 2 + 1] += dy;
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(bool(f));
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t count_sub(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(needle); pos != std::string::npos;
       pos = s.find(needle, pos + needle.size()))
    ++n;
  return n;
}

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::path("tmp_eval") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("make_mechanics wraps conservative forces") {
  const double w = 1.7, gamma = 0.4;
  Rng rng(3);
  Array X = rng.normal_array({9, 2}, 0.0, 1.0);

  HarmonicModel model(2, w);
  energy::EnergyParams params = model.init_params(0);
  Mechanics learned = make_mechanics(model, params, gamma);
  CHECK(learned.gamma == gamma);
  Array a = learned.accel(X, 0.0);
  REQUIRE(a.shape() == X.shape());
  for (std::size_t i = 0; i < X.size(); ++i)
    CHECK(a[i] == doctest::Approx(-w * w * X[i]).epsilon(1e-10));

  Mechanics truth = make_mechanics(harmonic_ref(w), gamma);
  Array b = truth.accel(X, 0.0);
  for (std::size_t i = 0; i < X.size(); ++i)
    CHECK(b[i] == doctest::Approx(-w * w * X[i]).epsilon(1e-12));
}

TEST_CASE("optimal_assignment recovers identity and permutations") {
  // Well-separated points, small jitter: nearest assignment is identity.
  Rng rng(11);
  std::size_t n = 7;
  Array Xa = Array::zeros({n, 2});
  for (std::size_t i = 0; i < n; ++i) {
    Xa[i * 2] = 10.0 * static_cast<double>(i);
    Xa[i * 2 + 1] = static_cast<double>(i);
  }
  Array Xb = Xa;
  for (std::size_t i = 0; i < Xb.size(); ++i) Xb[i] += 0.01 * rng.normal();
  auto id = divergence::optimal_assignment(Xa, Xb);
  REQUIRE(id.size() == n);
  for (std::size_t i = 0; i < n; ++i) CHECK(id[i] == i);

  // Xb rows are Xa rows shuffled: the matching inverts the shuffle.
  std::vector<std::size_t> src = {3, 0, 6, 2, 5, 1, 4};
  Array Xp = Array::zeros({n, 2});
  for (std::size_t j = 0; j < n; ++j) {
    Xp[j * 2] = Xa[src[j] * 2];
    Xp[j * 2 + 1] = Xa[src[j] * 2 + 1];
  }
  auto match = divergence::optimal_assignment(Xa, Xp);
  for (std::size_t j = 0; j < n; ++j) CHECK(match[src[j]] == j);

  CHECK_THROWS_AS(
      divergence::optimal_assignment(Xa, Array::zeros({n + 1, 2})),
      ShapeError);
}

TEST_CASE("forecast on ground-truth mechanics stays within stepping error") {
  // Data from the analytic damped harmonic mechanics at fine substeps; the
  // forecast re-integrates the same mechanics at coarser substeps, so every
  // per-time W1 is pure integrator discrepancy.
  const double w = 1.3, gamma = 0.7, dt = 0.1;
  Rng rng(17);
  Array X0 = rng.normal_array({16, 2}, 0.0, 1.0);
  Array V0 = rng.normal_array({16, 2}, 0.0, 0.5);
  energy::AnalyticEnergy ref = harmonic_ref(w);
  integ::AccelFn accel = [&](const Array& X, double) { return ref.force(X); };
  auto states = integ::rollout({X0, V0, 0.0}, accel, gamma, dt, 6, 40);

  datagen::SnapshotDataset train = dataset_from_states(
      {states.begin(), states.begin() + 4}, 2, false);
  datagen::SnapshotDataset test = dataset_from_states(
      {states.begin() + 4, states.end()}, 2, false);

  integ::IntegratorConfig icfg;
  icfg.substeps = 10;
  EvalReport r =
      forecast_eval(make_mechanics(ref, gamma), train, test, V0, icfg);

  CHECK(r.protocol == "forecast");
  REQUIRE(r.entries.size() == 7);
  for (std::size_t k = 0; k < 7; ++k) {
    CHECK(r.entries[k].label == "t" + std::to_string(k));
    CHECK(r.entries[k].t == states[k].t);
    CHECK(r.entries[k].test_split == (k >= 4));
    CHECK(r.entries[k].approx_w1 == false);
    CHECK(r.entries[k].w1 <= 1e-3);
  }
  CHECK(r.entries[0].w1 == 0.0);      // the initial cloud is scored as-is
  CHECK(r.entries[6].w1 > 1e-12);     // coarser stepping genuinely differs
  CHECK(!r.any_approx_w1);

  // Aggregates are recomputable from the entries.
  double tr = 0, te = 0;
  for (std::size_t k = 0; k < 4; ++k) tr += r.entries[k].w1;
  for (std::size_t k = 4; k < 7; ++k) te += r.entries[k].w1;
  CHECK(r.train_mean == doctest::Approx(tr / 4).epsilon(1e-12));
  CHECK(r.test_mean == doctest::Approx(te / 3).epsilon(1e-12));
}

TEST_CASE("frozen mechanics on translating data scores the translation") {
  Rng rng(23);
  Array X0 = rng.normal_array({12, 2}, 0.0, 1.0);
  const double dx = 0.3, dy = -0.4;  // |delta| = 0.5 per time step

  datagen::SnapshotDataset train, test;
  train.dim = test.dim = 2;
  train.paired = test.paired = true;
  for (int k = 0; k < 4; ++k) {
    train.times.push_back(0.5 * k);
    train.snapshots.push_back(shifted(X0, dx * k, dy * k));
  }
  for (int k = 4; k < 6; ++k) {
    test.times.push_back(0.5 * k);
    test.snapshots.push_back(shifted(X0, dx * k, dy * k));
  }

  // Zero energy, huge damping, rest start: the prediction never moves.
  integ::IntegratorConfig icfg;
  icfg.substeps = 3;
  EvalReport r = forecast_eval(zero_mechanics(1e8), train, test,
                               Array::zeros({12, 2}), icfg);
  REQUIRE(r.entries.size() == 6);
  for (int k = 0; k < 6; ++k)
    CHECK(r.entries[k].w1 ==
          doctest::Approx(std::hypot(dx * k, dy * k)).epsilon(1e-12));
  CHECK(r.train_mean ==
        doctest::Approx((0.0 + 0.5 + 1.0 + 1.5) / 4).epsilon(1e-12));
  CHECK(r.test_mean == doctest::Approx((2.0 + 2.5) / 2).epsilon(1e-12));
}

TEST_CASE("interpolate with provided velocities is self-consistent") {
  const double w = 0.9, gamma = 0.3, dt = 0.25;
  Rng rng(29);
  Array X0 = rng.normal_array({10, 2}, 0.0, 1.0);
  Array V0 = rng.normal_array({10, 2}, 0.0, 0.4);
  energy::AnalyticEnergy ref = harmonic_ref(w);
  integ::AccelFn accel = [&](const Array& X, double) { return ref.force(X); };
  auto states = integ::rollout({X0, V0, 0.0}, accel, gamma, dt, 4, 4);
  datagen::SnapshotDataset ds = dataset_from_states(states, 2, true);

  integ::IntegratorConfig icfg;
  icfg.substeps = 4;  // matches generation: the leg is re-run step for step
  EvalReport r = interpolate_eval(make_mechanics(ref, gamma), ds, 2,
                                  VMode::Provided, icfg);
  CHECK(r.protocol == "interpolate");
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].label == "t2");
  CHECK(r.entries[0].t == ds.times[2]);
  CHECK(r.entries[0].test_split);
  CHECK(r.entries[0].w1 <= 1e-12);
  CHECK(r.test_mean == r.entries[0].w1);
  CHECK(r.train_mean == 0.0);
}

TEST_CASE("interpolate zero mode on a zero-energy model is the identity rollout") {
  Rng rng(31);
  datagen::SnapshotDataset ds;
  ds.dim = 2;
  ds.times = {0.0, 0.5, 1.0, 1.5};
  for (int k = 0; k < 4; ++k)
    ds.snapshots.push_back(rng.normal_array({11, 2}, 0.3 * k, 1.0));

  integ::IntegratorConfig icfg;
  icfg.substeps = 5;
  EvalReport r =
      interpolate_eval(zero_mechanics(0.0), ds, 2, VMode::Zero, icfg);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].w1 ==
        divergence::exact_w1(ds.snapshots[1], ds.snapshots[2]));
  CHECK(r.entries[0].w1 > 0.0);
}

TEST_CASE("carried mode transfers the rolled velocities exactly") {
  // The dataset is the mechanics' own rest-start trajectory (positions
  // only). The carried prefix re-rolls it step for step, so the assignment
  // is the identity on bitwise-equal clouds, the transferred velocities are
  // the true ones, and the held-out leg lands exactly on the data.
  const double w = 0.9, dt = 0.25;
  Rng rng(37);
  Array X0 = Array::zeros({8, 2});
  for (std::size_t i = 0; i < 8; ++i) {
    X0[i * 2] = 3.0 * static_cast<double>(i) + 0.2 * rng.normal();
    X0[i * 2 + 1] = 0.5 * static_cast<double>(i % 3) + 0.2 * rng.normal();
  }
  energy::AnalyticEnergy ref = harmonic_ref(w);
  integ::AccelFn accel = [&](const Array& X, double) { return ref.force(X); };
  auto states =
      integ::rollout({X0, Array::zeros({8, 2}), 0.0}, accel, 0.0, dt, 3, 4);
  datagen::SnapshotDataset ds = dataset_from_states(states, 2, false);

  integ::IntegratorConfig icfg;
  icfg.substeps = 4;
  Mechanics mech = make_mechanics(ref, 0.0);
  EvalReport r = interpolate_eval(mech, ds, 3, VMode::Carried, icfg);
  REQUIRE(r.entries.size() == 1);
  CHECK(r.entries[0].w1 == 0.0);

  // Carried needs the rolled and observed clouds to have equal sizes.
  datagen::SnapshotDataset uneq;
  uneq.dim = 2;
  uneq.times = {0.0, 0.25, 0.5};
  uneq.snapshots = {rng.normal_array({8, 2}, 0.0, 1.0),
                    rng.normal_array({6, 2}, 0.0, 1.0),
                    rng.normal_array({6, 2}, 0.0, 1.0)};
  CHECK_THROWS_AS(
      interpolate_eval(mech, uneq, 2, VMode::Carried, icfg), DataError);
}

TEST_CASE("interpolate depends only on the snapshots it claims to") {
  const double w = 1.1, dt = 0.25;
  Rng rng(41);
  Array X0 = rng.normal_array({9, 2}, 0.0, 1.0);
  energy::AnalyticEnergy ref = harmonic_ref(w);
  integ::AccelFn accel = [&](const Array& X, double) { return ref.force(X); };
  auto states =
      integ::rollout({X0, Array::zeros({9, 2}), 0.0}, accel, 0.2, dt, 4, 3);
  datagen::SnapshotDataset ds = dataset_from_states(states, 2, false);

  integ::IntegratorConfig icfg;
  icfg.substeps = 3;
  Mechanics mech = make_mechanics(ref, 0.2);
  EvalReport base = interpolate_eval(mech, ds, 3, VMode::Carried, icfg);

  // Carried with h = 3 may read t0 (start), the times, t2 (assignment
  // target) and t3 (score). Garbling t1's and t4's contents changes nothing.
  datagen::SnapshotDataset mut = ds;
  for (std::size_t i = 0; i < mut.snapshots[1].size(); ++i)
    mut.snapshots[1][i] += 77.0;
  for (std::size_t i = 0; i < mut.snapshots[4].size(); ++i)
    mut.snapshots[4][i] -= 13.0;
  EvalReport same = interpolate_eval(mech, mut, 3, VMode::Carried, icfg);
  CHECK(same.entries[0].w1 == base.entries[0].w1);

  // Zero mode additionally ignores t0's contents.
  for (std::size_t i = 0; i < mut.snapshots[0].size(); ++i)
    mut.snapshots[0][i] *= -3.0;
  EvalReport z0 = interpolate_eval(mech, ds, 3, VMode::Zero, icfg);
  EvalReport z1 = interpolate_eval(mech, mut, 3, VMode::Zero, icfg);
  CHECK(z0.entries[0].w1 == z1.entries[0].w1);
}

TEST_CASE("forecast with empty test set is a pure training fit") {
  Rng rng(43);
  datagen::SnapshotDataset train;
  train.dim = 2;
  train.times = {0.0, 0.4, 0.8};
  for (int k = 0; k < 3; ++k)
    train.snapshots.push_back(rng.normal_array({10, 2}, 0.2 * k, 1.0));

  integ::IntegratorConfig icfg;
  icfg.substeps = 2;
  EvalReport r = forecast_eval(zero_mechanics(0.0), train, {},
                               Array::zeros({10, 2}), icfg);
  REQUIRE(r.entries.size() == 3);
  double mean = 0.0;
  for (const auto& e : r.entries) {
    CHECK(!e.test_split);
    mean += e.w1;
  }
  CHECK(r.train_mean == doctest::Approx(mean / 3).epsilon(1e-12));
  CHECK(r.test_mean == 0.0);
}

TEST_CASE("scoring flags the entropic fallback and supports resampling") {
  Rng rng(47);
  datagen::SnapshotDataset train;
  train.dim = 2;
  train.times = {0.0, 0.3};
  train.snapshots = {rng.normal_array({6, 2}, 0.0, 1.0),
                     rng.normal_array({6, 2}, 0.4, 1.0)};

  integ::IntegratorConfig icfg;
  icfg.substeps = 2;

  // Cap below N: every entry takes the fallback.
  ForecastOptions capped;
  capped.exact_cap = 4;
  EvalReport r = forecast_eval(zero_mechanics(0.0), train, {},
                               Array::zeros({6, 2}), icfg, capped);
  CHECK(r.entries[0].approx_w1);
  CHECK(r.entries[1].approx_w1);
  CHECK(r.any_approx_w1);

  // KDE-resampled initial cloud: sizes differ, so scoring is approximate,
  // and the draw is seed-deterministic.
  ForecastOptions rs;
  rs.resample = 9;
  rs.resample_seed = 5;
  EvalReport a = forecast_eval(zero_mechanics(0.0), train, {},
                               Array::zeros({6, 2}), icfg, rs);
  REQUIRE(a.entries.size() == 2);
  CHECK(a.entries[0].predicted.shape()[0] == 9);
  CHECK(a.entries[0].approx_w1);
  CHECK(a.entries[0].w1 > 0.0);

  EvalReport b = forecast_eval(zero_mechanics(0.0), train, {},
                               Array::zeros({6, 2}), icfg, rs);
  CHECK(a.entries[1].w1 == b.entries[1].w1);
  rs.resample_seed = 6;
  EvalReport c = forecast_eval(zero_mechanics(0.0), train, {},
                               Array::zeros({6, 2}), icfg, rs);
  CHECK(a.entries[1].w1 != c.entries[1].w1);
}

TEST_CASE("report_emit writes csv, json, and svg artifacts") {
  Rng rng(53);
  Array X0 = rng.normal_array({5, 2}, 0.0, 1.0);
  datagen::SnapshotDataset train, test;
  train.dim = test.dim = 2;
  train.times = {0.0, 1.0};
  train.snapshots = {X0, shifted(X0, 0.3, -0.4)};
  test.times = {2.0};
  test.snapshots = {shifted(X0, 0.6, -0.8)};

  integ::IntegratorConfig icfg;
  icfg.substeps = 2;
  EvalReport r = forecast_eval(zero_mechanics(0.0), train, test,
                               Array::zeros({5, 2}), icfg);

  std::string dir = fresh_dir("emit");
  auto written = report_emit(r, dir, {"csv", "json", "svg"});
  REQUIRE(written.size() == 2 + r.entries.size());

  // CSV: one row per entry, and the means recompute exactly from it.
  std::string csv = read_file(dir + "/forecast.csv");
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "label,t,w1,split,approx_w1,converged");
  double tr = 0, te = 0;
  std::size_t ntr = 0, nte = 0, rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    std::istringstream cells(line);
    std::string label, t, w1, split;
    std::getline(cells, label, ',');
    std::getline(cells, t, ',');
    std::getline(cells, w1, ',');
    std::getline(cells, split, ',');
    if (split == "test") {
      te += std::stod(w1);
      ++nte;
    } else {
      tr += std::stod(w1);
      ++ntr;
    }
  }
  CHECK(rows == 3);
  CHECK(tr / ntr == r.train_mean);
  CHECK(te / nte == r.test_mean);

  // JSON: full report, and it parses back to the same numbers.
  auto j = nlohmann::json::parse(read_file(dir + "/forecast.json"));
  CHECK(j["protocol"] == "forecast");
  CHECK(j["entries"].size() == 3);
  CHECK(j["train_mean"].get<double>() == r.train_mean);
  CHECK(j["entries"][2]["split"] == "test");
  EvalReport back = eval_report_from_json(j);
  CHECK(back.protocol == r.protocol);
  REQUIRE(back.entries.size() == r.entries.size());
  for (std::size_t k = 0; k < r.entries.size(); ++k) {
    CHECK(back.entries[k].w1 == r.entries[k].w1);
    CHECK(back.entries[k].label == r.entries[k].label);
    CHECK(back.entries[k].test_split == r.entries[k].test_split);
  }
  CHECK(back.test_mean == r.test_mean);
  CHECK_THROWS_AS(eval_report_from_json(nlohmann::json{{"protocol", "x"}}),
                  DataError);

  // SVG: one file per time, N predicted + N observed markers.
  for (const auto& e : r.entries) {
    std::string svg = read_file(dir + "/forecast_" + e.label + ".svg");
    CHECK(count_sub(svg, "class=\"pred\"") == 5);
    CHECK(count_sub(svg, "class=\"obs\"") == 5);
  }

  // Unequal sizes show up as unequal marker counts.
  ForecastOptions rs;
  rs.resample = 8;
  EvalReport rr = forecast_eval(zero_mechanics(0.0), train, test,
                                Array::zeros({5, 2}), icfg, rs);
  std::string dir2 = fresh_dir("emit_rs");
  report_emit(rr, dir2, {"svg"});
  std::string svg = read_file(dir2 + "/forecast_t0.svg");
  CHECK(count_sub(svg, "class=\"pred\"") == 8);
  CHECK(count_sub(svg, "class=\"obs\"") == 5);

  // Empty report: header-only csv.
  EvalReport empty;
  empty.protocol = "forecast";
  std::string dir3 = fresh_dir("emit_empty");
  report_emit(empty, dir3, {"csv"});
  CHECK(read_file(dir3 + "/forecast.csv") ==
        "label,t,w1,split,approx_w1,converged\n");

  CHECK_THROWS_AS(report_emit(r, dir, {"csv", "pdf"}), ConfigError);
}

TEST_CASE("aggregate_reports: per-time and pooled stats over seeds") {
  auto entry = [](const std::string& label, double w1, bool test) {
    EvalEntry e;
    e.label = label;
    e.w1 = w1;
    e.test_split = test;
    return e;
  };
  EvalReport a, b;
  a.protocol = b.protocol = "forecast";
  a.entries = {entry("t0", 1.0, false), entry("t1", 3.0, true)};
  a.train_mean = 1.0;
  a.test_mean = 3.0;
  b.entries = {entry("t0", 2.0, false), entry("t1", 5.0, true)};
  b.train_mean = 2.0;
  b.test_mean = 5.0;

  AggregateReport agg = aggregate_reports({a, b});
  REQUIRE(agg.per_time.size() == 2);
  CHECK(agg.per_time[0].first == "t0");
  CHECK(agg.per_time[0].second.n == 2);
  CHECK(agg.per_time[0].second.mean == doctest::Approx(1.5));
  CHECK(agg.per_time[0].second.se == doctest::Approx(0.5));
  CHECK(agg.per_time[1].second.mean == doctest::Approx(4.0));
  CHECK(agg.per_time[1].second.se == doctest::Approx(1.0));
  CHECK(agg.train_pooled.mean == doctest::Approx(1.5));
  CHECK(agg.train_pooled.se == doctest::Approx(0.5));
  CHECK(agg.test_pooled.mean == doctest::Approx(4.0));
  CHECK(agg.test_pooled.se == doctest::Approx(1.0));

  AggregateReport one = aggregate_reports({a});
  CHECK(one.per_time[0].second.n == 1);
  CHECK(one.per_time[0].second.se == 0.0);

  nlohmann::json j = agg.to_json();
  CHECK(j["train_pooled"]["mean"].get<double>() == doctest::Approx(1.5));
  CHECK(j["per_time"].size() == 2);

  EvalReport other;
  other.protocol = "interpolate";
  CHECK_THROWS_AS(aggregate_reports({a, other}), ConfigError);
  CHECK(aggregate_reports({}).train_pooled.n == 0);
}

TEST_CASE("eval input validation") {
  Rng rng(59);
  datagen::SnapshotDataset train;
  train.dim = 2;
  train.times = {0.0, 0.5};
  train.snapshots = {rng.normal_array({6, 2}, 0.0, 1.0),
                     rng.normal_array({6, 2}, 0.0, 1.0)};
  integ::IntegratorConfig icfg;
  Mechanics mech = zero_mechanics(0.0);

  // v0 must match the first snapshot.
  CHECK_THROWS_AS(
      forecast_eval(mech, train, {}, Array::zeros({5, 2}), icfg), ShapeError);

  // Test times must follow train times.
  datagen::SnapshotDataset bad = train;
  bad.times = {0.25, 0.75};
  CHECK_THROWS_AS(
      forecast_eval(mech, train, bad, Array::zeros({6, 2}), icfg), DataError);

  // Held-out index strictly interior.
  CHECK_THROWS_AS(interpolate_eval(mech, train, 0, VMode::Zero, icfg),
                  DomainError);
  CHECK_THROWS_AS(interpolate_eval(mech, train, 2, VMode::Zero, icfg),
                  DomainError);

  // Provided velocities that are not there.
  CHECK_THROWS_AS(interpolate_eval(mech, train, 1, VMode::Provided, icfg),
                  DataError);

  ForecastOptions rs;
  rs.resample = 0;
  CHECK_THROWS_AS(
      forecast_eval(mech, train, {}, Array::zeros({6, 2}), icfg, rs),
      ConfigError);

  CHECK(parse_v_mode("provided") == VMode::Provided);
  CHECK(parse_v_mode("zero") == VMode::Zero);
  CHECK(parse_v_mode("carried") == VMode::Carried);
  CHECK_THROWS_AS(parse_v_mode("nearest"), ConfigError);
  CHECK(v_mode_name(VMode::Carried) == "carried");
}

TEST_CASE("integrator failures carry the time label") {
  Rng rng(61);
  datagen::SnapshotDataset train;
  train.dim = 2;
  train.times = {0.0, 0.5};
  train.snapshots = {rng.normal_array({4, 2}, 0.0, 1.0),
                     rng.normal_array({4, 2}, 0.0, 1.0)};

  Mechanics nan_mech;
  nan_mech.gamma = 0.0;
  nan_mech.accel = [](const Array& X, double) {
    Array a = Array::zeros(X.shape());
    a[0] = std::numeric_limits<double>::quiet_NaN();
    return a;
  };
  integ::IntegratorConfig icfg;
  icfg.substeps = 2;
  try {
    forecast_eval(nan_mech, train, {}, Array::zeros({4, 2}), icfg);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    std::string msg = e.what();
    CHECK(msg.find("t1") != std::string::npos);
    CHECK(msg.find("forecast_eval") != std::string::npos);
  }
}
