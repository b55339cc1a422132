#include "popmech/eval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "popmech/divergence.hpp"
#include "popmech/errors.hpp"
#include "popmech/rng.hpp"

namespace popmech::eval {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

bool all_finite(const Array& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

double union_diameter(const Array& Xa, const Array& Xb) {
  std::size_t d = Xa.shape()[1];
  double sq = 0.0;
  for (std::size_t c = 0; c < d; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < Xa.shape()[0]; ++i) {
      lo = std::min(lo, Xa[i * d + c]);
      hi = std::max(hi, Xa[i * d + c]);
    }
    for (std::size_t i = 0; i < Xb.shape()[0]; ++i) {
      lo = std::min(lo, Xb[i * d + c]);
      hi = std::max(hi, Xb[i * d + c]);
    }
    sq += (hi - lo) * (hi - lo);
  }
  return std::sqrt(sq);
}

// Exact assignment W1 when the shapes allow it, else the same annealed
// entropic approximation exact_w1 itself falls back to, which also covers
// unequal cloud sizes (resampled initial clouds).
double w1_score(const Array& pred, const Array& obs, std::size_t cap,
                bool* approx, bool* converged) {
  if (pred.shape() == obs.shape()) {
    divergence::W1Report rep;
    double v = divergence::exact_w1(pred, obs, &rep, cap);
    *approx = !rep.exact;
    *converged = rep.converged;
    return v;
  }
  double diam = std::max(union_diameter(pred, obs), 1e-9);
  divergence::DivergenceConfig cfg;
  cfg.p = 1;
  cfg.blur = 1e-3 * diam;
  cfg.max_iters = 50;
  cfg.tol = 1e-6;
  divergence::SinkhornReport rep;
  double v = divergence::sinkhorn_divergence(pred, obs, cfg, &rep);
  *approx = true;
  *converged = rep.converged;
  return v;
}

// Advance `cur` to time t_to with `substeps` equal steps, chaining the
// cached acceleration. Integrator failures and non-finite states are
// reported with the target time's label.
void advance_to(const Mechanics& mech, integ::State& cur,
                std::optional<Array>& cache, double t_to, int substeps,
                integ::Scheme scheme, const std::string& label,
                const char* who) {
  double h = (t_to - cur.t) / substeps;
  for (int s = 0; s < substeps; ++s) {
    try {
      auto res = integ::step(cur, mech.accel, mech.gamma, h, scheme,
                             cache ? &*cache : nullptr, s);
      cur = std::move(res.state);
      cache = std::move(res.cached_a);
    } catch (const Error& e) {
      throw NumericError(std::string(who) + ": integrator failed advancing to " +
                         label + " (t=" + fmt_double(t_to) + "): " + e.what());
    }
  }
  cur.t = t_to;
  if (!all_finite(cur.X) || !all_finite(cur.V))
    throw NumericError(std::string(who) + ": non-finite state at " + label +
                       " (t=" + fmt_double(t_to) + ")");
}

void score_entry(EvalReport& report, const std::string& label, double t,
                 const Array& pred, const Array& obs, bool test_split,
                 std::size_t cap) {
  EvalEntry e;
  e.label = label;
  e.t = t;
  e.test_split = test_split;
  e.w1 = w1_score(pred, obs, cap, &e.approx_w1, &e.w1_converged);
  e.predicted = pred;
  e.observed = obs;
  report.entries.push_back(std::move(e));
}

void finalize(EvalReport& report) {
  double tr = 0.0, te = 0.0;
  std::size_t ntr = 0, nte = 0;
  for (const auto& e : report.entries) {
    if (e.test_split) {
      te += e.w1;
      ++nte;
    } else {
      tr += e.w1;
      ++ntr;
    }
    report.any_approx_w1 = report.any_approx_w1 || e.approx_w1;
    report.any_nonconverged = report.any_nonconverged || !e.w1_converged;
  }
  report.train_mean = ntr ? tr / ntr : 0.0;
  report.test_mean = nte ? te / nte : 0.0;
}

// Gaussian KDE draw from the rows of X: pick a kernel center uniformly,
// add per-coordinate Scott-bandwidth noise. The matching v0 rows follow
// their centers.
std::pair<Array, Array> kde_resample(const Array& X, const Array& v0,
                                     std::size_t R, std::uint64_t seed) {
  std::size_t n = X.shape()[0], d = X.shape()[1];
  std::vector<double> bw(d, 0.0);
  double scott = std::pow(static_cast<double>(n), -1.0 / (d + 4.0));
  for (std::size_t c = 0; c < d; ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += X[i * d + c];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double diff = X[i * d + c] - mean;
      var += diff * diff;
    }
    var = n > 1 ? var / (n - 1) : 0.0;
    bw[c] = std::sqrt(var) * scott;
  }
  Array Xs = Array::zeros({R, d});
  Array Vs = Array::zeros({R, d});
  Rng rng(seed);
  for (std::size_t k = 0; k < R; ++k) {
    std::size_t i = rng.uniform_int(0, n - 1);
    for (std::size_t c = 0; c < d; ++c) {
      Xs[k * d + c] = X[i * d + c] + bw[c] * rng.normal();
      Vs[k * d + c] = v0[i * d + c];
    }
  }
  return {std::move(Xs), std::move(Vs)};
}

json stats_json(const SeedStats& s) {
  return json{{"n", s.n}, {"mean", s.mean}, {"se", s.se}};
}

SeedStats make_stats(const std::vector<double>& xs) {
  SeedStats s;
  s.n = xs.size();
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= xs.size();
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.se = std::sqrt(ss / (xs.size() - 1)) / std::sqrt(double(xs.size()));
  }
  return s;
}

std::string scatter_svg(const Array& pred, const Array& obs,
                        const std::string& title) {
  std::size_t dp = pred.shape()[1], dob = obs.shape()[1];
  auto coord = [](const Array& a, std::size_t i, std::size_t c,
                  std::size_t d) { return c < d ? a[i * d + c] : 0.0; };
  double lo[2] = {std::numeric_limits<double>::infinity(),
                  std::numeric_limits<double>::infinity()};
  double hi[2] = {-lo[0], -lo[1]};
  auto scan = [&](const Array& a, std::size_t d) {
    for (std::size_t i = 0; i < a.shape()[0]; ++i)
      for (int c = 0; c < 2; ++c) {
        double v = coord(a, i, c, d);
        lo[c] = std::min(lo[c], v);
        hi[c] = std::max(hi[c], v);
      }
  };
  scan(pred, dp);
  scan(obs, dob);
  for (int c = 0; c < 2; ++c) {
    double pad = 0.05 * (hi[c] - lo[c]);
    if (pad <= 0) pad = 1.0;
    lo[c] -= pad;
    hi[c] += pad;
  }
  const double W = 640.0, H = 640.0, m = 46.0;
  auto px = [&](double x) { return m + (x - lo[0]) / (hi[0] - lo[0]) * (W - 2 * m); };
  auto py = [&](double y) { return H - m - (y - lo[1]) / (hi[1] - lo[1]) * (H - 2 * m); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W
      << "\" height=\"" << H << "\" viewBox=\"0 0 " << W << " " << H
      << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << m << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"14\">" << title << "</text>\n"
      << "<circle cx=\"" << W - 190 << "\" cy=\"19\" r=\"4\" fill=\"#2b6bd9\" "
         "fill-opacity=\"0.75\"/>\n"
      << "<text x=\"" << W - 182 << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"13\">observed</text>\n"
      << "<circle cx=\"" << W - 100 << "\" cy=\"19\" r=\"4\" fill=\"#d9472b\" "
         "fill-opacity=\"0.75\"/>\n"
      << "<text x=\"" << W - 92 << "\" y=\"24\" font-family=\"sans-serif\" "
         "font-size=\"13\">predicted</text>\n"
      << "<rect x=\"" << m << "\" y=\"" << m << "\" width=\"" << W - 2 * m
      << "\" height=\"" << H - 2 * m
      << "\" fill=\"none\" stroke=\"#999\" stroke-width=\"1\"/>\n";
  for (std::size_t i = 0; i < obs.shape()[0]; ++i)
    svg << "<circle class=\"obs\" cx=\"" << fmt_double(px(coord(obs, i, 0, dob)))
        << "\" cy=\"" << fmt_double(py(coord(obs, i, 1, dob)))
        << "\" r=\"2.5\" fill=\"#2b6bd9\" fill-opacity=\"0.75\"/>\n";
  for (std::size_t i = 0; i < pred.shape()[0]; ++i)
    svg << "<circle class=\"pred\" cx=\"" << fmt_double(px(coord(pred, i, 0, dp)))
        << "\" cy=\"" << fmt_double(py(coord(pred, i, 1, dp)))
        << "\" r=\"2.5\" fill=\"#d9472b\" fill-opacity=\"0.75\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("report_emit: cannot write " + path);
  f << content;
  if (!f) throw Error("report_emit: write failed for " + path);
}

}  // namespace

Mechanics make_mechanics(const energy::PotentialModel& model,
                         const energy::EnergyParams& params, double gamma) {
  const energy::PotentialModel* m = &model;
  Mechanics out;
  out.gamma = gamma;
  out.accel = [m, params](const Array& X, double t) {
    Array zero_v = Array::zeros(X.shape());
    return energy::acceleration(*m, params, X, zero_v, 0.0, t);
  };
  return out;
}

Mechanics make_mechanics(const energy::AnalyticEnergy& analytic, double gamma) {
  Mechanics out;
  out.gamma = gamma;
  out.accel = [analytic](const Array& X, double) { return analytic.force(X); };
  return out;
}

json EvalReport::to_json() const {
  json rows = json::array();
  for (const auto& e : entries)
    rows.push_back(json{{"label", e.label},
                        {"t", e.t},
                        {"w1", e.w1},
                        {"split", e.test_split ? "test" : "train"},
                        {"approx_w1", e.approx_w1},
                        {"converged", e.w1_converged}});
  return json{{"protocol", protocol},
              {"entries", std::move(rows)},
              {"train_mean", train_mean},
              {"test_mean", test_mean},
              {"any_approx_w1", any_approx_w1},
              {"any_nonconverged", any_nonconverged}};
}

EvalReport eval_report_from_json(const json& j) {
  try {
    EvalReport r;
    r.protocol = j.at("protocol").get<std::string>();
    r.train_mean = j.at("train_mean").get<double>();
    r.test_mean = j.at("test_mean").get<double>();
    r.any_approx_w1 = j.at("any_approx_w1").get<bool>();
    r.any_nonconverged = j.at("any_nonconverged").get<bool>();
    for (const auto& row : j.at("entries")) {
      EvalEntry e;
      e.label = row.at("label").get<std::string>();
      e.t = row.at("t").get<double>();
      e.w1 = row.at("w1").get<double>();
      e.test_split = row.at("split").get<std::string>() == "test";
      e.approx_w1 = row.at("approx_w1").get<bool>();
      e.w1_converged = row.at("converged").get<bool>();
      r.entries.push_back(std::move(e));
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("eval report json: ") + e.what());
  }
}

EvalReport forecast_eval(const Mechanics& mech,
                         const datagen::SnapshotDataset& train,
                         const datagen::SnapshotDataset& test, const Array& v0,
                         const integ::IntegratorConfig& icfg,
                         const ForecastOptions& opts) {
  train.validate();
  bool have_test = !test.times.empty();
  if (have_test) {
    test.validate();
    if (test.dim != train.dim)
      throw DataError("forecast_eval: train dim " + std::to_string(train.dim) +
                      " vs test dim " + std::to_string(test.dim));
    if (test.times.front() <= train.times.back())
      throw DataError(
          "forecast_eval: test times must follow train times, got test t=" +
          fmt_double(test.times.front()) + " <= train t=" +
          fmt_double(train.times.back()));
  }
  icfg.validate();
  const Array& X0 = train.snapshots[0];
  if (v0.shape() != X0.shape())
    throw ShapeError("forecast_eval: v0 shape " + shape_str(v0.shape()) +
                     " does not match first snapshot " +
                     shape_str(X0.shape()));

  integ::State cur{X0, v0, train.times[0]};
  if (opts.resample) {
    if (*opts.resample == 0)
      throw ConfigError("forecast_eval: resample size must be positive");
    auto [Xs, Vs] = kde_resample(X0, v0, *opts.resample, opts.resample_seed);
    cur.X = std::move(Xs);
    cur.V = std::move(Vs);
  }

  EvalReport report;
  report.protocol = "forecast";
  std::optional<Array> cache;
  std::size_t idx = 0;
  for (int split = 0; split < 2; ++split) {
    const datagen::SnapshotDataset& ds = split ? test : train;
    if (split && !have_test) break;
    for (std::size_t k = 0; k < ds.times.size(); ++k, ++idx) {
      std::string label = "t" + std::to_string(idx);
      if (idx > 0)
        advance_to(mech, cur, cache, ds.times[k], icfg.substeps, icfg.scheme,
                   label, "forecast_eval");
      score_entry(report, label, ds.times[k], cur.X, ds.snapshots[k],
                  split == 1, opts.exact_cap);
    }
  }
  finalize(report);
  return report;
}

VMode parse_v_mode(const std::string& name) {
  if (name == "provided") return VMode::Provided;
  if (name == "zero") return VMode::Zero;
  if (name == "carried") return VMode::Carried;
  throw ConfigError("unknown v_mode '" + name +
                    "' (want provided, zero, or carried)");
}

std::string v_mode_name(VMode mode) {
  switch (mode) {
    case VMode::Provided: return "provided";
    case VMode::Zero: return "zero";
    case VMode::Carried: return "carried";
  }
  throw ConfigError("invalid VMode");
}

EvalReport interpolate_eval(const Mechanics& mech,
                            const datagen::SnapshotDataset& dataset,
                            std::size_t heldout, VMode v_mode,
                            const integ::IntegratorConfig& icfg,
                            std::size_t exact_cap) {
  dataset.validate();
  icfg.validate();
  std::size_t M = dataset.num_times();
  if (heldout == 0 || heldout >= M)
    throw DomainError("interpolate_eval: heldout index must satisfy 0 < h < " +
                      std::to_string(M) + ", got " + std::to_string(heldout));

  const Array& Xprev = dataset.snapshots[heldout - 1];
  Array vstart;
  switch (v_mode) {
    case VMode::Provided: {
      if (!dataset.has_velocities())
        throw DataError(
            "interpolate_eval: v_mode 'provided' needs dataset velocities");
      vstart = dataset.velocities[heldout - 1];
      break;
    }
    case VMode::Zero: {
      vstart = Array::zeros(Xprev.shape());
      break;
    }
    case VMode::Carried: {
      // Rest-start rollout from t0 up to t_{h-1}; only the intermediate
      // times matter, not the snapshots there.
      integ::State cur{dataset.snapshots[0],
                       Array::zeros(dataset.snapshots[0].shape()),
                       dataset.times[0]};
      std::optional<Array> cache;
      for (std::size_t k = 1; k < heldout; ++k)
        advance_to(mech, cur, cache, dataset.times[k], icfg.substeps,
                   icfg.scheme, "t" + std::to_string(k), "interpolate_eval");
      if (cur.X.shape() != Xprev.shape())
        throw DataError(
            "interpolate_eval: carried mode needs matching cloud sizes, "
            "rolled " + shape_str(cur.X.shape()) + " vs observed " +
            shape_str(Xprev.shape()));
      auto match = divergence::optimal_assignment(cur.X, Xprev);
      std::size_t d = Xprev.shape()[1];
      vstart = Array::zeros(Xprev.shape());
      for (std::size_t i = 0; i < match.size(); ++i)
        for (std::size_t c = 0; c < d; ++c)
          vstart[match[i] * d + c] = cur.V[i * d + c];
      break;
    }
  }

  EvalReport report;
  report.protocol = "interpolate";
  integ::State cur{Xprev, std::move(vstart), dataset.times[heldout - 1]};
  std::optional<Array> cache;
  std::string label = "t" + std::to_string(heldout);
  advance_to(mech, cur, cache, dataset.times[heldout], icfg.substeps,
             icfg.scheme, label, "interpolate_eval");
  score_entry(report, label, dataset.times[heldout], cur.X,
              dataset.snapshots[heldout], true, exact_cap);
  finalize(report);
  return report;
}

std::vector<std::string> report_emit(const EvalReport& report,
                                     const std::string& dir,
                                     const std::vector<std::string>& formats) {
  for (const auto& f : formats)
    if (f != "csv" && f != "json" && f != "svg")
      throw ConfigError("report_emit: unknown format '" + f +
                        "' (want csv, json, or svg)");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error("report_emit: cannot create " + dir + ": " + ec.message());

  std::vector<std::string> written;
  for (const auto& f : formats) {
    if (f == "csv") {
      std::ostringstream csv;
      csv << "label,t,w1,split,approx_w1,converged\n";
      for (const auto& e : report.entries)
        csv << e.label << ',' << fmt_double(e.t) << ',' << fmt_double(e.w1)
            << ',' << (e.test_split ? "test" : "train") << ','
            << (e.approx_w1 ? 1 : 0) << ',' << (e.w1_converged ? 1 : 0)
            << '\n';
      std::string path = (fs::path(dir) / (report.protocol + ".csv")).string();
      write_file(path, csv.str());
      written.push_back(path);
    } else if (f == "json") {
      std::string path = (fs::path(dir) / (report.protocol + ".json")).string();
      write_file(path, report.to_json().dump(2) + "\n");
      written.push_back(path);
    } else {
      for (const auto& e : report.entries) {
        std::string path =
            (fs::path(dir) / (report.protocol + "_" + e.label + ".svg"))
                .string();
        write_file(path, scatter_svg(e.predicted, e.observed,
                                     report.protocol + " " + e.label +
                                         "  W1=" + fmt_double(e.w1)));
        written.push_back(path);
      }
    }
  }
  return written;
}

json AggregateReport::to_json() const {
  json per = json::array();
  for (const auto& [label, s] : per_time)
    per.push_back(json{{"label", label}, {"stats", stats_json(s)}});
  return json{{"train_pooled", stats_json(train_pooled)},
              {"test_pooled", stats_json(test_pooled)},
              {"per_time", std::move(per)}};
}

AggregateReport aggregate_reports(const std::vector<EvalReport>& reports) {
  AggregateReport out;
  if (reports.empty()) return out;
  for (const auto& r : reports)
    if (r.protocol != reports[0].protocol)
      throw ConfigError("aggregate_reports: mixed protocols '" +
                        reports[0].protocol + "' and '" + r.protocol + "'");

  std::vector<std::pair<std::string, std::vector<double>>> per;
  std::vector<double> train_means, test_means;
  for (const auto& r : reports) {
    bool any_train = false, any_test = false;
    for (const auto& e : r.entries) {
      (e.test_split ? any_test : any_train) = true;
      auto it = std::find_if(per.begin(), per.end(),
                             [&](const auto& p) { return p.first == e.label; });
      if (it == per.end()) {
        per.emplace_back(e.label, std::vector<double>{e.w1});
      } else {
        it->second.push_back(e.w1);
      }
    }
    if (any_train) train_means.push_back(r.train_mean);
    if (any_test) test_means.push_back(r.test_mean);
  }
  out.train_pooled = make_stats(train_means);
  out.test_pooled = make_stats(test_means);
  for (auto& [label, xs] : per) out.per_time.emplace_back(label, make_stats(xs));
  return out;
}

}  // namespace popmech::eval
