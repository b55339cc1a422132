#include "popmech/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>

#include "popmech/errors.hpp"
#include "popmech/rng.hpp"

namespace popmech::datagen {

using nlohmann::json;

void SnapshotDataset::validate() const {
  if (dim < 1) throw DataError("dataset: dim must be >= 1");
  if (times.empty()) throw DataError("dataset: no snapshots");
  if (snapshots.size() != times.size())
    throw DataError("dataset: " + std::to_string(times.size()) + " times but " +
                    std::to_string(snapshots.size()) + " snapshots");
  for (std::size_t i = 0; i + 1 < times.size(); ++i)
    if (!(times[i] < times[i + 1]))
      throw DataError("dataset: times must be strictly increasing, got " +
                      std::to_string(times[i]) + " then " +
                      std::to_string(times[i + 1]));
  for (std::size_t i = 0; i < snapshots.size(); ++i) {
    const Array& s = snapshots[i];
    if (s.rank() != 2 || s.shape()[1] != dim || s.shape()[0] < 1)
      throw ShapeError("dataset: snapshot " + std::to_string(i) +
                       " has shape " + shape_str(s.shape()) + ", expected (N, " +
                       std::to_string(dim) + ")");
    if (paired && s.shape()[0] != snapshots[0].shape()[0])
      throw DataError("dataset: paired data needs equal particle counts, got " +
                      std::to_string(s.shape()[0]) + " at time index " +
                      std::to_string(i) + " vs " +
                      std::to_string(snapshots[0].shape()[0]));
  }
  if (!velocities.empty()) {
    if (velocities.size() != snapshots.size())
      throw DataError("dataset: velocities present for " +
                      std::to_string(velocities.size()) + " of " +
                      std::to_string(snapshots.size()) + " snapshots");
    for (std::size_t i = 0; i < velocities.size(); ++i)
      if (!velocities[i].same_shape(snapshots[i]))
        throw ShapeError("dataset: velocity " + std::to_string(i) +
                         " shape " + shape_str(velocities[i].shape()) +
                         " does not match snapshot " +
                         shape_str(snapshots[i].shape()));
  }
}

void SdeSpec::validate() const {
  resolve_potential().validate_dim(dim);
  if (dim < 1) throw ConfigError("sde: dim must be >= 1");
  if (sigma2 < 0.0) throw ConfigError("sde: sigma2 must be >= 0");
  if (!(dt > 0.0)) throw ConfigError("sde: dt must be > 0");
  if (em_substeps < 1) throw ConfigError("sde: em_substeps must be >= 1");
  if (num_train < 1) throw ConfigError("sde: num_train must be >= 1");
  if (num_test < 0) throw ConfigError("sde: num_test must be >= 0");
  if (particles < 1) throw ConfigError("sde: particles must be >= 1");
  if (!(init_variance > 0.0))
    throw ConfigError("sde: init_variance must be > 0");
}

Potential SdeSpec::resolve_potential() const {
  std::string name = potential;
  std::replace(name.begin(), name.end(), '-', '_');
  if (name == "quadratic") return Potential::parse(name, 5.0);  // V = 5|x|^2
  if (name == "bohachevsky" || name == "oakley_ohagan" ||
      name == "styblinski_tang" || name == "wavy_plateau")
    return Potential::parse(name);
  throw ConfigError(
      "sde: potential must be one of quadratic, bohachevsky, oakley-ohagan, "
      "styblinski-tang, wavy-plateau; got " + potential);
}

namespace {

// Euler-Maruyama substeps in place; one normal draw per coordinate per step.
void em_steps(Array& X, const Potential& pot, double sigma, double h,
              int steps, Rng& rng) {
  double noise = sigma * std::sqrt(h);
  for (int s = 0; s < steps; ++s) {
    Array gv = pot.gradient_rows(X);
    for (std::size_t i = 0; i < X.size(); ++i)
      X[i] += -gv[i] * h + noise * rng.normal();
  }
}

Array draw_init(const SdeSpec& spec, Rng& rng) {
  return rng.normal_array({spec.particles, spec.dim}, 0.0,
                          std::sqrt(spec.init_variance));
}

}  // namespace

GeneratedData gen_sde(const SdeSpec& spec) {
  spec.validate();
  Potential pot = spec.resolve_potential();
  double sigma = std::sqrt(spec.sigma2);
  double h = spec.dt / spec.em_substeps;
  int total = spec.num_train + spec.num_test;

  GeneratedData out;
  out.train.dim = out.test.dim = spec.dim;
  out.train.paired = out.test.paired = spec.paired;

  auto record = [&](int i, Array X) {
    SnapshotDataset& dst = i < spec.num_train ? out.train : out.test;
    dst.times.push_back(i * spec.dt);
    dst.snapshots.push_back(std::move(X));
  };

  if (spec.paired) {
    Rng rng(spec.seed);
    Array X = draw_init(spec, rng);
    for (int i = 0; i < total; ++i) {
      if (i > 0) em_steps(X, pot, sigma, h, spec.em_substeps, rng);
      record(i, X);
    }
  } else {
    // Independent population per recorded time, seeded by time index, so
    // any evaluation order (or parallel schedule) gives identical data.
    for (int i = 0; i < total; ++i) {
      Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(i)));
      Array X = draw_init(spec, rng);
      em_steps(X, pot, sigma, h, i * spec.em_substeps, rng);
      record(i, std::move(X));
    }
  }
  return out;
}

Array analytic_gf_v0(const SdeSpec& spec, const Array& X0) {
  spec.validate();
  if (X0.rank() != 2 || X0.shape()[1] != spec.dim)
    throw ShapeError("analytic_gf_v0: X0 shape " + shape_str(X0.shape()) +
                     " does not match dim " + std::to_string(spec.dim));
  Potential pot = spec.resolve_potential();
  Array v = pot.gradient_rows(X0);
  double score = spec.sigma2 / (2.0 * spec.init_variance);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = -v[i] + score * X0[i];
  return v;
}

void BoidsSpec::validate() const {
  if (particles < 1) throw ConfigError("boids: particles must be >= 1");
  if (dim < 1) throw ConfigError("boids: dim must be >= 1");
  if (!(0.0 < r_inner && r_inner < r_outer))
    throw ConfigError("boids: need 0 < r_inner < r_outer");
  if (w_separation < 0 || w_alignment < 0 || w_cohesion < 0 || w_boundary < 0)
    throw ConfigError("boids: weights must be >= 0");
  if (!(boundary_radius > 0.0))
    throw ConfigError("boids: boundary_radius must be > 0");
  if (!(dt > 0.0)) throw ConfigError("boids: dt must be > 0");
  if (num_train < 1) throw ConfigError("boids: num_train must be >= 1");
  if (num_test < 0) throw ConfigError("boids: num_test must be >= 0");
  for (const auto& m : init_means)
    if (m.size() != dim)
      throw ConfigError("boids: init mean has " + std::to_string(m.size()) +
                        " coordinates, dim is " + std::to_string(dim));
  if (!(init_pos_std > 0.0)) throw ConfigError("boids: init_pos_std must be > 0");
  if (init_speed < 0.0) throw ConfigError("boids: init_speed must be >= 0");
}

Array boids_accel(const BoidsSpec& s, const Array& X, const Array& V) {
  std::size_t n = X.shape()[0], d = X.shape()[1];
  Array A = Array::zeros({n, d});
  std::vector<double> sep(d), ali(d), coh(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sep.begin(), sep.end(), 0.0);
    std::fill(ali.begin(), ali.end(), 0.0);
    std::fill(coh.begin(), coh.end(), 0.0);
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double d2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff = X[i * d + c] - X[j * d + c];
        d2 += diff * diff;
      }
      if (d2 <= 0.0 || d2 >= s.r_outer * s.r_outer) continue;
      ++n_out;
      for (std::size_t c = 0; c < d; ++c) {
        ali[c] += V[j * d + c] - V[i * d + c];
        coh[c] += X[j * d + c] - X[i * d + c];
      }
      if (d2 < s.r_inner * s.r_inner) {
        ++n_in;
        for (std::size_t c = 0; c < d; ++c)
          sep[c] += (X[i * d + c] - X[j * d + c]) / d2;
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      double a = 0.0;
      if (n_in) a += s.w_separation * sep[c] / static_cast<double>(n_in);
      if (n_out)
        a += (s.w_alignment * ali[c] + s.w_cohesion * coh[c]) /
             static_cast<double>(n_out);
      A[i * d + c] = a;
    }
    double r2 = 0.0;
    for (std::size_t c = 0; c < d; ++c) r2 += X[i * d + c] * X[i * d + c];
    double r = std::sqrt(r2);
    if (r > s.boundary_radius)
      for (std::size_t c = 0; c < d; ++c)
        A[i * d + c] -= s.w_boundary * (X[i * d + c] / r) *
                        (r - s.boundary_radius);
  }
  return A;
}

GeneratedData gen_boids(const BoidsSpec& spec) {
  spec.validate();
  std::size_t n = spec.particles, d = spec.dim;
  Rng rng(spec.seed);

  Array X({n, d}), V({n, d});
  std::size_t comps = std::max<std::size_t>(spec.init_means.size(), 1);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c0 = comps > 1 ? rng.uniform_int(0, comps - 1) : 0;
    for (std::size_t c = 0; c < d; ++c) {
      double mean = spec.init_means.empty() ? 0.0 : spec.init_means[c0][c];
      X[i * d + c] = mean + spec.init_pos_std * rng.normal();
    }
  }
  for (std::size_t i = 0; i < V.size(); ++i) V[i] = spec.init_speed * rng.normal();

  GeneratedData out;
  out.train.dim = out.test.dim = d;
  out.train.paired = out.test.paired = true;
  int total = spec.num_train + spec.num_test;
  for (int k = 0; k < total; ++k) {
    SnapshotDataset& dst = k < spec.num_train ? out.train : out.test;
    dst.times.push_back(k * spec.dt);
    dst.snapshots.push_back(X);
    dst.velocities.push_back(V);
    if (k + 1 == total) break;
    Array A = boids_accel(spec, X, V);
    for (std::size_t i = 0; i < V.size(); ++i) V[i] += spec.dt * A[i];
    for (std::size_t i = 0; i < X.size(); ++i) X[i] += spec.dt * V[i];
  }
  return out;
}

V0Mode parse_v0_mode(const std::string& name) {
  if (name == "provided") return V0Mode::Provided;
  if (name == "zero") return V0Mode::Zero;
  if (name == "paired-fd" || name == "paired-finite-difference")
    return V0Mode::PairedFiniteDifference;
  throw ConfigError("v0 mode must be provided, zero, or paired-fd; got " +
                    name);
}

std::string v0_mode_name(V0Mode mode) {
  switch (mode) {
    case V0Mode::Provided: return "provided";
    case V0Mode::Zero: return "zero";
    case V0Mode::PairedFiniteDifference: return "paired-fd";
  }
  return "?";
}

Array estimate_v0(const SnapshotDataset& dataset, V0Mode mode) {
  dataset.validate();
  switch (mode) {
    case V0Mode::Provided:
      if (!dataset.has_velocities())
        throw DataError("estimate_v0: provided mode needs stored velocities");
      return dataset.velocities[0];
    case V0Mode::Zero:
      return Array::zeros(dataset.snapshots[0].shape());
    case V0Mode::PairedFiniteDifference: {
      if (!dataset.paired)
        throw DataError("estimate_v0: paired-fd mode needs paired data");
      if (dataset.num_times() < 2)
        throw DataError("estimate_v0: paired-fd mode needs >= 2 times");
      Array v = dataset.snapshots[1];
      const Array& x0 = dataset.snapshots[0];
      double span = dataset.times[1] - dataset.times[0];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = (v[i] - x0[i]) / span;
      return v;
    }
  }
  throw ConfigError("estimate_v0: unknown mode");
}

namespace {

std::string fmt_double(double v) {
  char buf[40];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

std::string snapshot_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "snap_%03zu.csv", i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const SnapshotDataset& dataset) {
  dataset.validate();
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["dim"] = dataset.dim;
  manifest["paired"] = dataset.paired;
  manifest["has_velocities"] = dataset.has_velocities();
  manifest["times"] = dataset.times;
  json files = json::array();
  for (std::size_t i = 0; i < dataset.snapshots.size(); ++i)
    files.push_back(snapshot_file(i));
  manifest["snapshots"] = files;

  for (std::size_t i = 0; i < dataset.snapshots.size(); ++i) {
    std::string path = dir + "/" + snapshot_file(i);
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw DataError("save_dataset: cannot write " + path);
    for (std::size_t c = 0; c < dataset.dim; ++c)
      f << (c ? "," : "") << "x" << c + 1;
    if (dataset.has_velocities())
      for (std::size_t c = 0; c < dataset.dim; ++c) f << ",v" << c + 1;
    f << "\n";
    const Array& X = dataset.snapshots[i];
    std::size_t n = X.shape()[0], d = dataset.dim;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c)
        f << (c ? "," : "") << fmt_double(X[r * d + c]);
      if (dataset.has_velocities()) {
        const Array& V = dataset.velocities[i];
        for (std::size_t c = 0; c < d; ++c)
          f << "," << fmt_double(V[r * d + c]);
      }
      f << "\n";
    }
    if (!f) throw DataError("save_dataset: write failed for " + path);
  }
  std::ofstream mf(dir + "/manifest.json", std::ios::trunc);
  if (!mf) throw DataError("save_dataset: cannot write " + dir +
                           "/manifest.json");
  mf << manifest.dump(2) << "\n";
}

namespace {

std::vector<std::string> split_csv(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& tok, const std::string& file,
                    std::size_t lineno) {
  double v = 0.0;
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc{} || p != e)
    throw DataError("load_dataset: " + file + " line " +
                    std::to_string(lineno) + ": bad number '" + tok + "'");
  return v;
}

}  // namespace

SnapshotDataset load_dataset(const std::string& dir) {
  std::string mpath = dir + "/manifest.json";
  std::ifstream mf(mpath);
  if (!mf) throw DataError("load_dataset: missing manifest " + mpath);
  json m;
  try {
    mf >> m;
  } catch (const json::exception& e) {
    throw DataError("load_dataset: malformed manifest " + mpath + ": " +
                    e.what());
  }
  SnapshotDataset ds;
  try {
    if (m.at("format_version").get<int>() != 1)
      throw DataError("load_dataset: unsupported format_version in " + mpath);
    ds.dim = m.at("dim").get<std::size_t>();
    ds.paired = m.at("paired").get<bool>();
    ds.times = m.at("times").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw DataError("load_dataset: malformed manifest " + mpath + ": " +
                    e.what());
  }
  bool has_vel = false;
  std::vector<std::string> files;
  try {
    has_vel = m.at("has_velocities").get<bool>();
    files = m.at("snapshots").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError("load_dataset: malformed manifest " + mpath + ": " +
                    e.what());
  }
  if (files.size() != ds.times.size())
    throw DataError("load_dataset: manifest " + mpath + " lists " +
                    std::to_string(files.size()) + " files for " +
                    std::to_string(ds.times.size()) + " times");

  std::size_t cols = has_vel ? 2 * ds.dim : ds.dim;
  for (const std::string& name : files) {
    std::string path = dir + "/" + name;
    std::ifstream f(path);
    if (!f) throw DataError("load_dataset: missing snapshot file " + path);
    std::string line;
    if (!std::getline(f, line))
      throw DataError("load_dataset: " + path + " is empty");
    if (split_csv(line).size() != cols)
      throw DataError("load_dataset: " + path + " line 1: expected " +
                      std::to_string(cols) + " header columns, got " +
                      std::to_string(split_csv(line).size()));
    std::vector<double> vals;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::vector<std::string> toks = split_csv(line);
      if (toks.size() != cols)
        throw DataError("load_dataset: " + path + " line " +
                        std::to_string(lineno) + ": expected " +
                        std::to_string(cols) + " columns, got " +
                        std::to_string(toks.size()));
      for (const std::string& t : toks)
        vals.push_back(parse_double(t, path, lineno));
    }
    if (vals.empty())
      throw DataError("load_dataset: " + path + " has no particle rows");
    std::size_t n = vals.size() / cols;
    Array X({n, ds.dim});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < ds.dim; ++c)
        X[r * ds.dim + c] = vals[r * cols + c];
    ds.snapshots.push_back(std::move(X));
    if (has_vel) {
      Array V({n, ds.dim});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < ds.dim; ++c)
          V[r * ds.dim + c] = vals[r * cols + ds.dim + c];
      ds.velocities.push_back(std::move(V));
    }
  }
  ds.validate();
  return ds;
}

}  // namespace popmech::datagen
