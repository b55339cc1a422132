#include "popmech/cli.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "popmech/errors.hpp"
#include "popmech/eval.hpp"

namespace popmech::cli {

namespace fs = std::filesystem;
namespace ev = popmech::eval;
using nlohmann::json;

ExperimentConfig::ExperimentConfig() {
  // CLI-level benchmark defaults on top of the library structs: the boids
  // protocol records 50 train + 50 held-out frames, and inference
  // integration uses 5 substeps per data interval.
  boids.num_train = 50;
  boids.num_test = 50;
  integrator.substeps = 5;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

// ---------------------------------------------------------------- schema --

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("config " + (path.empty() ? "/" : path) + ": " + what);
}

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> keys) {
  if (!j.is_object()) bad(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) bad(path + "/" + it.key(), "unknown key");
  }
}

const json* find(const json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void set_num(const json& j, const std::string& p, const char* k,
             double& slot) {
  if (const json* v = find(j, k)) {
    if (!v->is_number()) bad(p + "/" + k, "expected a number");
    slot = v->get<double>();
  }
}

void set_int(const json& j, const std::string& p, const char* k, int& slot) {
  if (const json* v = find(j, k)) {
    if (!v->is_number_integer()) bad(p + "/" + k, "expected an integer");
    slot = v->get<int>();
  }
}

template <class T>
void set_uint(const json& j, const std::string& p, const char* k, T& slot) {
  if (const json* v = find(j, k)) {
    if (!v->is_number_integer() || v->get<long long>() < 0)
      bad(p + "/" + k, "expected a nonnegative integer");
    slot = static_cast<T>(v->get<unsigned long long>());
  }
}

void set_bool(const json& j, const std::string& p, const char* k, bool& slot) {
  if (const json* v = find(j, k)) {
    if (!v->is_boolean()) bad(p + "/" + k, "expected a boolean");
    slot = v->get<bool>();
  }
}

void set_str(const json& j, const std::string& p, const char* k,
             std::string& slot) {
  if (const json* v = find(j, k)) {
    if (!v->is_string()) bad(p + "/" + k, "expected a string");
    slot = v->get<std::string>();
  }
}

void parse_sde(const json& j, const std::string& p, datagen::SdeSpec& s) {
  check_keys(j, p,
             {"potential", "dim", "sigma2", "dt", "em_substeps", "num_train",
              "num_test", "particles", "init_variance", "paired", "seed"});
  set_str(j, p, "potential", s.potential);
  set_uint(j, p, "dim", s.dim);
  set_num(j, p, "sigma2", s.sigma2);
  set_num(j, p, "dt", s.dt);
  set_int(j, p, "em_substeps", s.em_substeps);
  set_int(j, p, "num_train", s.num_train);
  set_int(j, p, "num_test", s.num_test);
  set_uint(j, p, "particles", s.particles);
  set_num(j, p, "init_variance", s.init_variance);
  set_bool(j, p, "paired", s.paired);
  set_uint(j, p, "seed", s.seed);
}

void parse_boids(const json& j, const std::string& p, datagen::BoidsSpec& b) {
  check_keys(j, p,
             {"particles", "dim", "r_inner", "r_outer", "w_separation",
              "w_alignment", "w_cohesion", "w_boundary", "boundary_radius",
              "dt", "num_train", "num_test", "init_means", "init_pos_std",
              "init_speed", "seed"});
  set_uint(j, p, "particles", b.particles);
  set_uint(j, p, "dim", b.dim);
  set_num(j, p, "r_inner", b.r_inner);
  set_num(j, p, "r_outer", b.r_outer);
  set_num(j, p, "w_separation", b.w_separation);
  set_num(j, p, "w_alignment", b.w_alignment);
  set_num(j, p, "w_cohesion", b.w_cohesion);
  set_num(j, p, "w_boundary", b.w_boundary);
  set_num(j, p, "boundary_radius", b.boundary_radius);
  set_num(j, p, "dt", b.dt);
  set_int(j, p, "num_train", b.num_train);
  set_int(j, p, "num_test", b.num_test);
  set_num(j, p, "init_pos_std", b.init_pos_std);
  set_num(j, p, "init_speed", b.init_speed);
  set_uint(j, p, "seed", b.seed);
  if (const json* v = find(j, "init_means")) {
    if (!v->is_array()) bad(p + "/init_means", "expected an array of arrays");
    b.init_means.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& row = (*v)[i];
      if (!row.is_array())
        bad(p + "/init_means/" + std::to_string(i), "expected an array");
      std::vector<double> mean;
      for (std::size_t c = 0; c < row.size(); ++c) {
        if (!row[c].is_number())
          bad(p + "/init_means/" + std::to_string(i) + "/" +
                  std::to_string(c),
              "expected a number");
        mean.push_back(row[c].get<double>());
      }
      b.init_means.push_back(std::move(mean));
    }
  }
}

void parse_energy(const json& j, const std::string& p,
                  energy::EnergyConfig& e) {
  check_keys(j, p,
             {"dim", "hidden", "blocks", "heads", "ff_inner", "time_features",
              "activation", "dropout"});
  set_uint(j, p, "dim", e.dim);
  set_uint(j, p, "hidden", e.hidden);
  set_uint(j, p, "blocks", e.blocks);
  set_uint(j, p, "heads", e.heads);
  set_uint(j, p, "ff_inner", e.ff_inner);
  set_uint(j, p, "time_features", e.time_features);
  set_str(j, p, "activation", e.activation);
  set_num(j, p, "dropout", e.dropout);
}

void parse_train(const json& j, const std::string& p,
                 trainer::TrainConfig& t) {
  check_keys(j, p,
             {"lr_theta", "lr_gamma", "gamma_init", "gamma_learnable",
              "gamma_fixed_value", "epochs", "substeps_train", "minibatch",
              "loss", "ema_decay", "weight_decay", "grad_clip_norm", "seed"});
  set_num(j, p, "lr_theta", t.lr_theta);
  set_num(j, p, "lr_gamma", t.lr_gamma);
  set_num(j, p, "gamma_init", t.gamma_init);
  set_bool(j, p, "gamma_learnable", t.gamma_learnable);
  set_num(j, p, "gamma_fixed_value", t.gamma_fixed_value);
  set_int(j, p, "epochs", t.epochs);
  if (t.epochs < 0) bad(p + "/epochs", "expected a nonnegative integer");
  set_int(j, p, "substeps_train", t.substeps_train);
  set_num(j, p, "ema_decay", t.ema_decay);
  set_num(j, p, "weight_decay", t.weight_decay);
  set_uint(j, p, "seed", t.seed);
  if (const json* v = find(j, "minibatch")) {
    if (v->is_null()) {
      t.minibatch.reset();
    } else if (v->is_number_integer() && v->get<long long>() > 0) {
      t.minibatch = v->get<std::size_t>();
    } else {
      bad(p + "/minibatch", "expected null or a positive integer");
    }
  }
  if (const json* v = find(j, "grad_clip_norm")) {
    if (v->is_null()) {
      t.grad_clip_norm.reset();
    } else if (v->is_number()) {
      t.grad_clip_norm = v->get<double>();
    } else {
      bad(p + "/grad_clip_norm", "expected null or a number");
    }
  }
  if (const json* v = find(j, "loss")) {
    std::string lp = p + "/loss";
    check_keys(*v, lp, {"p", "blur", "max_iters", "tol", "envelope"});
    set_int(*v, lp, "p", t.loss.p);
    set_int(*v, lp, "max_iters", t.loss.max_iters);
    set_num(*v, lp, "tol", t.loss.tol);
    set_bool(*v, lp, "envelope", t.loss.envelope);
    if (const json* b = find(*v, "blur")) {
      if (b->is_string()) {
        if (b->get<std::string>() != "auto")
          bad(lp + "/blur", "expected a number or \"auto\"");
        t.auto_blur = true;
      } else if (b->is_number()) {
        t.loss.blur = b->get<double>();
        t.auto_blur = false;
      } else {
        bad(lp + "/blur", "expected a number or \"auto\"");
      }
    }
  }
}

void parse_integrator(const json& j, const std::string& p,
                      integ::IntegratorConfig& ic) {
  check_keys(j, p, {"scheme", "dt", "substeps"});
  set_num(j, p, "dt", ic.dt);
  set_int(j, p, "substeps", ic.substeps);
  if (const json* v = find(j, "scheme")) {
    if (!v->is_string()) bad(p + "/scheme", "expected a string");
    try {
      ic.scheme = integ::parse_scheme(v->get<std::string>());
    } catch (const ConfigError& e) {
      bad(p + "/scheme", e.what());
    }
  }
}

void parse_eval_section(const json& j, const std::string& p, EvalSection& e) {
  check_keys(j, p,
             {"protocol", "v_mode", "heldout", "resample", "resample_seed",
              "exact_cap", "formats", "use_ema"});
  set_str(j, p, "protocol", e.protocol);
  if (e.protocol != "forecast" && e.protocol != "interpolate")
    bad(p + "/protocol", "expected forecast or interpolate, got '" +
                             e.protocol + "'");
  set_str(j, p, "v_mode", e.v_mode);
  try {
    ev::parse_v_mode(e.v_mode);
  } catch (const ConfigError& err) {
    bad(p + "/v_mode", err.what());
  }
  set_uint(j, p, "heldout", e.heldout);
  set_uint(j, p, "resample_seed", e.resample_seed);
  set_uint(j, p, "exact_cap", e.exact_cap);
  set_bool(j, p, "use_ema", e.use_ema);
  if (const json* v = find(j, "resample")) {
    if (v->is_null()) {
      e.resample.reset();
    } else if (v->is_number_integer() && v->get<long long>() > 0) {
      e.resample = v->get<std::size_t>();
    } else {
      bad(p + "/resample", "expected null or a positive integer");
    }
  }
  if (const json* v = find(j, "formats")) {
    if (!v->is_array()) bad(p + "/formats", "expected an array of strings");
    e.formats.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& f = (*v)[i];
      if (!f.is_string())
        bad(p + "/formats/" + std::to_string(i), "expected a string");
      std::string name = f.get<std::string>();
      if (name != "csv" && name != "json" && name != "svg")
        bad(p + "/formats/" + std::to_string(i),
            "unknown format '" + name + "' (want csv, json, or svg)");
      e.formats.push_back(std::move(name));
    }
  }
}

// ------------------------------------------------------------ plumbing ----

void write_text(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f << content;
  if (!f) throw Error("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void save_matrix_csv(const std::string& path, const Array& X) {
  std::size_t n = X.shape()[0], d = X.shape()[1];
  std::ostringstream out;
  for (std::size_t c = 0; c < d; ++c)
    out << (c ? "," : "") << "x" << (c + 1);
  out << "\n";
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c)
      out << (c ? "," : "") << fmt_double(X[r * d + c]);
    out << "\n";
  }
  write_text(path, out.str());
}

Array load_matrix_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read " + path);
  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::size_t d = 1 + static_cast<std::size_t>(
                          std::count(line.begin(), line.end(), ','));
  std::vector<double> vals;
  std::size_t rows = 0, lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cols = 0, pos = 0;
    while (pos <= line.size()) {
      std::size_t next = line.find(',', pos);
      if (next == std::string::npos) next = line.size();
      double v = 0.0;
      auto [p, ec] =
          std::from_chars(line.data() + pos, line.data() + next, v);
      if (ec != std::errc{} || p != line.data() + next)
        throw DataError(path + " line " + std::to_string(lineno) +
                        ": bad number '" + line.substr(pos, next - pos) + "'");
      vals.push_back(v);
      ++cols;
      pos = next + 1;
    }
    if (cols != d)
      throw DataError(path + " line " + std::to_string(lineno) + ": expected " +
                      std::to_string(d) + " columns, got " +
                      std::to_string(cols));
    ++rows;
  }
  if (rows == 0) throw DataError(path + ": no data rows");
  Array X = Array::zeros({rows, d});
  for (std::size_t i = 0; i < vals.size(); ++i) X[i] = vals[i];
  return X;
}

json energy_to_json(const energy::EnergyConfig& e) {
  return json{{"dim", e.dim},           {"hidden", e.hidden},
              {"blocks", e.blocks},     {"heads", e.heads},
              {"ff_inner", e.ff_inner}, {"time_features", e.time_features},
              {"activation", e.activation}, {"dropout", e.dropout}};
}

// The hash covers experiment identity, not delivery: the output directory
// is excluded so relocating a run does not change its hash.
std::string config_hash_of(const ExperimentConfig& cfg) {
  json c = config_to_json(cfg);
  c.erase("output");
  return config_hash(c);
}

void write_provenance(const fs::path& dir, const std::string& command,
                      const ExperimentConfig& cfg, std::uint64_t seed) {
  json p{{"tool", "popmech"},
         {"version", "0.1.0"},
         {"command", command},
         {"config_hash", config_hash_of(cfg)},
         {"seed", seed},
         {"config", config_to_json(cfg)}};
  write_text((dir / "provenance.json").string(), p.dump(2) + "\n");
}

// Splits the trainer's JSON-lines stream into lines, drops the volatile
// wall_ms field so logs are bitwise reproducible, and echoes sparse
// progress to stderr.
class JsonlLogBuf : public std::streambuf {
 public:
  JsonlLogBuf(const std::string& path, bool append)
      : out_(path, std::ios::binary |
                       (append ? std::ios::app : std::ios::trunc)) {
    if (!out_) throw Error("cannot open log " + path);
  }

 protected:
  int overflow(int c) override {
    if (c == traits_type::eof()) return c;
    if (c == '\n')
      flush_line();
    else
      buf_.push_back(static_cast<char>(c));
    return c;
  }
  std::streamsize xsputn(const char* s, std::streamsize n) override {
    for (std::streamsize i = 0; i < n; ++i) overflow(s[i]);
    return n;
  }

 private:
  void flush_line() {
    json j = json::parse(buf_, nullptr, false);
    if (!j.is_discarded()) {
      j.erase("wall_ms");
      out_ << j.dump() << "\n";
      out_.flush();
      if (j.contains("epoch") && j.contains("loss")) {
        long e = j["epoch"].get<long>();
        if (e % 200 == 0)
          std::fprintf(stderr, "popmech train: epoch %ld loss %g gamma %g\n",
                       e, j["loss"].get<double>(), j["gamma"].get<double>());
      }
    } else {
      out_ << buf_ << "\n";
    }
    buf_.clear();
  }

  std::ofstream out_;
  std::string buf_;
};

// ----------------------------------------------------------- commands -----

struct CmdArgs {
  std::string command;
  std::string config_path;
  std::vector<std::string> sets;
  std::string data, test_data, ckpt, resume, inputs;
};

Array resolve_v0(const ExperimentConfig& cfg,
                 const datagen::SnapshotDataset& ds,
                 const std::string& data_dir) {
  if (cfg.v0 == "file") {
    std::string path = cfg.v0_file.empty()
                           ? (fs::path(data_dir) / "v0.csv").string()
                           : cfg.v0_file;
    Array v0 = load_matrix_csv(path);
    if (v0.shape() != ds.snapshots[0].shape())
      throw DataError("v0 file " + path + " is " + shape_str(v0.shape()) +
                      " but the first snapshot is " +
                      shape_str(ds.snapshots[0].shape()));
    return v0;
  }
  return datagen::estimate_v0(ds, datagen::parse_v0_mode(cfg.v0));
}

void cmd_gen_sde(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.sde.validate();
  datagen::GeneratedData data = datagen::gen_sde(cfg.sde);
  fs::create_directories(out);
  datagen::save_dataset((out / "train").string(), data.train);
  if (!data.test.times.empty())
    datagen::save_dataset((out / "test").string(), data.test);
  // Closed-form gradient-flow initial velocity for the "file" v0 mode.
  save_matrix_csv((out / "v0.csv").string(),
                  datagen::analytic_gf_v0(cfg.sde, data.train.snapshots[0]));
  write_provenance(out, "gen-sde", cfg, cfg.sde.seed);
  std::printf("gen-sde: wrote %s (%zu train + %zu test times, %zu particles, dim %zu)\n",
              out.string().c_str(), data.train.times.size(),
              data.test.times.size(), cfg.sde.particles, cfg.sde.dim);
}

void cmd_gen_boids(const ExperimentConfig& cfg, const fs::path& out) {
  cfg.boids.validate();
  datagen::GeneratedData data = datagen::gen_boids(cfg.boids);
  fs::create_directories(out);
  datagen::save_dataset((out / "train").string(), data.train);
  if (!data.test.times.empty())
    datagen::save_dataset((out / "test").string(), data.test);
  write_provenance(out, "gen-boids", cfg, cfg.boids.seed);
  std::printf("gen-boids: wrote %s (%zu train + %zu test frames, %zu agents, dim %zu)\n",
              out.string().c_str(), data.train.times.size(),
              data.test.times.size(), cfg.boids.particles, cfg.boids.dim);
}

// Checkpoint header -> the energy config the checkpoint was trained with.
energy::EnergyConfig energy_from_header(const json& header,
                                        const std::string& path) {
  const json* e = find(header, "energy");
  if (!e) throw DataError("checkpoint " + path + " lacks an energy config");
  energy::EnergyConfig cfg;
  parse_energy(*e, "checkpoint/energy", cfg);
  return cfg;
}

void cmd_train(const ExperimentConfig& cfg, const CmdArgs& a,
               const fs::path& out) {
  datagen::SnapshotDataset ds = datagen::load_dataset(a.data);
  if (cfg.energy.dim != ds.dim)
    throw DataError("train: energy dim " + std::to_string(cfg.energy.dim) +
                    " does not match dataset dim " + std::to_string(ds.dim) +
                    " (" + a.data + ")");
  energy::AttentionEnergy model(cfg.energy);
  Array v0 = resolve_v0(cfg, ds, a.data);

  trainer::TrainState resume_state;
  bool resuming = !a.resume.empty();
  if (resuming) {
    auto [st, header] = trainer::load_train_state(a.resume);
    energy::EnergyConfig old = energy_from_header(header, a.resume);
    json now = energy_to_json(cfg.energy);
    if (energy_to_json(old) != now)
      throw ConfigError("train: checkpoint " + a.resume +
                        " was trained with a different energy config");
    resume_state = std::move(st);
  }

  fs::create_directories(out);
  JsonlLogBuf logbuf((out / "train_log.jsonl").string(), resuming);
  std::ostream log(&logbuf);
  trainer::TrainState st =
      trainer::train(model, ds, v0, cfg.train, cfg.integrator, &log, nullptr,
                     resuming ? &resume_state : nullptr);

  json extra{{"config_hash", config_hash_of(cfg)},
             {"energy", energy_to_json(cfg.energy)},
             {"dim", ds.dim},
             {"v0", cfg.v0},
             {"scheme", integ::scheme_name(cfg.integrator.scheme)}};
  trainer::save_train_state((out / "checkpoint.ckpt").string(), st,
                            model.param_specs(), extra);
  write_provenance(out, "train", cfg, cfg.train.seed);
  double final_loss =
      st.loss_history.empty() ? 0.0 : st.loss_history.back();
  std::printf("train: %d epochs, final loss %s, gamma %s -> %s\n", st.epoch,
              fmt_double(final_loss).c_str(), fmt_double(st.gamma).c_str(),
              (out / "checkpoint.ckpt").string().c_str());
}

struct LoadedModel {
  std::unique_ptr<energy::AttentionEnergy> model;
  energy::EnergyParams params;
  double gamma = 0.0;
};

LoadedModel load_model(const std::string& ckpt_path, bool use_ema,
                       std::size_t data_dim) {
  auto [st, header] = trainer::load_train_state(ckpt_path);
  energy::EnergyConfig ecfg = energy_from_header(header, ckpt_path);
  if (ecfg.dim != data_dim)
    throw DataError("checkpoint " + ckpt_path + " was trained at dim " +
                    std::to_string(ecfg.dim) + " but the dataset has dim " +
                    std::to_string(data_dim));
  LoadedModel out;
  out.model = std::make_unique<energy::AttentionEnergy>(ecfg);
  out.params = use_ema ? std::move(st.ema_params) : std::move(st.params);
  out.gamma = st.gamma;
  return out;
}

// Concatenated train(+test) boundary times and snapshots for rollout.
datagen::SnapshotDataset load_joined(const CmdArgs& a) {
  datagen::SnapshotDataset ds = datagen::load_dataset(a.data);
  if (!a.test_data.empty()) {
    datagen::SnapshotDataset test = datagen::load_dataset(a.test_data);
    if (test.dim != ds.dim)
      throw DataError("test bundle dim " + std::to_string(test.dim) +
                      " does not match train dim " + std::to_string(ds.dim));
    ds.times.insert(ds.times.end(), test.times.begin(), test.times.end());
    ds.snapshots.insert(ds.snapshots.end(), test.snapshots.begin(),
                        test.snapshots.end());
    if (ds.has_velocities() && test.has_velocities())
      ds.velocities.insert(ds.velocities.end(), test.velocities.begin(),
                           test.velocities.end());
    else
      ds.velocities.clear();
    ds.paired = ds.paired && test.paired;
    ds.validate();
  }
  return ds;
}

void cmd_rollout(const ExperimentConfig& cfg, const CmdArgs& a,
                 const fs::path& out) {
  datagen::SnapshotDataset ds = load_joined(a);
  LoadedModel lm = load_model(a.ckpt, cfg.eval.use_ema, ds.dim);
  ev::Mechanics mech = ev::make_mechanics(*lm.model, lm.params, lm.gamma);
  Array v0 = resolve_v0(cfg, ds, a.data);
  cfg.integrator.validate();

  datagen::SnapshotDataset pred;
  pred.dim = ds.dim;
  pred.paired = true;
  integ::State cur{ds.snapshots[0], v0, ds.times[0]};
  pred.times.push_back(cur.t);
  pred.snapshots.push_back(cur.X);
  pred.velocities.push_back(cur.V);
  std::optional<Array> cache;
  for (std::size_t k = 1; k < ds.times.size(); ++k) {
    double h = (ds.times[k] - cur.t) / cfg.integrator.substeps;
    for (int s = 0; s < cfg.integrator.substeps; ++s) {
      try {
        auto res = integ::step(cur, mech.accel, mech.gamma, h,
                               cfg.integrator.scheme,
                               cache ? &*cache : nullptr, s);
        cur = std::move(res.state);
        cache = std::move(res.cached_a);
      } catch (const Error& e) {
        throw NumericError("rollout: integrator failed advancing to t" +
                           std::to_string(k) + " (t=" +
                           fmt_double(ds.times[k]) + "): " + e.what());
      }
    }
    cur.t = ds.times[k];
    pred.times.push_back(cur.t);
    pred.snapshots.push_back(cur.X);
    pred.velocities.push_back(cur.V);
  }

  fs::create_directories(out);
  datagen::save_dataset((out / "rollout").string(), pred);
  write_provenance(out, "rollout", cfg, cfg.train.seed);
  std::printf("rollout: wrote %s (%zu boundaries)\n",
              (out / "rollout").string().c_str(), pred.times.size());
}

ev::EvalReport cmd_eval(const ExperimentConfig& cfg, const CmdArgs& a,
                        const fs::path& out) {
  datagen::SnapshotDataset train_ds = datagen::load_dataset(a.data);
  datagen::SnapshotDataset test_ds;
  if (!a.test_data.empty()) test_ds = datagen::load_dataset(a.test_data);
  LoadedModel lm = load_model(a.ckpt, cfg.eval.use_ema, train_ds.dim);
  ev::Mechanics mech = ev::make_mechanics(*lm.model, lm.params, lm.gamma);
  cfg.integrator.validate();

  ev::EvalReport report;
  if (cfg.eval.protocol == "forecast") {
    Array v0 = resolve_v0(cfg, train_ds, a.data);
    ev::ForecastOptions opts;
    opts.resample = cfg.eval.resample;
    opts.resample_seed = cfg.eval.resample_seed;
    opts.exact_cap = cfg.eval.exact_cap;
    report = ev::forecast_eval(mech, train_ds, test_ds, v0, cfg.integrator,
                               opts);
  } else {
    report = ev::interpolate_eval(mech, train_ds, cfg.eval.heldout,
                                  ev::parse_v_mode(cfg.eval.v_mode),
                                  cfg.integrator, cfg.eval.exact_cap);
  }

  ev::report_emit(report, out.string(), cfg.eval.formats);
  write_provenance(out, "eval", cfg, cfg.eval.resample_seed);
  std::printf("eval[%s]: train-mean W1 %s, test-mean W1 %s -> %s\n",
              report.protocol.c_str(), fmt_double(report.train_mean).c_str(),
              fmt_double(report.test_mean).c_str(), out.string().c_str());
  return report;
}

std::string aggregate_csv(const ev::AggregateReport& agg) {
  std::ostringstream out;
  out << "scope,label,n,mean,se\n";
  for (const auto& [label, s] : agg.per_time)
    out << "per_time," << label << ',' << s.n << ',' << fmt_double(s.mean)
        << ',' << fmt_double(s.se) << "\n";
  out << "pooled,train," << agg.train_pooled.n << ','
      << fmt_double(agg.train_pooled.mean) << ','
      << fmt_double(agg.train_pooled.se) << "\n";
  out << "pooled,test," << agg.test_pooled.n << ','
      << fmt_double(agg.test_pooled.mean) << ','
      << fmt_double(agg.test_pooled.se) << "\n";
  return out.str();
}

void cmd_report(const ExperimentConfig& cfg, const CmdArgs& a,
                const fs::path& out) {
  if (a.inputs.empty())
    throw ConfigError("report: --inputs needs at least one directory");
  std::vector<ev::EvalReport> reports;
  std::size_t pos = 0;
  const std::string& s = a.inputs;
  while (pos <= s.size()) {
    std::size_t next = s.find(',', pos);
    if (next == std::string::npos) next = s.size();
    std::string dir = s.substr(pos, next - pos);
    if (!dir.empty()) {
      std::string path =
          (fs::path(dir) / (cfg.eval.protocol + ".json")).string();
      reports.push_back(ev::eval_report_from_json(json::parse(
          read_text(path), nullptr, true)));
    }
    pos = next + 1;
  }
  if (reports.empty())
    throw ConfigError("report: --inputs needs at least one directory");
  ev::AggregateReport agg = ev::aggregate_reports(reports);
  fs::create_directories(out);
  write_text((out / "aggregate.json").string(), agg.to_json().dump(2) + "\n");
  write_text((out / "aggregate.csv").string(), aggregate_csv(agg));
  write_provenance(out, "report", cfg, 0);
  std::printf(
      "report: %zu reports -> %s (pooled train %s +- %s, test %s +- %s)\n",
      reports.size(), out.string().c_str(),
      fmt_double(agg.train_pooled.mean).c_str(),
      fmt_double(agg.train_pooled.se).c_str(),
      fmt_double(agg.test_pooled.mean).c_str(),
      fmt_double(agg.test_pooled.se).c_str());
}

// ------------------------------------------------------------ fan-out -----

int classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DomainError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const ShapeError*>(&e)) return 3;
  if (dynamic_cast<const NumericError*>(&e)) return 4;
  return 1;
}

std::size_t thread_cap() {
  if (const char* env = std::getenv("POPMECH_THREADS")) {
    unsigned long v = 0;
    auto [p, ec] = std::from_chars(env, env + std::strlen(env), v);
    if (ec != std::errc{} || *p != '\0' || v == 0)
      throw ConfigError("POPMECH_THREADS must be a positive integer, got '" +
                        std::string(env) + "'");
    return v;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc ? hc : 1;
}

void apply_seed(ExperimentConfig& cfg, std::uint64_t s) {
  cfg.sde.seed = s;
  cfg.boids.seed = s;
  cfg.train.seed = s;
  cfg.eval.resample_seed = s;
}

std::string subst_seed(std::string s, std::uint64_t seed) {
  const std::string token = "{seed}";
  const std::string rep = std::to_string(seed);
  for (std::size_t pos = s.find(token); pos != std::string::npos;
       pos = s.find(token, pos + rep.size()))
    s.replace(pos, token.size(), rep);
  return s;
}

struct RunOutcome {
  int code = 0;
  std::string msg;
  std::optional<ev::EvalReport> report;
};

RunOutcome run_one(const ExperimentConfig& cfg, const CmdArgs& a,
                   const fs::path& out) {
  RunOutcome r;
  try {
    if (a.command == "gen-sde") {
      cmd_gen_sde(cfg, out);
    } else if (a.command == "gen-boids") {
      cmd_gen_boids(cfg, out);
    } else if (a.command == "train") {
      cmd_train(cfg, a, out);
    } else if (a.command == "rollout") {
      cmd_rollout(cfg, a, out);
    } else if (a.command == "eval") {
      r.report = cmd_eval(cfg, a, out);
    } else {
      cmd_report(cfg, a, out);
    }
  } catch (const std::exception& e) {
    r.code = classify(e);
    r.msg = a.command + ": " + e.what();
  }
  return r;
}

int fan_out(const ExperimentConfig& cfg, const CmdArgs& args) {
  if (cfg.seeds.empty()) {
    RunOutcome r = run_one(cfg, args, cfg.output);
    if (!r.msg.empty()) std::fprintf(stderr, "popmech %s\n", r.msg.c_str());
    return r.code;
  }

  std::size_t n = cfg.seeds.size();
  std::size_t T = std::min(thread_cap(), n);
  std::vector<RunOutcome> outs(n);
  for (std::size_t base = 0; base < n; base += T) {
    std::vector<std::thread> pool;
    for (std::size_t i = base; i < std::min(base + T, n); ++i) {
      pool.emplace_back([&, i] {
        std::uint64_t s = cfg.seeds[i];
        ExperimentConfig c = cfg;
        apply_seed(c, s);
        CmdArgs a = args;
        a.data = subst_seed(a.data, s);
        a.test_data = subst_seed(a.test_data, s);
        a.ckpt = subst_seed(a.ckpt, s);
        a.resume = subst_seed(a.resume, s);
        a.inputs = subst_seed(a.inputs, s);
        c.v0_file = subst_seed(c.v0_file, s);
        fs::path out = fs::path(cfg.output) / ("seed_" + std::to_string(s));
        outs[i] = run_one(c, a, out);
      });
    }
    for (auto& t : pool) t.join();
  }

  int code = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!outs[i].msg.empty())
      std::fprintf(stderr, "popmech [seed %llu] %s\n",
                   static_cast<unsigned long long>(cfg.seeds[i]),
                   outs[i].msg.c_str());
    code = std::max(code, outs[i].code);
  }

  // Across-seed aggregation for eval fan-outs.
  if (code == 0 && args.command == "eval") {
    std::vector<ev::EvalReport> reports;
    for (auto& o : outs)
      if (o.report) reports.push_back(std::move(*o.report));
    if (reports.size() > 1) {
      ev::AggregateReport agg = ev::aggregate_reports(reports);
      write_text((fs::path(cfg.output) / "aggregate.json").string(),
                 agg.to_json().dump(2) + "\n");
      write_text((fs::path(cfg.output) / "aggregate.csv").string(),
                 aggregate_csv(agg));
      std::printf("eval: aggregated %zu seeds -> %s\n", reports.size(),
                  (fs::path(cfg.output) / "aggregate.json").string().c_str());
    }
  }
  return code;
}

}  // namespace

// ------------------------------------------------------------- config -----

ExperimentConfig parse_config(const json& j, ExperimentConfig base) {
  check_keys(j, "",
             {"output", "seeds", "v0", "v0_file", "sde", "boids", "energy",
              "train", "integrator", "eval"});
  ExperimentConfig cfg = std::move(base);
  set_str(j, "", "output", cfg.output);
  set_str(j, "", "v0", cfg.v0);
  if (cfg.v0 != "zero" && cfg.v0 != "provided" && cfg.v0 != "paired-fd" &&
      cfg.v0 != "file")
    bad("/v0", "expected zero, provided, paired-fd, or file, got '" + cfg.v0 +
                   "'");
  set_str(j, "", "v0_file", cfg.v0_file);
  if (const json* v = find(j, "seeds")) {
    if (!v->is_array()) bad("/seeds", "expected an array of integers");
    cfg.seeds.clear();
    for (std::size_t i = 0; i < v->size(); ++i) {
      const json& s = (*v)[i];
      if (!s.is_number_integer() || s.get<long long>() < 0)
        bad("/seeds/" + std::to_string(i), "expected a nonnegative integer");
      cfg.seeds.push_back(s.get<std::uint64_t>());
    }
  }
  if (const json* v = find(j, "sde")) parse_sde(*v, "/sde", cfg.sde);
  if (const json* v = find(j, "boids")) parse_boids(*v, "/boids", cfg.boids);
  if (const json* v = find(j, "energy"))
    parse_energy(*v, "/energy", cfg.energy);
  if (const json* v = find(j, "train")) parse_train(*v, "/train", cfg.train);
  if (const json* v = find(j, "integrator"))
    parse_integrator(*v, "/integrator", cfg.integrator);
  if (const json* v = find(j, "eval"))
    parse_eval_section(*v, "/eval", cfg.eval);
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  json init_means = json::array();
  for (const auto& m : cfg.boids.init_means) init_means.push_back(m);
  json j{
      {"output", cfg.output},
      {"seeds", cfg.seeds},
      {"v0", cfg.v0},
      {"v0_file", cfg.v0_file},
      {"sde",
       {{"potential", cfg.sde.potential},
        {"dim", cfg.sde.dim},
        {"sigma2", cfg.sde.sigma2},
        {"dt", cfg.sde.dt},
        {"em_substeps", cfg.sde.em_substeps},
        {"num_train", cfg.sde.num_train},
        {"num_test", cfg.sde.num_test},
        {"particles", cfg.sde.particles},
        {"init_variance", cfg.sde.init_variance},
        {"paired", cfg.sde.paired},
        {"seed", cfg.sde.seed}}},
      {"boids",
       {{"particles", cfg.boids.particles},
        {"dim", cfg.boids.dim},
        {"r_inner", cfg.boids.r_inner},
        {"r_outer", cfg.boids.r_outer},
        {"w_separation", cfg.boids.w_separation},
        {"w_alignment", cfg.boids.w_alignment},
        {"w_cohesion", cfg.boids.w_cohesion},
        {"w_boundary", cfg.boids.w_boundary},
        {"boundary_radius", cfg.boids.boundary_radius},
        {"dt", cfg.boids.dt},
        {"num_train", cfg.boids.num_train},
        {"num_test", cfg.boids.num_test},
        {"init_means", std::move(init_means)},
        {"init_pos_std", cfg.boids.init_pos_std},
        {"init_speed", cfg.boids.init_speed},
        {"seed", cfg.boids.seed}}},
      {"energy", energy_to_json(cfg.energy)},
      {"train",
       {{"lr_theta", cfg.train.lr_theta},
        {"lr_gamma", cfg.train.lr_gamma},
        {"gamma_init", cfg.train.gamma_init},
        {"gamma_learnable", cfg.train.gamma_learnable},
        {"gamma_fixed_value", cfg.train.gamma_fixed_value},
        {"epochs", cfg.train.epochs},
        {"substeps_train", cfg.train.substeps_train},
        {"minibatch", cfg.train.minibatch ? json(*cfg.train.minibatch)
                                          : json(nullptr)},
        {"loss",
         {{"p", cfg.train.loss.p},
          {"blur", cfg.train.auto_blur ? json("auto")
                                       : json(cfg.train.loss.blur)},
          {"max_iters", cfg.train.loss.max_iters},
          {"tol", cfg.train.loss.tol},
          {"envelope", cfg.train.loss.envelope}}},
        {"ema_decay", cfg.train.ema_decay},
        {"weight_decay", cfg.train.weight_decay},
        {"grad_clip_norm", cfg.train.grad_clip_norm
                               ? json(*cfg.train.grad_clip_norm)
                               : json(nullptr)},
        {"seed", cfg.train.seed}}},
      {"integrator",
       {{"scheme", integ::scheme_name(cfg.integrator.scheme)},
        {"dt", cfg.integrator.dt},
        {"substeps", cfg.integrator.substeps}}},
      {"eval",
       {{"protocol", cfg.eval.protocol},
        {"v_mode", cfg.eval.v_mode},
        {"heldout", cfg.eval.heldout},
        {"resample",
         cfg.eval.resample ? json(*cfg.eval.resample) : json(nullptr)},
        {"resample_seed", cfg.eval.resample_seed},
        {"exact_cap", cfg.eval.exact_cap},
        {"formats", cfg.eval.formats},
        {"use_ema", cfg.eval.use_ema}}}};
  return j;
}

std::string config_hash(const json& canonical) {
  std::string s = canonical.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------- main ----

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"popmech: damped population mechanics learned from particle-cloud snapshots"};
  app.require_subcommand(1);

  CmdArgs a;
  // Flag overrides, gathered as optionals and translated to JSON-pointer
  // writes so the strict config parser validates everything once.
  std::vector<std::pair<std::string, json>> overrides;
  std::optional<std::uint64_t> seed;
  std::string seeds_csv, out_dir, formats_csv;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", a.config_path,
                  "Experiment config file (JSON; defaults apply to every "
                  "omitted key)");
    c->add_option("--set", a.sets,
                  "Override one config value by JSON pointer, e.g. --set "
                  "/train/epochs=50 (repeatable)");
    c->add_option("--out", out_dir, "Output directory (default runs/out)");
    c->add_option("--seed", seed,
                  "Seed every section (sde, boids, train, eval) with one "
                  "value");
    c->add_option("--seeds", seeds_csv,
                  "Comma-separated seed fan-out; each seed runs in "
                  "<out>/seed_<s> (POPMECH_THREADS caps workers)");
  };
  auto opt = [&](CLI::App* c, const char* flag, const char* ptr,
                 const char* help, bool integer = false) {
    auto cb = [&overrides, ptr, integer](const std::string& v) {
      json parsed = json::parse(v, nullptr, false);
      if (integer || (parsed.is_number() || parsed.is_boolean() ||
                      parsed.is_null()))
        overrides.emplace_back(ptr, parsed.is_discarded() ? json(v) : parsed);
      else
        overrides.emplace_back(ptr, json(v));
    };
    c->add_option_function<std::string>(flag, cb, help);
  };

  CLI::App* gs = app.add_subcommand(
      "gen-sde", "Generate the gradient-flow SDE benchmark bundle");
  add_common(gs);
  opt(gs, "--potential", "/sde/potential",
      "Benchmark potential: quadratic, bohachevsky, oakley-ohagan, "
      "styblinski-tang, wavy-plateau (default quadratic)");
  opt(gs, "--sigma2", "/sde/sigma2", "Diffusion sigma^2 (default 1.0)");
  opt(gs, "--dt", "/sde/dt", "Recorded marginal spacing (default 0.01)");
  opt(gs, "--dim", "/sde/dim", "State dimension (default 2)", true);
  opt(gs, "--particles", "/sde/particles",
      "Particles per marginal (default 1000)", true);
  opt(gs, "--num-train", "/sde/num_train",
      "Recorded training marginals (default 10)", true);
  opt(gs, "--num-test", "/sde/num_test",
      "Held-out continuation marginals (default 10)", true);
  opt(gs, "--paired", "/sde/paired",
      "true: track one population; false: independent simulations per time "
      "(default true)");

  CLI::App* gb = app.add_subcommand(
      "gen-boids", "Generate the boids flocking benchmark bundle");
  add_common(gb);
  opt(gb, "--dim", "/boids/dim", "State dimension (default 2)", true);
  opt(gb, "--particles", "/boids/particles", "Agents (default 1000)", true);
  opt(gb, "--num-train", "/boids/num_train",
      "Recorded training frames (default 50)", true);
  opt(gb, "--num-test", "/boids/num_test",
      "Held-out continuation frames (default 50)", true);
  opt(gb, "--dt", "/boids/dt", "Frame spacing (default 0.5)");

  CLI::App* tr = app.add_subcommand(
      "train", "Train the energy model and damping on a dataset bundle");
  add_common(tr);
  tr->add_option("--data", a.data, "Dataset bundle directory")->required();
  tr->add_option("--resume", a.resume,
                 "Continue from a checkpoint for /train/epochs more epochs");
  opt(tr, "--epochs", "/train/epochs", "Training epochs (default 100)", true);
  opt(tr, "--lr-theta", "/train/lr_theta",
      "Energy learning rate (default 1e-4)");
  opt(tr, "--lr-gamma", "/train/lr_gamma",
      "Damping learning rate (default 1e-2)");
  opt(tr, "--gamma-init", "/train/gamma_init",
      "Initial damping when learnable (default 1.0)");
  opt(tr, "--minibatch", "/train/minibatch",
      "Particle subsample per epoch (default: full clouds)", true);
  opt(tr, "--blur", "/train/loss/blur",
      "Sinkhorn blur, a number or \"auto\" (default auto)");
  opt(tr, "--substeps-train", "/train/substeps_train",
      "Integrator substeps per data interval while training (default 1)",
      true);
  opt(tr, "--v0", "/v0",
      "Initial velocity: zero, provided, paired-fd, or file (default zero)");
  opt(tr, "--v0-file", "/v0_file",
      "CSV for --v0 file (default <data>/v0.csv)");

  CLI::App* ro = app.add_subcommand(
      "rollout", "Simulate learned mechanics through the dataset times");
  add_common(ro);
  ro->add_option("--data", a.data, "Dataset bundle directory")->required();
  ro->add_option("--ckpt", a.ckpt, "Trained checkpoint")->required();
  ro->add_option("--test-data", a.test_data,
                 "Continuation bundle appended after the train times");
  opt(ro, "--substeps", "/integrator/substeps",
      "Integrator substeps per interval at inference (default 5)", true);
  opt(ro, "--scheme", "/integrator/scheme",
      "damped-velocity-verlet or semi-implicit-euler (default "
      "damped-velocity-verlet)");
  opt(ro, "--v0", "/v0",
      "Initial velocity: zero, provided, paired-fd, or file (default zero)");
  opt(ro, "--v0-file", "/v0_file",
      "CSV for --v0 file (default <data>/v0.csv)");
  opt(ro, "--use-ema", "/eval/use_ema",
      "Evaluate EMA shadow weights (default true)");

  CLI::App* ex = app.add_subcommand(
      "eval", "Score learned mechanics against observed snapshots");
  add_common(ex);
  ex->add_option("--data", a.data, "Dataset bundle directory")->required();
  ex->add_option("--ckpt", a.ckpt, "Trained checkpoint")->required();
  ex->add_option("--test-data", a.test_data,
                 "Held-out continuation bundle (forecast protocol)");
  opt(ex, "--protocol", "/eval/protocol",
      "forecast or interpolate (default forecast)");
  opt(ex, "--v-mode", "/eval/v_mode",
      "Interpolation restart velocity: provided, zero, carried (default "
      "carried)");
  opt(ex, "--heldout", "/eval/heldout",
      "Interpolation held-out time index (default 1)", true);
  opt(ex, "--substeps", "/integrator/substeps",
      "Integrator substeps per interval at inference (default 5)", true);
  opt(ex, "--resample", "/eval/resample",
      "KDE-resample the initial cloud to this size (default off)", true);
  opt(ex, "--exact-cap", "/eval/exact_cap",
      "Assignment-solver cap for exact W1 (default 2048)", true);
  opt(ex, "--v0", "/v0",
      "Forecast initial velocity: zero, provided, paired-fd, or file "
      "(default zero)");
  opt(ex, "--v0-file", "/v0_file",
      "CSV for --v0 file (default <data>/v0.csv)");
  opt(ex, "--use-ema", "/eval/use_ema",
      "Evaluate EMA shadow weights (default true)");
  ex->add_option("--formats", formats_csv,
                 "Comma subset of csv,json,svg (default all three)");

  CLI::App* rp = app.add_subcommand(
      "report", "Aggregate eval reports across seeds or runs");
  add_common(rp);
  rp->add_option("--inputs", a.inputs,
                 "Comma-separated directories each holding "
                 "<protocol>.json")
      ->required();
  opt(rp, "--protocol", "/eval/protocol",
      "Which report file to aggregate (default forecast)");

  std::vector<const char*> argv;
  argv.push_back("popmech");
  for (const std::string& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()),
              const_cast<char**>(argv.data()));
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  for (CLI::App* c : {gs, gb, tr, ro, ex, rp})
    if (app.got_subcommand(c)) a.command = c->get_name();

  try {
    json j = json::object();
    if (!a.config_path.empty()) {
      json parsed = json::parse(read_text(a.config_path), nullptr, false);
      if (parsed.is_discarded())
        throw ConfigError("config " + a.config_path + ": invalid JSON");
      j = std::move(parsed);
    }
    for (const std::string& s : a.sets) {
      std::size_t eq = s.find('=');
      if (eq == std::string::npos || s.empty() || s[0] != '/')
        throw ConfigError("--set wants /pointer/path=value, got '" + s + "'");
      json v = json::parse(s.substr(eq + 1), nullptr, false);
      if (v.is_discarded()) v = s.substr(eq + 1);
      j[json::json_pointer(s.substr(0, eq))] = std::move(v);
    }
    for (const auto& [ptr, v] : overrides) j[json::json_pointer(ptr)] = v;
    if (seed) {
      for (const char* ptr :
           {"/sde/seed", "/boids/seed", "/train/seed", "/eval/resample_seed"})
        j[json::json_pointer(ptr)] = *seed;
    }
    if (!seeds_csv.empty()) {
      json arr = json::array();
      std::size_t pos = 0;
      while (pos <= seeds_csv.size()) {
        std::size_t next = seeds_csv.find(',', pos);
        if (next == std::string::npos) next = seeds_csv.size();
        std::string tok = seeds_csv.substr(pos, next - pos);
        std::uint64_t v = 0;
        auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || p != tok.data() + tok.size())
          throw ConfigError("--seeds wants comma-separated integers, got '" +
                            tok + "'");
        arr.push_back(v);
        pos = next + 1;
      }
      j["/seeds"_json_pointer] = std::move(arr);
    }
    if (!formats_csv.empty()) {
      json arr = json::array();
      std::size_t pos = 0;
      while (pos <= formats_csv.size()) {
        std::size_t next = formats_csv.find(',', pos);
        if (next == std::string::npos) next = formats_csv.size();
        if (next > pos) arr.push_back(formats_csv.substr(pos, next - pos));
        pos = next + 1;
      }
      j["/eval/formats"_json_pointer] = std::move(arr);
    }
    if (!out_dir.empty()) j["/output"_json_pointer] = out_dir;

    ExperimentConfig cfg = parse_config(j);
    return fan_out(cfg, a);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "popmech %s: %s\n", a.command.c_str(), e.what());
    return classify(e);
  }
}

}  // namespace popmech::cli
