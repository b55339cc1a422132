#include "popmech/trainer.hpp"

#include <chrono>
#include <cmath>
#include <span>

#include "popmech/checkpoint.hpp"
#include "popmech/errors.hpp"

namespace popmech::trainer {

using nlohmann::json;

void TrainConfig::validate() const {
  if (!(lr_theta > 0.0)) throw ConfigError("trainer: lr_theta must be > 0");
  if (!(lr_gamma > 0.0)) throw ConfigError("trainer: lr_gamma must be > 0");
  if (gamma_init < 0.0) throw ConfigError("trainer: gamma_init must be >= 0");
  if (gamma_fixed_value < 0.0)
    throw ConfigError("trainer: gamma_fixed_value must be >= 0");
  if (epochs < 0) throw ConfigError("trainer: epochs must be >= 0");
  if (substeps_train < 1)
    throw ConfigError("trainer: substeps_train must be >= 1");
  if (minibatch && *minibatch < 1)
    throw ConfigError("trainer: minibatch must be >= 1 when set");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0))
    throw ConfigError("trainer: ema_decay must lie in [0, 1)");
  if (weight_decay < 0.0)
    throw ConfigError("trainer: weight_decay must be >= 0");
  if (grad_clip_norm && !(*grad_clip_norm > 0.0))
    throw ConfigError("trainer: grad_clip_norm must be > 0 when set");
  loss.validate();
}

divergence::DivergenceConfig resolved_loss_config(
    const TrainConfig& cfg, const datagen::SnapshotDataset& dataset) {
  divergence::DivergenceConfig out = cfg.loss;
  if (cfg.auto_blur) out.blur = divergence::estimate_blur(dataset.snapshots[0]);
  return out;
}

namespace {

Array take_rows(const Array& a, std::span<const std::size_t> rows) {
  std::size_t d = a.shape()[1];
  Array out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < d; ++c)
      out[r * d + c] = a[rows[r] * d + c];
  return out;
}

bool all_finite(const Array& a) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!std::isfinite(a[i])) return false;
  return true;
}

double max_abs(const Array& a) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i]));
  return m;
}

}  // namespace

HorizonLoss loss_for_horizon(const energy::PotentialModel& model,
                             const datagen::SnapshotDataset& dataset,
                             const Array& v0,
                             const energy::EnergyParams& params, double gamma,
                             int K, const TrainConfig& cfg,
                             integ::Scheme scheme, Rng& rng, bool training) {
  cfg.validate();
  dataset.validate();
  long M = static_cast<long>(dataset.num_times()) - 1;
  if (M < 1) throw DataError("trainer: dataset needs at least one interval");
  if (K < 1 || K > M)
    throw DomainError("trainer: horizon K = " + std::to_string(K) +
                      " outside {1.." + std::to_string(M) + "}");
  if (model.dim() != dataset.dim)
    throw ShapeError("trainer: model dim " + std::to_string(model.dim()) +
                     " vs dataset dim " + std::to_string(dataset.dim));
  if (!v0.same_shape(dataset.snapshots[0]))
    throw ShapeError("trainer: v0 shape " + shape_str(v0.shape()) +
                     " does not match X0 " +
                     shape_str(dataset.snapshots[0].shape()));

  divergence::DivergenceConfig lcfg = resolved_loss_config(cfg, dataset);

  // Particle subsample: one shared row set when paired (rows correspond),
  // an independent set per cloud otherwise.
  Array X0 = dataset.snapshots[0];
  Array V0 = v0;
  std::vector<Array> targets;
  targets.reserve(static_cast<std::size_t>(K));
  if (cfg.minibatch) {
    std::size_t k = *cfg.minibatch;
    for (int i = 0; i <= K; ++i) {
      std::size_t n_i = dataset.snapshots[static_cast<std::size_t>(i)].shape()[0];
      if (k > n_i)
        throw ConfigError("trainer: minibatch " + std::to_string(k) +
                          " exceeds snapshot size " + std::to_string(n_i));
    }
    std::vector<std::size_t> idx =
        rng.sample_indices(X0.shape()[0], k);
    X0 = take_rows(X0, idx);
    V0 = take_rows(V0, idx);
    for (int i = 1; i <= K; ++i) {
      const Array& snap = dataset.snapshots[static_cast<std::size_t>(i)];
      if (!dataset.paired) idx = rng.sample_indices(snap.shape()[0], k);
      targets.push_back(take_rows(snap, idx));
    }
  } else {
    for (int i = 1; i <= K; ++i)
      targets.push_back(dataset.snapshots[static_cast<std::size_t>(i)]);
  }

  HorizonLoss out;
  out.graph = std::make_unique<ad::Graph>();
  ad::Graph& g = *out.graph;
  out.param_leaves.reserve(params.tensors.size());
  for (const Array& t : params.tensors) out.param_leaves.push_back(g.leaf(t));
  out.gamma_leaf = g.leaf(Array::scalar(gamma));

  // The integrator applies damping itself (exact exponential factors), so
  // the acceleration callback must be the conservative part only: zero
  // velocity and zero gamma fed to the force evaluation.
  ad::Var zero_v = g.constant(Array::zeros(X0.shape()));
  ad::Var zero_g = g.constant(Array::scalar(0.0));
  integ::VarAccelFn accel = [&](ad::Var X, double t) {
    return energy::acceleration_recorded(
        g, model, out.param_leaves, X, zero_v, zero_g, t, training, &rng);
  };

  integ::VarState s{g.constant(X0), g.constant(V0), dataset.times[0]};
  std::optional<ad::Var> cache;
  ad::Var total;
  long step_index = 0;
  for (int i = 1; i <= K; ++i) {
    double span = dataset.times[static_cast<std::size_t>(i)] -
                  dataset.times[static_cast<std::size_t>(i) - 1];
    double h = span / cfg.substeps_train;
    for (int sub = 0; sub < cfg.substeps_train; ++sub, ++step_index) {
      integ::VarStepResult r =
          integ::step(s, accel, out.gamma_leaf, h, scheme,
                      cache ? &*cache : nullptr, step_index);
      s = r.state;
      cache = r.cached_a;
    }
    divergence::SinkhornReport rep;
    ad::Var target = g.constant(targets[static_cast<std::size_t>(i) - 1]);
    ad::Var d = divergence::sinkhorn_divergence(g, s.X, target, lcfg, &rep);
    out.interval_losses.push_back(d.value()[0]);
    out.sinkhorn_converged = out.sinkhorn_converged && rep.converged;
    out.sinkhorn_iters_max = std::max(out.sinkhorn_iters_max, rep.iters);
    total = i == 1 ? d : total + d;
  }
  out.loss = total * (1.0 / static_cast<double>(K));
  return out;
}

void adam_update(std::vector<Array>& params, const std::vector<Array>& grads,
                 std::vector<Array>& m, std::vector<Array>& v, long step,
                 double lr, double weight_decay) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (grads.size() != params.size() || m.size() != params.size() ||
      v.size() != params.size())
    throw ShapeError("adam_update: list sizes disagree");
  if (step < 1) throw DomainError("adam_update: step counts from 1");
  double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
  double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    Array& p = params[t];
    const Array& gr = grads[t];
    if (!p.same_shape(gr) || !p.same_shape(m[t]) || !p.same_shape(v[t]))
      throw ShapeError("adam_update: tensor " + std::to_string(t) +
                       " shape mismatch");
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[t][i] = b1 * m[t][i] + (1.0 - b1) * gr[i];
      v[t][i] = b2 * v[t][i] + (1.0 - b2) * gr[i] * gr[i];
      double mhat = m[t][i] / c1;
      double vhat = v[t][i] / c2;
      p[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p[i]);
    }
  }
}

void ema_update(energy::EnergyParams& ema, const energy::EnergyParams& params,
                double decay) {
  if (!(decay >= 0.0 && decay < 1.0))
    throw DomainError("ema_update: decay must lie in [0, 1)");
  if (ema.tensors.size() != params.tensors.size())
    throw ShapeError("ema_update: tensor counts disagree");
  for (std::size_t t = 0; t < ema.tensors.size(); ++t) {
    Array& e = ema.tensors[t];
    const Array& p = params.tensors[t];
    if (!e.same_shape(p))
      throw ShapeError("ema_update: tensor " + std::to_string(t) +
                       " shape mismatch");
    for (std::size_t i = 0; i < e.size(); ++i)
      e[i] = decay * e[i] + (1.0 - decay) * p[i];
  }
}

TrainState train(const energy::PotentialModel& model,
                 const datagen::SnapshotDataset& dataset, const Array& v0,
                 const TrainConfig& cfg, const integ::IntegratorConfig& integ,
                 std::ostream* log, const energy::EnergyParams* init,
                 const TrainState* resume) {
  cfg.validate();
  dataset.validate();
  if (dataset.num_times() < 2)
    throw DataError("trainer: dataset needs at least one interval");
  long M = static_cast<long>(dataset.num_times()) - 1;

  TrainState st;
  if (resume) {
    if (init)
      throw ConfigError("trainer: pass init params or a resume state, not both");
    st = *resume;
    std::size_t want = model.param_specs().size();
    if (st.params.tensors.size() != want ||
        st.adam_m.size() != want || st.adam_v.size() != want)
      throw ShapeError("trainer: resume state has " +
                       std::to_string(st.params.tensors.size()) +
                       " tensors, model wants " + std::to_string(want));
  } else {
    st.params = init ? *init : model.init_params(cfg.seed);
    st.ema_params = st.params;
    st.gamma = cfg.gamma_learnable ? cfg.gamma_init : cfg.gamma_fixed_value;
    st.adam_m.reserve(st.params.tensors.size());
    st.adam_v.reserve(st.params.tensors.size());
    for (const Array& t : st.params.tensors) {
      st.adam_m.push_back(Array::zeros(t.shape()));
      st.adam_v.push_back(Array::zeros(t.shape()));
    }
  }

  // Fix the blur once so every epoch optimizes the same objective.
  TrainConfig ecfg = cfg;
  ecfg.loss = resolved_loss_config(cfg, dataset);
  ecfg.auto_blur = false;

  const int start = st.epoch;
  for (int epoch = start; epoch < start + cfg.epochs; ++epoch) {
    auto t_start = std::chrono::steady_clock::now();
    Rng rng(derive_seed(cfg.seed,
                        0x7261696eULL + static_cast<std::uint64_t>(epoch)));
    int K = 1 + static_cast<int>(rng.uniform_int(0, static_cast<std::uint64_t>(M) - 1));

    HorizonLoss hl = loss_for_horizon(model, dataset, v0, st.params, st.gamma,
                                      K, ecfg, integ.scheme, rng, true);
    double loss_val = hl.loss.value()[0];
    if (!std::isfinite(loss_val)) {
      std::string dump;
      for (std::size_t i = 0; i < hl.interval_losses.size(); ++i)
        if (!std::isfinite(hl.interval_losses[i]))
          dump += " interval " + std::to_string(i + 1) + " (t = " +
                  std::to_string(dataset.times[i + 1]) + ") divergence = " +
                  std::to_string(hl.interval_losses[i]) + ";";
      throw NumericError("trainer: non-finite loss at epoch " +
                         std::to_string(epoch) + ", K = " + std::to_string(K) +
                         ":" + dump);
    }

    std::vector<ad::Var> wrt = hl.param_leaves;
    wrt.push_back(hl.gamma_leaf);
    ad::GradOptions gopt;
    gopt.allow_unused = true;  // purely additive params drop out of the force
    std::vector<ad::Var> gvars = ad::grad(hl.loss, wrt, gopt);

    std::vector<Array> grads;
    grads.reserve(hl.param_leaves.size());
    for (std::size_t t = 0; t < hl.param_leaves.size(); ++t) {
      const Array& ga = gvars[t].value();
      if (!all_finite(ga))
        throw NumericError("trainer: non-finite gradient for parameter " +
                           std::to_string(t) + " at epoch " +
                           std::to_string(epoch) + " (K = " +
                           std::to_string(K) + ", |g|_max = " +
                           std::to_string(max_abs(ga)) + ")");
      grads.push_back(ga);
    }
    double ggamma = gvars.back().value()[0];
    if (!std::isfinite(ggamma))
      throw NumericError("trainer: non-finite gamma gradient at epoch " +
                         std::to_string(epoch));

    if (cfg.grad_clip_norm) {
      double sq = ggamma * ggamma;
      for (const Array& ga : grads)
        for (std::size_t i = 0; i < ga.size(); ++i) sq += ga[i] * ga[i];
      double norm = std::sqrt(sq);
      if (norm > *cfg.grad_clip_norm) {
        double scale = *cfg.grad_clip_norm / norm;
        for (Array& ga : grads)
          for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= scale;
        ggamma *= scale;
      }
    }

    ++st.adam_step;
    adam_update(st.params.tensors, grads, st.adam_m, st.adam_v, st.adam_step,
                cfg.lr_theta, cfg.weight_decay);
    if (cfg.gamma_learnable) {
      constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
      st.gamma_m = b1 * st.gamma_m + (1.0 - b1) * ggamma;
      st.gamma_v = b2 * st.gamma_v + (1.0 - b2) * ggamma * ggamma;
      double mhat = st.gamma_m / (1.0 - std::pow(b1, st.adam_step));
      double vhat = st.gamma_v / (1.0 - std::pow(b2, st.adam_step));
      st.gamma -= cfg.lr_gamma * mhat / (std::sqrt(vhat) + eps);
      st.gamma = std::max(st.gamma, 0.0);
    }
    ema_update(st.ema_params, st.params, cfg.ema_decay);
    st.loss_history.push_back(loss_val);
    st.epoch = epoch + 1;

    if (log) {
      auto ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_start)
                    .count();
      json line{{"epoch", epoch},
                {"K", K},
                {"loss", loss_val},
                {"gamma", st.gamma},
                {"blur", ecfg.loss.blur},
                {"converged", hl.sinkhorn_converged},
                {"wall_ms", ms}};
      *log << line.dump() << "\n";
    }
  }
  return st;
}

void save_train_state(const std::string& path, const TrainState& state,
                      const std::vector<energy::ParamSpec>& specs,
                      const nlohmann::json& extra) {
  if (specs.size() != state.params.tensors.size())
    throw ShapeError("save_train_state: " + std::to_string(specs.size()) +
                     " specs for " +
                     std::to_string(state.params.tensors.size()) + " tensors");
  json header = extra;
  header["kind"] = "train_state";
  header["gamma"] = state.gamma;
  header["gamma_m"] = state.gamma_m;
  header["gamma_v"] = state.gamma_v;
  header["adam_step"] = state.adam_step;
  header["epoch"] = state.epoch;
  header["loss_history"] = state.loss_history;
  header["param_seed"] = state.params.seed;
  std::vector<NamedTensor> tensors;
  tensors.reserve(4 * specs.size());
  for (std::size_t t = 0; t < specs.size(); ++t) {
    tensors.push_back({"param/" + specs[t].name, state.params.tensors[t]});
    tensors.push_back({"ema/" + specs[t].name, state.ema_params.tensors[t]});
    tensors.push_back({"adam_m/" + specs[t].name, state.adam_m[t]});
    tensors.push_back({"adam_v/" + specs[t].name, state.adam_v[t]});
  }
  write_checkpoint(path, header, tensors);
}

std::pair<TrainState, nlohmann::json> load_train_state(
    const std::string& path) {
  auto [header, tensors] = read_checkpoint(path);
  try {
    if (header.at("kind").get<std::string>() != "train_state")
      throw DataError("load_train_state: " + path + " is not a train_state");
    TrainState st;
    st.gamma = header.at("gamma").get<double>();
    st.gamma_m = header.at("gamma_m").get<double>();
    st.gamma_v = header.at("gamma_v").get<double>();
    st.adam_step = header.at("adam_step").get<long>();
    st.epoch = header.at("epoch").get<int>();
    st.loss_history = header.at("loss_history").get<std::vector<double>>();
    st.params.seed = header.at("param_seed").get<std::uint64_t>();
    st.ema_params.seed = st.params.seed;
    for (const NamedTensor& t : tensors) {
      if (t.name.rfind("param/", 0) == 0)
        st.params.tensors.push_back(t.data);
      else if (t.name.rfind("ema/", 0) == 0)
        st.ema_params.tensors.push_back(t.data);
      else if (t.name.rfind("adam_m/", 0) == 0)
        st.adam_m.push_back(t.data);
      else if (t.name.rfind("adam_v/", 0) == 0)
        st.adam_v.push_back(t.data);
      else
        throw DataError("load_train_state: unexpected tensor " + t.name +
                        " in " + path);
    }
    if (st.params.tensors.size() != st.ema_params.tensors.size() ||
        st.params.tensors.size() != st.adam_m.size() ||
        st.params.tensors.size() != st.adam_v.size())
      throw DataError("load_train_state: tensor groups disagree in " + path);
    return {std::move(st), std::move(header)};
  } catch (const json::exception& e) {
    throw DataError("load_train_state: malformed header in " + path + ": " +
                    e.what());
  }
}

}  // namespace popmech::trainer
