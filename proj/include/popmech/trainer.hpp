#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "popmech/autodiff.hpp"
#include "popmech/datagen.hpp"
#include "popmech/divergence.hpp"
#include "popmech/energy.hpp"
#include "popmech/integrator.hpp"
#include "popmech/rng.hpp"

namespace popmech::trainer {

// Discretize-then-optimize training: per epoch, draw a horizon K uniform on
// {1..M}, roll the learned mechanics K intervals from (X0, v0), score each
// boundary against the observed snapshot with a Sinkhorn divergence, and
// take one Adam step on the energy parameters (and, when learnable, on the
// damping gamma, projected back to gamma >= 0). Inference should use the
// EMA shadow weights; training rollouts always use the live ones.
struct TrainConfig {
  double lr_theta = 1e-4;
  double lr_gamma = 1e-2;
  double gamma_init = 1.0;        // starting gamma when learnable
  bool gamma_learnable = true;
  double gamma_fixed_value = 0.0; // gamma used when not learnable
  int epochs = 100;
  int substeps_train = 1;         // integrator substeps per data interval
  std::optional<std::size_t> minibatch;  // particle subsample per epoch
  divergence::DivergenceConfig loss{.p = 2, .blur = 0.05, .max_iters = 200,
                                    .tol = 1e-6, .envelope = true};
  bool auto_blur = true;  // overwrite loss.blur with estimate_blur(X0)
  double ema_decay = 0.999;
  double weight_decay = 0.0;
  std::optional<double> grad_clip_norm;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct TrainState {
  energy::EnergyParams params;
  energy::EnergyParams ema_params;
  double gamma = 0.0;
  std::vector<Array> adam_m;  // first moments, one per parameter tensor
  std::vector<Array> adam_v;  // second moments
  double gamma_m = 0.0;
  double gamma_v = 0.0;
  long adam_step = 0;  // completed Adam steps (bias-correction counter)
  int epoch = 0;
  std::vector<double> loss_history;  // one entry per epoch
};

// The differentiable loss for one sampled horizon. The graph owns every
// node; leaves are exposed so callers can take gradients.
struct HorizonLoss {
  std::unique_ptr<ad::Graph> graph;
  ad::Var loss;                       // scalar, (1/K) sum of divergences
  std::vector<ad::Var> param_leaves;  // one per params.tensors entry
  ad::Var gamma_leaf;                 // rank-0 leaf
  std::vector<double> interval_losses;  // divergence value per interval
  bool sinkhorn_converged = true;       // and-reduction over all solves
  int sinkhorn_iters_max = 0;
};

// cfg.loss with blur resolved: estimate_blur on the first snapshot when
// cfg.auto_blur is set, the configured value otherwise.
divergence::DivergenceConfig resolved_loss_config(
    const TrainConfig& cfg, const datagen::SnapshotDataset& dataset);

// Builds the K-interval shooting loss from (X0, v0) on a fresh graph.
// Interval i covers times[i] -> times[i+1] with substeps_train internal
// steps. When cfg.minibatch is set, a fresh particle subsample is drawn
// from `rng` (shared rows everywhere for paired data, independent rows per
// cloud otherwise). `training` enables dropout, drawing masks from `rng`.
HorizonLoss loss_for_horizon(const energy::PotentialModel& model,
                             const datagen::SnapshotDataset& dataset,
                             const Array& v0,
                             const energy::EnergyParams& params, double gamma,
                             int K, const TrainConfig& cfg,
                             integ::Scheme scheme, Rng& rng,
                             bool training = true);

// One bias-corrected AdamW step (beta1 0.9, beta2 0.999, eps 1e-8) over a
// parameter list; `step` counts completed steps starting at 1. Weight decay
// is decoupled (applied to the parameter, not the gradient).
void adam_update(std::vector<Array>& params, const std::vector<Array>& grads,
                 std::vector<Array>& m, std::vector<Array>& v, long step,
                 double lr, double weight_decay = 0.0);

// ema <- decay * ema + (1 - decay) * params, elementwise.
void ema_update(energy::EnergyParams& ema, const energy::EnergyParams& params,
                double decay);

// Full training loop; deterministic for fixed (seed, config, dataset).
// `integ` contributes the scheme; interval lengths come from dataset.times
// and substeps from cfg.substeps_train. Starts from `init` params when
// given, else model.init_params(seed); `resume` instead continues from a
// full checkpointed state (optimizer moments, gamma, epoch counter, loss
// history) for cfg.epochs more epochs. Each epoch draws from an RNG seeded
// by (seed, epoch), so a resumed run is bitwise identical to an
// uninterrupted one. Writes one JSON line per epoch to `log` when non-null
// (epoch, K, loss, gamma, blur, converged, wall_ms). Throws NumericError
// on a non-finite loss or gradient, naming the epoch and offending
// interval.
TrainState train(const energy::PotentialModel& model,
                 const datagen::SnapshotDataset& dataset, const Array& v0,
                 const TrainConfig& cfg, const integ::IntegratorConfig& integ,
                 std::ostream* log = nullptr,
                 const energy::EnergyParams* init = nullptr,
                 const TrainState* resume = nullptr);

// Checkpoints the whole optimizer state (parameters, EMA shadow, Adam
// moments, gamma) in the shared container format; `specs` names the
// tensors, `extra` is merged into the header.
void save_train_state(const std::string& path, const TrainState& state,
                      const std::vector<energy::ParamSpec>& specs,
                      const nlohmann::json& extra = {});

std::pair<TrainState, nlohmann::json> load_train_state(
    const std::string& path);

}  // namespace popmech::trainer
