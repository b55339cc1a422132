#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "popmech/autodiff.hpp"
#include "popmech/ops.hpp"
#include "popmech/potentials.hpp"
#include "popmech/rng.hpp"

namespace popmech::energy {

struct EnergyConfig {
  std::size_t dim = 2;
  std::size_t hidden = 64;
  std::size_t blocks = 4;
  std::size_t heads = 4;
  std::size_t ff_inner = 512;
  std::size_t time_features = 0;
  std::string activation = "silu";
  double dropout = 0.0;

  void validate() const;  // throws ConfigError
};

struct ParamSpec {
  std::string name;
  std::vector<std::size_t> shape;
};

struct EnergyParams {
  std::vector<Array> tensors;
  std::uint64_t seed = 0;
};

// A learnable empirical energy Psi(X) over particle sets. Conventions:
// Psi is mean-normalized (per-particle pooling), and the factor N that
// Prop-3.1-style accelerations absorb is reapplied in acceleration(), so
// per-particle forces stay O(1) no matter how many particles (or which
// minibatch size) the model sees.
class PotentialModel {
 public:
  virtual ~PotentialModel() = default;
  virtual std::size_t dim() const = 0;
  virtual std::vector<ParamSpec> param_specs() const = 0;
  virtual EnergyParams init_params(std::uint64_t seed) const = 0;
  // Scalar (rank-0) energy of the cloud X (N, d) at time t. `training`
  // enables dropout, drawing masks from `dropout_rng`.
  virtual ad::Var energy(ad::Graph& g, std::span<const ad::Var> params,
                         ad::Var X, std::optional<double> t = std::nullopt,
                         bool training = false,
                         Rng* dropout_rng = nullptr) const = 0;
};

// Permutation-invariant set transformer: per-particle linear embed of
// (x, time features), `blocks` pre-norm residual blocks (multi-head
// self-attention over particles, then feed-forward), mean-pool, linear head.
class AttentionEnergy : public PotentialModel {
 public:
  explicit AttentionEnergy(EnergyConfig cfg);

  const EnergyConfig& config() const { return cfg_; }
  std::size_t dim() const override { return cfg_.dim; }
  std::vector<ParamSpec> param_specs() const override;
  EnergyParams init_params(std::uint64_t seed) const override;
  ad::Var energy(ad::Graph& g, std::span<const ad::Var> params, ad::Var X,
                 std::optional<double> t = std::nullopt, bool training = false,
                 Rng* dropout_rng = nullptr) const override;

  // Convenience evaluation on plain arrays.
  double energy_value(const EnergyParams& params, const Array& X,
                      std::optional<double> t = std::nullopt) const;

 private:
  EnergyConfig cfg_;
};

// Analytic energy functionals with closed-form functional derivatives,
// used as exact oracles and as reference mechanics.
enum class AnalyticKind {
  Expectation,      // U[rho] = int U drho            -> Psi = (1/N) sum U(x_i)
  PairwiseKernel,   // U[rho] = 1/2 iint k drho drho  -> Psi = 1/(2N^2) sum_ab k
  NegSquaredForce,  // U[rho] = -1/2 int |grad V|^2 drho (Prop A.1 inversion)
};

struct AnalyticEnergy {
  AnalyticKind kind = AnalyticKind::Expectation;
  Potential potential;  // Expectation / NegSquaredForce tag
  // PairwiseKernel: k(x,y) = kernel_strength * exp(-kernel_bandwidth |x-y|^2)
  double kernel_strength = 1.0;
  double kernel_bandwidth = 1.0;

  // Empirical energy U[p_hat_X] with the normalizations above.
  double psi(const Array& X) const;
  // Closed-form grad_x (dU/drho)(x_j) at the empirical measure, rows (N, d).
  Array functional_gradient(const Array& X) const;
  // Per-particle conservative force -grad_x dU/drho(x_j) = -N grad_{x_j} Psi.
  Array force(const Array& X) const;
};

// a_j = -N grad_{x_j} Psi - gamma v_j. Builds a throwaway graph; pure.
Array acceleration(const PotentialModel& model, const EnergyParams& params,
                   const Array& X, const Array& V, double gamma,
                   std::optional<double> t = std::nullopt);

Array acceleration(const AnalyticEnergy& analytic, const Array& X,
                   const Array& V, double gamma);

// Training-path acceleration recorded on the caller's graph; the inner
// energy gradient is taken with create_graph so the result supports
// backprop through it. `gamma` is a rank-0 Var (leaf when learnable).
ad::Var acceleration_recorded(ad::Graph& g, const PotentialModel& model,
                              std::span<const ad::Var> params, ad::Var X,
                              ad::Var V, ad::Var gamma,
                              std::optional<double> t = std::nullopt,
                              bool training = false,
                              Rng* dropout_rng = nullptr);

struct FdCheckReport {
  double max_err = 0.0;  // |fd - closed| / max(1, |fd|, |closed|)
  std::size_t particle = 0;
  std::size_t axis = 0;
  double fd = 0.0;
  double closed = 0.0;
};

// Verifies grad_{x_j} Psi = (1/N) grad_x (dU/drho)(x_j) for all j: the left
// side via central differences on psi(), the right side in closed form.
FdCheckReport functional_derivative_check(const AnalyticEnergy& analytic,
                                          const Array& X, double step = 2e-6);

}  // namespace popmech::energy
