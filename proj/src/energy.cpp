#include "popmech/energy.hpp"

#include <cmath>

#include "popmech/errors.hpp"

namespace popmech::energy {

using ad::Graph;
using ad::Var;

void EnergyConfig::validate() const {
  if (dim < 1 || hidden < 1 || blocks < 1 || heads < 1 || ff_inner < 1)
    throw ConfigError("energy config: dim/hidden/blocks/heads/ff_inner must be >= 1");
  if (hidden % heads != 0)
    throw ConfigError("energy config: hidden " + std::to_string(hidden) +
                      " not divisible by heads " + std::to_string(heads));
  if (dropout < 0.0 || dropout >= 1.0)
    throw ConfigError("energy config: dropout must be in [0,1)");
  if (activation != "silu" && activation != "tanh")
    throw ConfigError("energy config: unknown activation '" + activation + "'");
}

AttentionEnergy::AttentionEnergy(EnergyConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
}

std::vector<ParamSpec> AttentionEnergy::param_specs() const {
  std::size_t din = cfg_.dim + 2 * cfg_.time_features;
  std::size_t h = cfg_.hidden, ff = cfg_.ff_inner;
  std::vector<ParamSpec> specs;
  specs.push_back({"embed.w", {din, h}});
  specs.push_back({"embed.b", {h}});
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    std::string p = "block" + std::to_string(b) + ".";
    specs.push_back({p + "ln1.scale", {h}});
    specs.push_back({p + "ln1.shift", {h}});
    specs.push_back({p + "attn.wq", {h, h}});
    specs.push_back({p + "attn.bq", {h}});
    specs.push_back({p + "attn.wk", {h, h}});
    specs.push_back({p + "attn.bk", {h}});
    specs.push_back({p + "attn.wv", {h, h}});
    specs.push_back({p + "attn.bv", {h}});
    specs.push_back({p + "attn.wo", {h, h}});
    specs.push_back({p + "attn.bo", {h}});
    specs.push_back({p + "ln2.scale", {h}});
    specs.push_back({p + "ln2.shift", {h}});
    specs.push_back({p + "ff.w1", {h, ff}});
    specs.push_back({p + "ff.b1", {ff}});
    specs.push_back({p + "ff.w2", {ff, h}});
    specs.push_back({p + "ff.b2", {h}});
  }
  specs.push_back({"head.w", {h}});
  specs.push_back({"head.b", {}});
  return specs;
}

EnergyParams AttentionEnergy::init_params(std::uint64_t seed) const {
  Rng rng(seed);
  EnergyParams out;
  out.seed = seed;
  // Fan-in-scaled uniform for weights and biases; layer norms start as the
  // identity; the head bias starts at zero.
  for (const ParamSpec& s : param_specs()) {
    bool is_matrix = s.shape.size() == 2;
    std::size_t fan_in = is_matrix ? s.shape[0] : 0;
    if (!is_matrix) {
      // Biases take the fan-in of the layer they belong to.
      if (s.name == "embed.b") fan_in = cfg_.dim + 2 * cfg_.time_features;
      else if (s.name.find("ff.b1") != std::string::npos) fan_in = cfg_.hidden;
      else if (s.name.find("ff.b2") != std::string::npos) fan_in = cfg_.ff_inner;
      else fan_in = cfg_.hidden;
    }
    double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
    if (s.name.find("ln") != std::string::npos) {
      bool is_scale = s.name.find("scale") != std::string::npos;
      out.tensors.push_back(Array::full(s.shape, is_scale ? 1.0 : 0.0));
    } else if (s.name == "head.b") {
      out.tensors.push_back(Array::zeros(s.shape));
    } else {
      out.tensors.push_back(rng.uniform_array(s.shape, -bound, bound));
    }
  }
  return out;
}

Var AttentionEnergy::energy(Graph& g, std::span<const Var> params, Var X,
                            std::optional<double> t, bool training,
                            Rng* dropout_rng) const {
  if (X.value().rank() != 2 || X.shape()[1] != cfg_.dim)
    throw ShapeError("energy: expected X of shape (N," +
                     std::to_string(cfg_.dim) + "), got " +
                     shape_str(X.shape()));
  if (params.size() != 2 + cfg_.blocks * 16 + 2)
    throw ShapeError("energy: expected " +
                     std::to_string(2 + cfg_.blocks * 16 + 2) +
                     " parameter tensors, got " + std::to_string(params.size()));
  if (cfg_.time_features > 0 && !t.has_value())
    throw ConfigError("energy: config has time_features > 0 but no time given");

  std::size_t n = X.shape()[0];
  std::size_t hid = cfg_.hidden;
  std::size_t dh = hid / cfg_.heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  bool use_tanh = cfg_.activation == "tanh";

  Var inp = X;
  if (cfg_.time_features > 0) {
    // Sinusoidal features at dyadic frequencies f_k = 2^k, shared by all
    // particles at this time.
    Array feats({1, 2 * cfg_.time_features});
    double tau = 6.283185307179586476925286766559 * *t;
    for (std::size_t k = 0; k < cfg_.time_features; ++k) {
      double f = std::ldexp(1.0, static_cast<int>(k));
      feats[2 * k] = std::sin(tau * f);
      feats[2 * k + 1] = std::cos(tau * f);
    }
    Var tf = broadcast_to(g.constant(std::move(feats)),
                          {n, 2 * cfg_.time_features});
    Var pieces[2] = {X, tf};
    inp = concat(pieces, 1);
  }

  std::size_t i = 0;
  auto next = [&] { return params[i++]; };

  Var w_in = next(), b_in = next();
  Var h = matmul(inp, w_in) + b_in;

  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    Var ln1s = next(), ln1b = next();
    Var wq = next(), bq = next(), wk = next(), bk = next();
    Var wv = next(), bv = next(), wo = next(), bo = next();
    Var ln2s = next(), ln2b = next();
    Var w1 = next(), b1 = next(), w2 = next(), b2 = next();

    Var u = layer_norm(h) * ln1s + ln1b;
    Var q = matmul(u, wq) + bq;
    Var k = matmul(u, wk) + bk;
    Var v = matmul(u, wv) + bv;
    std::vector<Var> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t hd = 0; hd < cfg_.heads; ++hd) {
      long lo = static_cast<long>(hd * dh), hi = static_cast<long>((hd + 1) * dh);
      Var qh = slice(q, 1, lo, hi);
      Var kh = slice(k, 1, lo, hi);
      Var vh = slice(v, 1, lo, hi);
      Var att = softmax(matmul(qh, transpose(kh)) * scale, 1);
      heads.push_back(matmul(att, vh));
    }
    Var o = cfg_.heads == 1 ? heads[0] : concat(heads, 1);
    h = h + matmul(o, wo) + bo;

    Var u2 = layer_norm(h) * ln2s + ln2b;
    Var f = matmul(u2, w1) + b1;
    f = use_tanh ? tanh(f) : silu(f);
    if (training && cfg_.dropout > 0.0 && dropout_rng != nullptr) {
      double keep = 1.0 - cfg_.dropout;
      Array mask({n, cfg_.ff_inner});
      for (std::size_t m = 0; m < mask.size(); ++m)
        mask[m] = dropout_rng->bernoulli(keep) ? 1.0 / keep : 0.0;
      f = f * g.constant(std::move(mask));
    }
    h = h + matmul(f, w2) + b2;
  }

  Var pooled = mean(h, 0);  // (hidden,)
  Var head_w = next(), head_b = next();
  return sum(pooled * head_w) + head_b;
}

double AttentionEnergy::energy_value(const EnergyParams& params, const Array& X,
                                     std::optional<double> t) const {
  Graph g;
  ad::RecordingGuard off(g, false);
  std::vector<Var> pv;
  pv.reserve(params.tensors.size());
  for (const Array& a : params.tensors) pv.push_back(g.constant(a));
  Var xv = g.constant(X);
  return energy(g, pv, xv, t).value().item();
}

// ---- analytic energies ----

namespace {

void expect_cloud(const Array& X, const char* who) {
  if (X.rank() != 2 || X.shape()[0] < 1)
    throw ShapeError(std::string(who) + ": expected an (N,d) cloud, got " +
                     shape_str(X.shape()));
}

}  // namespace

double AnalyticEnergy::psi(const Array& X) const {
  expect_cloud(X, "psi");
  std::size_t n = X.shape()[0], d = X.shape()[1];
  switch (kind) {
    case AnalyticKind::Expectation: {
      potential.validate_dim(d);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        s += potential.value(X.data() + i * d, d);
      return s / static_cast<double>(n);
    }
    case AnalyticKind::PairwiseKernel: {
      double s = 0.0;
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
          double r2 = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            double diff = X[a * d + k] - X[b * d + k];
            r2 += diff * diff;
          }
          s += kernel_strength * std::exp(-kernel_bandwidth * r2);
        }
      return s / (2.0 * static_cast<double>(n) * static_cast<double>(n));
    }
    case AnalyticKind::NegSquaredForce: {
      potential.validate_dim(d);
      std::vector<double> grad(d);
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        potential.gradient(X.data() + i * d, d, grad.data());
        for (std::size_t k = 0; k < d; ++k) s += grad[k] * grad[k];
      }
      return -s / (2.0 * static_cast<double>(n));
    }
  }
  throw ConfigError("psi: unknown analytic kind");
}

Array AnalyticEnergy::functional_gradient(const Array& X) const {
  expect_cloud(X, "functional_gradient");
  std::size_t n = X.shape()[0], d = X.shape()[1];
  Array out(X.shape());
  switch (kind) {
    case AnalyticKind::Expectation:
      return potential.gradient_rows(X);
    case AnalyticKind::PairwiseKernel: {
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t b = 0; b < n; ++b) {
          double r2 = 0.0;
          for (std::size_t k = 0; k < d; ++k) {
            double diff = X[j * d + k] - X[b * d + k];
            r2 += diff * diff;
          }
          double w = kernel_strength * std::exp(-kernel_bandwidth * r2) *
                     (-2.0 * kernel_bandwidth) / static_cast<double>(n);
          for (std::size_t k = 0; k < d; ++k)
            out[j * d + k] += w * (X[j * d + k] - X[b * d + k]);
        }
      return out;
    }
    case AnalyticKind::NegSquaredForce: {
      // grad_x(-1/2 |grad V|^2) = -(Hess V)(grad V); Hessian diagonal here.
      potential.validate_dim(d);
      std::vector<double> grad(d), hess(d);
      for (std::size_t j = 0; j < n; ++j) {
        potential.gradient(X.data() + j * d, d, grad.data());
        potential.hessian_diag(X.data() + j * d, d, hess.data());
        for (std::size_t k = 0; k < d; ++k)
          out[j * d + k] = -hess[k] * grad[k];
      }
      return out;
    }
  }
  throw ConfigError("functional_gradient: unknown analytic kind");
}

Array AnalyticEnergy::force(const Array& X) const {
  Array g = functional_gradient(X);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = -g[i];
  return g;
}

// ---- accelerations ----

namespace {

void check_accel_inputs(const Array& X, const Array& V, double gamma) {
  if (!X.same_shape(V))
    throw ShapeError("acceleration: X " + shape_str(X.shape()) + " and V " +
                     shape_str(V.shape()) + " differ");
  if (gamma < 0.0)
    throw DomainError("acceleration: gamma must be >= 0, got " +
                      std::to_string(gamma));
}

[[noreturn]] void non_finite_accel(const Array& a, std::size_t d) {
  std::size_t flat = a.first_non_finite();
  throw NumericError("acceleration: non-finite gradient at particle " +
                     std::to_string(flat / d) + ", axis " +
                     std::to_string(flat % d));
}

}  // namespace

Array acceleration(const PotentialModel& model, const EnergyParams& params,
                   const Array& X, const Array& V, double gamma,
                   std::optional<double> t) {
  check_accel_inputs(X, V, gamma);
  Graph g;
  std::vector<Var> pv;
  pv.reserve(params.tensors.size());
  for (const Array& a : params.tensors) pv.push_back(g.constant(a));
  Var xv = g.leaf(X, true);
  Var e = model.energy(g, pv, xv, t);
  Array gx = ad::grad(e, xv).value();
  std::size_t n = X.shape()[0], d = X.shape()[1];
  Array a(X.shape());
  double nf = static_cast<double>(n);
  for (std::size_t i = 0; i < a.size(); ++i)
    a[i] = -nf * gx[i] - gamma * V[i];
  if (!a.all_finite()) non_finite_accel(a, d);
  return a;
}

Array acceleration(const AnalyticEnergy& analytic, const Array& X,
                   const Array& V, double gamma) {
  check_accel_inputs(X, V, gamma);
  Array a = analytic.force(X);
  for (std::size_t i = 0; i < a.size(); ++i) a[i] -= gamma * V[i];
  if (!a.all_finite()) non_finite_accel(a, X.shape()[1]);
  return a;
}

Var acceleration_recorded(Graph& g, const PotentialModel& model,
                          std::span<const ad::Var> params, Var X, Var V,
                          Var gamma, std::optional<double> t, bool training,
                          Rng* dropout_rng) {
  if (!X.value().same_shape(V.value()))
    throw ShapeError("acceleration: X " + shape_str(X.shape()) + " and V " +
                     shape_str(V.shape()) + " differ");
  // The force is grad_X of the energy, so X must be differentiable even when
  // the caller starts a rollout from plain data. A detached leaf keeps the
  // params -> force dependence intact, and the positions it replaces carry
  // no gradient of their own.
  if (!X.requires_grad()) X = g.leaf(X.value(), true);
  Var e = model.energy(g, params, X, t, training, dropout_rng);
  ad::GradOptions opt;
  opt.create_graph = true;
  Var gx = ad::grad(e, X, opt);
  double nf = static_cast<double>(X.shape()[0]);
  Var a = neg(gx) * nf - gamma * V;
  if (!a.value().all_finite()) non_finite_accel(a.value(), X.shape()[1]);
  return a;
}

FdCheckReport functional_derivative_check(const AnalyticEnergy& analytic,
                                          const Array& X, double step) {
  expect_cloud(X, "functional_derivative_check");
  std::size_t n = X.shape()[0], d = X.shape()[1];
  Array closed = analytic.functional_gradient(X);
  FdCheckReport rep;
  Array probe = X;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t k = 0; k < d; ++k) {
      std::size_t idx = j * d + k;
      double x0 = X[idx];
      probe[idx] = x0 + step;
      double fp = analytic.psi(probe);
      probe[idx] = x0 - step;
      double fm = analytic.psi(probe);
      probe[idx] = x0;
      double fd = (fp - fm) / (2.0 * step);
      double rhs = closed[idx] / static_cast<double>(n);
      double err = std::fabs(fd - rhs) /
                   std::max({1.0, std::fabs(fd), std::fabs(rhs)});
      if (err > rep.max_err) {
        rep.max_err = err;
        rep.particle = j;
        rep.axis = k;
        rep.fd = fd;
        rep.closed = rhs;
      }
    }
  return rep;
}

}  // namespace popmech::energy
