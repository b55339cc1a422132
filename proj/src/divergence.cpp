#include "popmech/divergence.hpp"

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "popmech/errors.hpp"
#include "popmech/ops.hpp"

namespace popmech::divergence {

namespace {

using ad::Graph;
using ad::Var;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                          Eigen::RowMajor>;
using Vec = Eigen::VectorXd;
using MapMat = Eigen::Map<const Mat>;

void check_cloud(const Array& X, const char* who) {
  if (X.rank() != 2 || X.shape()[0] < 1 || X.shape()[1] < 1)
    throw ShapeError(std::string(who) + ": cloud must be N x d with N >= 1, got " +
                     shape_str(X.shape()));
}

Vec resolve_log_weights(const Array* w, std::size_t n, const char* side) {
  Vec lw(n);
  if (!w) {
    lw.setConstant(-std::log(static_cast<double>(n)));
    return lw;
  }
  if (w->size() != n)
    throw ShapeError(std::string("sinkhorn: weights for ") + side + " have " +
                     std::to_string(w->size()) + " entries, cloud has " +
                     std::to_string(n));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!((*w)[i] > 0.0))
      throw DomainError(std::string("sinkhorn: weights for ") + side +
                        " must be strictly positive");
    sum += (*w)[i];
  }
  if (std::fabs(sum - 1.0) > 1e-8)
    throw DomainError(std::string("sinkhorn: weights for ") + side +
                      " sum to " + std::to_string(sum) + ", expected 1");
  for (std::size_t i = 0; i < n; ++i) lw[i] = std::log((*w)[i]);
  return lw;
}

Mat cost_matrix(const Array& Xa, const Array& Xb, int p) {
  MapMat A(Xa.data(), Xa.shape()[0], Xa.shape()[1]);
  MapMat B(Xb.data(), Xb.shape()[0], Xb.shape()[1]);
  Vec na = A.rowwise().squaredNorm();
  Vec nb = B.rowwise().squaredNorm();
  Mat sq = (-2.0 * A * B.transpose());
  sq.colwise() += na;
  sq.rowwise() += nb.transpose();
  sq = sq.cwiseMax(0.0);
  if (p == 1) return sq.cwiseSqrt();
  return sq * 0.5;
}

struct Duals {
  Vec f, g;
  int iters = 0;
  bool converged = false;
};

// Log-domain Sinkhorn on cost C with log-weights loga/logb and regularizer
// eps. Gauss-Seidel order: f from the previous g, then g from the new f.
// A cold start is preceded by an eps-annealing prefix (one sweep per halving
// of eps from the cost scale down to the target), which is what makes small
// eps practical: the plain iteration's linear rate degrades like
// 1 - O(eps) and stalls, while the annealed warm start lands next to the
// fixed point. max_iters budgets the polish sweeps at the target eps; tol = 0
// disables early stopping (fixed sweep count, e.g. for finite differences).
// d.iters reports total sweeps including the prefix. Warm-starting duals in
// `d` skip the prefix.
void solve_duals(const Mat& C, const Vec& loga, const Vec& logb, double eps,
                 int max_iters, double tol, Duals& d) {
  long na = C.rows(), nb = C.cols();
  bool cold = d.f.size() != na || d.g.size() != nb;
  if (cold) {
    d.f = Vec::Zero(na);
    d.g = Vec::Zero(nb);
  }
  Vec fn(na), gn(nb), row(nb), col(na);
  auto sweep = [&](double e) {
    for (long i = 0; i < na; ++i) {
      row = logb + (d.g - C.row(i).transpose()) / e;
      double m = row.maxCoeff();
      fn[i] = -e * (m + std::log((row.array() - m).exp().sum()));
    }
    for (long j = 0; j < nb; ++j) {
      col = loga + (fn - C.col(j)) / e;
      double m = col.maxCoeff();
      gn[j] = -e * (m + std::log((col.array() - m).exp().sum()));
    }
    double delta = std::max((fn - d.f).cwiseAbs().maxCoeff(),
                            (gn - d.g).cwiseAbs().maxCoeff());
    d.f = fn;
    d.g = gn;
    return delta;
  };
  d.iters = 0;
  if (cold) {
    // Ladder anchored at eps * 2^k so the stage epsilons are piecewise
    // constant in the inputs (the recorded twin treats them as constants;
    // a cmax-proportional ladder would leak an undifferentiated
    // sensitivity into finite differences).
    double cmax = C.size() ? C.maxCoeff() : 0.0;
    int K = 0;
    if (cmax > eps)
      K = std::min(256, static_cast<int>(std::ceil(std::log2(cmax / eps))));
    for (int k = K; k >= 1; --k) {
      sweep(eps * std::ldexp(1.0, k));
      ++d.iters;
    }
  }
  d.converged = false;
  for (int k = 0; k < max_iters;) {
    double delta = sweep(eps);
    ++k;
    ++d.iters;
    if (tol > 0.0 && delta <= tol) {
      d.converged = true;
      break;
    }
  }
  if (tol <= 0.0) d.converged = true;  // fixed iteration budget by request
}

double dual_value(const Duals& d, const Vec& loga, const Vec& logb) {
  double v = 0.0;
  for (long i = 0; i < d.f.size(); ++i) v += std::exp(loga[i]) * d.f[i];
  for (long j = 0; j < d.g.size(); ++j) v += std::exp(logb[j]) * d.g[j];
  return v;
}

// One OT_eps term on the graph. Weights enter as constants; the returned
// scalar depends on Xa/Xb through the recorded cost matrix.
Var var_cost(Var Xa, Var Xb, int p) {
  Var xx = sum(Xa * Xa, 1, true);              // (Na,1)
  Var yy = transpose(sum(Xb * Xb, 1, true));   // (1,Nb)
  Var g2 = matmul(Xa, transpose(Xb));
  if (p == 1) return sqrt(clamp_min(xx + yy - g2 * 2.0, 1e-30));
  return xx * 0.5 + yy * 0.5 - g2;
}

Array col_array(const Vec& v) {
  Array out({static_cast<std::size_t>(v.size()), 1});
  for (long i = 0; i < v.size(); ++i) out[i] = v[i];
  return out;
}

Array row_array(const Vec& v) {
  Array out({1, static_cast<std::size_t>(v.size())});
  for (long i = 0; i < v.size(); ++i) out[i] = v[i];
  return out;
}

Var ot_term_recorded(Graph& g, Var Xa, Var Xb, const Vec& loga,
                     const Vec& logb, const DivergenceConfig& cfg, int& iters,
                     bool& converged) {
  double eps = std::pow(cfg.blur, cfg.p);
  Var C = var_cost(Xa, Xb, cfg.p);
  Var loga_col = g.constant(col_array(loga));
  Var logb_row = g.constant(row_array(logb));
  Var a_col = g.constant(col_array(loga.array().exp()));
  Var b_row = g.constant(row_array(logb.array().exp()));

  if (cfg.envelope) {
    // Converge detached, then record a single one-sided update with the g
    // dual held constant. At the fixed point its gradient through C is the
    // transport plan (the envelope theorem); recording both half-updates
    // would count the plan twice.
    Duals d;
    MapMat Cv(C.value().data(), C.value().shape()[0], C.value().shape()[1]);
    Mat Cm = Cv;
    solve_duals(Cm, loga, logb, eps, cfg.max_iters, cfg.tol, d);
    iters = d.iters;
    converged = d.converged;
    Var gc = g.constant(row_array(d.g));
    Var f_fin = logsumexp(logb_row + (gc - C) * (1.0 / eps), 1, true) * -eps;
    double g_side = 0.0;
    for (long j = 0; j < d.g.size(); ++j)
      g_side += std::exp(logb[j]) * d.g[j];
    return sum(a_col * f_fin) + g.constant(Array::scalar(g_side));
  }

  std::size_t na = Xa.shape()[0], nb = Xb.shape()[0];
  Var f = g.constant(Array::zeros({na, 1}));
  Var gv = g.constant(Array::zeros({1, nb}));
  iters = 0;
  // Recorded twin of solve_duals' cold start: the same eps-annealing prefix,
  // differentiated through like every other sweep. The stage epsilons are
  // piecewise constant in the inputs by construction (see solve_duals).
  {
    double cmax = 0.0;
    const Array& Cval = C.value();
    for (std::size_t i = 0; i < Cval.size(); ++i)
      cmax = std::max(cmax, Cval[i]);
    int K = 0;
    if (cmax > eps)
      K = std::min(256, static_cast<int>(std::ceil(std::log2(cmax / eps))));
    for (int k = K; k >= 1; --k) {
      double e = eps * std::ldexp(1.0, k);
      f = logsumexp(logb_row + (gv - C) * (1.0 / e), 1, true) * -e;
      gv = logsumexp(loga_col + (f - C) * (1.0 / e), 0, true) * -e;
      ++iters;
    }
  }
  converged = false;
  for (int k = 0; k < cfg.max_iters;) {
    Var f_new = logsumexp(logb_row + (gv - C) * (1.0 / eps), 1, true) * -eps;
    Var g_new = logsumexp(loga_col + (f_new - C) * (1.0 / eps), 0, true) * -eps;
    double delta = 0.0;
    for (std::size_t i = 0; i < na; ++i)
      delta = std::max(delta,
                       std::fabs(f_new.value()[i] - f.value()[i]));
    for (std::size_t j = 0; j < nb; ++j)
      delta = std::max(delta,
                       std::fabs(g_new.value()[j] - gv.value()[j]));
    f = f_new;
    gv = g_new;
    ++k;
    ++iters;
    if (cfg.tol > 0.0 && delta <= cfg.tol) {
      converged = true;
      break;
    }
  }
  if (cfg.tol <= 0.0) converged = true;
  return sum(a_col * f) + sum(b_row * gv);
}

double ot_term_numeric(const Array& Xa, const Array& Xb, const Vec& loga,
                       const Vec& logb, const DivergenceConfig& cfg,
                       int& iters, bool& converged) {
  double eps = std::pow(cfg.blur, cfg.p);
  Mat C = cost_matrix(Xa, Xb, cfg.p);
  Duals d;
  solve_duals(C, loga, logb, eps, cfg.max_iters, cfg.tol, d);
  iters = d.iters;
  converged = d.converged;
  return dual_value(d, loga, logb);
}

void merge_report(SinkhornReport* rep, int iters, bool converged) {
  if (!rep) return;
  rep->iters = std::max(rep->iters, iters);
  rep->converged = rep->converged && converged;
}

}  // namespace

void DivergenceConfig::validate() const {
  if (p != 1 && p != 2)
    throw ConfigError("divergence: p must be 1 or 2, got " + std::to_string(p));
  if (!(blur > 0.0))
    throw ConfigError("divergence: blur must be > 0, got " +
                      std::to_string(blur));
  if (max_iters < 1)
    throw ConfigError("divergence: max_iters must be >= 1");
  if (tol < 0.0) throw ConfigError("divergence: tol must be >= 0");
}

Var sinkhorn_divergence(Graph& g, Var Xa, Var Xb, const DivergenceConfig& cfg,
                        SinkhornReport* report, const Array* weights_a,
                        const Array* weights_b) {
  cfg.validate();
  if (!Xa.valid() || !Xb.valid() || Xa.graph() != &g || Xb.graph() != &g)
    throw Error("sinkhorn: clouds must live on the given graph");
  check_cloud(Xa.value(), "sinkhorn");
  check_cloud(Xb.value(), "sinkhorn");
  if (Xa.shape()[1] != Xb.shape()[1])
    throw ShapeError("sinkhorn: dimension mismatch " + shape_str(Xa.shape()) +
                     " vs " + shape_str(Xb.shape()));
  Vec loga = resolve_log_weights(weights_a, Xa.shape()[0], "Xa");
  Vec logb = resolve_log_weights(weights_b, Xb.shape()[0], "Xb");

  if (report) *report = SinkhornReport{};
  int it = 0;
  bool conv = true;
  Var ab = ot_term_recorded(g, Xa, Xb, loga, logb, cfg, it, conv);
  merge_report(report, it, conv);
  Var aa = ot_term_recorded(g, Xa, Xa, loga, loga, cfg, it, conv);
  merge_report(report, it, conv);
  Var bb = ot_term_recorded(g, Xb, Xb, logb, logb, cfg, it, conv);
  merge_report(report, it, conv);
  Var s = ab - (aa + bb) * 0.5;
  if (report) report->value = s.value().item();
  return s;
}

double sinkhorn_divergence(const Array& Xa, const Array& Xb,
                           const DivergenceConfig& cfg, SinkhornReport* report,
                           const Array* weights_a, const Array* weights_b) {
  cfg.validate();
  check_cloud(Xa, "sinkhorn");
  check_cloud(Xb, "sinkhorn");
  if (Xa.shape()[1] != Xb.shape()[1])
    throw ShapeError("sinkhorn: dimension mismatch " + shape_str(Xa.shape()) +
                     " vs " + shape_str(Xb.shape()));
  Vec loga = resolve_log_weights(weights_a, Xa.shape()[0], "Xa");
  Vec logb = resolve_log_weights(weights_b, Xb.shape()[0], "Xb");

  if (report) *report = SinkhornReport{};
  int it = 0;
  bool conv = true;
  double ab = ot_term_numeric(Xa, Xb, loga, logb, cfg, it, conv);
  merge_report(report, it, conv);
  double aa = ot_term_numeric(Xa, Xa, loga, loga, cfg, it, conv);
  merge_report(report, it, conv);
  double bb = ot_term_numeric(Xb, Xb, logb, logb, cfg, it, conv);
  merge_report(report, it, conv);
  double s = ab - 0.5 * (aa + bb);
  if (report) report->value = s;
  return s;
}

namespace {

// Shortest-augmenting-path assignment (the classic O(n^3) Hungarian
// formulation with row/column potentials, 1-based internals). When `match`
// is given it receives match[row] = assigned column.
double assignment_cost(const Mat& A, std::vector<std::size_t>* match = nullptr) {
  int n = static_cast<int>(A.rows());
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = 0;
      double delta = inf;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        double cur = A(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += A(p[j] - 1, j - 1);
  if (match) {
    match->assign(n, 0);
    for (int j = 1; j <= n; ++j)
      (*match)[static_cast<std::size_t>(p[j] - 1)] =
          static_cast<std::size_t>(j - 1);
  }
  return total;
}

double cloud_diameter_bound(const Array& Xa, const Array& Xb) {
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

}  // namespace

double exact_w1(const Array& Xa, const Array& Xb, W1Report* report,
                std::size_t exact_cap) {
  check_cloud(Xa, "exact_w1");
  check_cloud(Xb, "exact_w1");
  if (Xa.shape() != Xb.shape())
    throw ShapeError("exact_w1: clouds must have equal shape, got " +
                     shape_str(Xa.shape()) + " vs " + shape_str(Xb.shape()));
  std::size_t n = Xa.shape()[0];
  if (report) *report = W1Report{};

  if (n <= exact_cap) {
    Mat C = cost_matrix(Xa, Xb, 1);
    return assignment_cost(C) / static_cast<double>(n);
  }

  // Annealed entropic fallback: cold solve_duals runs its geometric
  // eps-annealing prefix down to 1e-3 of the cloud diameter, debiased there.
  double diam = std::max(cloud_diameter_bound(Xa, Xb), 1e-9);
  double target = 1e-3 * diam;
  Mat Cab = cost_matrix(Xa, Xb, 1);
  Mat Caa = cost_matrix(Xa, Xa, 1);
  Mat Cbb = cost_matrix(Xb, Xb, 1);
  Vec logw(n);
  logw.setConstant(-std::log(static_cast<double>(n)));
  Duals dab, daa, dbb;
  solve_duals(Cab, logw, logw, target, 50, 1e-6, dab);
  solve_duals(Caa, logw, logw, target, 50, 1e-6, daa);
  solve_duals(Cbb, logw, logw, target, 50, 1e-6, dbb);
  if (report) {
    report->exact = false;
    report->iters = dab.iters + daa.iters + dbb.iters;
    report->converged = dab.converged && daa.converged && dbb.converged;
  }
  return dual_value(dab, logw, logw) - 0.5 * (dual_value(daa, logw, logw) +
                                              dual_value(dbb, logw, logw));
}

std::vector<std::size_t> optimal_assignment(const Array& Xa, const Array& Xb) {
  check_cloud(Xa, "optimal_assignment");
  check_cloud(Xb, "optimal_assignment");
  if (Xa.shape() != Xb.shape())
    throw ShapeError("optimal_assignment: clouds must have equal shape, got " +
                     shape_str(Xa.shape()) + " vs " + shape_str(Xb.shape()));
  Mat C = cost_matrix(Xa, Xb, 2);
  std::vector<std::size_t> match;
  assignment_cost(C, &match);
  return match;
}

double estimate_blur(const Array& snapshot) {
  if (snapshot.rank() != 2 || snapshot.shape()[0] < 2)
    throw DataError("estimate_blur: need an N x d snapshot with N >= 2, got " +
                    shape_str(snapshot.shape()));
  std::size_t n = snapshot.shape()[0], d = snapshot.shape()[1];
  std::size_t m = std::min<std::size_t>(n, 512);
  std::vector<std::size_t> idx(m);
  for (std::size_t k = 0; k < m; ++k) idx[k] = k * n / m;

  std::vector<double> dist;
  dist.reserve(m * (m - 1) / 2);
  for (std::size_t a = 0; a < m; ++a)
    for (std::size_t b = a + 1; b < m; ++b) {
      double sq = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double diff =
            snapshot[idx[a] * d + c] - snapshot[idx[b] * d + c];
        sq += diff * diff;
      }
      dist.push_back(std::sqrt(sq));
    }
  std::sort(dist.begin(), dist.end());
  std::size_t mid = dist.size() / 2;
  double median = dist.size() % 2 ? dist[mid]
                                  : 0.5 * (dist[mid - 1] + dist[mid]);
  return std::max(0.05 * median, 1e-3);
}

}  // namespace popmech::divergence
