#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "popmech/array.hpp"
#include "popmech/potentials.hpp"

namespace popmech::datagen {

// A time-indexed set of empirical marginals, optionally with per-particle
// velocities. `paired` promises the same particles in the same row order at
// every time; velocities, when present, shape-match their snapshot.
struct SnapshotDataset {
  std::size_t dim = 0;
  std::vector<double> times;     // strictly increasing
  std::vector<Array> snapshots;  // one (N_i, dim) cloud per time
  std::vector<Array> velocities; // empty, or one per snapshot
  bool paired = false;

  bool has_velocities() const { return !velocities.empty(); }
  std::size_t num_times() const { return times.size(); }
  void validate() const;  // throws DataError / ShapeError
};

// Gradient-flow SDE benchmark: dX = -grad V(X) dt + sigma dW, simulated by
// Euler-Maruyama with em_substeps per recorded spacing dt, from
// p0 = N(0, init_variance * I).
struct SdeSpec {
  std::string potential = "quadratic";  // quadratic, bohachevsky,
                                        // oakley-ohagan, styblinski-tang,
                                        // wavy-plateau
  std::size_t dim = 2;
  double sigma2 = 1.0;
  double dt = 0.01;
  int em_substeps = 10;
  int num_train = 10;  // recorded marginals t = 0, dt, ..., (num_train-1) dt
  int num_test = 10;   // held-out continuation marginals
  std::size_t particles = 1000;
  double init_variance = 0.2;
  bool paired = true;
  std::uint64_t seed = 0;

  void validate() const;            // throws ConfigError
  Potential resolve_potential() const;  // paper constants (quadratic: c = 5)
};

// Training marginals plus the held-out forecast continuation.
struct GeneratedData {
  SnapshotDataset train;
  SnapshotDataset test;
};

// Paired mode evolves one population and records it at every boundary;
// unpaired mode simulates each recorded time independently with
// derive_seed(seed, time_index), so results are schedule-independent.
GeneratedData gen_sde(const SdeSpec& spec);

// Analytic initial velocity of the gradient flow in Wasserstein geometry:
// v0(x) = -grad V(x) - (sigma^2 / 2) grad log p0(x), with the Gaussian score
// grad log p0(x) = -x / init_variance in closed form.
Array analytic_gf_v0(const SdeSpec& spec, const Array& X0);

// Boids flocking generator. Declared force law (per agent i):
//   separation: w_separation * mean over j with 0 < |x_i-x_j| < r_inner of
//               (x_i - x_j) / |x_i - x_j|^2
//   alignment:  w_alignment * mean over j with 0 < |x_i-x_j| < r_outer of
//               (v_j - v_i)
//   cohesion:   w_cohesion * mean over the same r_outer neighbors of
//               (x_j - x_i)
//   boundary:   -w_boundary * (x_i / |x_i|) * (|x_i| - boundary_radius)
//               when |x_i| > boundary_radius
// Empty neighborhoods contribute zero. Integration is Euler with the
// velocity updated first (v += dt a, then x += dt v), which is what makes a
// resting pair separate on the very first step.
struct BoidsSpec {
  std::size_t particles = 1000;
  std::size_t dim = 2;
  double r_inner = 0.3;
  double r_outer = 1.0;
  double w_separation = 0.1;
  double w_alignment = 0.3;
  double w_cohesion = 0.005;
  double w_boundary = 0.5;
  double boundary_radius = 5.0;
  double dt = 0.5;
  int num_train = 20;  // recorded frames t = 0, dt, ...
  int num_test = 10;   // held-out continuation frames
  // Initial positions: isotropic Gaussian mixture (equal-weight components
  // at `init_means`, shared stddev init_pos_std); default one component at
  // the origin. Initial velocities: isotropic Gaussian, stddev init_speed.
  std::vector<std::vector<double>> init_means;
  double init_pos_std = 1.0;
  double init_speed = 0.5;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

// One evaluation of the force law above on an (N, dim) state.
Array boids_accel(const BoidsSpec& spec, const Array& X, const Array& V);

// Records positions and ground-truth velocities at every frame; paired.
GeneratedData gen_boids(const BoidsSpec& spec);

enum class V0Mode { Provided, Zero, PairedFiniteDifference };
V0Mode parse_v0_mode(const std::string& name);  // provided | zero | paired-fd
std::string v0_mode_name(V0Mode mode);

// Initial velocity for rollouts from the first snapshot: stored velocities
// (provided), zeros, or (X_{t1} - X_{t0}) / (t1 - t0) on paired data.
Array estimate_v0(const SnapshotDataset& dataset, V0Mode mode);

// Dataset bundle: directory with manifest.json (format_version, dim, paired,
// times, snapshot file names, has_velocities) and one CSV per snapshot with
// header x1..xd[,v1..vd], one particle per row, round-trip double formatting.
void save_dataset(const std::string& dir, const SnapshotDataset& dataset);
SnapshotDataset load_dataset(const std::string& dir);

}  // namespace popmech::datagen
