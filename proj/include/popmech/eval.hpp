#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "popmech/array.hpp"
#include "popmech/datagen.hpp"
#include "popmech/energy.hpp"
#include "popmech/integrator.hpp"

namespace popmech::eval {

// Learned (or analytic) mechanics packaged for rollout: the conservative
// acceleration field plus the damping coefficient. The integrator applies
// the damping itself, so `accel` must not include the -gamma*v term.
struct Mechanics {
  integ::AccelFn accel;
  double gamma = 0.0;
};

// Evaluation-time mechanics from a trained model: acceleration through the
// learned potential at fixed parameters (inference mode, no dropout). The
// model must outlive the returned Mechanics; params are copied.
Mechanics make_mechanics(const energy::PotentialModel& model,
                         const energy::EnergyParams& params, double gamma);

// Ground-truth mechanics from a closed-form energy.
Mechanics make_mechanics(const energy::AnalyticEnergy& analytic, double gamma);

// One scored snapshot time.
struct EvalEntry {
  std::string label;  // stable per-time label: "t0", "t1", ... in dataset
                      // order (train times first, then test times)
  double t = 0.0;
  double w1 = 0.0;        // W1(predicted, observed) at this time
  bool test_split = false;
  bool approx_w1 = false;  // scored by the entropic fallback, not exact
  bool w1_converged = true;
  Array predicted;  // rolled cloud at t, kept for plots
  Array observed;
};

struct EvalReport {
  std::string protocol;  // "forecast" | "interpolate"
  std::vector<EvalEntry> entries;
  double train_mean = 0.0;  // plain mean of w1 over train entries
  double test_mean = 0.0;   // plain mean over test entries; 0 when none
  bool any_approx_w1 = false;
  bool any_nonconverged = false;

  // Everything except the clouds (labels, times, w1, flags, aggregates).
  nlohmann::json to_json() const;
};

// Inverse of EvalReport::to_json (clouds stay empty). Missing or mistyped
// keys throw DataError.
EvalReport eval_report_from_json(const nlohmann::json& j);

struct ForecastOptions {
  // When set, replace the initial cloud by `resample` KDE draws from it
  // (Gaussian kernel, per-coordinate Scott bandwidth). The v0 rows are
  // carried over from the kernel centers.
  std::optional<std::size_t> resample;
  std::uint64_t resample_seed = 0;
  std::size_t exact_cap = 2048;  // assignment cap for the W1 scorer
};

// Roll one simulation from (train X at t0, v0) through every train and
// test time in order, scoring W1 at each boundary. Each inter-snapshot
// interval is integrated with icfg.substeps steps of the configured
// scheme. `test` may be empty (times == {}) for a pure training-fit
// report; otherwise its times must all lie after the train times.
EvalReport forecast_eval(const Mechanics& mech,
                         const datagen::SnapshotDataset& train,
                         const datagen::SnapshotDataset& test, const Array& v0,
                         const integ::IntegratorConfig& icfg,
                         const ForecastOptions& opts = {});

// Initial-velocity policy for interpolation restarts.
enum class VMode {
  Provided,  // dataset velocities at the restart snapshot
  Zero,      // rest start
  Carried,   // velocities transported through an optimal assignment from
             // the previous leg's rolled cloud onto the observed snapshot
};

VMode parse_v_mode(const std::string& name);  // "provided"|"zero"|"carried"
std::string v_mode_name(VMode mode);

// Hold out snapshot `heldout` (0 < heldout < M), restart from the previous
// observed snapshot X_{t_{heldout-1}}, roll one interval, and score W1 at
// the held-out time only. The restart velocity follows `v_mode`; Carried
// first rolls t0 -> t_{heldout-1} from rest to obtain momenta to transport
// (only the times of the intermediate snapshots matter for that leg).
EvalReport interpolate_eval(const Mechanics& mech,
                            const datagen::SnapshotDataset& dataset,
                            std::size_t heldout, VMode v_mode,
                            const integ::IntegratorConfig& icfg,
                            std::size_t exact_cap = 2048);

// Write the report under `dir` (created if absent) in each requested
// format: "csv" -> {protocol}.csv (one row per entry), "json" ->
// {protocol}.json (to_json dump), "svg" -> {protocol}_{label}.svg scatter
// overlay per entry (first two coordinates). Unknown formats throw
// ConfigError. Returns the paths written.
std::vector<std::string> report_emit(const EvalReport& report,
                                     const std::string& dir,
                                     const std::vector<std::string>& formats);

// Across-seed aggregation. Both views are reported: per time label
// (mean/SE over seeds at that label) and pooled (each seed reduced to its
// split mean first, then mean/SE over seeds).
struct SeedStats {
  std::size_t n = 0;
  double mean = 0.0;
  double se = 0.0;  // sample standard error; 0 when n < 2
};

struct AggregateReport {
  SeedStats train_pooled;
  SeedStats test_pooled;
  std::vector<std::pair<std::string, SeedStats>> per_time;
  nlohmann::json to_json() const;
};

AggregateReport aggregate_reports(const std::vector<EvalReport>& reports);

}  // namespace popmech::eval
