#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "popmech/datagen.hpp"
#include "popmech/energy.hpp"
#include "popmech/integrator.hpp"
#include "popmech/trainer.hpp"

namespace popmech::cli {

// Evaluation-protocol selection for the eval/report subcommands.
struct EvalSection {
  std::string protocol = "forecast";  // forecast | interpolate
  std::string v_mode = "carried";     // provided | zero | carried
  std::size_t heldout = 1;            // interpolate: held-out time index
  std::optional<std::size_t> resample;  // forecast: KDE-resampled cloud size
  std::uint64_t resample_seed = 0;
  std::size_t exact_cap = 2048;
  std::vector<std::string> formats = {"csv", "json", "svg"};
  bool use_ema = true;  // evaluate the EMA shadow weights
};

// One config file drives every subcommand; sections mirror the library
// config structs, every field has a default, and unknown keys are rejected
// with JSON-pointer paths. CLI-level defaults that differ from the library
// structs: boids generates 50 train + 50 test frames (the benchmark
// protocol), and inference integration uses 5 substeps per interval.
struct ExperimentConfig {
  std::string output = "runs/out";
  std::vector<std::uint64_t> seeds;  // --seeds fan-out list; empty = single
                                     // run with the sections' own seeds
  std::string v0 = "zero";  // zero | provided | paired-fd | file
  std::string v0_file;      // for "file": defaults to <data>/v0.csv
  datagen::SdeSpec sde;
  datagen::BoidsSpec boids;
  energy::EnergyConfig energy;
  trainer::TrainConfig train;
  integ::IntegratorConfig integrator;
  EvalSection eval;

  ExperimentConfig();
};

// Strict parse on top of `base`: type mismatches and unknown keys throw
// ConfigError naming the JSON-pointer path.
ExperimentConfig parse_config(const nlohmann::json& j,
                              ExperimentConfig base = {});

// Canonical full form: every field explicit, keys sorted (nlohmann
// objects iterate in key order), "auto" blur spelled as the string.
nlohmann::json config_to_json(const ExperimentConfig& cfg);

// FNV-1a 64-bit hash of the canonical dump, as 16 hex digits. Stamped into
// every artifact's provenance record.
std::string config_hash(const nlohmann::json& canonical);

// The popmech entry point; `args` is argv without the program name.
// Subcommands: gen-sde, gen-boids, train, rollout, eval, report. Exit
// codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace popmech::cli
