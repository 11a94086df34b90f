#pragma once

#include <cstdint>
#include <string>

#include "gpr/sim.hpp"

namespace gpr {

/// Parsed experiment configuration. The on-disk format is strict JSON:
/// schema_version is mandatory, unknown keys are rejected everywhere,
/// matrices are flat row-major lists (a length-n list is accepted as a
/// diagonal for square matrices), and relative paths resolve against the
/// config file's directory.
struct ExperimentConfig {
  std::string dir;
  std::string system_name;
  ToyParams toy;
  QuadrotorParams quad;

  Mat M, K;
  double rho = 0.0;
  GridSpec grid;
  double w_max = 0.0;

  OfflineData offline;
  GpFitSpec gp;
  HorizonSpec horizon;
  bool desk_scale = false;  // marks reduced-horizon tuning
  StageCost cost;
  SqpSettings sqp;

  Mode mode = Mode::kRampc;
  int steps = 35;
  std::uint64_t seed = 0;
  int plant_substeps = 40;
  int n_b = 10;
  Vec x0;
  double containment_tol = 1e-6;
  NoiseSpec noise;
  DisturbanceSpec dist;
  bool log_predictions = true;

  int mc_seeds = 1;
  std::uint64_t mc_seed0 = 1;
  int mc_jobs = 0;
  double mc_containment_min = 0.0;
  double mc_violation_max = 1.0;
};

ExperimentConfig load_config(const std::string& path);

/// Instantiates the built-in system named in the config with its overrides.
SystemModel make_system(const ExperimentConfig& cfg);

/// Offline pipeline artifacts. The verification report is always present;
/// constants and the terminal set are filled only when verification passed.
struct OfflineBundle {
  Metric metric;
  VerifyReport report;
  bool has_constants = false;
  TubeConstants consts;
  bool has_terminal = false;
  TerminalSet term;
  Vec gbar_lo, gbar_hi;  // estimate range at the reference behind delta_f
};

/// Metric factorization, grid verification, tube constants, terminal
/// radius. A failed grid check returns early with report.passed == false;
/// ill-posed constants raise verification_error and an empty terminal set
/// raises infeasible_error.
OfflineBundle run_offline(const ExperimentConfig& cfg, const SystemModel& model);

void save_bundle(const OfflineBundle& b, const std::string& path);

/// Loads a bundle for the run commands; requires a passed verification and
/// complete constants/terminal data.
OfflineBundle load_bundle(const std::string& path);

/// Assembles the closed-loop inputs from config + offline artifacts.
ClosedLoopSetup make_setup(const ExperimentConfig& cfg, const SystemModel& model,
                           const OfflineBundle& b);

}  // namespace gpr
