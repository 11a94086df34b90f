#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gpr/ocp.hpp"

namespace gpr {

/// Measurement noise with sub-Gaussian scale R. The truncated variant draws
/// a standard normal conditioned on |z| <= 3 and scales by R (support 3R);
/// the uniform variant draws from [-R sqrt(3), R sqrt(3)] (variance R^2).
struct NoiseSpec {
  enum class Kind { kTruncatedGaussian, kUniform };
  Kind kind = Kind::kTruncatedGaussian;
  double R = 0.0;
};

double draw_noise(const NoiseSpec& spec, RandomStream& rng);

/// Noisy oracle measurement y = g(x) + eps, one independent draw per output
/// dimension. States outside the admissible box are clamped with a warning.
Vec measure(const SystemModel& model, const Vec& x, const NoiseSpec& spec,
            RandomStream& rng);

/// Disturbance law over the box D, redrawn at every plant substep and held
/// constant across it.
struct DisturbanceSpec {
  enum class Kind { kZero, kUniform, kVertex };
  Kind kind = Kind::kUniform;
};

/// Offline training data: fixed sets (one per output dimension) or a
/// sampling recipe (uniform inputs over sample_box, noisy oracle targets).
/// per_seed re-draws the recipe under each monte-carlo seed so the offline
/// fit participates in the probabilistic acceptance statistics.
struct OfflineData {
  std::vector<DataSet> fixed;
  int n_points = 0;
  Mat sample_box;  // n x 2 columns (lo, hi); empty means the state box
  std::uint64_t gen_seed = 0;
  bool per_seed = false;
};

struct GpFitSpec {
  KernelSpec kernel;
  double sigma = 1e-2;  // regularization sigma in K + sigma^2 I
  BoundInputs bound;
  int n_mobs = 100;  // data cap; online appends stop at this size
};

/// Builds the single-entry offline GP collection from fixed data or the
/// sampling recipe. rng drives per-seed generation; when per_seed is false
/// the recipe's own gen_seed is used instead.
GpCollection offline_collection(const SystemModel& model,
                                const OfflineData& offline, const GpFitSpec& gp,
                                const NoiseSpec& noise, RandomStream& rng);

struct ClosedLoopSetup {
  SystemModel model;
  Metric metric;
  TubeConstants consts;
  TerminalSet term;
  HorizonSpec horizon;
  StageCost cost;
  Mode mode = Mode::kRampc;
  SqpSettings sqp;
  NoiseSpec noise;
  DisturbanceSpec dist;
  OfflineData offline;
  GpFitSpec gp;
  Vec x0;
  int steps = 35;
  int plant_substeps = 40;  // plant RK4 steps per sampling interval
  int n_b = 10;
  double containment_tol = 1e-6;
  bool log_predictions = true;
};

struct StepRecord {
  double t = 0.0;
  Vec x;   // measured state at the start of the step
  Vec u0;  // first applied input sample
  OcpStatus status = OcpStatus::kFailed;
  int sqp_iters = 0;
  double kkt_res = 0.0;
  double step_norm = 0.0;
  double max_viol = 0.0;
  double objective = 0.0;
  double first_interval_cost = 0.0;  // planned stage cost over [t_k, t_k+T_s)
  double delta0 = 0.0;
  double z0_ref_dist = 0.0;  // |z*_0 - x_ref|
  bool candidate_checked = false;
  bool candidate_ok = false;
  double candidate_worst = 0.0;
  double containment_gap = 0.0;   // max over substeps of V_delta - delta
  double worst_constraint = 0.0;  // max_j h_j(x(t), u(t)) over substeps
  int selection_count = 0;
  bool gp_updated = false;
};

struct RunResult {
  std::uint64_t seed = 0;
  bool aborted = false;
  std::string abort_reason;
  int steps_done = 0;
  double closed_loop_cost = 0.0;  // tracking cost at plant rate
  double time_to_terminal = -1.0;  // first t_k with V_delta(x, x_ref) <= delta_f
  bool reached_terminal = false;
  bool containment_ok = true;
  double worst_containment_gap = 0.0;
  double worst_constraint = 0.0;
  bool constraint_violated = false;
  bool all_feasible = true;
  bool candidates_ok = true;
  double worst_cost_decrease = 0.0;  // max_k V*_k - (V*_{k-1} - planned first-interval cost)
  int selection_max = 0;
  std::vector<StepRecord> step_records;
};

/// Closed-loop engine: at each sampling instant solves the OCP at the
/// measured state, applies the tube feedback between samples by integrating
/// the plant (true g, sampled disturbances) at plant_substeps RK4 steps per
/// interval with the feedback held across each plant step, then (adaptive
/// mode) takes one measurement, fits the extended GP, and updates the model
/// selection. out_dir empty disables file output; otherwise the directory
/// receives trajectory.csv, predictions.csv, events.jsonl, summary.json.
RunResult run_closed_loop(const ClosedLoopSetup& setup, std::uint64_t seed,
                          const std::string& out_dir);

struct MonteCarloResult {
  int n_runs = 0;
  int n_aborted = 0;
  double containment_freq = 0.0;  // aborted runs count as not contained
  double violation_freq = 0.0;
  double mean_cost = 0.0;
  double min_cost = 0.0;
  double max_cost = 0.0;
  int reached_terminal = 0;
  double mean_time_to_terminal = -1.0;  // over runs that reached the set
  int all_feasible_runs = 0;
  int candidates_ok_runs = 0;
  std::vector<RunResult> runs;  // ordered like the input seed list
};

/// Independent closed-loop runs, one per seed, at most jobs in parallel
/// (jobs <= 0 uses the hardware concurrency). Per-run output directories
/// out_root/seed_<seed> are created when out_root is nonempty.
MonteCarloResult monte_carlo(const ClosedLoopSetup& setup,
                             const std::vector<std::uint64_t>& seeds, int jobs,
                             const std::string& out_root);

std::string run_summary_json(const RunResult& r);
std::string monte_carlo_summary_json(const MonteCarloResult& r);

}  // namespace gpr
