#pragma once

#include <array>
#include <string>
#include <vector>

#include "gpr/metric.hpp"
#include "gpr/qp.hpp"
#include "gpr/system.hpp"
#include "gpr/tube.hpp"
#include "gpr/types.hpp"
#include "gpr/uncertainty.hpp"

namespace gpr {

enum class Mode { kRmpc, kRampc };

struct HorizonSpec {
  double T_s = 0.15;
  int N_f = 50;
  int substeps = 4;
  bool constraints_at_substeps = true;

  double dt() const { return T_s / substeps; }
  int fine_steps() const { return N_f * substeps; }
  double T_f() const { return T_s * N_f; }
  void validate() const;
};

struct StageCost {
  Mat Q, R;
};

struct SqpSettings {
  int max_iter = 50;
  double tol = 1e-6;           // step norm and stationarity
  double soft_penalty = 1e2;   // L1 weight on constraint slacks
  double lambda_max = 2.0;
  double armijo = 1e-4;
  double backtrack = 0.5;
  int max_linesearch = 30;
  double reg = 1e-8;           // Hessian regularization floor
  QpSettings qp;
};

enum class OcpStatus { kFeasible, kDegraded, kFailed };

/// Solution on the fine integration grid (N_f * substeps + 1 nodes).
struct OcpSolution {
  Mat z;        // nodes x n
  Vec delta;    // nodes
  Mat v;        // N_f x m
  Mat lambda;   // N_f x selection count (single fixed column in RMPC mode)
  Mat w;        // nodes x l, uncertainty along the returned trajectory
  double delta0 = 0.0;
  double objective = 0.0;
  int sqp_iters = 0;
  double kkt_res = 0.0;
  double step_norm = 0.0;
  double max_viol = 0.0;  // residual violation of the returned solution
  OcpStatus status = OcpStatus::kFailed;
  std::vector<char> used_flags;  // per selection position: active in the band extremes
  Vec gbar_terminal;             // estimate at the reference under the last weights

  Vec z0() const { return z.row(0).transpose(); }
};

/// Result of re-rolling a (candidate) solution with live GP evaluations.
struct LiveRoll {
  Mat z;
  Vec delta;
  Mat w;
  Mat gbar;
  std::vector<char> used;
  std::vector<std::array<Vec, 4>> stage_states;
};

struct FeasReport {
  bool ok = false;
  double worst_path = 0.0;    // max_j,tau h_j + c_j delta
  double init_gap = 0.0;      // V(x, z_0) - delta_0
  double terminal_eq = 0.0;   // |z_N - x_ref|_inf
  double terminal_tube = 0.0; // delta_N - delta_f
  double lambda_viol = 0.0;
  std::string worst_name;
};

/// Receding-horizon robust OCP solved by Gauss-Newton SQP on the condensed
/// problem: states are eliminated by forward RK4 sensitivities, the GP terms
/// are frozen at the previous iterate's trajectory within each iteration
/// (zero-order handling), and every stage inequality enters the QP as a soft
/// constraint with an L1 penalty. Decision variables: the nominal initial
/// state z_0, the tube radius delta_0, the input sequence, and (adaptive
/// mode) the per-interval combination weights.
class OcpSolver {
 public:
  OcpSolver(SystemModel model, Metric metric, TubeConstants consts,
            TerminalSet term, HorizonSpec horizon, StageCost cost, Mode mode,
            SqpSettings settings);

  OcpSolution solve(const Vec& x_t, const GpCollection& coll,
                    const Selection& sel, const OcpSolution* warm);

  /// Proof-style shifted candidate: inputs moved one interval left with the
  /// reference input appended, weights re-indexed onto the new selection with
  /// zeros for fresh models, and the initial radius set to the distance
  /// between the measured state and the shifted nominal.
  OcpSolution shift_candidate(const OcpSolution& prev, const Selection& sel_prev,
                              const Selection& sel_new, const Vec& x_next,
                              const GpCollection& coll) const;

  /// Re-rolls the candidate with live GP evaluations and checks every OCP
  /// constraint. Independent of the SQP path (no frozen quantities).
  FeasReport check_candidate(const Vec& x_t, const OcpSolution& cand,
                             const GpCollection& coll, const Selection& sel,
                             double tol = 1e-5) const;

  /// Canonical nonlinear rollout of (z, delta) under given inputs/weights,
  /// with a configurable number of integration steps per input interval
  /// (n_intervals <= N_f intervals are rolled).
  LiveRoll roll(const Vec& z0, double delta0, const Mat& v, const Mat& lambda,
                const GpCollection& coll, const Selection& sel,
                int steps_per_interval, int n_intervals) const;

  /// Stage-cost quadrature of a rolled trajectory over the first n_intervals
  /// (same rule the solver optimizes: left-endpoint rectangle on the fine grid).
  double rollout_cost(const LiveRoll& r, const Mat& v, const Mat& lambda,
                      const GpCollection& coll, const Selection& sel,
                      int steps_per_interval, int n_intervals) const;

  const HorizonSpec& horizon() const { return horizon_; }
  const TerminalSet& terminal() const { return term_; }
  const SystemModel& model() const { return model_; }
  const Metric& metric() const { return metric_; }
  const TubeConstants& constants() const { return consts_; }
  Mode mode() const { return mode_; }

  /// Objective and gradient of the condensed cost at the given point with
  /// GP terms frozen at its own trajectory (testing hook for derivative
  /// checks; theta layout: [z0, delta0, v, lambda]).
  std::pair<double, Vec> objective_with_gradient(const Vec& theta,
                                                 const GpCollection& coll,
                                                 const Selection& sel);
  double objective_only(const Vec& theta, const Vec& theta_freeze,
                        const GpCollection& coll, const Selection& sel);
  int theta_size(const Selection& sel) const;

 private:
  struct Tables;  // frozen GP evaluations per fine step and RK4 stage
  struct Roll;    // internal rollout with sensitivities

  int n_lambda(const Selection& sel) const;
  Vec pack_theta(const OcpSolution& s, const Selection& sel) const;
  void unpack_theta(const Vec& theta, const Selection& sel, Vec& z0, double& d0,
                    Mat& v, Mat& lam) const;
  Tables freeze(const std::vector<std::array<Vec, 4>>& stages,
                const GpCollection& coll, const Selection& sel,
                const Mat& lam) const;
  Roll roll_frozen(const Vec& theta, const Tables& tab, const Selection& sel,
                   bool with_sens) const;
  OcpSolution finalize(const Vec& theta, const GpCollection& coll,
                       const Selection& sel, int iters, double kkt,
                       double step_norm, OcpStatus base_status) const;

  SystemModel model_;
  Metric metric_;
  TubeConstants consts_;
  TerminalSet term_;
  HorizonSpec horizon_;
  StageCost cost_;
  Mode mode_;
  SqpSettings st_;

  Vec u_ref0_;       // u_ref(0)
  Mat u_ref_gain_;   // d u_ref / d gbar
  std::vector<int> cnodes_;  // fine nodes carrying path constraints
  double delta_growth_ = 1.0;  // per-fine-step RK4 factor of the radius ODE
};

}  // namespace gpr
