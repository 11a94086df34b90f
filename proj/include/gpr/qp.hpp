#pragma once

#include "gpr/types.hpp"

namespace gpr {

/// Dense convex QP
///   minimize 1/2 x^T H x + g^T x  subject to  lb <= A x <= ub,
/// with equality rows expressed as lb_i = ub_i and one-sided rows using
/// +-infinity. H must be positive definite (callers regularize).
struct QpProblem {
  Mat H;
  Vec g;
  Mat A;
  Vec lb, ub;

  int vars() const { return static_cast<int>(g.size()); }
  int rows() const { return static_cast<int>(lb.size()); }
  void validate() const;
};

enum class QpStatus { kOptimal, kMaxIter, kPrimalInfeasible, kDualInfeasible };

struct QpSolution {
  Vec x;
  Vec y;  // row multipliers: positive at upper bounds, negative at lower
  QpStatus status = QpStatus::kMaxIter;
  int iterations = 0;
  double objective = 0.0;
  double stationarity = 0.0;   // |Hx + g + A^T y|_inf
  double primal_res = 0.0;     // distance of Ax to [lb, ub]
  double complementarity = 0.0;
  double duality_gap = 0.0;
  bool polished = false;
};

struct QpSettings {
  int max_iter = 400;
  double eps = 1e-8;        // ADMM termination (absolute and relative)
  double rho0 = 0.1;        // initial penalty
  double sigma = 1e-6;      // proximal regularization
  double alpha = 1.6;       // over-relaxation
  int check_every = 25;     // residual / penalty-rebalancing cadence
  bool polish = true;
  int scaling_iters = 10;
};

struct QpWarmStart {
  Vec x;
  Vec y;
};

/// Operator-splitting solve with over-relaxation, residual-balanced penalty
/// updates, and an active-set polish step.
QpSolution solve_qp(const QpProblem& prob, const QpSettings& settings = {},
                    const QpWarmStart* warm = nullptr);

}  // namespace gpr
