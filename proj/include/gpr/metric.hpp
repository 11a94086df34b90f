#pragma once

#include <functional>

#include "gpr/system.hpp"
#include "gpr/types.hpp"

namespace gpr {

/// Constant contraction metric M with linear stabilizing feedback K and
/// contraction rate rho. The tube geometry it induces is the weighted
/// distance V(x, z) = |M^{1/2}(x - z)| with control law v + K(x - z).
struct Metric {
  Mat M;
  Mat M_half;      // upper-triangular factor, M_half^T M_half = M
  Mat M_half_inv;
  Mat K;           // m x n
  double rho = 0.0;

  static Metric create(const Mat& M, const Mat& K, double rho);
};

double vdelta(const Metric& mtr, const Vec& x, const Vec& z);
Vec feedback(const Metric& mtr, const Vec& x, const Vec& z, const Vec& v);

/// Sampling plan for the offline checks: a uniform grid per dimension plus
/// Latin-hypercube samples, filtered to the constraint-admissible region.
struct GridSpec {
  int x_points_per_dim = 3;
  int u_points_per_dim = 3;
  int lhs_samples = 10000;
  std::uint64_t seed = 12345;
  double safety_factor = 1.05;
};

struct VerifyReport {
  bool passed = false;
  double max_eig = 0.0;  // largest eigenvalue of the contraction LMI residual
  Vec worst_x, worst_u, worst_gx, worst_d;
  long points_checked = 0;
};

/// Grid check of the contraction condition
///   A_cl^T M + M A_cl + 2 rho M <= 0,
///   A_cl = d(f + Bu + Ed)/dx + B K + G gx,
/// over admissible (x, u), all vertices of the Jacobian box S and of the
/// disturbance box D (the dependence on gx and d is affine, so vertex
/// enumeration is exact in those arguments).
VerifyReport verify_contraction(const Metric& mtr, const SystemModel& model,
                                const GridSpec& grid);

/// Offline tube constants. For a constant metric, L_G and G_M are exact;
/// E_M and the constraint coefficients are grid maxima inflated by the
/// safety factor.
struct TubeConstants {
  double rho = 0.0;
  double L_G = 0.0;          // max |M^{1/2} G gx M^{-1/2}| over S vertices
  Vec G_M;                   // per output dim: |column i of M^{1/2} G|
  double E_M = 0.0;          // max |M^{1/2} E(x) d|
  Vec c;                     // per constraint: max |(dh/dx + dh/du K) M^{-1/2}|
  double rho_eff = 0.0;      // rho - L_G, the tube contraction rate

  double gm_total() const { return G_M.sum(); }
};

/// Throws verification_error if rho - L_G <= 0 (the tube would not contract).
TubeConstants compute_constants(const Metric& mtr, const SystemModel& model,
                                const GridSpec& grid);

/// Largest rho for which the given (M, K) passes the grid check, from the
/// generalized eigenvalue bound per sample point.
double max_contraction_rate(const Mat& M, const Mat& K, const SystemModel& model,
                            const GridSpec& grid);

/// Max induced M-norm of the closed-loop Jacobian over the sampling plan,
///   L_cl = max |M^{1/2} A_cl M^{-1/2}|_2,
/// the growth rate of a naive Lipschitz ball around the nominal trajectory.
double max_growth_rate(const Metric& mtr, const SystemModel& model,
                       const GridSpec& grid);

/// Riccati-based starting point for (M, K) on the linearization at the
/// reference: K is the LQR gain for (A, B, Qw, Rw) and M solves
///   (A + BK + rho I)^T M + M (A + BK + rho I) = -Qm.
/// The result is only a candidate; callers must still run the grid check.
Metric synthesize_linear_metric(const SystemModel& model, const Mat& Qw,
                                const Mat& Rw, double rho, const Mat& Qm);

/// Dense Lyapunov solve A^T X + X A + Q = 0 via the Kronecker system.
Mat solve_lyapunov(const Mat& A, const Mat& Q);

/// Continuous-time LQR gain (returns K with closed loop A + BK stable).
Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R);

/// Visits admissible points of the sampling plan: grid x LHS over the state
/// and input boxes, keeping points with all constraints satisfied.
void for_each_admissible(const SystemModel& model, const GridSpec& grid,
                         bool states_only,
                         const std::function<void(const Vec&, const Vec&)>& fn);

}  // namespace gpr
