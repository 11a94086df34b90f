#pragma once

#include <functional>
#include <vector>

#include "gpr/metric.hpp"
#include "gpr/system.hpp"
#include "gpr/types.hpp"

namespace gpr {

/// Tube radius dynamics
///   ddelta = -(rho - L_G) delta + sum_i G_M,i w_i + E_M.
double fdelta(const TubeConstants& tc, double delta, const Vec& w);

/// RK4 integration of the radius along a nominal trajectory given at nodes
/// spaced dt apart. w_fun maps a nominal state to the per-dimension
/// uncertainty; half-step stage values use linear interpolation between
/// nodes. Returns the radius at every node (size of z_nodes).
std::vector<double> propagate_tube(const TubeConstants& tc,
                                   const std::vector<Vec>& z_nodes,
                                   const std::function<Vec(const Vec&)>& w_fun,
                                   double delta0, double dt);

/// Divergent comparison dynamics ddelta = +L_cl delta + wbar (a Lipschitz
/// ball around the nominal trajectory instead of a contracting tube).
std::vector<double> baseline_ball(double L_cl, double wbar, double delta0,
                                  double dt, int steps);

struct TerminalSet {
  double delta_f = 0.0;
  Vec x_ref;
  double w_max = 0.0;
};

/// Largest terminal radius delta_f such that every tightened constraint
/// holds at the reference for all g-estimates in [gbar_lo, gbar_hi]:
///   h_j(x_ref, u_ref(gbar)) + c_j delta_f <= 0,
/// subject to the invariance requirement
///   delta_f >= (sum_i G_M,i w_max + E_M) / (rho - L_G).
/// Throws infeasible_error when the constraint bound falls below the
/// invariance lower bound or the reference itself is infeasible.
TerminalSet terminal_radius(const TubeConstants& tc, const SystemModel& model,
                            double w_max, const Vec& gbar_lo, const Vec& gbar_hi);

/// Membership test for the terminal pair (z_T, delta_T).
bool check_terminal(const Vec& z_T, double delta_T, const TerminalSet& term,
                    double tol = 1e-9);

}  // namespace gpr
