#pragma once

#include <functional>
#include <string>
#include <vector>

#include "gpr/types.hpp"

namespace gpr {

/// Axis-aligned box, used for state/input/disturbance domains and for the
/// Jacobian bound of the unknown dynamics component.
struct BoxSet {
  Vec lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool contains(const Vec& v, double tol = 0.0) const;
  Vec center() const { return 0.5 * (lo + hi); }

  /// Number of corners (2^dim). Enumeration order is fixed by the bit
  /// pattern of the index so results are reproducible.
  std::uint64_t vertex_count() const { return 1ull << dim(); }
  Vec vertex(std::uint64_t idx) const;

  void validate(const std::string& what) const;
};

/// Scalar constraint h(x, u) <= 0 with analytic gradients.
struct ConstraintFn {
  std::string name;
  bool state_only = false;
  std::function<double(const Vec&, const Vec&)> value;
  std::function<Vec(const Vec&, const Vec&)> grad_x;
  std::function<Vec(const Vec&, const Vec&)> grad_u;
};

/// Control-affine model with structured uncertainty,
///   xdot = f(x) + B(x) u + G g(x) + E(x) d,
/// where g is unknown (learned online) and d is a bounded disturbance.
/// The true g is carried along as a simulation/testing oracle only; the
/// controller side never reads it.
struct SystemModel {
  std::string name;
  int n = 0;  // state dimension
  int m = 0;  // input dimension
  int l = 0;  // output dimension of g
  int q = 0;  // disturbance dimension

  std::function<Vec(const Vec&)> f;
  std::function<Mat(const Vec&)> B;  // n x m
  Mat G;                             // n x l, constant
  std::function<Mat(const Vec&)> E;  // n x q

  /// Jacobian of f(x) + B(x)u + E(x)d with respect to x (the g-term enters
  /// contraction analysis separately through the S box).
  std::function<Mat(const Vec&, const Vec&, const Vec&)> jac_x;

  BoxSet x_box, u_box, d_box;

  /// Entrywise bounds on dg/dx over the operating domain (l x n).
  Mat S_lo, S_hi;

  std::vector<ConstraintFn> constraints;

  /// Steady state and input as functions of the estimated g-value at the
  /// reference. Both shipped systems keep x_ref independent of the estimate;
  /// u_ref is affine in it.
  std::function<Vec(const Vec&)> x_ref_of;
  std::function<Vec(const Vec&)> u_ref_of;

  std::function<Vec(const Vec&)> g_true;      // l
  std::function<Mat(const Vec&)> g_true_jac;  // l x n

  Vec dynamics(const Vec& x, const Vec& u, const Vec& gval, const Vec& d) const;

  /// Largest constraint value at (x, u); state_only limits the scan to
  /// constraints that ignore u.
  double max_constraint(const Vec& x, const Vec& u, bool state_only_subset = false) const;

  void validate() const;
};

struct ToyParams {
  double a = 0.3;          // g(x) = a sin(x)
  double x_max = 2.0;
  double u_max = 3.0;
  double d_max = 0.05;
  double x_ref = 0.0;
};

struct QuadrotorParams {
  double mass = 0.486;
  double inertia = 0.00383;
  double arm = 0.25;
  double gravity = 9.81;

  // terrain: elevation(p1) = hill_height * exp(-((p1 - hill_center)/hill_width)^2)
  double hill_height = 0.3;
  double hill_center = 2.0;
  double hill_width = 0.8;
  double clearance = 0.15;  // required height above terrain
  double ge_gain = 0.10;    // ground effect g(x) = ge_gain / (3 h + 1)

  double p1_min = -0.5, p1_max = 4.5;
  double p2_min = 0.1, p2_max = 2.0;
  double v1_max = 2.0;
  double v2_max = 1.0;
  double phi_max = 0.39269908169872414;    // 22.5 deg
  double phidot_max = 1.0471975511965976;  // 60 deg/s
  double u_min = -1.0, u_max = 3.5;
  double d_max = 0.02;

  double p1_ref = 4.0, p2_ref = 1.0;

  // dg/dx bounds over the clearance-admissible region (only the position
  // entries are nonzero); defaults cover the terrain above with margin
  double s_p1 = 0.06, s_p2_lo = -0.16, s_p2_hi = 0.0;
};

SystemModel make_toy1d(const ToyParams& p);
SystemModel make_quadrotor(const QuadrotorParams& p);

/// Central finite-difference Jacobian, used for smoothness probes and for
/// models assembled without analytic derivatives.
Mat finite_diff_jac(const std::function<Vec(const Vec&)>& fn, const Vec& x,
                    double h = 1e-6);

}  // namespace gpr
