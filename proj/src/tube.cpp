#include "gpr/tube.hpp"

#include <cmath>
#include <limits>

namespace gpr {

double fdelta(const TubeConstants& tc, double delta, const Vec& w) {
  GPR_REQUIRE(w.size() == tc.G_M.size(), "uncertainty dimension mismatch");
  return -tc.rho_eff * delta + tc.G_M.dot(w) + tc.E_M;
}

std::vector<double> propagate_tube(const TubeConstants& tc,
                                   const std::vector<Vec>& z_nodes,
                                   const std::function<Vec(const Vec&)>& w_fun,
                                   double delta0, double dt) {
  GPR_REQUIRE(!z_nodes.empty(), "empty nominal trajectory");
  GPR_REQUIRE(dt > 0.0, "dt must be positive");

  std::vector<double> out(z_nodes.size());
  out[0] = delta0;
  if (z_nodes.size() == 1) return out;

  Vec w_left = w_fun(z_nodes[0]);
  for (std::size_t k = 0; k + 1 < z_nodes.size(); ++k) {
    const Vec w_right = w_fun(z_nodes[k + 1]);
    const Vec w_mid = 0.5 * (w_left + w_right);
    const double d = out[k];
    const double k1 = fdelta(tc, d, w_left);
    const double k2 = fdelta(tc, d + 0.5 * dt * k1, w_mid);
    const double k3 = fdelta(tc, d + 0.5 * dt * k2, w_mid);
    const double k4 = fdelta(tc, d + dt * k3, w_right);
    out[k + 1] = d + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    w_left = w_right;
  }
  return out;
}

std::vector<double> baseline_ball(double L_cl, double wbar, double delta0,
                                  double dt, int steps) {
  GPR_REQUIRE(steps >= 0 && dt > 0.0, "bad baseline propagation arguments");
  std::vector<double> out(static_cast<std::size_t>(steps) + 1);
  out[0] = delta0;
  auto fn = [&](double d) { return L_cl * d + wbar; };
  for (int k = 0; k < steps; ++k) {
    const double d = out[k];
    const double k1 = fn(d);
    const double k2 = fn(d + 0.5 * dt * k1);
    const double k3 = fn(d + 0.5 * dt * k2);
    const double k4 = fn(d + dt * k3);
    out[k + 1] = d + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return out;
}

TerminalSet terminal_radius(const TubeConstants& tc, const SystemModel& model,
                            double w_max, const Vec& gbar_lo, const Vec& gbar_hi) {
  GPR_REQUIRE(w_max >= 0.0, "w_max must be nonnegative");
  GPR_REQUIRE(gbar_lo.size() == model.l && gbar_hi.size() == model.l,
              "gbar range dimension mismatch");
  GPR_REQUIRE((gbar_lo.array() <= gbar_hi.array()).all(), "gbar range inverted");

  TerminalSet term;
  term.w_max = w_max;
  term.x_ref = model.x_ref_of(0.5 * (gbar_lo + gbar_hi));

  const double lower =
      (tc.G_M.sum() * w_max + tc.E_M) / tc.rho_eff;

  // h_j is affine in u and u_ref affine in gbar, so scanning the range
  // corners is exact; the midpoint is included for good measure.
  BoxSet range{gbar_lo, gbar_hi};
  std::vector<Vec> gbars;
  for (std::uint64_t i = 0; i < range.vertex_count(); ++i)
    gbars.push_back(range.vertex(i));
  gbars.push_back(range.center());

  double bound = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < model.constraints.size(); ++j) {
    double worst_h = -std::numeric_limits<double>::infinity();
    for (const Vec& gb : gbars)
      worst_h = std::max(worst_h, model.constraints[j].value(
                                      term.x_ref, model.u_ref_of(gb)));
    if (worst_h > 0.0)
      throw infeasible_error("reference violates constraint " +
                             model.constraints[j].name);
    if (tc.c[static_cast<Eigen::Index>(j)] > 0.0)
      bound = std::min(bound, -worst_h / tc.c[static_cast<Eigen::Index>(j)]);
  }

  if (bound < lower)
    throw infeasible_error(
        "terminal set is empty: constraint bound " + format_double(bound) +
        " below invariance requirement " + format_double(lower));
  term.delta_f = bound;
  return term;
}

bool check_terminal(const Vec& z_T, double delta_T, const TerminalSet& term,
                    double tol) {
  GPR_REQUIRE(z_T.size() == term.x_ref.size(), "terminal state dimension mismatch");
  return (z_T - term.x_ref).cwiseAbs().maxCoeff() <= tol && delta_T >= 0.0 &&
         delta_T <= term.delta_f;
}

}  // namespace gpr
