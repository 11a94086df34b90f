#include "gpr/system.hpp"

#include <cmath>
#include <limits>

namespace gpr {

bool BoxSet::contains(const Vec& v, double tol) const {
  GPR_REQUIRE(v.size() == lo.size(), "box dimension mismatch");
  return (v.array() >= lo.array() - tol).all() &&
         (v.array() <= hi.array() + tol).all();
}

Vec BoxSet::vertex(std::uint64_t idx) const {
  Vec v(dim());
  for (int d = 0; d < dim(); ++d) v[d] = (idx >> d) & 1u ? hi[d] : lo[d];
  return v;
}

void BoxSet::validate(const std::string& what) const {
  GPR_REQUIRE(lo.size() == hi.size(), what + " box bounds length mismatch");
  GPR_REQUIRE((lo.array() <= hi.array()).all(), what + " box has lo > hi");
}

Vec SystemModel::dynamics(const Vec& x, const Vec& u, const Vec& gval,
                          const Vec& d) const {
  GPR_REQUIRE(x.size() == n && u.size() == m && gval.size() == l && d.size() == q,
              "dynamics argument dimension mismatch");
  return f(x) + B(x) * u + G * gval + E(x) * d;
}

double SystemModel::max_constraint(const Vec& x, const Vec& u,
                                   bool state_only_subset) const {
  double worst = -std::numeric_limits<double>::infinity();
  for (const auto& c : constraints) {
    if (state_only_subset && !c.state_only) continue;
    worst = std::max(worst, c.value(x, u));
  }
  return worst;
}

void SystemModel::validate() const {
  GPR_REQUIRE(n > 0 && m > 0 && l > 0 && q > 0, "system dimensions must be positive");
  x_box.validate("state");
  u_box.validate("input");
  d_box.validate("disturbance");
  GPR_REQUIRE(x_box.dim() == n && u_box.dim() == m && d_box.dim() == q,
              "box dimensions inconsistent with system");
  GPR_REQUIRE(G.rows() == n && G.cols() == l, "G shape mismatch");
  GPR_REQUIRE(S_lo.rows() == l && S_lo.cols() == n && S_hi.rows() == l &&
                  S_hi.cols() == n,
              "S box shape mismatch");
  GPR_REQUIRE((S_lo.array() <= S_hi.array()).all(), "S box has lo > hi");
  GPR_REQUIRE(!constraints.empty(), "system needs at least one constraint");
}

Mat finite_diff_jac(const std::function<Vec(const Vec&)>& fn, const Vec& x,
                    double h) {
  const Vec f0 = fn(x);
  Mat J(f0.size(), x.size());
  Vec xp = x, xm = x;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    xp[d] = x[d] + h;
    xm[d] = x[d] - h;
    J.col(d) = (fn(xp) - fn(xm)) / (2.0 * h);
    xp[d] = x[d];
    xm[d] = x[d];
  }
  return J;
}

namespace {

ConstraintFn bound_row(const std::string& name, int n, int m, int idx,
                       double sign, double limit, bool on_state) {
  // sign * w_idx - limit <= 0 where w is x (on_state) or u
  ConstraintFn c;
  c.name = name;
  c.state_only = on_state;
  c.value = [=](const Vec& x, const Vec& u) {
    return sign * (on_state ? x[idx] : u[idx]) - limit;
  };
  c.grad_x = [=](const Vec&, const Vec&) {
    Vec g = Vec::Zero(n);
    if (on_state) g[idx] = sign;
    return g;
  };
  c.grad_u = [=](const Vec&, const Vec&) {
    Vec g = Vec::Zero(m);
    if (!on_state) g[idx] = sign;
    return g;
  };
  return c;
}

}  // namespace

SystemModel make_toy1d(const ToyParams& p) {
  SystemModel s;
  s.name = "toy1d";
  s.n = s.m = s.l = s.q = 1;

  s.f = [](const Vec& x) { return Vec::Constant(1, -x[0]); };
  s.B = [](const Vec&) { return Mat::Identity(1, 1); };
  s.G = Mat::Identity(1, 1);
  s.E = [](const Vec&) { return Mat::Identity(1, 1); };
  s.jac_x = [](const Vec&, const Vec&, const Vec&) {
    return Mat::Constant(1, 1, -1.0);
  };

  s.x_box.lo = Vec::Constant(1, -p.x_max);
  s.x_box.hi = Vec::Constant(1, p.x_max);
  s.u_box.lo = Vec::Constant(1, -p.u_max);
  s.u_box.hi = Vec::Constant(1, p.u_max);
  s.d_box.lo = Vec::Constant(1, -p.d_max);
  s.d_box.hi = Vec::Constant(1, p.d_max);

  s.S_lo = Mat::Constant(1, 1, -p.a);
  s.S_hi = Mat::Constant(1, 1, p.a);

  s.constraints.push_back(bound_row("x_hi", 1, 1, 0, 1.0, p.x_max, true));
  s.constraints.push_back(bound_row("x_lo", 1, 1, 0, -1.0, p.x_max, true));
  s.constraints.push_back(bound_row("u_hi", 1, 1, 0, 1.0, p.u_max, false));
  s.constraints.push_back(bound_row("u_lo", 1, 1, 0, -1.0, p.u_max, false));

  const double xr = p.x_ref;
  s.x_ref_of = [xr](const Vec&) { return Vec::Constant(1, xr); };
  // steady state: 0 = -x_ref + u_ref + gbar
  s.u_ref_of = [xr](const Vec& gbar) { return Vec::Constant(1, xr - gbar[0]); };

  const double a = p.a;
  s.g_true = [a](const Vec& x) { return Vec::Constant(1, a * std::sin(x[0])); };
  s.g_true_jac = [a](const Vec& x) {
    return Mat::Constant(1, 1, a * std::cos(x[0]));
  };
  return s;
}

SystemModel make_quadrotor(const QuadrotorParams& p) {
  SystemModel s;
  s.name = "quadrotor";
  s.n = 6;
  s.m = 2;
  s.l = 1;
  s.q = 1;

  const double grav = p.gravity;
  s.f = [grav](const Vec& x) {
    const double phi = x[2], v1 = x[3], v2 = x[4], pd = x[5];
    Vec out(6);
    out[0] = v1 * std::cos(phi) - v2 * std::sin(phi);
    out[1] = v1 * std::sin(phi) + v2 * std::cos(phi);
    out[2] = pd;
    out[3] = v2 * pd - grav * std::sin(phi);
    out[4] = -v1 * pd - grav * std::cos(phi);
    out[5] = 0.0;
    return out;
  };

  Mat Bc = Mat::Zero(6, 2);
  Bc(4, 0) = 1.0 / p.mass;
  Bc(4, 1) = 1.0 / p.mass;
  Bc(5, 0) = p.arm / p.inertia;
  Bc(5, 1) = -p.arm / p.inertia;
  s.B = [Bc](const Vec&) { return Bc; };

  s.G = Mat::Zero(6, 1);
  s.G(4, 0) = 1.0;

  s.E = [](const Vec& x) {
    Mat e = Mat::Zero(6, 1);
    e(3, 0) = std::cos(x[2]);
    e(4, 0) = -std::sin(x[2]);
    return e;
  };

  s.jac_x = [grav](const Vec& x, const Vec&, const Vec& d) {
    const double phi = x[2], v1 = x[3], v2 = x[4], pd = x[5];
    const double cp = std::cos(phi), sp = std::sin(phi);
    Mat A = Mat::Zero(6, 6);
    A(0, 2) = -v1 * sp - v2 * cp;
    A(0, 3) = cp;
    A(0, 4) = -sp;
    A(1, 2) = v1 * cp - v2 * sp;
    A(1, 3) = sp;
    A(1, 4) = cp;
    A(2, 5) = 1.0;
    A(3, 2) = -grav * cp - sp * d[0];
    A(3, 4) = pd;
    A(3, 5) = v2;
    A(4, 2) = grav * sp - cp * d[0];
    A(4, 3) = -pd;
    A(4, 5) = -v1;
    return A;
  };

  s.x_box.lo = (Vec(6) << p.p1_min, p.p2_min, -p.phi_max, -p.v1_max, -p.v2_max,
                -p.phidot_max).finished();
  s.x_box.hi = (Vec(6) << p.p1_max, p.p2_max, p.phi_max, p.v1_max, p.v2_max,
                p.phidot_max).finished();
  s.u_box.lo = Vec::Constant(2, p.u_min);
  s.u_box.hi = Vec::Constant(2, p.u_max);
  s.d_box.lo = Vec::Constant(1, -p.d_max);
  s.d_box.hi = Vec::Constant(1, p.d_max);

  s.S_lo = Mat::Zero(1, 6);
  s.S_hi = Mat::Zero(1, 6);
  s.S_lo(0, 0) = -p.s_p1;
  s.S_hi(0, 0) = p.s_p1;
  s.S_lo(0, 1) = p.s_p2_lo;
  s.S_hi(0, 1) = p.s_p2_hi;

  s.constraints.push_back(bound_row("p1_hi", 6, 2, 0, 1.0, p.p1_max, true));
  s.constraints.push_back(bound_row("p1_lo", 6, 2, 0, -1.0, -p.p1_min, true));
  s.constraints.push_back(bound_row("p2_hi", 6, 2, 1, 1.0, p.p2_max, true));
  s.constraints.push_back(bound_row("phi_hi", 6, 2, 2, 1.0, p.phi_max, true));
  s.constraints.push_back(bound_row("phi_lo", 6, 2, 2, -1.0, p.phi_max, true));
  s.constraints.push_back(bound_row("v1_hi", 6, 2, 3, 1.0, p.v1_max, true));
  s.constraints.push_back(bound_row("v1_lo", 6, 2, 3, -1.0, p.v1_max, true));
  s.constraints.push_back(bound_row("v2_hi", 6, 2, 4, 1.0, p.v2_max, true));
  s.constraints.push_back(bound_row("v2_lo", 6, 2, 4, -1.0, p.v2_max, true));
  s.constraints.push_back(bound_row("phidot_hi", 6, 2, 5, 1.0, p.phidot_max, true));
  s.constraints.push_back(bound_row("phidot_lo", 6, 2, 5, -1.0, p.phidot_max, true));
  s.constraints.push_back(bound_row("u1_hi", 6, 2, 0, 1.0, p.u_max, false));
  s.constraints.push_back(bound_row("u1_lo", 6, 2, 0, -1.0, -p.u_min, false));
  s.constraints.push_back(bound_row("u2_hi", 6, 2, 1, 1.0, p.u_max, false));
  s.constraints.push_back(bound_row("u2_lo", 6, 2, 1, -1.0, -p.u_min, false));

  const double H = p.hill_height, c0 = p.hill_center, wdt = p.hill_width;
  auto elevation = [H, c0, wdt](double p1) {
    const double t = (p1 - c0) / wdt;
    return H * std::exp(-t * t);
  };
  auto elevation_d = [H, c0, wdt](double p1) {
    const double t = (p1 - c0) / wdt;
    return H * std::exp(-t * t) * (-2.0 * t / wdt);
  };

  ConstraintFn ground;
  ground.name = "ground";
  ground.state_only = true;
  const double clr = p.clearance;
  ground.value = [elevation, clr](const Vec& x, const Vec&) {
    return clr + elevation(x[0]) - x[1];
  };
  ground.grad_x = [elevation_d](const Vec& x, const Vec&) {
    Vec g = Vec::Zero(6);
    g[0] = elevation_d(x[0]);
    g[1] = -1.0;
    return g;
  };
  ground.grad_u = [](const Vec&, const Vec&) { return Vec::Zero(2); };
  s.constraints.push_back(ground);

  const double mass = p.mass;
  Vec xr = Vec::Zero(6);
  xr[0] = p.p1_ref;
  xr[1] = p.p2_ref;
  s.x_ref_of = [xr](const Vec&) { return xr; };
  // hover balance at phi = 0: u1 + u2 = mass * (gravity - gbar), u1 = u2
  s.u_ref_of = [mass, grav](const Vec& gbar) {
    return Vec::Constant(2, 0.5 * mass * (grav - gbar[0]));
  };

  const double gain = p.ge_gain;
  auto height = [elevation](const Vec& x) { return x[1] - elevation(x[0]); };
  s.g_true = [gain, height](const Vec& x) {
    return Vec::Constant(1, gain / (3.0 * height(x) + 1.0));
  };
  s.g_true_jac = [gain, height, elevation_d](const Vec& x) {
    const double denom = 3.0 * height(x) + 1.0;
    const double dgdh = -3.0 * gain / (denom * denom);
    Mat J = Mat::Zero(1, 6);
    J(0, 0) = dgdh * (-elevation_d(x[0]));
    J(0, 1) = dgdh;
    return J;
  };
  return s;
}

}  // namespace gpr
