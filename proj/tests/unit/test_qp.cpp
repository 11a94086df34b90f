#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"

#include "gpr/qp.hpp"

using namespace gpr;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct BruteResult {
  Vec x;
  double obj = std::numeric_limits<double>::infinity();
  bool found = false;
};

// Exhaustive active-set enumeration for tiny problems: every subset of
// inequality rows, pinned at either bound, solved through the equality KKT
// system. The unique sign- and feasibility-consistent stationary point of a
// strictly convex QP is its optimum.
BruteResult brute_force(const QpProblem& p, double tol = 1e-8) {
  const int n = p.vars();
  const int r = p.rows();
  std::vector<int> eq, ineq;
  for (int i = 0; i < r; ++i)
    (p.lb[i] == p.ub[i] ? eq : ineq).push_back(i);
  const int k = static_cast<int>(ineq.size());
  const int e = static_cast<int>(eq.size());

  BruteResult best;
  for (int mask = 0; mask < (1 << k); ++mask) {
    std::vector<int> act;
    for (int j = 0; j < k; ++j)
      if (mask & (1 << j)) act.push_back(ineq[j]);
    const int a = static_cast<int>(act.size());
    if (e + a > n) continue;

    for (int sides = 0; sides < (1 << a); ++sides) {
      Mat Aact(e + a, n);
      Vec bact(e + a);
      bool valid = true;
      for (int j = 0; j < e; ++j) {
        Aact.row(j) = p.A.row(eq[j]);
        bact[j] = p.lb[eq[j]];
      }
      std::vector<bool> at_upper(a);
      for (int j = 0; j < a && valid; ++j) {
        at_upper[j] = (sides >> j) & 1;
        const double b = at_upper[j] ? p.ub[act[j]] : p.lb[act[j]];
        if (!std::isfinite(b)) {
          valid = false;
          break;
        }
        Aact.row(e + j) = p.A.row(act[j]);
        bact[e + j] = b;
      }
      if (!valid) continue;

      Mat kkt = Mat::Zero(n + e + a, n + e + a);
      kkt.topLeftCorner(n, n) = p.H;
      kkt.topRightCorner(n, e + a) = Aact.transpose();
      kkt.bottomLeftCorner(e + a, n) = Aact;
      Vec rhs(n + e + a);
      rhs.head(n) = -p.g;
      rhs.tail(e + a) = bact;

      Eigen::FullPivLU<Mat> lu(kkt);
      if (!lu.isInvertible()) continue;
      const Vec sol = lu.solve(rhs);
      const Vec x = sol.head(n);
      const Vec y = sol.tail(e + a);

      for (int j = 0; j < a && valid; ++j)
        valid = at_upper[j] ? y[e + j] >= -tol : y[e + j] <= tol;
      const Vec ax = p.A * x;
      for (int i = 0; i < r && valid; ++i)
        valid = ax[i] >= p.lb[i] - tol && ax[i] <= p.ub[i] + tol;
      if (!valid) continue;

      const double obj = 0.5 * x.dot(p.H * x) + p.g.dot(x);
      if (obj < best.obj) {
        best.x = x;
        best.obj = obj;
        best.found = true;
      }
    }
  }
  return best;
}

QpProblem random_problem(RandomStream& rng) {
  const int n = 2 + static_cast<int>(rng.unit() * 5.0);
  const int r = 1 + static_cast<int>(rng.unit() * 8.0);
  QpProblem p;
  Mat R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = rng.uniform(-1.0, 1.0);
  p.H = R.transpose() * R + Mat::Identity(n, n);
  p.g = Vec::NullaryExpr(n, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); });
  p.A.resize(r, n);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < n; ++j) p.A(i, j) = rng.uniform(-1.0, 1.0);

  const Vec x0 =
      Vec::NullaryExpr(n, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); });
  const Vec mid = p.A * x0;
  p.lb.resize(r);
  p.ub.resize(r);
  int n_eq = 0;
  for (int i = 0; i < r; ++i) {
    const double t = rng.unit();
    if (t < 0.15 && n_eq + 1 < n) {
      p.lb[i] = p.ub[i] = mid[i];
      ++n_eq;
    } else if (t < 0.35) {
      p.lb[i] = -kInf;
      p.ub[i] = mid[i] + rng.uniform(0.1, 1.0);
    } else if (t < 0.55) {
      p.lb[i] = mid[i] - rng.uniform(0.1, 1.0);
      p.ub[i] = kInf;
    } else {
      p.lb[i] = mid[i] - rng.uniform(0.1, 1.5);
      p.ub[i] = mid[i] + rng.uniform(0.1, 1.5);
    }
  }
  return p;
}

QpSettings test_settings() {
  QpSettings s;
  s.max_iter = 4000;
  return s;
}

}  // namespace

TEST_CASE("splitting solve matches exhaustive enumeration") {
  RandomStream rng(404);
  for (int trial = 0; trial < 20; ++trial) {
    const QpProblem p = random_problem(rng);
    const BruteResult ref = brute_force(p);
    REQUIRE(ref.found);
    const QpSolution sol = solve_qp(p, test_settings());
    REQUIRE(sol.status == QpStatus::kOptimal);
    CHECK((sol.x - ref.x).cwiseAbs().maxCoeff() ==
          doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
    CHECK(sol.objective == doctest::Approx(ref.obj).epsilon(1e-7).scale(1.0));
  }
}

TEST_CASE("constructed optimum is recovered with its multipliers") {
  RandomStream rng(405);
  const int n = 4;
  Mat R(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) R(i, j) = rng.uniform(-1.0, 1.0);
  QpProblem p;
  p.H = R.transpose() * R + Mat::Identity(n, n);
  p.A.resize(3, n);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < n; ++j) p.A(i, j) = rng.uniform(-1.0, 1.0);

  const Vec xs =
      Vec::NullaryExpr(n, [&](Eigen::Index) { return rng.uniform(-1.0, 1.0); });
  Vec ys(3);
  ys << 0.7, -0.4, 0.0;  // active at upper, active at lower, inactive
  const Vec ax = p.A * xs;
  p.lb.resize(3);
  p.ub.resize(3);
  p.ub[0] = ax[0];
  p.lb[0] = ax[0] - 1.0;
  p.lb[1] = ax[1];
  p.ub[1] = ax[1] + 1.0;
  p.lb[2] = ax[2] - 1.0;
  p.ub[2] = ax[2] + 1.0;
  p.g = -(p.H * xs + p.A.transpose() * ys);

  const QpSolution sol = solve_qp(p, test_settings());
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK((sol.x - xs).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-6).scale(1.0));
  CHECK((sol.y - ys).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-5).scale(1.0));
  CHECK(sol.stationarity <= 1e-6);
  CHECK(sol.primal_res <= 1e-6);
  CHECK(std::abs(sol.duality_gap) <= 1e-6);
}

TEST_CASE("warm start converges at least as fast") {
  RandomStream rng(406);
  const QpProblem p = random_problem(rng);
  const QpSolution cold = solve_qp(p, test_settings());
  REQUIRE(cold.status == QpStatus::kOptimal);
  QpWarmStart warm{cold.x, cold.y};
  const QpSolution hot = solve_qp(p, test_settings(), &warm);
  REQUIRE(hot.status == QpStatus::kOptimal);
  CHECK((hot.x - cold.x).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-7).scale(1.0));
  CHECK(hot.iterations <= cold.iterations);
}

TEST_CASE("row scaling does not move the solution") {
  RandomStream rng(407);
  QpProblem p = random_problem(rng);
  const QpSolution base = solve_qp(p, test_settings());
  REQUIRE(base.status == QpStatus::kOptimal);

  QpProblem scaled = p;
  scaled.H *= 10.0;
  scaled.g *= 10.0;
  for (int i = 0; i < p.rows(); ++i) {
    const double s = 0.5 + 2.0 * rng.unit();
    scaled.A.row(i) *= s;
    scaled.lb[i] *= s;
    scaled.ub[i] *= s;
  }
  const QpSolution sol = solve_qp(scaled, test_settings());
  REQUIRE(sol.status == QpStatus::kOptimal);
  CHECK((sol.x - base.x).cwiseAbs().maxCoeff() ==
        doctest::Approx(0.0).epsilon(1e-7).scale(1.0));
}

TEST_CASE("contradictory rows are reported primal infeasible") {
  QpProblem p;
  p.H = Mat::Identity(1, 1);
  p.g = Vec::Zero(1);
  p.A.resize(2, 1);
  p.A << 1.0, 1.0;
  p.lb.resize(2);
  p.ub.resize(2);
  p.lb[0] = -kInf;
  p.ub[0] = -1.0;  // x <= -1
  p.lb[1] = 1.0;   // x >= 1
  p.ub[1] = kInf;
  const QpSolution sol = solve_qp(p, test_settings());
  CHECK(sol.status == QpStatus::kPrimalInfeasible);
}

TEST_CASE("shape mismatches are rejected") {
  QpProblem p;
  p.H = Mat::Identity(2, 2);
  p.g = Vec::Zero(3);
  p.A = Mat::Identity(2, 2);
  p.lb = Vec::Zero(2);
  p.ub = Vec::Zero(2);
  CHECK_THROWS_AS(solve_qp(p), contract_error);
}
