#include <cmath>

#include "doctest.h"

#include "gpr/metric.hpp"
#include "gpr/system.hpp"

using namespace gpr;

namespace {

GridSpec small_grid() {
  GridSpec g;
  g.x_points_per_dim = 21;
  g.u_points_per_dim = 5;
  g.lhs_samples = 200;
  g.seed = 77;
  g.safety_factor = 1.05;
  return g;
}

Metric scalar_metric(double k, double rho) {
  return Metric::create(Mat::Identity(1, 1), Mat::Constant(1, 1, k), rho);
}

}  // namespace

TEST_CASE("weighted distance and feedback") {
  Mat M(2, 2);
  M << 4.0, 0.0, 0.0, 1.0;
  Mat K(1, 2);
  K << 1.0, 2.0;
  const Metric mtr = Metric::create(M, K, 0.5);

  CHECK((mtr.M_half.transpose() * mtr.M_half - M).norm() ==
        doctest::Approx(0.0).epsilon(1e-14).scale(1.0));
  CHECK((mtr.M_half * mtr.M_half_inv - Mat::Identity(2, 2)).norm() ==
        doctest::Approx(0.0).epsilon(1e-14).scale(1.0));

  Vec x(2), z(2), v(1);
  x << 1.3, 0.6;
  z << 1.0, 1.0;
  v << 0.25;
  CHECK(vdelta(mtr, x, z) == doctest::Approx(std::sqrt(0.52)).epsilon(1e-14));
  CHECK(feedback(mtr, x, z, v)[0] == doctest::Approx(0.25 - 0.5).epsilon(1e-14));
}

TEST_CASE("scalar contraction check matches the closed form") {
  // closed loop -1 + gx with gx in [-a, a]: the residual eigenvalue is
  // 2 (rho - 1 + gx) with worst case gx = a
  const GridSpec grid = small_grid();
  const double pairs[][2] = {{0.1, 0.85}, {0.1, 0.95}, {0.3, 0.65},
                             {0.3, 0.75}, {0.5, 0.45}, {0.5, 0.55},
                             {0.2, 0.30}, {0.7, 0.40}, {0.05, 0.99},
                             {0.6, 0.35}};
  for (const auto& pr : pairs) {
    ToyParams p;
    p.a = pr[0];
    const double rho = pr[1];
    const SystemModel sys = make_toy1d(p);
    const VerifyReport rep = verify_contraction(scalar_metric(0.0, rho), sys, grid);
    CHECK(rep.passed == (rho <= 1.0 - p.a));
    CHECK(rep.max_eig == doctest::Approx(2.0 * (rho - 1.0 + p.a)).epsilon(1e-12));
    CHECK(rep.points_checked > 0);
  }
}

TEST_CASE("failing check reports the worst sample") {
  ToyParams p;
  p.a = 0.3;
  const SystemModel sys = make_toy1d(p);
  const VerifyReport rep = verify_contraction(scalar_metric(0.0, 0.9), sys, small_grid());
  CHECK(!rep.passed);
  CHECK(rep.max_eig == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(rep.worst_gx[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(rep.worst_x.size() == 1);
  CHECK(rep.worst_u.size() == 1);
  CHECK(rep.worst_d.size() == 1);
}

TEST_CASE("largest admissible rate on the scalar system") {
  ToyParams p;
  p.a = 0.3;
  const SystemModel sys = make_toy1d(p);
  const double rate =
      max_contraction_rate(Mat::Identity(1, 1), Mat::Zero(1, 1), sys, small_grid());
  CHECK(rate == doctest::Approx(1.0 - p.a).epsilon(1e-9));

  // the reported rate must itself pass the check
  const VerifyReport rep =
      verify_contraction(scalar_metric(0.0, rate - 1e-9), sys, small_grid());
  CHECK(rep.passed);
}

TEST_CASE("tube constants on the scalar system") {
  ToyParams p;
  p.a = 0.3;
  const SystemModel sys = make_toy1d(p);
  const Metric mtr = scalar_metric(-1.0, 1.5);
  const TubeConstants tc = compute_constants(mtr, sys, small_grid());
  CHECK(tc.rho == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(tc.L_G == doctest::Approx(0.3).epsilon(1e-12));
  REQUIRE(tc.G_M.size() == 1);
  CHECK(tc.G_M[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(tc.E_M == doctest::Approx(1.05 * p.d_max).epsilon(1e-12));
  REQUIRE(tc.c.size() == 4);
  for (int j = 0; j < 4; ++j)
    CHECK(tc.c[j] == doctest::Approx(1.05).epsilon(1e-12));
  CHECK(tc.rho_eff == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(tc.gm_total() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("constants refuse a non-contracting rate") {
  ToyParams p;
  p.a = 0.5;
  const SystemModel sys = make_toy1d(p);
  CHECK_THROWS_AS(compute_constants(scalar_metric(0.0, 0.4), sys, small_grid()),
                  verification_error);
}

TEST_CASE("growth rate of the naive comparison ball") {
  ToyParams p;
  p.a = 0.3;
  const SystemModel sys = make_toy1d(p);
  // closed loop -2 + gx, worst magnitude at gx = -a
  CHECK(max_growth_rate(scalar_metric(-1.0, 1.5), sys, small_grid()) ==
        doctest::Approx(2.3).epsilon(1e-12));
}

TEST_CASE("lyapunov solve") {
  RandomStream rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 2 + trial % 3;
    Mat A(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
    A -= (A.cwiseAbs().rowwise().sum().maxCoeff() + 0.5) * Mat::Identity(n, n);
    Mat Q = Mat::Identity(n, n);
    const Mat X = solve_lyapunov(A, Q);
    CHECK((A.transpose() * X + X * A + Q).norm() ==
          doctest::Approx(0.0).epsilon(1e-8).scale(1.0));
    CHECK((X - X.transpose()).norm() ==
          doctest::Approx(0.0).epsilon(1e-10).scale(1.0));
    CHECK(Eigen::SelfAdjointEigenSolver<Mat>(X).eigenvalues().minCoeff() > 0.0);
  }
}

TEST_CASE("scalar lqr closed form") {
  const Mat A = Mat::Constant(1, 1, 1.0);
  const Mat B = Mat::Constant(1, 1, 1.0);
  const Mat K = lqr_gain(A, B, Mat::Identity(1, 1), Mat::Identity(1, 1));
  // P = 1 + sqrt(2) solves 2P - P^2 + 1 = 0, K = -P
  CHECK(K(0, 0) == doctest::Approx(-(1.0 + std::sqrt(2.0))).epsilon(1e-9));
  CHECK(A(0, 0) + B(0, 0) * K(0, 0) < 0.0);
}

TEST_CASE("lqr stabilizes a random pair") {
  RandomStream rng(6);
  Mat A(3, 3), B(3, 2);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) A(i, j) = rng.uniform(-1.0, 1.0);
    for (int j = 0; j < 2; ++j) B(i, j) = rng.uniform(-1.0, 1.0);
  }
  const Mat K = lqr_gain(A, B, Mat::Identity(3, 3), Mat::Identity(2, 2));
  const Eigen::EigenSolver<Mat> es(A + B * K);
  CHECK(es.eigenvalues().real().maxCoeff() < 0.0);
}

TEST_CASE("riccati seed for the quadrotor metric") {
  const SystemModel sys = make_quadrotor(QuadrotorParams{});
  const Metric mtr = synthesize_linear_metric(sys, Mat::Identity(6, 6),
                                              Mat::Identity(2, 2), 0.5,
                                              Mat::Identity(6, 6));
  CHECK(mtr.M.rows() == 6);
  CHECK(mtr.K.rows() == 2);
  CHECK(mtr.K.cols() == 6);
  CHECK(mtr.M.allFinite());
  CHECK(Eigen::SelfAdjointEigenSolver<Mat>(mtr.M).eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("sampling plan stays admissible") {
  const SystemModel sys = make_toy1d(ToyParams{});
  long visited = 0;
  for_each_admissible(sys, small_grid(), false, [&](const Vec& x, const Vec& u) {
    ++visited;
    CHECK(sys.max_constraint(x, u) <= 1e-12);
  });
  CHECK(visited > 100);
}
