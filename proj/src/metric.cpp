#include "gpr/metric.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace gpr {

Metric Metric::create(const Mat& M, const Mat& K, double rho) {
  GPR_REQUIRE(M.rows() == M.cols(), "metric M must be square");
  GPR_REQUIRE((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * M.norm(),
              "metric M must be symmetric");
  GPR_REQUIRE(K.cols() == M.rows(), "feedback K column count mismatch");
  GPR_REQUIRE(rho > 0.0, "contraction rate must be positive");

  Metric mtr;
  mtr.M = 0.5 * (M + M.transpose());
  Eigen::LLT<Mat> llt(mtr.M);
  if (llt.info() != Eigen::Success)
    throw numerical_error("metric M is not positive definite");
  mtr.M_half = Mat(llt.matrixU());
  mtr.M_half_inv = mtr.M_half.inverse();
  mtr.K = K;
  mtr.rho = rho;
  return mtr;
}

double vdelta(const Metric& mtr, const Vec& x, const Vec& z) {
  GPR_REQUIRE(x.size() == mtr.M.rows() && z.size() == mtr.M.rows(),
              "vdelta dimension mismatch");
  return (mtr.M_half * (x - z)).norm();
}

Vec feedback(const Metric& mtr, const Vec& x, const Vec& z, const Vec& v) {
  GPR_REQUIRE(v.size() == mtr.K.rows(), "feedback input dimension mismatch");
  return v + mtr.K * (x - z);
}

namespace {

// Indices of box dimensions with actual extent; degenerate dimensions stay
// at their (equal) bounds, which keeps vertex counts small for sparse boxes.
std::vector<int> free_dims(const Vec& lo, const Vec& hi) {
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < lo.size(); ++i)
    if (hi[i] > lo[i]) idx.push_back(static_cast<int>(i));
  return idx;
}

void for_each_box_vertex(const Vec& lo, const Vec& hi,
                         const std::function<void(const Vec&)>& fn) {
  const std::vector<int> dims = free_dims(lo, hi);
  Vec v = lo;
  const std::uint64_t count = 1ull << dims.size();
  for (std::uint64_t b = 0; b < count; ++b) {
    for (std::size_t i = 0; i < dims.size(); ++i)
      v[dims[i]] = (b >> i) & 1u ? hi[dims[i]] : lo[dims[i]];
    fn(v);
  }
}

Vec grid_coord(const BoxSet& box, int per_dim, std::uint64_t flat) {
  Vec v(box.dim());
  for (int d = 0; d < box.dim(); ++d) {
    const int i = static_cast<int>(flat % per_dim);
    flat /= per_dim;
    v[d] = per_dim == 1
               ? 0.5 * (box.lo[d] + box.hi[d])
               : box.lo[d] + (box.hi[d] - box.lo[d]) * i / (per_dim - 1);
  }
  return v;
}

std::uint64_t grid_size(int dim, int per_dim) {
  std::uint64_t s = 1;
  for (int d = 0; d < dim; ++d) s *= per_dim;
  return s;
}

// Latin hypercube over [0,1)^dim, one stratified permutation per dimension.
Mat lhs_samples(int count, int dim, RandomStream& rng) {
  Mat out(count, dim);
  std::vector<int> perm(count);
  for (int d = 0; d < dim; ++d) {
    std::iota(perm.begin(), perm.end(), 0);
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform(0.0, i + 1.0));
      std::swap(perm[i], perm[std::min(j, i)]);
    }
    for (int i = 0; i < count; ++i)
      out(i, d) = (perm[i] + rng.unit()) / count;
  }
  return out;
}

}  // namespace

void for_each_admissible(const SystemModel& model, const GridSpec& grid,
                         bool states_only,
                         const std::function<void(const Vec&, const Vec&)>& fn) {
  const Vec u_center = model.u_box.center();
  auto visit = [&](const Vec& x, const Vec& u) {
    if (model.max_constraint(x, u, states_only) > 0.0) return;
    fn(x, u);
  };

  const std::uint64_t nx = grid_size(model.n, grid.x_points_per_dim);
  if (states_only) {
    for (std::uint64_t ix = 0; ix < nx; ++ix)
      visit(grid_coord(model.x_box, grid.x_points_per_dim, ix), u_center);
  } else {
    const std::uint64_t nu = grid_size(model.m, grid.u_points_per_dim);
    for (std::uint64_t ix = 0; ix < nx; ++ix) {
      const Vec x = grid_coord(model.x_box, grid.x_points_per_dim, ix);
      for (std::uint64_t iu = 0; iu < nu; ++iu)
        visit(x, grid_coord(model.u_box, grid.u_points_per_dim, iu));
    }
  }

  if (grid.lhs_samples > 0) {
    RandomStream rng(grid.seed);
    const int dim = states_only ? model.n : model.n + model.m;
    const Mat samples = lhs_samples(grid.lhs_samples, dim, rng);
    for (int i = 0; i < grid.lhs_samples; ++i) {
      Vec x(model.n), u = u_center;
      for (int d = 0; d < model.n; ++d)
        x[d] = model.x_box.lo[d] +
               (model.x_box.hi[d] - model.x_box.lo[d]) * samples(i, d);
      if (!states_only) {
        u.resize(model.m);
        for (int d = 0; d < model.m; ++d)
          u[d] = model.u_box.lo[d] +
                 (model.u_box.hi[d] - model.u_box.lo[d]) * samples(i, model.n + d);
      }
      visit(x, u);
    }
  }
}

VerifyReport verify_contraction(const Metric& mtr, const SystemModel& model,
                                const GridSpec& grid) {
  GPR_REQUIRE(mtr.M.rows() == model.n, "metric dimension mismatch");
  GPR_REQUIRE(mtr.K.rows() == model.m, "feedback dimension mismatch");

  VerifyReport rep;
  rep.max_eig = -std::numeric_limits<double>::infinity();

  const Vec s_lo = Eigen::Map<const Vec>(model.S_lo.data(), model.S_lo.size());
  const Vec s_hi = Eigen::Map<const Vec>(model.S_hi.data(), model.S_hi.size());

  for_each_admissible(model, grid, false, [&](const Vec& x, const Vec& u) {
    const Mat Bx = model.B(x);
    for_each_box_vertex(model.d_box.lo, model.d_box.hi, [&](const Vec& d) {
      const Mat A0 = model.jac_x(x, u, d) + Bx * mtr.K;
      for_each_box_vertex(s_lo, s_hi, [&](const Vec& gxf) {
        const Eigen::Map<const Mat> gx(gxf.data(), model.l, model.n);
        const Mat Acl = A0 + model.G * gx;
        const Mat W = Acl.transpose() * mtr.M + mtr.M * Acl + 2.0 * mtr.rho * mtr.M;
        Eigen::SelfAdjointEigenSolver<Mat> es(W, Eigen::EigenvaluesOnly);
        const double ev = es.eigenvalues().maxCoeff();
        ++rep.points_checked;
        if (ev > rep.max_eig) {
          rep.max_eig = ev;
          rep.worst_x = x;
          rep.worst_u = u;
          rep.worst_gx = gxf;
          rep.worst_d = d;
        }
      });
    });
  });

  GPR_REQUIRE(rep.points_checked > 0, "sampling plan produced no admissible points");
  rep.passed = rep.max_eig <= 0.0;
  return rep;
}

double max_contraction_rate(const Mat& M, const Mat& K, const SystemModel& model,
                            const GridSpec& grid) {
  const Metric mtr = Metric::create(M, K, 1.0);
  double best = std::numeric_limits<double>::infinity();

  const Vec s_lo = Eigen::Map<const Vec>(model.S_lo.data(), model.S_lo.size());
  const Vec s_hi = Eigen::Map<const Vec>(model.S_hi.data(), model.S_hi.size());

  for_each_admissible(model, grid, false, [&](const Vec& x, const Vec& u) {
    const Mat Bx = model.B(x);
    for_each_box_vertex(model.d_box.lo, model.d_box.hi, [&](const Vec& d) {
      const Mat A0 = model.jac_x(x, u, d) + Bx * mtr.K;
      for_each_box_vertex(s_lo, s_hi, [&](const Vec& gxf) {
        const Eigen::Map<const Mat> gx(gxf.data(), model.l, model.n);
        const Mat Acl = A0 + model.G * gx;
        const Mat W0 = Acl.transpose() * mtr.M + mtr.M * Acl;
        // W0 + 2 rho M <= 0 iff rho <= -1/2 lambda_max(W0, M)
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(W0, mtr.M,
                                                         Eigen::EigenvaluesOnly);
        best = std::min(best, -0.5 * es.eigenvalues().maxCoeff());
      });
    });
  });
  return best;
}

double max_growth_rate(const Metric& mtr, const SystemModel& model,
                       const GridSpec& grid) {
  double worst = 0.0;
  const Vec s_lo = Eigen::Map<const Vec>(model.S_lo.data(), model.S_lo.size());
  const Vec s_hi = Eigen::Map<const Vec>(model.S_hi.data(), model.S_hi.size());

  // the induced norm is convex and A_cl affine in (gx, d), so the vertex
  // scan is exact in those arguments
  for_each_admissible(model, grid, false, [&](const Vec& x, const Vec& u) {
    const Mat Bx = model.B(x);
    for_each_box_vertex(model.d_box.lo, model.d_box.hi, [&](const Vec& d) {
      const Mat A0 = model.jac_x(x, u, d) + Bx * mtr.K;
      for_each_box_vertex(s_lo, s_hi, [&](const Vec& gxf) {
        const Eigen::Map<const Mat> gx(gxf.data(), model.l, model.n);
        const Mat T = mtr.M_half * (A0 + model.G * gx) * mtr.M_half_inv;
        worst = std::max(worst, T.jacobiSvd().singularValues()[0]);
      });
    });
  });
  return worst;
}

TubeConstants compute_constants(const Metric& mtr, const SystemModel& model,
                                const GridSpec& grid) {
  TubeConstants tc;
  tc.rho = mtr.rho;

  // L_G: affine in gx, so the vertex scan is exact for a constant metric.
  const Vec s_lo = Eigen::Map<const Vec>(model.S_lo.data(), model.S_lo.size());
  const Vec s_hi = Eigen::Map<const Vec>(model.S_hi.data(), model.S_hi.size());
  for_each_box_vertex(s_lo, s_hi, [&](const Vec& gxf) {
    const Eigen::Map<const Mat> gx(gxf.data(), model.l, model.n);
    const Mat T = mtr.M_half * model.G * gx * mtr.M_half_inv;
    tc.L_G = std::max(tc.L_G, T.jacobiSvd().singularValues()[0]);
  });

  const Mat MG = mtr.M_half * model.G;
  tc.G_M = MG.colwise().norm().transpose();

  tc.E_M = 0.0;
  for_each_admissible(model, grid, true, [&](const Vec& x, const Vec&) {
    const Mat Ex = model.E(x);
    for_each_box_vertex(model.d_box.lo, model.d_box.hi, [&](const Vec& d) {
      tc.E_M = std::max(tc.E_M, (mtr.M_half * (Ex * d)).norm());
    });
  });
  tc.E_M *= grid.safety_factor;

  tc.c.resize(static_cast<Eigen::Index>(model.constraints.size()));
  tc.c.setZero();
  for_each_admissible(model, grid, false, [&](const Vec& x, const Vec& u) {
    for (std::size_t j = 0; j < model.constraints.size(); ++j) {
      const auto& con = model.constraints[j];
      const Vec row = con.grad_x(x, u) + mtr.K.transpose() * con.grad_u(x, u);
      tc.c[static_cast<Eigen::Index>(j)] =
          std::max(tc.c[static_cast<Eigen::Index>(j)],
                   (row.transpose() * mtr.M_half_inv).norm());
    }
  });
  tc.c *= grid.safety_factor;

  tc.rho_eff = tc.rho - tc.L_G;
  if (tc.rho_eff <= 0.0)
    throw verification_error(
        "tube does not contract: rho - L_G <= 0 (rho = " + format_double(tc.rho) +
        ", L_G = " + format_double(tc.L_G) + ")");
  return tc;
}

Mat solve_lyapunov(const Mat& A, const Mat& Q) {
  const int n = static_cast<int>(A.rows());
  GPR_REQUIRE(A.cols() == n && Q.rows() == n && Q.cols() == n,
              "lyapunov shape mismatch");
  // vec(A^T X + X A) = (I (x) A^T + A^T (x) I) vec(X)
  Mat S = Mat::Zero(n * n, n * n);
  const Mat At = A.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) {
        S(i + n * j, k + n * j) += At(i, k);       // A^T X
        S(i + n * j, i + n * k) += A(k, j);        // X A
      }
  const Vec q = Eigen::Map<const Vec>(Q.data(), n * n);
  const Vec x = S.fullPivLu().solve(-q);
  Mat X = Eigen::Map<const Mat>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  const int n = static_cast<int>(A.rows());
  // stable invariant subspace of the Hamiltonian
  Mat H(2 * n, 2 * n);
  const Mat Rinv = R.inverse();
  H.topLeftCorner(n, n) = A;
  H.topRightCorner(n, n) = -B * Rinv * B.transpose();
  H.bottomLeftCorner(n, n) = -Q;
  H.bottomRightCorner(n, n) = -A.transpose();

  Eigen::ComplexEigenSolver<Mat> es(H);
  if (es.info() != Eigen::Success)
    throw numerical_error("Hamiltonian eigendecomposition failed");
  Eigen::MatrixXcd basis(2 * n, n);
  int found = 0;
  for (int i = 0; i < 2 * n && found < n; ++i)
    if (es.eigenvalues()[i].real() < 0.0)
      basis.col(found++) = es.eigenvectors().col(i);
  if (found != n) throw numerical_error("Riccati solve: (A, B) not stabilizable");

  const Eigen::MatrixXcd X1 = basis.topRows(n);
  const Eigen::MatrixXcd X2 = basis.bottomRows(n);
  const Mat P = (X2 * X1.inverse()).real();
  return -Rinv * B.transpose() * (0.5 * (P + P.transpose()));
}

Metric synthesize_linear_metric(const SystemModel& model, const Mat& Qw,
                                const Mat& Rw, double rho, const Mat& Qm) {
  const Vec gz = Vec::Zero(model.l);
  const Vec xr = model.x_ref_of(gz);
  const Vec ur = model.u_ref_of(gz);
  const Mat A = model.jac_x(xr, ur, Vec::Zero(model.q));
  const Mat B = model.B(xr);
  const Mat K = lqr_gain(A, B, Qw, Rw);
  const Mat Acl = A + B * K + rho * Mat::Identity(model.n, model.n);
  const Mat M = solve_lyapunov(Acl, Qm);
  return Metric::create(M, K, rho);
}

}  // namespace gpr
