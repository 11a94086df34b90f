#include "gpr/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace gpr {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double inf_norm(const Vec& v) {
  return v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
}

struct Scaling {
  Vec d;     // variable scaling
  Vec e;     // row scaling
  double c;  // cost scaling
};

// Ruiz-style equilibration of the KKT block [H A^T; A 0] plus cost scaling.
Scaling equilibrate(Mat& H, Vec& g, Mat& A, Vec& lb, Vec& ub, int iters) {
  const int n = static_cast<int>(g.size());
  const int m = static_cast<int>(lb.size());
  Scaling s{Vec::Ones(n), Vec::Ones(m), 1.0};

  for (int it = 0; it < iters; ++it) {
    Vec dx(n), ey(m);
    for (int j = 0; j < n; ++j) {
      double nrm = inf_norm(H.col(j));
      if (m > 0) nrm = std::max(nrm, inf_norm(A.col(j)));
      dx[j] = 1.0 / std::sqrt(std::max(nrm, 1e-10));
    }
    for (int i = 0; i < m; ++i) {
      const double nrm = inf_norm(A.row(i).transpose());
      ey[i] = 1.0 / std::sqrt(std::max(nrm, 1e-10));
    }
    H = dx.asDiagonal() * H * dx.asDiagonal();
    g = dx.cwiseProduct(g);
    if (m > 0) {
      A = ey.asDiagonal() * A * dx.asDiagonal();
      for (int i = 0; i < m; ++i) {
        if (std::isfinite(lb[i])) lb[i] *= ey[i];
        if (std::isfinite(ub[i])) ub[i] *= ey[i];
      }
    }
    s.d = s.d.cwiseProduct(dx);
    s.e = s.e.cwiseProduct(ey);

    double mean_col = 0.0;
    for (int j = 0; j < n; ++j) mean_col += inf_norm(H.col(j));
    mean_col /= std::max(1, n);
    const double gamma = 1.0 / std::max(std::max(mean_col, inf_norm(g)), 1e-10);
    H *= gamma;
    g *= gamma;
    s.c *= gamma;
  }
  return s;
}

}  // namespace

void QpProblem::validate() const {
  const int n = vars(), m = rows();
  GPR_REQUIRE(n > 0, "QP needs at least one variable");
  GPR_REQUIRE(H.rows() == n && H.cols() == n, "H shape mismatch");
  GPR_REQUIRE(A.rows() == m && (m == 0 || A.cols() == n), "A shape mismatch");
  GPR_REQUIRE(ub.size() == m, "bound length mismatch");
  for (int i = 0; i < m; ++i)
    GPR_REQUIRE(lb[i] <= ub[i], "QP row with lb > ub");
}

QpSolution solve_qp(const QpProblem& prob, const QpSettings& st,
                    const QpWarmStart* warm) {
  prob.validate();
  const int n = prob.vars();
  const int m = prob.rows();

  QpSolution sol;

  Mat H = prob.H;
  Vec g = prob.g;
  Mat A = prob.A;
  Vec lb = prob.lb, ub = prob.ub;
  const Scaling sc = equilibrate(H, g, A, lb, ub, st.scaling_iters);

  auto finish = [&](Vec xs, Vec ys, QpStatus status, int iters, bool polished) {
    sol.x = sc.d.cwiseProduct(xs);
    sol.y = m > 0 ? Vec(sc.e.cwiseProduct(ys) / sc.c) : Vec(0);
    sol.status = status;
    sol.iterations = iters;
    sol.polished = polished;
    sol.objective = 0.5 * sol.x.dot(prob.H * sol.x) + prob.g.dot(sol.x);

    Vec stat = prob.H * sol.x + prob.g;
    if (m > 0) stat += prob.A.transpose() * sol.y;
    sol.stationarity = inf_norm(stat);

    sol.primal_res = 0.0;
    sol.complementarity = 0.0;
    double dual_obj = -0.5 * sol.x.dot(prob.H * sol.x);
    if (m > 0) {
      const Vec ax = prob.A * sol.x;
      for (int i = 0; i < m; ++i) {
        const double viol = std::max(
            {0.0, std::isfinite(prob.lb[i]) ? prob.lb[i] - ax[i] : 0.0,
             std::isfinite(prob.ub[i]) ? ax[i] - prob.ub[i] : 0.0});
        sol.primal_res = std::max(sol.primal_res, viol);
        const double yi = sol.y[i];
        if (std::abs(yi) > 1e-14) {
          const double bnd = yi > 0.0 ? prob.ub[i] : prob.lb[i];
          if (std::isfinite(bnd)) {
            sol.complementarity =
                std::max(sol.complementarity, std::abs(yi * (ax[i] - bnd)));
            dual_obj -= yi * bnd;
          } else {
            sol.complementarity = std::max(sol.complementarity, std::abs(yi));
          }
        }
      }
    }
    sol.duality_gap = sol.objective - dual_obj;
    if (status == QpStatus::kMaxIter && sol.stationarity <= 1e-6 &&
        sol.primal_res <= 1e-6)
      sol.status = QpStatus::kOptimal;
    return sol;
  };

  if (m == 0) {
    Eigen::LLT<Mat> llt(H);
    if (llt.info() != Eigen::Success)
      throw numerical_error("QP objective is not positive definite");
    return finish(llt.solve(-g), Vec(0), QpStatus::kOptimal, 0, false);
  }

  // penalty vector: equality rows get a stiffer penalty
  double rho_hat = st.rho0;
  Vec rho(m), rho_inv(m);
  auto build_rho = [&]() {
    for (int i = 0; i < m; ++i) {
      rho[i] = lb[i] == ub[i] ? 1e3 * rho_hat : rho_hat;
      rho_inv[i] = 1.0 / rho[i];
    }
  };
  build_rho();

  Eigen::LLT<Mat> kkt;
  double sigma = st.sigma;
  auto factor = [&]() {
    for (int attempt = 0; attempt < 6; ++attempt) {
      Mat Hs = H + sigma * Mat::Identity(n, n) +
               A.transpose() * rho.asDiagonal() * A;
      kkt.compute(Hs);
      if (kkt.info() == Eigen::Success) return;
      sigma *= 100.0;
    }
    throw numerical_error("QP splitting matrix factorization failed");
  };
  factor();

  Vec x = Vec::Zero(n), y = Vec::Zero(m);
  if (warm) {
    GPR_REQUIRE(warm->x.size() == n && warm->y.size() == m,
                "warm start dimension mismatch");
    x = warm->x.cwiseQuotient(sc.d);
    y = sc.c * warm->y.cwiseQuotient(sc.e);
  }
  Vec zeta = (A * x).cwiseMax(lb).cwiseMin(ub);

  Vec y_prev_chk = y, x_prev_chk = x;
  QpStatus status = QpStatus::kMaxIter;
  int iters = 0;

  for (iters = 1; iters <= st.max_iter; ++iters) {
    const Vec rhs = sigma * x - g + A.transpose() * (rho.cwiseProduct(zeta) - y);
    const Vec x_tilde = kkt.solve(rhs);
    const Vec a_xt = A * x_tilde;

    x = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    const Vec zeta_tilde = st.alpha * a_xt + (1.0 - st.alpha) * zeta;
    const Vec zeta_new =
        (zeta_tilde + rho_inv.cwiseProduct(y)).cwiseMax(lb).cwiseMin(ub);
    y += rho.cwiseProduct(zeta_tilde - zeta_new);
    zeta = zeta_new;

    if (iters % st.check_every == 0 || iters == st.max_iter) {
      const Vec ax = A * x;
      const Vec rp_vec = (ax - zeta).cwiseQuotient(sc.e);
      const Vec rd_vec =
          (H * x + g + A.transpose() * y).cwiseQuotient(sc.c * sc.d);
      const double rp = inf_norm(rp_vec);
      const double rd = inf_norm(rd_vec);
      const double sp =
          std::max(inf_norm(ax.cwiseQuotient(sc.e)),
                   inf_norm(zeta.cwiseQuotient(sc.e)));
      const double sd = std::max(
          {inf_norm((H * x).cwiseQuotient(sc.c * sc.d)),
           inf_norm(g.cwiseQuotient(sc.c * sc.d)),
           inf_norm((A.transpose() * y).cwiseQuotient(sc.c * sc.d))});
      const double eps_p = st.eps + st.eps * sp;
      const double eps_d = st.eps + st.eps * sd;
      if (rp <= eps_p && rd <= eps_d) {
        status = QpStatus::kOptimal;
        break;
      }

      // infeasibility certificates
      const Vec dy = y - y_prev_chk;
      const double dy_norm = inf_norm(dy);
      if (dy_norm > 1e-12) {
        bool cert = inf_norm(A.transpose() * dy) <= 1e-10 * dy_norm;
        double support = 0.0;
        for (int i = 0; i < m && cert; ++i) {
          if (dy[i] > 0.0) {
            if (!std::isfinite(ub[i])) cert = false;
            else support += ub[i] * dy[i];
          } else if (dy[i] < 0.0) {
            if (!std::isfinite(lb[i])) cert = false;
            else support += lb[i] * dy[i];
          }
        }
        if (cert && support < -1e-10 * dy_norm) {
          status = QpStatus::kPrimalInfeasible;
          break;
        }
      }
      const Vec dx = x - x_prev_chk;
      const double dx_norm = inf_norm(dx);
      if (dx_norm > 1e-12 && inf_norm(H * dx) <= 1e-10 * dx_norm &&
          g.dot(dx) < -1e-10 * dx_norm) {
        bool cert = true;
        const Vec adx = A * dx;
        for (int i = 0; i < m && cert; ++i) {
          if (std::isfinite(ub[i]) && adx[i] > 1e-10 * dx_norm) cert = false;
          if (std::isfinite(lb[i]) && adx[i] < -1e-10 * dx_norm) cert = false;
        }
        if (cert) {
          status = QpStatus::kDualInfeasible;
          break;
        }
      }
      y_prev_chk = y;
      x_prev_chk = x;

      // residual balancing
      if (rd > 1e-300) {
        const double ratio = std::sqrt((rp / std::max(sp, 1e-10)) /
                                       std::max(rd / std::max(sd, 1e-10), 1e-300));
        if (ratio > 5.0 || ratio < 0.2) {
          rho_hat = std::clamp(rho_hat * ratio, 1e-6, 1e6);
          build_rho();
          factor();
        }
      }
    }
  }
  iters = std::min(iters, st.max_iter);

  if (status == QpStatus::kPrimalInfeasible || status == QpStatus::kDualInfeasible)
    return finish(x, y, status, iters, false);

  if (st.polish) {
    // equality-KKT solve on a guessed active set, accepted only if it
    // tightens the worst residual; activity is read off the projected
    // iterate rather than the multipliers, which stay noisy when the
    // splitting iteration has not fully converged
    auto worst = [&](const Vec& xx, const Vec& yy) {
      const Vec ax = A * xx;
      double w = inf_norm((H * xx + g + A.transpose() * yy)
                              .cwiseQuotient(sc.c * sc.d));
      for (int i = 0; i < m; ++i) {
        double viol = 0.0;
        if (std::isfinite(lb[i])) viol = std::max(viol, lb[i] - ax[i]);
        if (std::isfinite(ub[i])) viol = std::max(viol, ax[i] - ub[i]);
        w = std::max(w, viol / sc.e[i]);
      }
      return w;
    };
    auto kkt_solve = [&](const std::vector<int>& act,
                         const std::vector<char>& at_upper, Vec& xp, Vec& yp) {
      const int k = static_cast<int>(act.size());
      Mat KKT = Mat::Zero(n + k, n + k);
      KKT.topLeftCorner(n, n) = H + 1e-9 * Mat::Identity(n, n);
      Vec rhs(n + k);
      rhs.head(n) = -g;
      for (int a = 0; a < k; ++a) {
        const int i = act[a];
        KKT.block(n + a, 0, 1, n) = A.row(i);
        KKT.block(0, n + a, n, 1) = A.row(i).transpose();
        KKT(n + a, n + a) = -1e-9;
        rhs[n + a] = at_upper[a] ? ub[i] : lb[i];
      }
      Eigen::LDLT<Mat> ldlt(KKT);
      if (ldlt.info() != Eigen::Success) return false;
      Vec sol_v = ldlt.solve(rhs);
      sol_v += ldlt.solve(rhs - KKT * sol_v);  // one refinement pass
      xp = sol_v.head(n);
      yp = Vec::Zero(m);
      for (int a = 0; a < k; ++a) yp[act[a]] = sol_v[n + a];
      return true;
    };

    std::vector<int> act;
    std::vector<char> at_upper;
    for (int i = 0; i < m; ++i) {
      if (lb[i] == ub[i]) {
        act.push_back(i);
        at_upper.push_back(1);
        continue;
      }
      const double tol_u = 1e-5 * (1.0 + std::abs(ub[i]));
      const double tol_l = 1e-5 * (1.0 + std::abs(lb[i]));
      if (std::isfinite(ub[i]) && ub[i] - zeta[i] <= tol_u) {
        act.push_back(i);
        at_upper.push_back(1);
      } else if (std::isfinite(lb[i]) && zeta[i] - lb[i] <= tol_l) {
        act.push_back(i);
        at_upper.push_back(0);
      }
    }

    double best = worst(x, y);
    bool polished = false;
    Vec xp, yp;
    for (int round = 0; round < 2 && !act.empty(); ++round) {
      if (!kkt_solve(act, at_upper, xp, yp)) break;
      if (worst(xp, yp) < best) {
        best = worst(xp, yp);
        x = xp;
        y = yp;
        polished = true;
      }
      // drop rows whose multiplier came out with the wrong sign and retry
      std::vector<int> keep;
      std::vector<char> keep_up;
      for (std::size_t a = 0; a < act.size(); ++a) {
        const int i = act[a];
        if (lb[i] == ub[i] || (at_upper[a] ? yp[i] >= 0.0 : yp[i] <= 0.0)) {
          keep.push_back(i);
          keep_up.push_back(at_upper[a]);
        }
      }
      if (keep.size() == act.size()) break;
      act = std::move(keep);
      at_upper = std::move(keep_up);
    }
    if (polished) return finish(x, y, status, iters, true);
  }
  return finish(x, y, status, iters, false);
}

}  // namespace gpr
