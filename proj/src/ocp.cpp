#include "gpr/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace gpr {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

void HorizonSpec::validate() const {
  GPR_REQUIRE(T_s > 0.0 && N_f >= 1 && substeps >= 1, "bad horizon spec");
}

struct OcpSolver::Tables {
  // frozen posterior means per fine step and RK4 stage (selection x l)
  std::vector<std::array<Mat, 4>> mu;
  // frozen radius forcing G_M . w + E_M per fine step and stage
  std::vector<std::array<double, 4>> q;
  Mat mu_ref;  // selection x l, posterior means at the reference
};

struct OcpSolver::Roll {
  Mat z;
  Vec delta;
  Vec a;  // d delta_j / d delta_0
  std::vector<std::array<Vec, 4>> stages;
  std::vector<Mat> Z;  // with_sens: per node, n x ntheta
  double cost = 0.0;
  Vec grad;
  Mat Hgn;
};

OcpSolver::OcpSolver(SystemModel model, Metric metric, TubeConstants consts,
                     TerminalSet term, HorizonSpec horizon, StageCost cost,
                     Mode mode, SqpSettings settings)
    : model_(std::move(model)),
      metric_(std::move(metric)),
      consts_(std::move(consts)),
      term_(std::move(term)),
      horizon_(horizon),
      cost_(std::move(cost)),
      mode_(mode),
      st_(settings) {
  horizon_.validate();
  GPR_REQUIRE(cost_.Q.rows() == model_.n && cost_.Q.cols() == model_.n,
              "Q shape mismatch");
  GPR_REQUIRE(cost_.R.rows() == model_.m && cost_.R.cols() == model_.m,
              "R shape mismatch");
  GPR_REQUIRE(consts_.c.size() == static_cast<Eigen::Index>(model_.constraints.size()),
              "constraint coefficient count mismatch");

  u_ref0_ = model_.u_ref_of(Vec::Zero(model_.l));
  u_ref_gain_.resize(model_.m, model_.l);
  for (int d = 0; d < model_.l; ++d)
    u_ref_gain_.col(d) = model_.u_ref_of(Vec::Unit(model_.l, d)) - u_ref0_;

  if (horizon_.constraints_at_substeps) {
    for (int j = 0; j < horizon_.fine_steps(); ++j) cnodes_.push_back(j);
  } else {
    for (int k = 0; k < horizon_.N_f; ++k) cnodes_.push_back(k * horizon_.substeps);
  }

  const double h = horizon_.dt();
  const double k1 = -consts_.rho_eff;
  const double k2 = -consts_.rho_eff * (1.0 + 0.5 * h * k1);
  const double k3 = -consts_.rho_eff * (1.0 + 0.5 * h * k2);
  const double k4 = -consts_.rho_eff * (1.0 + h * k3);
  delta_growth_ = 1.0 + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

int OcpSolver::n_lambda(const Selection& sel) const {
  return mode_ == Mode::kRampc ? horizon_.N_f * sel.count() : 0;
}

int OcpSolver::theta_size(const Selection& sel) const {
  return model_.n + 1 + horizon_.N_f * model_.m + n_lambda(sel);
}

Vec OcpSolver::pack_theta(const OcpSolution& s, const Selection& sel) const {
  Vec th(theta_size(sel));
  th.head(model_.n) = s.z0();
  th[model_.n] = s.delta0;
  for (int k = 0; k < horizon_.N_f; ++k)
    th.segment(model_.n + 1 + k * model_.m, model_.m) = s.v.row(k).transpose();
  if (mode_ == Mode::kRampc) {
    const int off = model_.n + 1 + horizon_.N_f * model_.m;
    GPR_REQUIRE(s.lambda.cols() == sel.count(), "warm start weight shape mismatch");
    for (int k = 0; k < horizon_.N_f; ++k)
      th.segment(off + k * sel.count(), sel.count()) = s.lambda.row(k).transpose();
  }
  return th;
}

void OcpSolver::unpack_theta(const Vec& theta, const Selection& sel, Vec& z0,
                             double& d0, Mat& v, Mat& lam) const {
  GPR_REQUIRE(theta.size() == theta_size(sel), "theta size mismatch");
  z0 = theta.head(model_.n);
  d0 = theta[model_.n];
  v.resize(horizon_.N_f, model_.m);
  for (int k = 0; k < horizon_.N_f; ++k)
    v.row(k) = theta.segment(model_.n + 1 + k * model_.m, model_.m).transpose();
  if (mode_ == Mode::kRampc) {
    lam.resize(horizon_.N_f, sel.count());
    const int off = model_.n + 1 + horizon_.N_f * model_.m;
    for (int k = 0; k < horizon_.N_f; ++k)
      lam.row(k) = theta.segment(off + k * sel.count(), sel.count()).transpose();
  } else {
    lam = Mat::Ones(horizon_.N_f, sel.count());
  }
}

OcpSolver::Tables OcpSolver::freeze(const std::vector<std::array<Vec, 4>>& stages,
                                    const GpCollection& coll, const Selection& sel,
                                    const Mat& lam) const {
  Tables tab;
  const int steps = static_cast<int>(stages.size());
  tab.mu.resize(steps);
  tab.q.resize(steps);
  for (int j = 0; j < steps; ++j) {
    const int k = std::min(j / horizon_.substeps, horizon_.N_f - 1);
    const Vec lam_k = lam.row(k).transpose();
    for (int s = 0; s < 4; ++s) {
      const BandEval bands = eval_bands(coll, sel, stages[j][s]);
      tab.mu[j][s] = bands.mu;
      const Vec gbar = bands.mu.transpose() * lam_k;
      const WtildeResult wt = wtilde_eval(bands, gbar);
      tab.q[j][s] = consts_.G_M.dot(wt.w) + consts_.E_M;
    }
  }
  tab.mu_ref = eval_bands(coll, sel, term_.x_ref).mu;
  return tab;
}

OcpSolver::Roll OcpSolver::roll_frozen(const Vec& theta, const Tables& tab,
                                       const Selection& sel, bool with_sens) const {
  const int n = model_.n, m = model_.m;
  const int nI = sel.count();
  const int nth = theta_size(sel);
  const int steps = horizon_.fine_steps();
  const double h = horizon_.dt();
  const int lam_off = n + 1 + horizon_.N_f * m;

  Vec z0;
  double d0;
  Mat v, lam;
  unpack_theta(theta, sel, z0, d0, v, lam);

  Roll r;
  r.z.resize(steps + 1, n);
  r.delta.resize(steps + 1);
  r.a.resize(steps + 1);
  r.stages.resize(steps);
  r.z.row(0) = z0.transpose();
  r.delta[0] = d0;
  r.a[0] = 1.0;
  if (with_sens) {
    r.Z.assign(steps + 1, Mat::Zero(n, nth));
    r.Z[0].leftCols(n).setIdentity();
    r.grad = Vec::Zero(nth);
    r.Hgn = Mat::Zero(nth, nth);
  }

  const Vec xr = term_.x_ref;
  Vec zj = z0;
  for (int j = 0; j < steps; ++j) {
    const int k = j / horizon_.substeps;
    const Vec vk = v.row(k).transpose();
    const Vec lam_k = lam.row(k).transpose();

    // stage cost at the left endpoint (rectangle quadrature)
    const Vec uref = u_ref0_ + u_ref_gain_ * (tab.mu_ref.transpose() * lam_k);
    const Vec dz = zj - xr;
    const Vec dv = vk - uref;
    r.cost += h * (dz.dot(cost_.Q * dz) + dv.dot(cost_.R * dv));
    if (with_sens) {
      const Mat QZ = cost_.Q * r.Z[j];
      r.Hgn.noalias() += 2.0 * h * r.Z[j].transpose() * QZ;
      r.grad.noalias() += 2.0 * h * r.Z[j].transpose() * (cost_.Q * dz);
      const Mat P = u_ref_gain_ * tab.mu_ref.transpose();  // m x nI
      const Vec Rdv = cost_.R * dv;
      r.grad.segment(n + 1 + k * m, m) += 2.0 * h * Rdv;
      r.Hgn.block(n + 1 + k * m, n + 1 + k * m, m, m) += 2.0 * h * cost_.R;
      if (mode_ == Mode::kRampc && nI > 0) {
        const int lk = lam_off + k * nI;
        r.grad.segment(lk, nI) -= 2.0 * h * P.transpose() * Rdv;
        r.Hgn.block(lk, lk, nI, nI) += 2.0 * h * P.transpose() * cost_.R * P;
        const Mat cross = -2.0 * h * (cost_.R * P);
        r.Hgn.block(n + 1 + k * m, lk, m, nI) += cross;
        r.Hgn.block(lk, n + 1 + k * m, nI, m) += cross.transpose();
      }
    }

    // RK4 with the GP term frozen per stage
    std::array<Vec, 4> ks;
    std::array<Vec, 4> zs;
    std::array<Mat, 4> Ss;
    zs[0] = zj;
    for (int s = 0; s < 4; ++s) {
      if (s == 1) zs[1] = zj + 0.5 * h * ks[0];
      if (s == 2) zs[2] = zj + 0.5 * h * ks[1];
      if (s == 3) zs[3] = zj + h * ks[2];
      const Vec gbar_s = tab.mu[j][s].transpose() * lam_k;
      ks[s] = model_.f(zs[s]) + model_.B(zs[s]) * vk + model_.G * gbar_s;
      if (with_sens) {
        Mat Zin = r.Z[j];
        if (s == 1) Zin += 0.5 * h * Ss[0];
        if (s == 2) Zin += 0.5 * h * Ss[1];
        if (s == 3) Zin += h * Ss[2];
        const Mat A = model_.jac_x(zs[s], vk, Vec::Zero(model_.q));
        Ss[s].noalias() = A * Zin;
        Ss[s].block(0, n + 1 + k * m, n, m) += model_.B(zs[s]);
        if (mode_ == Mode::kRampc && nI > 0)
          Ss[s].block(0, lam_off + k * nI, n, nI) +=
              model_.G * tab.mu[j][s].transpose();
      }
    }
    r.stages[j] = zs;
    zj += h / 6.0 * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]);
    r.z.row(j + 1) = zj.transpose();
    if (with_sens)
      r.Z[j + 1] = r.Z[j] + h / 6.0 * (Ss[0] + 2.0 * Ss[1] + 2.0 * Ss[2] + Ss[3]);

    const double dj = r.delta[j];
    const double k1 = -consts_.rho_eff * dj + tab.q[j][0];
    const double k2 = -consts_.rho_eff * (dj + 0.5 * h * k1) + tab.q[j][1];
    const double k3 = -consts_.rho_eff * (dj + 0.5 * h * k2) + tab.q[j][2];
    const double k4 = -consts_.rho_eff * (dj + h * k3) + tab.q[j][3];
    r.delta[j + 1] = dj + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    r.a[j + 1] = r.a[j] * delta_growth_;
  }
  return r;
}

LiveRoll OcpSolver::roll(const Vec& z0, double delta0, const Mat& v,
                         const Mat& lambda, const GpCollection& coll,
                         const Selection& sel, int steps_per_interval,
                         int n_intervals) const {
  GPR_REQUIRE(steps_per_interval >= 1 && n_intervals >= 1 &&
                  n_intervals <= horizon_.N_f,
              "bad rollout resolution");
  GPR_REQUIRE(v.rows() >= n_intervals && lambda.rows() >= n_intervals,
              "rollout inputs too short");
  GPR_REQUIRE(lambda.cols() == sel.count(), "weight column mismatch");

  const int n = model_.n;
  const int steps = n_intervals * steps_per_interval;
  const double h = horizon_.T_s / steps_per_interval;

  LiveRoll r;
  r.z.resize(steps + 1, n);
  r.delta.resize(steps + 1);
  r.w.resize(steps + 1, model_.l);
  r.gbar.resize(steps + 1, model_.l);
  r.used.assign(sel.count(), 0);
  r.stage_states.resize(steps);

  auto eval_w = [&](const Vec& x, const Vec& lam_k, Vec* gbar_out) {
    const BandEval bands = eval_bands(coll, sel, x);
    const Vec gbar = bands.mu.transpose() * lam_k;
    const WtildeResult wt = wtilde_eval(bands, gbar);
    for (int d = 0; d < model_.l; ++d) {
      for (int i : wt.active_upper[d]) r.used[i] = 1;
      for (int i : wt.active_lower[d]) r.used[i] = 1;
    }
    if (gbar_out) *gbar_out = gbar;
    return std::make_pair(gbar, wt.w);
  };

  Vec zj = z0;
  double dj = delta0;
  r.z.row(0) = zj.transpose();
  r.delta[0] = delta0;
  {
    const Vec lam0 = lambda.row(0).transpose();
    auto [gb, w] = eval_w(zj, lam0, nullptr);
    r.gbar.row(0) = gb.transpose();
    r.w.row(0) = w.transpose();
  }

  for (int j = 0; j < steps; ++j) {
    const int k = j / steps_per_interval;
    const Vec vk = v.row(k).transpose();
    const Vec lam_k = lambda.row(k).transpose();

    std::array<Vec, 4> zs;
    std::array<Vec, 4> ks;
    std::array<double, 4> kd;
    double q_s;
    for (int s = 0; s < 4; ++s) {
      double din;
      if (s == 0) {
        zs[0] = zj;
        din = dj;
      } else if (s == 1) {
        zs[1] = zj + 0.5 * h * ks[0];
        din = dj + 0.5 * h * kd[0];
      } else if (s == 2) {
        zs[2] = zj + 0.5 * h * ks[1];
        din = dj + 0.5 * h * kd[1];
      } else {
        zs[3] = zj + h * ks[2];
        din = dj + h * kd[2];
      }
      auto [gbar_s, w_s] = eval_w(zs[s], lam_k, nullptr);
      ks[s] = model_.f(zs[s]) + model_.B(zs[s]) * vk + model_.G * gbar_s;
      q_s = consts_.G_M.dot(w_s) + consts_.E_M;
      kd[s] = -consts_.rho_eff * din + q_s;
    }
    r.stage_states[j] = zs;
    zj += h / 6.0 * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3]);
    dj += h / 6.0 * (kd[0] + 2.0 * kd[1] + 2.0 * kd[2] + kd[3]);
    r.z.row(j + 1) = zj.transpose();
    r.delta[j + 1] = dj;

    const int k_next = std::min(j + 1, steps - 1) / steps_per_interval;
    const Vec lam_next = lambda.row(k_next).transpose();
    auto [gb, w] = eval_w(zj, lam_next, nullptr);
    r.gbar.row(j + 1) = gb.transpose();
    r.w.row(j + 1) = w.transpose();
  }
  return r;
}

double OcpSolver::rollout_cost(const LiveRoll& r, const Mat& v, const Mat& lambda,
                               const GpCollection& coll, const Selection& sel,
                               int steps_per_interval, int n_intervals) const {
  const double h = horizon_.T_s / steps_per_interval;
  const Mat mu_ref = eval_bands(coll, sel, term_.x_ref).mu;
  const Vec xr = term_.x_ref;
  double cost = 0.0;
  for (int j = 0; j < n_intervals * steps_per_interval; ++j) {
    const int k = j / steps_per_interval;
    const Vec lam_k = lambda.row(k).transpose();
    const Vec uref = u_ref0_ + u_ref_gain_ * (mu_ref.transpose() * lam_k);
    const Vec dz = r.z.row(j).transpose() - xr;
    const Vec dv = v.row(k).transpose() - uref;
    cost += h * (dz.dot(cost_.Q * dz) + dv.dot(cost_.R * dv));
  }
  return cost;
}

namespace {

struct MeritTerms {
  double f = 0.0;
  double viol = 0.0;
};

}  // namespace

OcpSolution OcpSolver::finalize(const Vec& theta, const GpCollection& coll,
                                const Selection& sel, int iters, double kkt,
                                double step_norm, OcpStatus base_status) const {
  Vec z0;
  double d0;
  Mat v, lam;
  unpack_theta(theta, sel, z0, d0, v, lam);

  OcpSolution sol;
  const LiveRoll lr =
      roll(z0, d0, v, lam, coll, sel, horizon_.substeps, horizon_.N_f);
  sol.z = lr.z;
  sol.delta = lr.delta;
  sol.v = v;
  sol.lambda = lam;
  sol.w = lr.w;
  sol.delta0 = d0;
  sol.sqp_iters = iters;
  sol.kkt_res = kkt;
  sol.step_norm = step_norm;
  sol.used_flags = lr.used;
  sol.objective =
      rollout_cost(lr, v, lam, coll, sel, horizon_.substeps, horizon_.N_f);

  const Mat mu_ref = eval_bands(coll, sel, term_.x_ref).mu;
  sol.gbar_terminal =
      mu_ref.transpose() * lam.row(horizon_.N_f - 1).transpose();

  double viol = 0.0;
  for (int j : cnodes_) {
    const int k = j / horizon_.substeps;
    const Vec zj = lr.z.row(j).transpose();
    const Vec vk = v.row(k).transpose();
    for (std::size_t jc = 0; jc < model_.constraints.size(); ++jc) {
      const double hval = model_.constraints[jc].value(zj, vk) +
                          consts_.c[static_cast<Eigen::Index>(jc)] * lr.delta[j];
      viol = std::max(viol, hval);
    }
  }
  const int N = horizon_.fine_steps();
  viol = std::max(viol,
                  (lr.z.row(N).transpose() - term_.x_ref).cwiseAbs().maxCoeff());
  viol = std::max(viol, lr.delta[N] - term_.delta_f);
  viol = std::max(viol, -d0);
  if (mode_ == Mode::kRampc)
    viol = std::max(viol, lam.cwiseAbs().maxCoeff() - st_.lambda_max);
  sol.max_viol = viol;

  if (base_status == OcpStatus::kFailed)
    sol.status = OcpStatus::kFailed;
  else
    sol.status = viol <= 1e-5 ? OcpStatus::kFeasible : OcpStatus::kDegraded;
  return sol;
}

OcpSolution OcpSolver::solve(const Vec& x_t, const GpCollection& coll,
                             const Selection& sel, const OcpSolution* warm) {
  GPR_REQUIRE(x_t.size() == model_.n, "state dimension mismatch");
  GPR_REQUIRE(mode_ == Mode::kRampc || sel.count() == 1,
              "non-adaptive mode expects a single selected model");

  const int n = model_.n, m = model_.m;
  const int nI = sel.count();
  const int nth = theta_size(sel);
  const int lam_off = n + 1 + horizon_.N_f * m;
  const int N = horizon_.fine_steps();
  const int r_con = static_cast<int>(model_.constraints.size());

  // initial iterate
  Vec theta(nth);
  {
    if (warm) {
      theta = pack_theta(*warm, sel);
    } else {
      const Mat mu_ref = eval_bands(coll, sel, term_.x_ref).mu;
      theta.setZero();
      theta.head(n) = x_t;
      theta[n] = 0.0;
      Mat lam0 = Mat::Zero(horizon_.N_f, nI);
      lam0.col(nI - 1).setOnes();
      const Vec uref =
          u_ref0_ + u_ref_gain_ * (mu_ref.transpose() * lam0.row(0).transpose());
      for (int k = 0; k < horizon_.N_f; ++k)
        theta.segment(n + 1 + k * m, m) = uref;
      if (mode_ == Mode::kRampc)
        for (int k = 0; k < horizon_.N_f; ++k)
          theta.segment(lam_off + k * nI, nI) = lam0.row(k).transpose();
    }
  }

  auto freeze_at = [&](const Vec& th) {
    Vec z0;
    double d0;
    Mat v, lam;
    unpack_theta(th, sel, z0, d0, v, lam);
    const LiveRoll lr =
        roll(z0, d0, v, lam, coll, sel, horizon_.substeps, horizon_.N_f);
    return freeze(lr.stage_states, coll, sel, lam);
  };
  Tables tab = freeze_at(theta);

  // merit terms of the frozen nonlinear problem at a trial point
  auto merit_terms = [&](const Vec& th, const Roll& roll) {
    MeritTerms t;
    t.f = roll.cost;
    Vec z0;
    double d0;
    Mat v, lam;
    unpack_theta(th, sel, z0, d0, v, lam);
    for (int j : cnodes_) {
      const int k = j / horizon_.substeps;
      const Vec zj = roll.z.row(j).transpose();
      const Vec vk = v.row(k).transpose();
      for (int jc = 0; jc < r_con; ++jc)
        t.viol += std::max(0.0, model_.constraints[jc].value(zj, vk) +
                                    consts_.c[jc] * roll.delta[j]);
    }
    t.viol += (roll.z.row(N).transpose() - term_.x_ref).cwiseAbs().sum();
    t.viol += std::max(0.0, roll.delta[N] - term_.delta_f);
    const Vec dz0 = x_t - z0;
    t.viol += std::max(0.0, dz0.dot(metric_.M * dz0) - d0 * d0);
    t.viol += std::max(0.0, -d0);
    if (mode_ == Mode::kRampc)
      for (int k = 0; k < horizon_.N_f; ++k)
        for (int i = 0; i < nI; ++i)
          t.viol += std::max(0.0, std::abs(lam(k, i)) - st_.lambda_max);
    return t;
  };

  const int n_path = static_cast<int>(cnodes_.size()) * r_con;
  const int ns = n_path + 1 + 2 * n;  // path, terminal tube, terminal eq pair
  const int nq = nth + ns;
  const int nlam_rows = n_lambda(sel);
  const int m_rows = n_path + 1 + n + 1 + 1 + nlam_rows + ns;

  QpProblem qp;
  qp.H = Mat::Zero(nq, nq);
  qp.g = Vec::Zero(nq);
  qp.A = Mat::Zero(m_rows, nq);
  qp.lb = Vec::Constant(m_rows, -kInf);
  qp.ub = Vec::Constant(m_rows, kInf);

  QpWarmStart qp_warm;
  bool have_qp_warm = false;

  double nu = st_.soft_penalty;
  int iters = 0;
  double kkt = -1.0, step_norm = -1.0;
  OcpStatus base = OcpStatus::kDegraded;

  for (iters = 1; iters <= st_.max_iter; ++iters) {
    const Roll roll_c = roll_frozen(theta, tab, sel, true);
    Vec z0;
    double d0;
    Mat v, lam;
    unpack_theta(theta, sel, z0, d0, v, lam);

    // quadratic model; slacks carry curvature on top of the L1 weight so
    // the splitting solver is not left with near-linear directions
    qp.H.setZero();
    qp.H.topLeftCorner(nth, nth) = roll_c.Hgn;
    qp.H.diagonal().array() += st_.reg;
    qp.H.diagonal().tail(ns).array() += st_.soft_penalty;
    qp.g.setZero();
    qp.g.head(nth) = roll_c.grad;
    qp.g.tail(ns).setConstant(st_.soft_penalty);

    qp.A.setZero();
    qp.lb.setConstant(-kInf);
    qp.ub.setConstant(kInf);

    int row = 0;
    int slack = nth;
    for (int j : cnodes_) {
      const int k = j / horizon_.substeps;
      const Vec zj = roll_c.z.row(j).transpose();
      const Vec vk = v.row(k).transpose();
      for (int jc = 0; jc < r_con; ++jc) {
        const auto& con = model_.constraints[jc];
        qp.A.block(row, 0, 1, nth) =
            con.grad_x(zj, vk).transpose() * roll_c.Z[j];
        qp.A.block(row, n + 1 + k * m, 1, m) += con.grad_u(zj, vk).transpose();
        qp.A(row, n) += consts_.c[jc] * roll_c.a[j];
        qp.A(row, slack) = -1.0;
        qp.ub[row] = -(con.value(zj, vk) + consts_.c[jc] * roll_c.delta[j]);
        ++row;
        ++slack;
      }
    }
    // terminal tube radius
    qp.A(row, n) = roll_c.a[N];
    qp.A(row, slack) = -1.0;
    qp.ub[row] = term_.delta_f - roll_c.delta[N];
    ++row;
    ++slack;
    // terminal equality with slack pair
    for (int i = 0; i < n; ++i) {
      qp.A.block(row, 0, 1, nth) = roll_c.Z[N].row(i);
      qp.A(row, slack + i) = -1.0;
      qp.A(row, slack + n + i) = 1.0;
      qp.lb[row] = qp.ub[row] = term_.x_ref[i] - roll_c.z(N, i);
      ++row;
    }
    slack += 2 * n;
    // initial-state coupling |x - z0|_M^2 <= delta0^2, linearized; the
    // radius coefficient is floored so the row keeps a usable delta0
    // direction near delta0 = 0, where the exact gradient vanishes
    {
      const Vec dz0 = x_t - z0;
      const double d0_lin = std::max(d0, 0.05 * term_.delta_f);
      qp.A.block(row, 0, 1, n) = (-2.0 * metric_.M * dz0).transpose();
      qp.A(row, n) = -2.0 * d0_lin;
      qp.ub[row] = d0 * d0 - dz0.dot(metric_.M * dz0);
      ++row;
    }
    // delta0 >= 0
    qp.A(row, n) = 1.0;
    qp.lb[row] = -d0;
    ++row;
    // weight box
    if (mode_ == Mode::kRampc) {
      for (int k = 0; k < horizon_.N_f; ++k)
        for (int i = 0; i < nI; ++i) {
          qp.A(row, lam_off + k * nI + i) = 1.0;
          qp.lb[row] = -st_.lambda_max - lam(k, i);
          qp.ub[row] = st_.lambda_max - lam(k, i);
          ++row;
        }
    }
    // slack nonnegativity
    for (int i = 0; i < ns; ++i) {
      qp.A(row, nth + i) = 1.0;
      qp.lb[row] = 0.0;
      ++row;
    }
    GPR_REQUIRE(row == m_rows && slack == nq, "QP assembly mismatch");

    QpSettings qs = st_.qp;
    QpSolution qps;
    try {
      qps = solve_qp(qp, qs, have_qp_warm ? &qp_warm : nullptr);
    } catch (const numerical_error& e) {
      log_msg(LogLevel::kWarn, std::string("QP solve failed: ") + e.what());
      base = OcpStatus::kFailed;
      break;
    }
    if (qps.status == QpStatus::kPrimalInfeasible ||
        qps.status == QpStatus::kDualInfeasible) {
      log_msg(LogLevel::kWarn, "QP reported infeasibility");
      base = OcpStatus::kFailed;
      break;
    }
    qp_warm.x = qps.x;
    qp_warm.y = qps.y;
    have_qp_warm = true;

    const Vec d_theta = qps.x.head(nth);
    step_norm = d_theta.cwiseAbs().maxCoeff();
    kkt = (qp.g + qp.A.transpose() * qps.y).head(nth).cwiseAbs().maxCoeff();
    const MeritTerms m0 = merit_terms(theta, roll_c);
    if (log_level() >= LogLevel::kDebug)
      log_msg(LogLevel::kDebug,
              "sqp iter " + std::to_string(iters) + " qp_status=" +
                  std::to_string(static_cast<int>(qps.status)) + " qp_iters=" +
                  std::to_string(qps.iterations) + " step=" +
                  format_double(step_norm) + " kkt=" + format_double(kkt) +
                  " viol=" + format_double(m0.viol));
    // a vanishing step with a consistent iterate is the convergence signal;
    // the multiplier residual is reported but kept out of the gate because
    // the splitting solver delivers multipliers far more slowly than steps
    if (step_norm <= st_.tol && m0.viol <= 10.0 * st_.tol) {
      base = OcpStatus::kFeasible;
      break;
    }

    if (qps.status == QpStatus::kOptimal)
      nu = std::min(std::max(nu, 2.0 * qps.y.cwiseAbs().maxCoeff()),
                    100.0 * st_.soft_penalty);
    const double phi0 = m0.f + nu * m0.viol;
    double descent = roll_c.grad.dot(d_theta) - nu * m0.viol;
    if (descent > -1e-16) descent = -1e-16;

    double alpha = 1.0;
    bool accepted = false;
    Vec theta_try;
    for (int ls = 0; ls < st_.max_linesearch; ++ls) {
      theta_try = theta + alpha * d_theta;
      const Roll roll_t = roll_frozen(theta_try, tab, sel, false);
      const MeritTerms mt = merit_terms(theta_try, roll_t);
      if (mt.f + nu * mt.viol <= phi0 + st_.armijo * alpha * descent) {
        accepted = true;
        break;
      }
      alpha *= st_.backtrack;
    }
    if (!accepted) {
      const Roll roll_t = roll_frozen(theta_try, tab, sel, false);
      const MeritTerms mt = merit_terms(theta_try, roll_t);
      if (log_level() >= LogLevel::kDebug)
        log_msg(LogLevel::kDebug,
                "sqp iter " + std::to_string(iters) + " linesearch exhausted:"
                " phi0=" + format_double(phi0) + " f0=" + format_double(m0.f) +
                " viol0=" + format_double(m0.viol) + " ftry=" +
                format_double(mt.f) + " violtry=" + format_double(mt.viol) +
                " nu=" + format_double(nu) + " descent=" +
                format_double(descent) + " alpha=" + format_double(alpha));
      if (mt.f + nu * mt.viol > phi0 + 1e-10 * (1.0 + std::abs(phi0))) {
        // stalled on the merit function; keep the current iterate
        base = OcpStatus::kDegraded;
        break;
      }
    }
    theta = theta_try;
    step_norm = alpha * step_norm;
    tab = freeze_at(theta);
    if (iters == st_.max_iter) base = OcpStatus::kDegraded;
  }
  iters = std::min(iters, st_.max_iter);

  return finalize(theta, coll, sel, iters, kkt, step_norm,
                  base == OcpStatus::kFailed ? OcpStatus::kFailed
                                             : OcpStatus::kFeasible);
}

OcpSolution OcpSolver::shift_candidate(const OcpSolution& prev,
                                       const Selection& sel_prev,
                                       const Selection& sel_new,
                                       const Vec& x_next,
                                       const GpCollection&) const {
  OcpSolution cand;
  const int Nf = horizon_.N_f;

  cand.v.resize(Nf, model_.m);
  cand.v.topRows(Nf - 1) = prev.v.bottomRows(Nf - 1);
  cand.v.row(Nf - 1) =
      (u_ref0_ + u_ref_gain_ * prev.gbar_terminal).transpose();

  if (mode_ == Mode::kRampc) {
    cand.lambda = Mat::Zero(Nf, sel_new.count());
    for (int p = 0; p < sel_new.count(); ++p) {
      const int idx = sel_new.indices[p];
      for (int p0 = 0; p0 < sel_prev.count(); ++p0) {
        if (sel_prev.indices[p0] != idx) continue;
        cand.lambda.col(p).head(Nf - 1) = prev.lambda.col(p0).tail(Nf - 1);
        cand.lambda(Nf - 1, p) = prev.lambda(Nf - 1, p0);
        break;
      }
    }
  } else {
    cand.lambda = Mat::Ones(Nf, sel_new.count());
  }

  const Vec z0 = prev.z.row(horizon_.substeps).transpose();
  cand.z.resize(1, model_.n);
  cand.z.row(0) = z0.transpose();
  cand.delta0 = vdelta(metric_, x_next, z0);
  cand.delta.resize(1);
  cand.delta[0] = cand.delta0;
  cand.gbar_terminal = prev.gbar_terminal;
  return cand;
}

FeasReport OcpSolver::check_candidate(const Vec& x_t, const OcpSolution& cand,
                                      const GpCollection& coll,
                                      const Selection& sel, double tol) const {
  FeasReport rep;
  Vec z0 = cand.z0();
  const LiveRoll lr = roll(z0, cand.delta0, cand.v, cand.lambda, coll, sel,
                           horizon_.substeps, horizon_.N_f);

  rep.init_gap = vdelta(metric_, x_t, z0) - cand.delta0;
  rep.worst_path = -kInf;
  for (int j : cnodes_) {
    const int k = j / horizon_.substeps;
    const Vec zj = lr.z.row(j).transpose();
    const Vec vk = cand.v.row(k).transpose();
    for (std::size_t jc = 0; jc < model_.constraints.size(); ++jc) {
      const double hv = model_.constraints[jc].value(zj, vk) +
                        consts_.c[static_cast<Eigen::Index>(jc)] * lr.delta[j];
      if (hv > rep.worst_path) {
        rep.worst_path = hv;
        rep.worst_name = model_.constraints[jc].name;
      }
    }
  }
  const int N = horizon_.fine_steps();
  rep.terminal_eq =
      (lr.z.row(N).transpose() - term_.x_ref).cwiseAbs().maxCoeff();
  rep.terminal_tube = lr.delta[N] - term_.delta_f;
  rep.lambda_viol =
      mode_ == Mode::kRampc
          ? std::max(0.0, cand.lambda.cwiseAbs().maxCoeff() - st_.lambda_max)
          : 0.0;
  rep.ok = rep.init_gap <= tol && rep.worst_path <= tol &&
           rep.terminal_eq <= tol && rep.terminal_tube <= tol &&
           rep.lambda_viol <= tol && cand.delta0 >= -tol;
  return rep;
}

std::pair<double, Vec> OcpSolver::objective_with_gradient(
    const Vec& theta, const GpCollection& coll, const Selection& sel) {
  Vec z0;
  double d0;
  Mat v, lam;
  unpack_theta(theta, sel, z0, d0, v, lam);
  const LiveRoll lr =
      roll(z0, d0, v, lam, coll, sel, horizon_.substeps, horizon_.N_f);
  const Tables tab = freeze(lr.stage_states, coll, sel, lam);
  const Roll r = roll_frozen(theta, tab, sel, true);
  return {r.cost, r.grad};
}

double OcpSolver::objective_only(const Vec& theta, const Vec& theta_freeze,
                                 const GpCollection& coll, const Selection& sel) {
  Vec z0;
  double d0;
  Mat v, lam;
  unpack_theta(theta_freeze, sel, z0, d0, v, lam);
  const LiveRoll lr =
      roll(z0, d0, v, lam, coll, sel, horizon_.substeps, horizon_.N_f);
  const Tables tab = freeze(lr.stage_states, coll, sel, lam);
  const Roll r = roll_frozen(theta, tab, sel, false);
  return r.cost;
}

}  // namespace gpr
