#include "gpr/sim.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <thread>
#include <utility>

#include "json.hpp"

namespace gpr {

namespace {

using njson = nlohmann::ordered_json;

constexpr double kInf = std::numeric_limits<double>::infinity();

double sanitize(double v, double fallback = 0.0) {
  return std::isfinite(v) ? v : fallback;
}

Vec clamp_to_box(const BoxSet& box, const Vec& v) {
  return v.cwiseMax(box.lo).cwiseMin(box.hi);
}

Vec draw_disturbance(const DisturbanceSpec& spec, const BoxSet& box,
                     RandomStream& rng) {
  Vec d(box.dim());
  switch (spec.kind) {
    case DisturbanceSpec::Kind::kZero:
      d.setZero();
      break;
    case DisturbanceSpec::Kind::kUniform:
      for (int i = 0; i < d.size(); ++i) d[i] = rng.uniform(box.lo[i], box.hi[i]);
      break;
    case DisturbanceSpec::Kind::kVertex:
      for (int i = 0; i < d.size(); ++i)
        d[i] = rng.unit() < 0.5 ? box.lo[i] : box.hi[i];
      break;
  }
  return d;
}

Vec plant_step(const SystemModel& model, const Vec& x, const Vec& u,
               const Vec& d, double dt) {
  auto F = [&](const Vec& s) { return model.dynamics(s, u, model.g_true(s), d); };
  const Vec k1 = F(x);
  const Vec k2 = F(x + 0.5 * dt * k1);
  const Vec k3 = F(x + 0.5 * dt * k2);
  const Vec k4 = F(x + dt * k3);
  return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

const char* status_name(OcpStatus s) {
  switch (s) {
    case OcpStatus::kFeasible:
      return "feasible";
    case OcpStatus::kDegraded:
      return "degraded";
    case OcpStatus::kFailed:
      return "failed";
  }
  return "unknown";
}

njson vec_to_json(const Vec& v) {
  njson a = njson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

/// Per-run log files; all floating-point output goes through format_double
/// (CSV) or the JSON writer so identical runs produce identical bytes.
class RunWriter {
 public:
  RunWriter(const std::string& dir, const SystemModel& model) {
    std::filesystem::create_directories(dir);
    dir_ = dir;
    traj_.open(dir + "/trajectory.csv");
    pred_.open(dir + "/predictions.csv");
    events_.open(dir + "/events.jsonl");
    GPR_REQUIRE(traj_.is_open() && pred_.is_open() && events_.is_open(),
                "cannot open run log files");
    traj_ << "t";
    for (int i = 0; i < model.n; ++i) traj_ << ",x" << i;
    for (int i = 0; i < model.m; ++i) traj_ << ",u" << i;
    traj_ << ",vdelta,delta,worst_h\n";
    pred_ << "step,tau";
    for (int i = 0; i < model.n; ++i) pred_ << ",z" << i;
    for (int i = 0; i < model.m; ++i) pred_ << ",v" << i;
    pred_ << ",delta";
    for (int i = 0; i < model.l; ++i) pred_ << ",w" << i;
    pred_ << "\n";
  }

  void trajectory_row(double t, const Vec& x, const Vec& u, double vd,
                      double delta, double worst_h) {
    traj_ << format_double(t);
    for (int i = 0; i < x.size(); ++i) traj_ << "," << format_double(x[i]);
    for (int i = 0; i < u.size(); ++i) traj_ << "," << format_double(u[i]);
    traj_ << "," << format_double(vd) << "," << format_double(delta) << ","
          << format_double(worst_h) << "\n";
  }

  void predictions(int step, const OcpSolution& sol, const HorizonSpec& hs) {
    for (int j = 0; j <= hs.fine_steps(); ++j) {
      const int k = std::min(j / hs.substeps, hs.N_f - 1);
      pred_ << step << "," << format_double(j * hs.dt());
      for (int i = 0; i < sol.z.cols(); ++i)
        pred_ << "," << format_double(sol.z(j, i));
      for (int i = 0; i < sol.v.cols(); ++i)
        pred_ << "," << format_double(sol.v(k, i));
      pred_ << "," << format_double(sol.delta[j]);
      for (int i = 0; i < sol.w.cols(); ++i)
        pred_ << "," << format_double(sol.w(j, i));
      pred_ << "\n";
    }
  }

  void event(const njson& j) { events_ << j.dump() << "\n"; }

  void finish(const std::string& summary) {
    std::ofstream out(dir_ + "/summary.json");
    GPR_REQUIRE(out.is_open(), "cannot open summary file");
    out << summary;
  }

 private:
  std::string dir_;
  std::ofstream traj_, pred_, events_;
};

njson step_record_json(const StepRecord& r) {
  njson j;
  j["t"] = r.t;
  j["status"] = status_name(r.status);
  j["objective"] = r.objective;
  j["sqp_iters"] = r.sqp_iters;
  j["kkt_res"] = r.kkt_res;
  j["max_viol"] = r.max_viol;
  j["delta0"] = r.delta0;
  j["z0_ref_dist"] = r.z0_ref_dist;
  j["candidate_checked"] = r.candidate_checked;
  j["candidate_ok"] = r.candidate_ok;
  j["containment_gap"] = r.containment_gap;
  j["worst_constraint"] = r.worst_constraint;
  j["selection_count"] = r.selection_count;
  j["gp_updated"] = r.gp_updated;
  return j;
}

}  // namespace

double draw_noise(const NoiseSpec& spec, RandomStream& rng) {
  if (spec.R <= 0.0) return 0.0;
  switch (spec.kind) {
    case NoiseSpec::Kind::kTruncatedGaussian:
      return spec.R * rng.truncated_gaussian(3.0);
    case NoiseSpec::Kind::kUniform: {
      const double a = spec.R * std::sqrt(3.0);
      return rng.uniform(-a, a);
    }
  }
  return 0.0;
}

Vec measure(const SystemModel& model, const Vec& x, const NoiseSpec& spec,
            RandomStream& rng) {
  Vec xq = x;
  if (!model.x_box.contains(xq)) {
    log_msg(LogLevel::kWarn, "measurement state outside the state box; clamped");
    xq = clamp_to_box(model.x_box, xq);
  }
  Vec y = model.g_true(xq);
  for (int d = 0; d < y.size(); ++d) y[d] += draw_noise(spec, rng);
  return y;
}

GpCollection offline_collection(const SystemModel& model,
                                const OfflineData& offline, const GpFitSpec& gp,
                                const NoiseSpec& noise, RandomStream& rng) {
  const int l = model.l;
  std::vector<DataSet> data;
  if (!offline.fixed.empty()) {
    GPR_REQUIRE(static_cast<int>(offline.fixed.size()) == l,
                "offline data set count must match the output dimension");
    data = offline.fixed;
  } else {
    data.resize(l);
    Vec lo = model.x_box.lo, hi = model.x_box.hi;
    if (offline.sample_box.size() > 0) {
      GPR_REQUIRE(offline.sample_box.rows() == model.n &&
                      offline.sample_box.cols() == 2,
                  "sample box must be n x 2");
      lo = offline.sample_box.col(0);
      hi = offline.sample_box.col(1);
    }
    RandomStream gen =
        offline.per_seed ? rng.spawn(0) : RandomStream(offline.gen_seed);
    for (int i = 0; i < offline.n_points; ++i) {
      Vec x(model.n);
      for (int j = 0; j < x.size(); ++j) x[j] = gen.uniform(lo[j], hi[j]);
      const Vec g = model.g_true(x);
      for (int d = 0; d < l; ++d)
        data[d].append(x, g[d] + draw_noise(noise, gen));
    }
  }
  std::vector<GpModel> per_dim;
  per_dim.reserve(l);
  for (int d = 0; d < l; ++d)
    per_dim.push_back(GpModel::fit(data[d], gp.kernel, gp.sigma, gp.bound));
  GpCollection coll(l);
  coll.add(std::move(per_dim));
  return coll;
}

RunResult run_closed_loop(const ClosedLoopSetup& setup, std::uint64_t seed,
                          const std::string& out_dir) {
  const SystemModel& model = setup.model;
  GPR_REQUIRE(setup.steps >= 1 && setup.plant_substeps >= 1,
              "bad closed-loop settings");
  GPR_REQUIRE(setup.x0.size() == model.n, "x0 dimension mismatch");

  RandomStream root(seed);
  RandomStream rng_gen = root.spawn(0);
  RandomStream rng_dist = root.spawn(1);
  RandomStream rng_noise = root.spawn(2);

  RunResult res;
  res.seed = seed;

  GpCollection coll = offline_collection(setup.model, setup.offline, setup.gp,
                                         setup.noise, rng_gen);
  Selection sel;
  sel.indices = {0};
  sel.n_b = setup.n_b;

  OcpSolver solver(model, setup.metric, setup.consts, setup.term, setup.horizon,
                   setup.cost, setup.mode, setup.sqp);

  std::unique_ptr<RunWriter> wr;
  if (!out_dir.empty()) wr = std::make_unique<RunWriter>(out_dir, model);

  const double T_s = setup.horizon.T_s;
  const int S = setup.plant_substeps;
  const double dtp = T_s / S;
  const Vec x_ref = setup.term.x_ref;
  const Vec u_ref_true = model.u_ref_of(model.g_true(x_ref));

  Vec x = setup.x0;
  OcpSolution prev;
  Selection sel_prev;
  bool have_prev = false;
  double prev_objective = 0.0, prev_first_cost = 0.0;
  double worst_gap = -kInf, worst_h_run = -kInf, worst_decrease = -kInf;

  for (int k = 0; k < setup.steps; ++k) {
    StepRecord rec;
    rec.t = k * T_s;
    rec.x = x;
    rec.selection_count = sel.count();
    res.selection_max = std::max(res.selection_max, sel.count());

    if (!res.reached_terminal &&
        vdelta(setup.metric, x, x_ref) <= setup.term.delta_f) {
      res.reached_terminal = true;
      res.time_to_terminal = rec.t;
    }

    OcpSolution cand;
    const OcpSolution* warm = nullptr;
    if (have_prev) {
      cand = solver.shift_candidate(prev, sel_prev, sel, x, coll);
      const FeasReport fr = solver.check_candidate(x, cand, coll, sel);
      rec.candidate_checked = true;
      rec.candidate_ok = fr.ok;
      rec.candidate_worst = std::max({fr.worst_path, fr.init_gap,
                                      fr.terminal_eq, fr.terminal_tube,
                                      fr.lambda_viol});
      if (!fr.ok) res.candidates_ok = false;
      if (wr)
        wr->event(njson{{"step", k},
                        {"kind", "candidate"},
                        {"ok", fr.ok},
                        {"worst_path", fr.worst_path},
                        {"worst_name", fr.worst_name},
                        {"init_gap", fr.init_gap},
                        {"terminal_eq", fr.terminal_eq},
                        {"terminal_tube", fr.terminal_tube},
                        {"lambda_viol", fr.lambda_viol}});
      warm = &cand;
    }

    OcpSolution sol;
    try {
      sol = solver.solve(x, coll, sel, warm);
    } catch (const std::exception& e) {
      res.aborted = true;
      res.abort_reason = std::string("solver: ") + e.what();
      if (wr)
        wr->event(njson{{"step", k}, {"kind", "abort"}, {"reason", res.abort_reason}});
      res.step_records.push_back(rec);
      break;
    }
    rec.status = sol.status;
    rec.sqp_iters = sol.sqp_iters;
    rec.kkt_res = sol.kkt_res;
    rec.step_norm = sol.step_norm;
    rec.max_viol = sol.max_viol;
    rec.objective = sol.objective;
    rec.delta0 = sol.delta0;
    rec.z0_ref_dist = (sol.z0() - x_ref).norm();
    if (sol.status != OcpStatus::kFeasible) res.all_feasible = false;

    {
      LiveRoll plan_view;
      plan_view.z = sol.z;
      rec.first_interval_cost = solver.rollout_cost(
          plan_view, sol.v, sol.lambda, coll, sel, setup.horizon.substeps, 1);
    }
    if (have_prev) {
      worst_decrease = std::max(
          worst_decrease, rec.objective - (prev_objective - prev_first_cost));
    }
    prev_objective = rec.objective;
    prev_first_cost = rec.first_interval_cost;

    if (wr) {
      wr->event(njson{{"step", k},
                      {"kind", "solve"},
                      {"status", status_name(sol.status)},
                      {"iters", sol.sqp_iters},
                      {"kkt_res", sol.kkt_res},
                      {"step_norm", sol.step_norm},
                      {"max_viol", sol.max_viol},
                      {"objective", sol.objective},
                      {"delta0", sol.delta0}});
      if (setup.log_predictions) wr->predictions(k, sol, setup.horizon);
    }

    // apply the tube feedback over [t_k, t_k + T_s) at the plant rate
    const LiveRoll plan = solver.roll(sol.z0(), sol.delta0, sol.v, sol.lambda,
                                      coll, sel, S, 1);
    const Vec v0 = sol.v.row(0).transpose();
    double gap_step = -kInf, worst_h_step = -kInf;
    bool diverged = false;
    for (int s = 0; s < S; ++s) {
      const Vec zs = plan.z.row(s).transpose();
      const double vd = vdelta(setup.metric, x, zs);
      gap_step = std::max(gap_step, vd - plan.delta[s]);
      const Vec u = feedback(setup.metric, x, zs, v0);
      if (s == 0) rec.u0 = u;
      worst_h_step = std::max(worst_h_step, model.max_constraint(x, u));
      const Vec dz = x - x_ref;
      const Vec du = u - u_ref_true;
      res.closed_loop_cost +=
          dtp * (dz.dot(setup.cost.Q * dz) + du.dot(setup.cost.R * du));
      if (wr) wr->trajectory_row(rec.t + s * dtp, x, u, vd, plan.delta[s],
                                 model.max_constraint(x, u));
      const Vec d = draw_disturbance(setup.dist, model.d_box, rng_dist);
      x = plant_step(model, x, u, d, dtp);
      if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e6) {
        diverged = true;
        break;
      }
    }
    if (!diverged)
      gap_step = std::max(gap_step, vdelta(setup.metric, x,
                                           plan.z.row(S).transpose()) -
                                        plan.delta[S]);
    rec.containment_gap = sanitize(gap_step);
    rec.worst_constraint = sanitize(worst_h_step);
    worst_gap = std::max(worst_gap, gap_step);
    worst_h_run = std::max(worst_h_run, worst_h_step);
    if (wr)
      wr->event(njson{{"step", k},
                      {"kind", "containment"},
                      {"gap", rec.containment_gap},
                      {"worst_constraint", rec.worst_constraint}});
    if (diverged) {
      res.aborted = true;
      res.abort_reason = "plant diverged";
      if (wr)
        wr->event(njson{{"step", k}, {"kind", "abort"}, {"reason", res.abort_reason}});
      res.step_records.push_back(rec);
      res.steps_done = k + 1;
      break;
    }

    if (setup.mode == Mode::kRampc) {
      const Vec xm = clamp_to_box(model.x_box, x);
      const Vec y = measure(model, x, setup.noise, rng_noise);
      if (wr)
        wr->event(njson{{"step", k},
                        {"kind", "measurement"},
                        {"x", vec_to_json(xm)},
                        {"y", vec_to_json(y)}});
      const bool frozen = coll.newest_size() >= setup.gp.n_mobs;
      if (!frozen) {
        std::vector<GpModel> next_models;
        next_models.reserve(model.l);
        for (int d = 0; d < model.l; ++d)
          next_models.push_back(coll.model(coll.size() - 1, d).append(xm, y[d]));
        const int new_index = coll.add(std::move(next_models));
        if (wr)
          wr->event(njson{{"step", k},
                          {"kind", "gp"},
                          {"new_index", new_index},
                          {"data_size", coll.newest_size()},
                          {"frozen", false}});
        const SelectionUpdate upd =
            select_update(sel, sol.lambda, sol.used_flags, new_index);
        if (wr) {
          njson idx = njson::array();
          for (int i : upd.selection.indices) idx.push_back(i);
          njson drop = njson::array();
          for (int i : upd.dropped) drop.push_back(i);
          wr->event(njson{{"step", k},
                          {"kind", "selection"},
                          {"indices", idx},
                          {"dropped", drop},
                          {"inserted", upd.inserted},
                          {"new_index", new_index},
                          {"n_b", sel.n_b}});
        }
        sel_prev = sel;
        sel = upd.selection;
        rec.gp_updated = true;
      } else {
        if (wr)
          wr->event(njson{{"step", k},
                          {"kind", "gp"},
                          {"new_index", -1},
                          {"data_size", coll.newest_size()},
                          {"frozen", true}});
        sel_prev = sel;
      }
    } else {
      sel_prev = sel;
    }

    prev = sol;
    have_prev = true;
    res.step_records.push_back(rec);
    res.steps_done = k + 1;
  }

  if (!res.aborted && !res.reached_terminal &&
      vdelta(setup.metric, x, x_ref) <= setup.term.delta_f) {
    res.reached_terminal = true;
    res.time_to_terminal = setup.steps * T_s;
  }

  res.worst_containment_gap = sanitize(worst_gap);
  res.worst_constraint = sanitize(worst_h_run);
  res.worst_cost_decrease = sanitize(worst_decrease);
  res.containment_ok =
      !res.aborted && res.worst_containment_gap <= setup.containment_tol;
  res.constraint_violated = res.worst_constraint > 1e-8;
  if (res.aborted) {
    res.all_feasible = false;
    res.candidates_ok = false;
  }

  if (wr) wr->finish(run_summary_json(res));
  return res;
}

std::string run_summary_json(const RunResult& r) {
  njson j;
  j["schema_version"] = 1;
  j["seed"] = r.seed;
  j["aborted"] = r.aborted;
  j["abort_reason"] = r.abort_reason;
  j["steps_done"] = r.steps_done;
  j["closed_loop_cost"] = r.closed_loop_cost;
  j["time_to_terminal"] = r.time_to_terminal;
  j["reached_terminal"] = r.reached_terminal;
  j["containment_ok"] = r.containment_ok;
  j["worst_containment_gap"] = r.worst_containment_gap;
  j["worst_constraint"] = r.worst_constraint;
  j["constraint_violated"] = r.constraint_violated;
  j["all_feasible"] = r.all_feasible;
  j["candidates_ok"] = r.candidates_ok;
  j["worst_cost_decrease"] = r.worst_cost_decrease;
  j["selection_max"] = r.selection_max;
  njson steps = njson::array();
  for (const StepRecord& rec : r.step_records) steps.push_back(step_record_json(rec));
  j["steps"] = steps;
  return j.dump(2) + "\n";
}

MonteCarloResult monte_carlo(const ClosedLoopSetup& setup,
                             const std::vector<std::uint64_t>& seeds, int jobs,
                             const std::string& out_root) {
  GPR_REQUIRE(!seeds.empty(), "at least one seed required");
  const int n = static_cast<int>(seeds.size());
  int workers = jobs > 0 ? jobs : static_cast<int>(std::thread::hardware_concurrency());
  workers = std::clamp(workers, 1, n);

  std::vector<RunResult> runs(n);
  std::atomic<int> next{0};
  auto work = [&]() {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      std::string dir;
      if (!out_root.empty())
        dir = out_root + "/seed_" + std::to_string(seeds[i]);
      try {
        runs[i] = run_closed_loop(setup, seeds[i], dir);
      } catch (const std::exception& e) {
        runs[i] = RunResult{};
        runs[i].seed = seeds[i];
        runs[i].aborted = true;
        runs[i].abort_reason = e.what();
        runs[i].containment_ok = false;
        runs[i].all_feasible = false;
        runs[i].candidates_ok = false;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(work);
  for (std::thread& t : pool) t.join();

  MonteCarloResult mc;
  mc.n_runs = n;
  int contained = 0, violated = 0, feas = 0, cands = 0, reached = 0, counted = 0;
  double tsum = 0.0, csum = 0.0, cmin = kInf, cmax = -kInf;
  for (const RunResult& r : runs) {
    if (r.aborted) {
      ++mc.n_aborted;
      ++violated;
      continue;
    }
    if (r.containment_ok) ++contained;
    if (r.constraint_violated) ++violated;
    if (r.all_feasible) ++feas;
    if (r.candidates_ok) ++cands;
    if (r.reached_terminal) {
      ++reached;
      tsum += r.time_to_terminal;
    }
    csum += r.closed_loop_cost;
    cmin = std::min(cmin, r.closed_loop_cost);
    cmax = std::max(cmax, r.closed_loop_cost);
    ++counted;
  }
  mc.containment_freq = static_cast<double>(contained) / n;
  mc.violation_freq = static_cast<double>(violated) / n;
  mc.mean_cost = counted > 0 ? csum / counted : 0.0;
  mc.min_cost = sanitize(cmin);
  mc.max_cost = sanitize(cmax);
  mc.reached_terminal = reached;
  mc.mean_time_to_terminal = reached > 0 ? tsum / reached : -1.0;
  mc.all_feasible_runs = feas;
  mc.candidates_ok_runs = cands;
  mc.runs = std::move(runs);
  return mc;
}

std::string monte_carlo_summary_json(const MonteCarloResult& r) {
  njson j;
  j["schema_version"] = 1;
  j["n_runs"] = r.n_runs;
  j["n_aborted"] = r.n_aborted;
  j["containment_freq"] = r.containment_freq;
  j["violation_freq"] = r.violation_freq;
  j["mean_cost"] = r.mean_cost;
  j["min_cost"] = r.min_cost;
  j["max_cost"] = r.max_cost;
  j["reached_terminal"] = r.reached_terminal;
  j["mean_time_to_terminal"] = r.mean_time_to_terminal;
  j["all_feasible_runs"] = r.all_feasible_runs;
  j["candidates_ok_runs"] = r.candidates_ok_runs;
  njson runs = njson::array();
  for (const RunResult& rr : r.runs) {
    runs.push_back(njson{{"seed", rr.seed},
                         {"aborted", rr.aborted},
                         {"steps_done", rr.steps_done},
                         {"closed_loop_cost", rr.closed_loop_cost},
                         {"time_to_terminal", rr.time_to_terminal},
                         {"reached_terminal", rr.reached_terminal},
                         {"containment_ok", rr.containment_ok},
                         {"worst_containment_gap", rr.worst_containment_gap},
                         {"constraint_violated", rr.constraint_violated},
                         {"all_feasible", rr.all_feasible},
                         {"candidates_ok", rr.candidates_ok},
                         {"selection_max", rr.selection_max}});
  }
  j["runs"] = runs;
  return j.dump(2) + "\n";
}

}  // namespace gpr
