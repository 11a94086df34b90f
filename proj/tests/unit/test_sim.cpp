#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "doctest.h"

#include "gpr/sim.hpp"

using namespace gpr;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GridSpec small_grid() {
  GridSpec g;
  g.x_points_per_dim = 21;
  g.u_points_per_dim = 5;
  g.lhs_samples = 100;
  g.seed = 77;
  return g;
}

ClosedLoopSetup toy_setup(Mode mode, int steps, int N_f) {
  ClosedLoopSetup s;
  s.model = make_toy1d(ToyParams{});
  s.metric = Metric::create(Mat::Identity(1, 1), Mat::Constant(1, 1, -1.0), 1.5);
  s.consts = compute_constants(s.metric, s.model, small_grid());

  s.offline.n_points = 15;
  s.offline.gen_seed = 2024;
  s.offline.per_seed = false;
  s.offline.sample_box.resize(1, 2);
  s.offline.sample_box << -2.0, 2.0;

  s.gp.kernel.sigma_f2 = 1.0;
  s.gp.kernel.lengthscales = Vec::Constant(1, 0.8);
  s.gp.sigma = 0.1;
  s.gp.bound = BoundInputs{2.0, 0.05, 0.1, -1.0};
  s.gp.n_mobs = 60;

  s.noise.kind = NoiseSpec::Kind::kTruncatedGaussian;
  s.noise.R = 0.05;
  s.dist.kind = DisturbanceSpec::Kind::kUniform;

  s.horizon.T_s = 0.15;
  s.horizon.N_f = N_f;
  s.horizon.substeps = 4;
  s.horizon.constraints_at_substeps = false;
  s.cost = StageCost{Mat::Identity(1, 1), Mat::Constant(1, 1, 0.1)};
  s.mode = mode;
  s.sqp.qp.max_iter = 2000;

  s.x0 = Vec::Constant(1, 1.5);
  s.steps = steps;
  s.plant_substeps = 20;
  s.n_b = 10;

  RandomStream rng(s.offline.gen_seed);
  const GpCollection coll =
      offline_collection(s.model, s.offline, s.gp, s.noise, rng);
  Selection sel;
  sel.indices = {0};
  sel.n_b = s.n_b;
  const Vec x_ref = s.model.x_ref_of(Vec::Zero(1));
  const BandEval bands = eval_bands(coll, sel, x_ref);
  s.term = terminal_radius(s.consts, s.model, 0.8, bands.lo.row(0).transpose(),
                           bands.up.row(0).transpose());
  return s;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("gpr_test_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("noise draw statistics") {
  const int n = 20000;

  NoiseSpec trunc{NoiseSpec::Kind::kTruncatedGaussian, 0.05};
  RandomStream rng1(11);
  double sum = 0.0, sq = 0.0, amax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = draw_noise(trunc, rng1);
    sum += e;
    sq += e * e;
    amax = std::max(amax, std::abs(e));
  }
  CHECK(amax <= 3.0 * trunc.R + 1e-12);
  CHECK(std::abs(sum / n) <= 4.0 * trunc.R / std::sqrt(double(n)));
  const double sd_t = std::sqrt(sq / n);
  CHECK(sd_t > 0.8 * trunc.R);
  CHECK(sd_t < 1.05 * trunc.R);

  NoiseSpec uni{NoiseSpec::Kind::kUniform, 0.05};
  RandomStream rng2(12);
  sum = sq = amax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = draw_noise(uni, rng2);
    sum += e;
    sq += e * e;
    amax = std::max(amax, std::abs(e));
  }
  const double half = uni.R * std::sqrt(3.0);
  CHECK(amax <= half + 1e-12);
  CHECK(amax > 0.95 * half);
  CHECK(std::abs(sum / n) <= 4.0 * uni.R / std::sqrt(double(n)));
  CHECK(sq / n == doctest::Approx(uni.R * uni.R).epsilon(0.05));
}

TEST_CASE("measurement clamps to the admissible box") {
  const SystemModel sys = make_toy1d(ToyParams{});
  NoiseSpec quiet{NoiseSpec::Kind::kTruncatedGaussian, 0.0};
  RandomStream rng(13);
  const Vec inside = measure(sys, Vec::Constant(1, 1.0), quiet, rng);
  CHECK(inside[0] == doctest::Approx(0.3 * std::sin(1.0)).epsilon(1e-14));
  const Vec outside = measure(sys, Vec::Constant(1, 3.5), quiet, rng);
  CHECK(outside[0] == doctest::Approx(0.3 * std::sin(2.0)).epsilon(1e-14));
}

TEST_CASE("offline recipe determinism") {
  const SystemModel sys = make_toy1d(ToyParams{});
  GpFitSpec gp;
  gp.kernel.sigma_f2 = 1.0;
  gp.kernel.lengthscales = Vec::Constant(1, 0.8);
  gp.sigma = 0.1;
  gp.bound = BoundInputs{2.0, 0.05, 0.1, -1.0};
  NoiseSpec noise{NoiseSpec::Kind::kTruncatedGaussian, 0.05};

  OfflineData off;
  off.n_points = 10;
  off.gen_seed = 555;
  off.per_seed = false;

  const Vec probe = Vec::Constant(1, 0.4);
  RandomStream rng_a(1), rng_b(2);
  const GpCollection a = offline_collection(sys, off, gp, noise, rng_a);
  const GpCollection b = offline_collection(sys, off, gp, noise, rng_b);
  REQUIRE(a.size() == 1);
  CHECK(a.model(0, 0).size() == 10);
  CHECK(a.model(0, 0).posterior(probe).first ==
        doctest::Approx(b.model(0, 0).posterior(probe).first).epsilon(1e-15));

  off.per_seed = true;
  RandomStream rng_c(1), rng_d(2);
  const GpCollection c = offline_collection(sys, off, gp, noise, rng_c);
  const GpCollection d = offline_collection(sys, off, gp, noise, rng_d);
  CHECK(c.model(0, 0).posterior(probe).first !=
        d.model(0, 0).posterior(probe).first);

  OfflineData fixed;
  DataSet ds;
  ds.append(Vec::Constant(1, 0.5), 0.2);
  ds.append(Vec::Constant(1, -0.5), -0.2);
  fixed.fixed = {ds};
  RandomStream rng_e(3);
  const GpCollection e = offline_collection(sys, fixed, gp, noise, rng_e);
  CHECK(e.model(0, 0).size() == 2);
  CHECK(e.model(0, 0).data().is_prefix_of(ds));
}

TEST_CASE("quiet closed loop stays contained and feasible") {
  ClosedLoopSetup s = toy_setup(Mode::kRmpc, 6, 20);
  s.noise.R = 0.0;
  s.dist.kind = DisturbanceSpec::Kind::kZero;
  const RunResult res = run_closed_loop(s, 0, "");
  CHECK(!res.aborted);
  CHECK(res.steps_done == 6);
  CHECK(res.containment_ok);
  CHECK(res.all_feasible);
  CHECK(res.candidates_ok);
  CHECK(!res.constraint_violated);
  CHECK(res.worst_cost_decrease <= 1e-4);
  CHECK(res.reached_terminal);
  REQUIRE(res.step_records.size() == 6);
  // the plan either walks toward the reference or starts on top of it
  CHECK(res.step_records.back().z0_ref_dist <
        std::max(res.step_records.front().z0_ref_dist, 1e-6) + 1e-9);
  CHECK(res.closed_loop_cost > 0.0);
}

TEST_CASE("identical seeds produce byte-identical artifacts") {
  const ClosedLoopSetup s = toy_setup(Mode::kRampc, 3, 15);
  TempDir a("det_a"), b("det_b");
  const RunResult ra = run_closed_loop(s, 7, a.path.string());
  const RunResult rb = run_closed_loop(s, 7, b.path.string());
  CHECK(ra.closed_loop_cost == rb.closed_loop_cost);
  CHECK(ra.time_to_terminal == rb.time_to_terminal);
  for (const char* name :
       {"trajectory.csv", "predictions.csv", "events.jsonl", "summary.json"}) {
    CAPTURE(name);
    CHECK(slurp(a.path / name) == slurp(b.path / name));
  }
}

TEST_CASE("different seeds diverge") {
  const ClosedLoopSetup s = toy_setup(Mode::kRampc, 3, 15);
  const RunResult ra = run_closed_loop(s, 1, "");
  const RunResult rb = run_closed_loop(s, 2, "");
  CHECK(ra.closed_loop_cost != rb.closed_loop_cost);
}

TEST_CASE("monte carlo matches single runs and is job-count invariant") {
  const ClosedLoopSetup s = toy_setup(Mode::kRampc, 3, 15);
  const std::vector<std::uint64_t> seeds = {1, 2};
  const MonteCarloResult par = monte_carlo(s, seeds, 2, "");
  const MonteCarloResult ser = monte_carlo(s, seeds, 1, "");
  REQUIRE(par.runs.size() == 2);
  REQUIRE(ser.runs.size() == 2);
  CHECK(par.n_runs == 2);

  for (int i = 0; i < 2; ++i) {
    const RunResult solo = run_closed_loop(s, seeds[i], "");
    CHECK(par.runs[i].seed == seeds[i]);
    CHECK(par.runs[i].closed_loop_cost == solo.closed_loop_cost);
    CHECK(ser.runs[i].closed_loop_cost == solo.closed_loop_cost);
    CHECK(run_summary_json(par.runs[i]) == run_summary_json(solo));
  }

  int contained = 0, violated = 0;
  double csum = 0.0;
  for (const RunResult& r : par.runs) {
    if (r.aborted) {
      ++violated;
      continue;
    }
    if (r.containment_ok) ++contained;
    if (r.constraint_violated) ++violated;
    csum += r.closed_loop_cost;
  }
  CHECK(par.containment_freq == doctest::Approx(contained / 2.0).epsilon(1e-15));
  CHECK(par.violation_freq == doctest::Approx(violated / 2.0).epsilon(1e-15));
  if (par.n_aborted == 0)
    CHECK(par.mean_cost == doctest::Approx(csum / 2.0).epsilon(1e-15));
}
