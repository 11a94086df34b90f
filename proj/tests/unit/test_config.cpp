#include <filesystem>
#include <fstream>
#include <string>

#include "doctest.h"

#include "gpr/config.hpp"

using namespace gpr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("gpr_cfg_" + tag)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }

  std::string write(const std::string& name, const std::string& text) const {
    const fs::path p = path / name;
    std::ofstream out(p);
    out << text;
    return p.string();
  }
};

std::string toy_config_path() {
  return std::string(GPR_SOURCE_DIR) + "/configs/toy.json";
}

// minimal valid scalar config used as a template for the error cases
std::string toy_text(const std::string& run_x0 = "[1.5]") {
  return std::string(R"({
  "schema_version": 1,
  "system": { "name": "toy1d" },
  "metric": { "M": [1.0], "K": [-1.0], "rho": 1.5 },
  "offline": { "w_max": 0.8,
    "data": { "generate": { "n_points": 5, "seed": 1, "per_seed": false } } },
  "gp": { "kernel": { "sigma_f2": 1.0, "lengthscales": [0.8] } },
  "cost": { "Q": [1.0], "R": [0.1] },
  "run": { "mode": "rmpc", "steps": 5, "seed": 0, "plant_substeps": 10,
           "n_b": 5, "x0": )") +
         run_x0 + " }\n}\n";
}

}  // namespace

TEST_CASE("shipped scalar config loads with every field") {
  const ExperimentConfig cfg = load_config(toy_config_path());
  CHECK(cfg.system_name == "toy1d");
  CHECK(cfg.toy.a == 0.3);
  CHECK(cfg.M(0, 0) == 1.0);
  CHECK(cfg.K(0, 0) == -1.0);
  CHECK(cfg.rho == 1.5);
  CHECK(cfg.grid.x_points_per_dim == 41);
  CHECK(cfg.grid.u_points_per_dim == 9);
  CHECK(cfg.grid.lhs_samples == 2000);
  CHECK(cfg.grid.seed == 12345);
  CHECK(cfg.grid.safety_factor == 1.05);
  CHECK(cfg.w_max == 0.8);
  CHECK(cfg.offline.fixed.empty());
  CHECK(cfg.offline.n_points == 15);
  CHECK(cfg.offline.gen_seed == 2024);
  CHECK(!cfg.offline.per_seed);
  CHECK(cfg.offline.sample_box(0, 0) == -2.0);
  CHECK(cfg.offline.sample_box(0, 1) == 2.0);
  CHECK(cfg.gp.kernel.sigma_f2 == 1.0);
  CHECK(cfg.gp.kernel.lengthscales[0] == 0.8);
  CHECK(cfg.gp.sigma == 0.1);
  CHECK(cfg.gp.bound.B_g == 2.0);
  CHECK(cfg.gp.bound.R == 0.05);
  CHECK(cfg.gp.bound.p == 0.1);
  CHECK(cfg.gp.bound.fixed_beta == -1.0);
  CHECK(cfg.gp.n_mobs == 60);
  CHECK(cfg.horizon.T_s == 0.15);
  CHECK(cfg.horizon.N_f == 50);
  CHECK(cfg.horizon.substeps == 4);
  CHECK(!cfg.horizon.constraints_at_substeps);
  CHECK(!cfg.desk_scale);
  CHECK(cfg.cost.Q(0, 0) == 1.0);
  CHECK(cfg.cost.R(0, 0) == 0.1);
  CHECK(cfg.sqp.max_iter == 30);
  CHECK(cfg.sqp.tol == 1e-6);
  CHECK(cfg.sqp.qp.max_iter == 2000);
  CHECK(cfg.mode == Mode::kRampc);
  CHECK(cfg.steps == 35);
  CHECK(cfg.seed == 0);
  CHECK(cfg.plant_substeps == 40);
  CHECK(cfg.n_b == 10);
  CHECK(cfg.x0[0] == 1.5);
  CHECK(cfg.noise.kind == NoiseSpec::Kind::kTruncatedGaussian);
  CHECK(cfg.noise.R == 0.05);
  CHECK(cfg.dist.kind == DisturbanceSpec::Kind::kUniform);
  CHECK(cfg.log_predictions);
  CHECK(cfg.mc_seeds == 20);
  CHECK(cfg.mc_seed0 == 1);
  CHECK(cfg.mc_jobs == 0);
  CHECK(cfg.mc_containment_min == 0.85);
  CHECK(cfg.mc_violation_max == 0.05);
}

TEST_CASE("unknown keys are rejected by name") {
  TempDir tmp("unknown");
  std::string text = toy_text();
  text.insert(text.find("\"system\""), "\"bogus_key\": 1,\n  ");
  const std::string path = tmp.write("c.json", text);
  try {
    load_config(path);
    FAIL("expected config_error");
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }
}

TEST_CASE("schema version is enforced") {
  TempDir tmp("schema");
  std::string text = toy_text();
  const auto pos = text.find("\"schema_version\": 1");
  text.replace(pos, 19, "\"schema_version\": 2");
  CHECK_THROWS_AS(load_config(tmp.write("c.json", text)), config_error);
}

TEST_CASE("missing or malformed files are reported") {
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.json"), config_error);
  TempDir tmp("parse");
  CHECK_THROWS_AS(load_config(tmp.write("c.json", "{ not json")), config_error);
}

TEST_CASE("x0 length is checked") {
  TempDir tmp("x0");
  CHECK_THROWS_AS(load_config(tmp.write("c.json", toy_text("[1.0, 2.0]"))),
                  config_error);
}

TEST_CASE("offline data requires exactly one source") {
  TempDir tmp("data");
  std::string both = toy_text();
  both.insert(both.find("\"generate\""),
              "\"csv\": [\"train0.csv\"],\n              ");
  CHECK_THROWS_AS(load_config(tmp.write("both.json", both)), config_error);

  std::string neither = toy_text();
  const auto pos = neither.find("\"data\"");
  const auto end = neither.find("} },", pos);
  neither.replace(pos, end + 2 - pos, "\"data\": {}");
  CHECK_THROWS_AS(load_config(tmp.write("neither.json", neither)), config_error);
}

TEST_CASE("csv training data resolves against the config directory") {
  TempDir tmp("csv");
  DataSet d;
  d.append(Vec::Constant(1, 0.5), 0.11);
  d.append(Vec::Constant(1, -0.7), -0.21);
  d.append(Vec::Constant(1, 1.2), 0.27);
  d.save_csv((tmp.path / "train0.csv").string());

  std::string text = toy_text();
  const auto pos = text.find("\"data\"");
  const auto end = text.find("} },", pos);
  text.replace(pos, end + 2 - pos, "\"data\": { \"csv\": [\"train0.csv\"] }");
  const ExperimentConfig cfg = load_config(tmp.write("c.json", text));
  REQUIRE(cfg.offline.fixed.size() == 1);
  CHECK(cfg.offline.fixed[0].size() == 3);
  CHECK((cfg.offline.fixed[0].X - d.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((cfg.offline.fixed[0].y - d.y).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("diagonal shorthand fills square matrices") {
  TempDir tmp("diag");
  const std::string text = R"({
  "schema_version": 1,
  "system": { "name": "quadrotor" },
  "metric": { "M": [1.0, 1.0, 2.0, 3.0, 3.0, 4.0],
              "K": [0,0,0,0,0,0, 0,0,0,0,0,0],
              "rho": 0.5 },
  "offline": { "w_max": 0.1,
    "data": { "generate": { "n_points": 5, "seed": 1, "per_seed": false } } },
  "gp": { "kernel": { "sigma_f2": 1.0,
                      "lengthscales": [1, 1, 1, 1, 1, 1] } },
  "cost": { "Q": [1, 1, 1, 2, 2, 2], "R": [0.1, 0.2] },
  "run": { "mode": "rmpc", "steps": 5, "seed": 0, "plant_substeps": 10,
           "n_b": 5, "x0": [0, 1, 0, 0, 0, 0] }
})";
  const ExperimentConfig cfg = load_config(tmp.write("c.json", text));
  CHECK(cfg.M.rows() == 6);
  CHECK(cfg.M(2, 2) == 2.0);
  CHECK(cfg.M(5, 5) == 4.0);
  CHECK(cfg.M(0, 1) == 0.0);
  CHECK(cfg.cost.Q(3, 3) == 2.0);
  CHECK(cfg.cost.Q(0, 3) == 0.0);
  CHECK(cfg.cost.R(1, 1) == 0.2);
  CHECK(cfg.cost.R(0, 1) == 0.0);
  CHECK(cfg.K.rows() == 2);
  CHECK(cfg.K.cols() == 6);
  CHECK(cfg.system_name == "quadrotor");
}

TEST_CASE("offline bundle survives a save and load") {
  const ExperimentConfig cfg = load_config(toy_config_path());
  const SystemModel model = make_system(cfg);
  const OfflineBundle b = run_offline(cfg, model);
  REQUIRE(b.report.passed);
  REQUIRE(b.has_constants);
  REQUIRE(b.has_terminal);
  CHECK(b.consts.rho_eff == doctest::Approx(1.2).epsilon(1e-12));
  CHECK(b.term.delta_f == doctest::Approx(2.0 / 1.05).epsilon(1e-12));

  TempDir tmp("bundle");
  const std::string path = (tmp.path / "bundle.json").string();
  save_bundle(b, path);
  const OfflineBundle r = load_bundle(path);
  CHECK((r.metric.M - b.metric.M).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.metric.K - b.metric.K).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.metric.rho == b.metric.rho);
  CHECK(r.report.passed == b.report.passed);
  CHECK(r.report.max_eig == b.report.max_eig);
  CHECK(r.consts.rho_eff == b.consts.rho_eff);
  CHECK(r.consts.L_G == b.consts.L_G);
  CHECK(r.consts.E_M == b.consts.E_M);
  CHECK((r.consts.c - b.consts.c).cwiseAbs().maxCoeff() == 0.0);
  CHECK(r.term.delta_f == b.term.delta_f);
  CHECK(r.term.w_max == b.term.w_max);
  CHECK((r.gbar_lo - b.gbar_lo).cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.gbar_hi - b.gbar_hi).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("setup assembly copies config and bundle fields") {
  const ExperimentConfig cfg = load_config(toy_config_path());
  const SystemModel model = make_system(cfg);
  const OfflineBundle b = run_offline(cfg, model);
  REQUIRE(b.has_terminal);
  const ClosedLoopSetup s = make_setup(cfg, model, b);
  CHECK(s.mode == Mode::kRampc);
  CHECK(s.steps == 35);
  CHECK(s.plant_substeps == 40);
  CHECK(s.n_b == 10);
  CHECK(s.x0[0] == 1.5);
  CHECK(s.noise.R == 0.05);
  CHECK(s.horizon.N_f == 50);
  CHECK(s.gp.n_mobs == 60);
  CHECK(s.term.delta_f == b.term.delta_f);
  CHECK(s.consts.rho_eff == b.consts.rho_eff);
  CHECK(s.offline.n_points == 15);
  CHECK(s.cost.Q(0, 0) == 1.0);
}
