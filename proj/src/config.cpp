#include "gpr/config.hpp"

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <string>

#include "json.hpp"

#include "gpr/tube.hpp"

namespace gpr {

namespace {

using njson = nlohmann::ordered_json;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw config_error(where + ": " + what);
}

void check_keys(const njson& j, const std::string& where,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(where, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known) fail(where, "unknown key '" + it.key() + "'");
  }
}

double num_field(const njson& j, const std::string& where, const char* key,
                 double def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number()) fail(where, std::string(key) + " must be a number");
  return j[key].get<double>();
}

int int_field(const njson& j, const std::string& where, const char* key,
              int def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer())
    fail(where, std::string(key) + " must be an integer");
  return j[key].get<int>();
}

std::uint64_t u64_field(const njson& j, const std::string& where,
                        const char* key, std::uint64_t def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_number_integer() ||
      (j[key].is_number_integer() && j[key].get<long long>() < 0 &&
       !j[key].is_number_unsigned()))
    fail(where, std::string(key) + " must be a nonnegative integer");
  return j[key].get<std::uint64_t>();
}

bool bool_field(const njson& j, const std::string& where, const char* key,
                bool def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_boolean()) fail(where, std::string(key) + " must be a boolean");
  return j[key].get<bool>();
}

std::string str_field(const njson& j, const std::string& where, const char* key,
                      const std::string& def) {
  if (!j.contains(key)) return def;
  if (!j[key].is_string()) fail(where, std::string(key) + " must be a string");
  return j[key].get<std::string>();
}

Vec parse_vec(const njson& a, const std::string& where) {
  if (!a.is_array()) fail(where, "expected a list of numbers");
  Vec v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].is_number()) fail(where, "expected a list of numbers");
    v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
  }
  return v;
}

Vec vec_field(const njson& j, const std::string& where, const char* key) {
  if (!j.contains(key)) fail(where, std::string("missing key '") + key + "'");
  return parse_vec(j[key], where + "." + key);
}

/// Flat row-major list; for square targets a length-rows list is read as a
/// diagonal.
Mat parse_mat(const njson& a, const std::string& where, int rows, int cols) {
  const Vec flat = parse_vec(a, where);
  if (rows == cols && flat.size() == rows) {
    Mat m = Mat::Zero(rows, cols);
    m.diagonal() = flat;
    return m;
  }
  if (flat.size() != static_cast<Eigen::Index>(rows) * cols)
    fail(where, "expected " + std::to_string(rows * cols) +
                    " entries (row-major), got " + std::to_string(flat.size()));
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = flat[r * cols + c];
  return m;
}

Mat mat_field(const njson& j, const std::string& where, const char* key,
              int rows, int cols) {
  if (!j.contains(key)) fail(where, std::string("missing key '") + key + "'");
  return parse_mat(j[key], where + "." + key, rows, cols);
}

njson vec_json(const Vec& v) {
  njson a = njson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

njson mat_json(const Mat& m) {
  njson a = njson::array();
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) a.push_back(m(r, c));
  return a;
}

void system_dims(const std::string& name, int& n, int& m, int& l) {
  if (name == "toy1d") {
    n = 1;
    m = 1;
    l = 1;
  } else if (name == "quadrotor") {
    n = 6;
    m = 2;
    l = 1;
  } else {
    fail("system", "unknown system name '" + name + "'");
  }
}

void parse_system(const njson& j, ExperimentConfig& cfg) {
  check_keys(j, "system", {"name", "params"});
  cfg.system_name = str_field(j, "system", "name", "");
  if (cfg.system_name.empty()) fail("system", "missing key 'name'");
  int n, m, l;
  system_dims(cfg.system_name, n, m, l);
  if (!j.contains("params")) return;
  const njson& p = j["params"];
  const std::string where = "system.params";
  if (cfg.system_name == "toy1d") {
    check_keys(p, where, {"a", "x_max", "u_max", "d_max", "x_ref"});
    cfg.toy.a = num_field(p, where, "a", cfg.toy.a);
    cfg.toy.x_max = num_field(p, where, "x_max", cfg.toy.x_max);
    cfg.toy.u_max = num_field(p, where, "u_max", cfg.toy.u_max);
    cfg.toy.d_max = num_field(p, where, "d_max", cfg.toy.d_max);
    cfg.toy.x_ref = num_field(p, where, "x_ref", cfg.toy.x_ref);
  } else {
    check_keys(p, where,
               {"mass", "inertia", "arm", "gravity", "hill_height",
                "hill_center", "hill_width", "clearance", "ge_gain", "p1_min",
                "p1_max", "p2_min", "p2_max", "v1_max", "v2_max", "phi_max",
                "phidot_max", "u_min", "u_max", "d_max", "p1_ref", "p2_ref",
                "s_p1", "s_p2_lo", "s_p2_hi"});
    QuadrotorParams& q = cfg.quad;
    q.mass = num_field(p, where, "mass", q.mass);
    q.inertia = num_field(p, where, "inertia", q.inertia);
    q.arm = num_field(p, where, "arm", q.arm);
    q.gravity = num_field(p, where, "gravity", q.gravity);
    q.hill_height = num_field(p, where, "hill_height", q.hill_height);
    q.hill_center = num_field(p, where, "hill_center", q.hill_center);
    q.hill_width = num_field(p, where, "hill_width", q.hill_width);
    q.clearance = num_field(p, where, "clearance", q.clearance);
    q.ge_gain = num_field(p, where, "ge_gain", q.ge_gain);
    q.p1_min = num_field(p, where, "p1_min", q.p1_min);
    q.p1_max = num_field(p, where, "p1_max", q.p1_max);
    q.p2_min = num_field(p, where, "p2_min", q.p2_min);
    q.p2_max = num_field(p, where, "p2_max", q.p2_max);
    q.v1_max = num_field(p, where, "v1_max", q.v1_max);
    q.v2_max = num_field(p, where, "v2_max", q.v2_max);
    q.phi_max = num_field(p, where, "phi_max", q.phi_max);
    q.phidot_max = num_field(p, where, "phidot_max", q.phidot_max);
    q.u_min = num_field(p, where, "u_min", q.u_min);
    q.u_max = num_field(p, where, "u_max", q.u_max);
    q.d_max = num_field(p, where, "d_max", q.d_max);
    q.p1_ref = num_field(p, where, "p1_ref", q.p1_ref);
    q.p2_ref = num_field(p, where, "p2_ref", q.p2_ref);
    q.s_p1 = num_field(p, where, "s_p1", q.s_p1);
    q.s_p2_lo = num_field(p, where, "s_p2_lo", q.s_p2_lo);
    q.s_p2_hi = num_field(p, where, "s_p2_hi", q.s_p2_hi);
  }
}

void parse_grid(const njson& j, GridSpec& g) {
  check_keys(j, "offline.grid",
             {"x_points_per_dim", "u_points_per_dim", "lhs_samples", "seed",
              "safety_factor"});
  g.x_points_per_dim =
      int_field(j, "offline.grid", "x_points_per_dim", g.x_points_per_dim);
  g.u_points_per_dim =
      int_field(j, "offline.grid", "u_points_per_dim", g.u_points_per_dim);
  g.lhs_samples = int_field(j, "offline.grid", "lhs_samples", g.lhs_samples);
  g.seed = u64_field(j, "offline.grid", "seed", g.seed);
  g.safety_factor =
      num_field(j, "offline.grid", "safety_factor", g.safety_factor);
}

void parse_offline(const njson& j, ExperimentConfig& cfg, int n, int l) {
  check_keys(j, "offline", {"grid", "w_max", "data"});
  if (j.contains("grid")) parse_grid(j["grid"], cfg.grid);
  if (!j.contains("w_max")) fail("offline", "missing key 'w_max'");
  cfg.w_max = num_field(j, "offline", "w_max", 0.0);
  if (!j.contains("data")) fail("offline", "missing key 'data'");
  const njson& d = j["data"];
  check_keys(d, "offline.data", {"csv", "generate"});
  if (d.contains("csv") == d.contains("generate"))
    fail("offline.data", "provide exactly one of 'csv' and 'generate'");
  if (d.contains("csv")) {
    const njson& paths = d["csv"];
    if (!paths.is_array() || static_cast<int>(paths.size()) != l)
      fail("offline.data.csv",
           "expected " + std::to_string(l) + " file path(s)");
    for (const njson& p : paths) {
      if (!p.is_string()) fail("offline.data.csv", "paths must be strings");
      const std::string resolved =
          (std::filesystem::path(cfg.dir) / p.get<std::string>()).string();
      cfg.offline.fixed.push_back(DataSet::load_csv(resolved, n));
    }
  } else {
    const njson& g = d["generate"];
    check_keys(g, "offline.data.generate",
               {"n_points", "seed", "per_seed", "box"});
    cfg.offline.n_points =
        int_field(g, "offline.data.generate", "n_points", 30);
    cfg.offline.gen_seed = u64_field(g, "offline.data.generate", "seed", 0);
    cfg.offline.per_seed =
        bool_field(g, "offline.data.generate", "per_seed", false);
    if (g.contains("box")) {
      const njson& b = g["box"];
      check_keys(b, "offline.data.generate.box", {"lo", "hi"});
      const Vec lo = vec_field(b, "offline.data.generate.box", "lo");
      const Vec hi = vec_field(b, "offline.data.generate.box", "hi");
      if (lo.size() != n || hi.size() != n)
        fail("offline.data.generate.box", "lo/hi must have length " +
                                              std::to_string(n));
      cfg.offline.sample_box.resize(n, 2);
      cfg.offline.sample_box.col(0) = lo;
      cfg.offline.sample_box.col(1) = hi;
    }
  }
}

void parse_gp(const njson& j, ExperimentConfig& cfg, int n) {
  check_keys(j, "gp",
             {"kernel", "sigma", "B_g", "R", "p", "fixed_beta", "n_mobs"});
  if (!j.contains("kernel")) fail("gp", "missing key 'kernel'");
  const njson& k = j["kernel"];
  check_keys(k, "gp.kernel", {"sigma_f2", "lengthscales"});
  cfg.gp.kernel.sigma_f2 = num_field(k, "gp.kernel", "sigma_f2", 1.0);
  cfg.gp.kernel.lengthscales = vec_field(k, "gp.kernel", "lengthscales");
  if (cfg.gp.kernel.lengthscales.size() != n)
    fail("gp.kernel", "lengthscales must have length " + std::to_string(n));
  cfg.gp.sigma = num_field(j, "gp", "sigma", cfg.gp.sigma);
  cfg.gp.bound.B_g = num_field(j, "gp", "B_g", cfg.gp.bound.B_g);
  cfg.gp.bound.R = num_field(j, "gp", "R", cfg.gp.bound.R);
  cfg.gp.bound.p = num_field(j, "gp", "p", cfg.gp.bound.p);
  cfg.gp.bound.fixed_beta =
      num_field(j, "gp", "fixed_beta", cfg.gp.bound.fixed_beta);
  cfg.gp.n_mobs = int_field(j, "gp", "n_mobs", cfg.gp.n_mobs);
}

void parse_horizon(const njson& j, ExperimentConfig& cfg) {
  check_keys(j, "horizon",
             {"T_s", "N_f", "substeps", "constraints_at_substeps", "desk_scale"});
  cfg.horizon.T_s = num_field(j, "horizon", "T_s", cfg.horizon.T_s);
  cfg.horizon.N_f = int_field(j, "horizon", "N_f", cfg.horizon.N_f);
  cfg.horizon.substeps = int_field(j, "horizon", "substeps", cfg.horizon.substeps);
  cfg.horizon.constraints_at_substeps = bool_field(
      j, "horizon", "constraints_at_substeps", cfg.horizon.constraints_at_substeps);
  cfg.desk_scale = bool_field(j, "horizon", "desk_scale", cfg.desk_scale);
}

void parse_sqp(const njson& j, SqpSettings& s) {
  check_keys(j, "sqp",
             {"max_iter", "tol", "soft_penalty", "lambda_max", "armijo",
              "backtrack", "max_linesearch", "reg", "qp"});
  s.max_iter = int_field(j, "sqp", "max_iter", s.max_iter);
  s.tol = num_field(j, "sqp", "tol", s.tol);
  s.soft_penalty = num_field(j, "sqp", "soft_penalty", s.soft_penalty);
  s.lambda_max = num_field(j, "sqp", "lambda_max", s.lambda_max);
  s.armijo = num_field(j, "sqp", "armijo", s.armijo);
  s.backtrack = num_field(j, "sqp", "backtrack", s.backtrack);
  s.max_linesearch = int_field(j, "sqp", "max_linesearch", s.max_linesearch);
  s.reg = num_field(j, "sqp", "reg", s.reg);
  if (!j.contains("qp")) return;
  const njson& q = j["qp"];
  check_keys(q, "sqp.qp",
             {"max_iter", "eps", "rho0", "sigma", "alpha", "check_every",
              "polish", "scaling_iters"});
  s.qp.max_iter = int_field(q, "sqp.qp", "max_iter", s.qp.max_iter);
  s.qp.eps = num_field(q, "sqp.qp", "eps", s.qp.eps);
  s.qp.rho0 = num_field(q, "sqp.qp", "rho0", s.qp.rho0);
  s.qp.sigma = num_field(q, "sqp.qp", "sigma", s.qp.sigma);
  s.qp.alpha = num_field(q, "sqp.qp", "alpha", s.qp.alpha);
  s.qp.check_every = int_field(q, "sqp.qp", "check_every", s.qp.check_every);
  s.qp.polish = bool_field(q, "sqp.qp", "polish", s.qp.polish);
  s.qp.scaling_iters =
      int_field(q, "sqp.qp", "scaling_iters", s.qp.scaling_iters);
}

void parse_run(const njson& j, ExperimentConfig& cfg, int n) {
  check_keys(j, "run",
             {"mode", "steps", "seed", "plant_substeps", "n_b", "x0",
              "containment_tol", "noise", "disturbance", "log_predictions"});
  const std::string mode = str_field(j, "run", "mode", "rampc");
  if (mode == "rmpc")
    cfg.mode = Mode::kRmpc;
  else if (mode == "rampc")
    cfg.mode = Mode::kRampc;
  else
    fail("run", "mode must be 'rmpc' or 'rampc'");
  cfg.steps = int_field(j, "run", "steps", cfg.steps);
  cfg.seed = u64_field(j, "run", "seed", cfg.seed);
  cfg.plant_substeps =
      int_field(j, "run", "plant_substeps", cfg.plant_substeps);
  cfg.n_b = int_field(j, "run", "n_b", cfg.n_b);
  cfg.x0 = vec_field(j, "run", "x0");
  if (cfg.x0.size() != n)
    fail("run", "x0 must have length " + std::to_string(n));
  cfg.containment_tol =
      num_field(j, "run", "containment_tol", cfg.containment_tol);
  if (j.contains("noise")) {
    const njson& ns = j["noise"];
    check_keys(ns, "run.noise", {"kind", "R"});
    const std::string kind =
        str_field(ns, "run.noise", "kind", "truncated_gaussian");
    if (kind == "truncated_gaussian")
      cfg.noise.kind = NoiseSpec::Kind::kTruncatedGaussian;
    else if (kind == "uniform")
      cfg.noise.kind = NoiseSpec::Kind::kUniform;
    else
      fail("run.noise", "kind must be 'truncated_gaussian' or 'uniform'");
    cfg.noise.R = num_field(ns, "run.noise", "R", cfg.noise.R);
  }
  if (j.contains("disturbance")) {
    const njson& ds = j["disturbance"];
    check_keys(ds, "run.disturbance", {"kind"});
    const std::string kind = str_field(ds, "run.disturbance", "kind", "uniform");
    if (kind == "zero")
      cfg.dist.kind = DisturbanceSpec::Kind::kZero;
    else if (kind == "uniform")
      cfg.dist.kind = DisturbanceSpec::Kind::kUniform;
    else if (kind == "vertex")
      cfg.dist.kind = DisturbanceSpec::Kind::kVertex;
    else
      fail("run.disturbance", "kind must be 'zero', 'uniform' or 'vertex'");
  }
  cfg.log_predictions =
      bool_field(j, "run", "log_predictions", cfg.log_predictions);
}

void parse_montecarlo(const njson& j, ExperimentConfig& cfg) {
  check_keys(j, "montecarlo",
             {"seeds", "seed0", "jobs", "containment_min", "violation_max"});
  cfg.mc_seeds = int_field(j, "montecarlo", "seeds", cfg.mc_seeds);
  cfg.mc_seed0 = u64_field(j, "montecarlo", "seed0", cfg.mc_seed0);
  cfg.mc_jobs = int_field(j, "montecarlo", "jobs", cfg.mc_jobs);
  cfg.mc_containment_min =
      num_field(j, "montecarlo", "containment_min", cfg.mc_containment_min);
  cfg.mc_violation_max =
      num_field(j, "montecarlo", "violation_max", cfg.mc_violation_max);
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw config_error("cannot open config file: " + path);
  njson j;
  try {
    j = njson::parse(in);
  } catch (const std::exception& e) {
    throw config_error(std::string("config parse error: ") + e.what());
  }

  ExperimentConfig cfg;
  cfg.dir = std::filesystem::path(path).parent_path().string();
  if (cfg.dir.empty()) cfg.dir = ".";

  check_keys(j, "config",
             {"schema_version", "system", "metric", "offline", "gp", "horizon",
              "cost", "sqp", "run", "montecarlo"});
  if (!j.contains("schema_version"))
    fail("config", "missing key 'schema_version'");
  const int sv = int_field(j, "config", "schema_version", -1);
  if (sv != 1)
    fail("config", "unsupported schema_version " + std::to_string(sv));

  if (!j.contains("system")) fail("config", "missing key 'system'");
  parse_system(j["system"], cfg);
  int n, m, l;
  system_dims(cfg.system_name, n, m, l);

  if (!j.contains("metric")) fail("config", "missing key 'metric'");
  {
    const njson& mj = j["metric"];
    check_keys(mj, "metric", {"M", "K", "rho"});
    cfg.M = mat_field(mj, "metric", "M", n, n);
    cfg.K = mat_field(mj, "metric", "K", m, n);
    if (!mj.contains("rho")) fail("metric", "missing key 'rho'");
    cfg.rho = num_field(mj, "metric", "rho", 0.0);
  }

  if (!j.contains("offline")) fail("config", "missing key 'offline'");
  parse_offline(j["offline"], cfg, n, l);

  if (!j.contains("gp")) fail("config", "missing key 'gp'");
  parse_gp(j["gp"], cfg, n);

  if (j.contains("horizon")) parse_horizon(j["horizon"], cfg);

  if (!j.contains("cost")) fail("config", "missing key 'cost'");
  {
    const njson& cj = j["cost"];
    check_keys(cj, "cost", {"Q", "R"});
    cfg.cost.Q = mat_field(cj, "cost", "Q", n, n);
    cfg.cost.R = mat_field(cj, "cost", "R", m, m);
  }

  if (j.contains("sqp")) parse_sqp(j["sqp"], cfg.sqp);

  if (!j.contains("run")) fail("config", "missing key 'run'");
  parse_run(j["run"], cfg, n);

  if (j.contains("montecarlo")) parse_montecarlo(j["montecarlo"], cfg);
  return cfg;
}

SystemModel make_system(const ExperimentConfig& cfg) {
  if (cfg.system_name == "toy1d") return make_toy1d(cfg.toy);
  if (cfg.system_name == "quadrotor") return make_quadrotor(cfg.quad);
  throw config_error("unknown system name: " + cfg.system_name);
}

OfflineBundle run_offline(const ExperimentConfig& cfg, const SystemModel& model) {
  OfflineBundle b;
  b.metric = Metric::create(cfg.M, cfg.K, cfg.rho);
  b.report = verify_contraction(b.metric, model, cfg.grid);
  if (!b.report.passed) return b;

  b.consts = compute_constants(b.metric, model, cfg.grid);
  b.has_constants = true;

  RandomStream rng(cfg.offline.gen_seed);
  const GpCollection coll =
      offline_collection(model, cfg.offline, cfg.gp, cfg.noise, rng);
  Selection sel;
  sel.indices = {0};
  sel.n_b = cfg.n_b;
  const Vec x_ref = model.x_ref_of(Vec::Zero(model.l));
  const BandEval bands = eval_bands(coll, sel, x_ref);
  b.gbar_lo = bands.lo.row(0).transpose();
  b.gbar_hi = bands.up.row(0).transpose();
  b.term = terminal_radius(b.consts, model, cfg.w_max, b.gbar_lo, b.gbar_hi);
  b.has_terminal = true;

  // sampled check that w_max dominates the offline uncertainty inside the
  // terminal ball; a shortfall breaks invariance, so surface it loudly
  {
    RandomStream dirs(cfg.grid.seed);
    const Vec lam = Vec::Ones(1);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
      Vec dir(model.n);
      for (int d = 0; d < model.n; ++d) dir[d] = dirs.gaussian();
      const double nrm = dir.norm();
      if (nrm <= 0.0) continue;
      dir *= std::pow(dirs.unit(), 1.0 / model.n) / nrm;
      const Vec x = x_ref + b.metric.M_half_inv * (b.term.delta_f * dir);
      const WtildeResult wt = wtilde_eval(coll, sel, lam, x);
      worst = std::max(worst, wt.w.maxCoeff());
    }
    if (worst > cfg.w_max)
      log_msg(LogLevel::kWarn,
              "offline uncertainty " + format_double(worst) +
                  " exceeds configured w_max " + format_double(cfg.w_max) +
                  " inside the terminal ball");
  }
  return b;
}

void save_bundle(const OfflineBundle& b, const std::string& path) {
  njson j;
  j["schema_version"] = 1;
  j["metric"] = njson{{"n", b.metric.M.rows()},
                      {"m", b.metric.K.rows()},
                      {"M", mat_json(b.metric.M)},
                      {"K", mat_json(b.metric.K)},
                      {"rho", b.metric.rho}};
  j["verify"] = njson{{"passed", b.report.passed},
                      {"max_eig", b.report.max_eig},
                      {"points_checked", b.report.points_checked},
                      {"worst_x", vec_json(b.report.worst_x)},
                      {"worst_u", vec_json(b.report.worst_u)},
                      {"worst_gx", vec_json(b.report.worst_gx)},
                      {"worst_d", vec_json(b.report.worst_d)}};
  if (b.has_constants) {
    j["constants"] = njson{{"rho", b.consts.rho},
                           {"L_G", b.consts.L_G},
                           {"G_M", vec_json(b.consts.G_M)},
                           {"E_M", b.consts.E_M},
                           {"c", vec_json(b.consts.c)},
                           {"rho_eff", b.consts.rho_eff}};
  } else {
    j["constants"] = nullptr;
  }
  if (b.has_terminal) {
    j["terminal"] = njson{{"delta_f", b.term.delta_f},
                          {"x_ref", vec_json(b.term.x_ref)},
                          {"w_max", b.term.w_max},
                          {"gbar_lo", vec_json(b.gbar_lo)},
                          {"gbar_hi", vec_json(b.gbar_hi)}};
  } else {
    j["terminal"] = nullptr;
  }
  std::ofstream out(path);
  if (!out.is_open()) throw config_error("cannot write bundle file: " + path);
  out << j.dump(2) << "\n";
}

OfflineBundle load_bundle(const std::string& path) {
  std::ifstream in(path);
  if (!in.is_open()) throw config_error("cannot open bundle file: " + path);
  njson j;
  try {
    j = njson::parse(in);
  } catch (const std::exception& e) {
    throw config_error(std::string("bundle parse error: ") + e.what());
  }
  check_keys(j, "bundle",
             {"schema_version", "metric", "verify", "constants", "terminal"});
  if (int_field(j, "bundle", "schema_version", -1) != 1)
    fail("bundle", "unsupported schema_version");

  OfflineBundle b;
  {
    const njson& mj = j.at("metric");
    check_keys(mj, "bundle.metric", {"n", "m", "M", "K", "rho"});
    const int n = int_field(mj, "bundle.metric", "n", 0);
    const int m = int_field(mj, "bundle.metric", "m", 0);
    b.metric = Metric::create(parse_mat(mj.at("M"), "bundle.metric.M", n, n),
                              parse_mat(mj.at("K"), "bundle.metric.K", m, n),
                              num_field(mj, "bundle.metric", "rho", 0.0));
  }
  {
    const njson& vj = j.at("verify");
    check_keys(vj, "bundle.verify",
               {"passed", "max_eig", "points_checked", "worst_x", "worst_u",
                "worst_gx", "worst_d"});
    b.report.passed = bool_field(vj, "bundle.verify", "passed", false);
    b.report.max_eig = num_field(vj, "bundle.verify", "max_eig", 0.0);
    b.report.points_checked =
        int_field(vj, "bundle.verify", "points_checked", 0);
    b.report.worst_x = parse_vec(vj.at("worst_x"), "bundle.verify.worst_x");
    b.report.worst_u = parse_vec(vj.at("worst_u"), "bundle.verify.worst_u");
    b.report.worst_gx = parse_vec(vj.at("worst_gx"), "bundle.verify.worst_gx");
    b.report.worst_d = parse_vec(vj.at("worst_d"), "bundle.verify.worst_d");
  }
  GPR_REQUIRE(b.report.passed, "bundle verification did not pass");
  GPR_REQUIRE(!j.at("constants").is_null() && !j.at("terminal").is_null(),
              "bundle is missing constants or terminal data");
  {
    const njson& cj = j.at("constants");
    check_keys(cj, "bundle.constants",
               {"rho", "L_G", "G_M", "E_M", "c", "rho_eff"});
    b.consts.rho = num_field(cj, "bundle.constants", "rho", 0.0);
    b.consts.L_G = num_field(cj, "bundle.constants", "L_G", 0.0);
    b.consts.G_M = parse_vec(cj.at("G_M"), "bundle.constants.G_M");
    b.consts.E_M = num_field(cj, "bundle.constants", "E_M", 0.0);
    b.consts.c = parse_vec(cj.at("c"), "bundle.constants.c");
    b.consts.rho_eff = num_field(cj, "bundle.constants", "rho_eff", 0.0);
    b.has_constants = true;
  }
  {
    const njson& tj = j.at("terminal");
    check_keys(tj, "bundle.terminal",
               {"delta_f", "x_ref", "w_max", "gbar_lo", "gbar_hi"});
    b.term.delta_f = num_field(tj, "bundle.terminal", "delta_f", 0.0);
    b.term.x_ref = parse_vec(tj.at("x_ref"), "bundle.terminal.x_ref");
    b.term.w_max = num_field(tj, "bundle.terminal", "w_max", 0.0);
    b.gbar_lo = parse_vec(tj.at("gbar_lo"), "bundle.terminal.gbar_lo");
    b.gbar_hi = parse_vec(tj.at("gbar_hi"), "bundle.terminal.gbar_hi");
    b.has_terminal = true;
  }
  return b;
}

ClosedLoopSetup make_setup(const ExperimentConfig& cfg, const SystemModel& model,
                           const OfflineBundle& b) {
  GPR_REQUIRE(b.report.passed && b.has_constants && b.has_terminal,
              "offline bundle incomplete");
  ClosedLoopSetup s;
  s.model = model;
  s.metric = b.metric;
  s.consts = b.consts;
  s.term = b.term;
  s.horizon = cfg.horizon;
  s.cost = cfg.cost;
  s.mode = cfg.mode;
  s.sqp = cfg.sqp;
  s.noise = cfg.noise;
  s.dist = cfg.dist;
  s.offline = cfg.offline;
  s.gp = cfg.gp;
  s.x0 = cfg.x0;
  s.steps = cfg.steps;
  s.plant_substeps = cfg.plant_substeps;
  s.n_b = cfg.n_b;
  s.containment_tol = cfg.containment_tol;
  s.log_predictions = cfg.log_predictions;
  return s;
}

}  // namespace gpr
