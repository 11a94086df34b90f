#include "gprampc.h"

#include <algorithm>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "gpr/config.hpp"
#include "gpr/tube.hpp"

struct gprampc_ctx {
  gpr::ExperimentConfig cfg;
  bool loaded = false;
  std::string err;
};

namespace {

using njson = nlohmann::ordered_json;

njson vec_json(const gpr::Vec& v) {
  njson a = njson::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

char* dup_cstring(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out) std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void set_summary(char** out, const std::string& s) {
  if (out) *out = dup_cstring(s);
}

template <typename Fn>
int guarded(gprampc_ctx* ctx, Fn&& fn) {
  if (!ctx) return GPRAMPC_ERROR;
  ctx->err.clear();
  try {
    return fn();
  } catch (const gpr::verification_error& e) {
    ctx->err = e.what();
    return GPRAMPC_VERIFICATION_FAILED;
  } catch (const gpr::infeasible_error& e) {
    ctx->err = e.what();
    return GPRAMPC_INFEASIBLE;
  } catch (const std::exception& e) {
    ctx->err = e.what();
    return GPRAMPC_ERROR;
  } catch (...) {
    ctx->err = "unknown error";
    return GPRAMPC_ERROR;
  }
}

bool apply_mode(gprampc_ctx* ctx, const char* mode, gpr::ExperimentConfig& cfg) {
  if (!mode) return true;
  const std::string m = mode;
  if (m == "rmpc") {
    cfg.mode = gpr::Mode::kRmpc;
  } else if (m == "rampc") {
    cfg.mode = gpr::Mode::kRampc;
  } else {
    ctx->err = "mode must be 'rmpc' or 'rampc'";
    return false;
  }
  return true;
}

}  // namespace

extern "C" {

gprampc_ctx* gprampc_create(void) {
  try {
    return new gprampc_ctx();
  } catch (...) {
    return nullptr;
  }
}

void gprampc_destroy(gprampc_ctx* ctx) { delete ctx; }

const char* gprampc_last_error(const gprampc_ctx* ctx) {
  return ctx ? ctx->err.c_str() : "null context";
}

int gprampc_load_config(gprampc_ctx* ctx, const char* path) {
  return guarded(ctx, [&]() -> int {
    if (!path) {
      ctx->err = "config path is null";
      return GPRAMPC_ERROR;
    }
    ctx->cfg = gpr::load_config(path);
    ctx->loaded = true;
    return GPRAMPC_OK;
  });
}

int gprampc_config_info(gprampc_ctx* ctx, char** info_json) {
  return guarded(ctx, [&]() -> int {
    if (!ctx->loaded) {
      ctx->err = "no config loaded";
      return GPRAMPC_ERROR;
    }
    njson j;
    j["schema_version"] = 1;
    j["system"] = ctx->cfg.system_name;
    j["mode"] = ctx->cfg.mode == gpr::Mode::kRmpc ? "rmpc" : "rampc";
    j["seed"] = ctx->cfg.seed;
    j["steps"] = ctx->cfg.steps;
    j["T_s"] = ctx->cfg.horizon.T_s;
    j["N_f"] = ctx->cfg.horizon.N_f;
    j["desk_scale"] = ctx->cfg.desk_scale;
    j["mc_seeds"] = ctx->cfg.mc_seeds;
    j["mc_seed0"] = ctx->cfg.mc_seed0;
    j["mc_jobs"] = ctx->cfg.mc_jobs;
    set_summary(info_json, j.dump(2) + "\n");
    return GPRAMPC_OK;
  });
}

int gprampc_offline(gprampc_ctx* ctx, const char* bundle_path,
                    char** summary_json) {
  return guarded(ctx, [&]() -> int {
    if (!ctx->loaded) {
      ctx->err = "no config loaded";
      return GPRAMPC_ERROR;
    }
    if (!bundle_path) {
      ctx->err = "bundle path is null";
      return GPRAMPC_ERROR;
    }
    const gpr::SystemModel model = gpr::make_system(ctx->cfg);
    const gpr::OfflineBundle b = gpr::run_offline(ctx->cfg, model);
    gpr::save_bundle(b, bundle_path);

    njson j;
    j["schema_version"] = 1;
    j["passed"] = b.report.passed;
    j["max_eig"] = b.report.max_eig;
    j["points_checked"] = b.report.points_checked;
    j["worst_x"] = vec_json(b.report.worst_x);
    j["worst_u"] = vec_json(b.report.worst_u);
    j["worst_gx"] = vec_json(b.report.worst_gx);
    j["worst_d"] = vec_json(b.report.worst_d);
    if (b.has_constants) {
      j["rho_eff"] = b.consts.rho_eff;
      j["L_G"] = b.consts.L_G;
      j["E_M"] = b.consts.E_M;
    }
    if (b.has_terminal) {
      j["delta_f"] = b.term.delta_f;
      j["x_ref"] = vec_json(b.term.x_ref);
      j["gbar_lo"] = vec_json(b.gbar_lo);
      j["gbar_hi"] = vec_json(b.gbar_hi);
    }
    set_summary(summary_json, j.dump(2) + "\n");

    if (!b.report.passed) {
      ctx->err = "contraction check failed: max LMI eigenvalue " +
                 gpr::format_double(b.report.max_eig) + " over " +
                 std::to_string(b.report.points_checked) + " samples";
      return GPRAMPC_VERIFICATION_FAILED;
    }
    return GPRAMPC_OK;
  });
}

int gprampc_run(gprampc_ctx* ctx, const char* bundle_path, const char* mode,
                const uint64_t* seed, const char* out_dir,
                char** summary_json) {
  return guarded(ctx, [&]() -> int {
    if (!ctx->loaded) {
      ctx->err = "no config loaded";
      return GPRAMPC_ERROR;
    }
    if (!bundle_path) {
      ctx->err = "bundle path is null";
      return GPRAMPC_ERROR;
    }
    gpr::ExperimentConfig cfg = ctx->cfg;
    if (!apply_mode(ctx, mode, cfg)) return GPRAMPC_ERROR;
    if (seed) cfg.seed = *seed;

    const gpr::SystemModel model = gpr::make_system(cfg);
    const gpr::OfflineBundle b = gpr::load_bundle(bundle_path);
    const gpr::ClosedLoopSetup setup = gpr::make_setup(cfg, model, b);
    const gpr::RunResult r =
        gpr::run_closed_loop(setup, cfg.seed, out_dir ? out_dir : "");
    set_summary(summary_json, gpr::run_summary_json(r));

    if (r.aborted) {
      ctx->err = r.abort_reason;
      return r.abort_reason.rfind("plant diverged", 0) == 0
                 ? GPRAMPC_PLANT_DIVERGED
                 : GPRAMPC_ERROR;
    }
    return GPRAMPC_OK;
  });
}

int gprampc_compare_tubes(gprampc_ctx* ctx, const char* bundle_path,
                          const char* csv_path, char** summary_json) {
  return guarded(ctx, [&]() -> int {
    if (!ctx->loaded) {
      ctx->err = "no config loaded";
      return GPRAMPC_ERROR;
    }
    if (!bundle_path || !csv_path) {
      ctx->err = "bundle or csv path is null";
      return GPRAMPC_ERROR;
    }
    const gpr::SystemModel model = gpr::make_system(ctx->cfg);
    const gpr::OfflineBundle b = gpr::load_bundle(bundle_path);

    const gpr::HorizonSpec& hz = ctx->cfg.horizon;
    const int steps = hz.fine_steps();
    const double dt = hz.dt();
    const double c1 = b.consts.c[0];
    const double delta0 = b.term.delta_f;
    const double wbar = b.consts.gm_total() * b.term.w_max + b.consts.E_M;
    const double steady = wbar / b.consts.rho_eff;
    const double L_cl = gpr::max_growth_rate(b.metric, model, ctx->cfg.grid);

    const std::vector<gpr::Vec> nodes(static_cast<std::size_t>(steps) + 1,
                                      b.term.x_ref);
    const auto w_fun = [&](const gpr::Vec&) -> gpr::Vec {
      return gpr::Vec::Constant(model.l, b.term.w_max);
    };
    const std::vector<double> tube =
        gpr::propagate_tube(b.consts, nodes, w_fun, delta0, dt);
    const std::vector<double> ball =
        gpr::baseline_ball(L_cl, wbar, delta0, dt, steps);

    std::ofstream out(csv_path);
    if (!out.is_open()) {
      ctx->err = std::string("cannot write ") + csv_path;
      return GPRAMPC_ERROR;
    }
    out << "tau,contraction,baseline\n";
    double crossing = -1.0;
    double tighten_max = 0.0;
    for (int i = 0; i <= steps; ++i) {
      const double tau = i * dt;
      const double ct = c1 * tube[static_cast<std::size_t>(i)];
      const double bt = c1 * ball[static_cast<std::size_t>(i)];
      tighten_max = std::max(tighten_max, ct);
      if (crossing < 0.0 && bt > 10.0 * c1 * steady) crossing = tau;
      out << gpr::format_double(tau) << ',' << gpr::format_double(ct) << ','
          << gpr::format_double(bt) << '\n';
    }

    njson j;
    j["schema_version"] = 1;
    j["rows"] = steps + 1;
    j["dt"] = dt;
    j["T_f"] = hz.T_f();
    j["c1"] = c1;
    j["delta0"] = delta0;
    j["wbar"] = wbar;
    j["delta_steady"] = steady;
    j["L_cl"] = L_cl;
    j["rho_eff"] = b.consts.rho_eff;
    j["tighten_initial"] = c1 * delta0;
    j["tighten_steady"] = c1 * steady;
    j["tighten_max"] = tighten_max;
    j["analytic_bound"] = std::max(c1 * delta0, c1 * steady);
    j["baseline_crossing_time"] = crossing;
    set_summary(summary_json, j.dump(2) + "\n");
    return GPRAMPC_OK;
  });
}

int gprampc_monte_carlo(gprampc_ctx* ctx, const char* bundle_path,
                        const char* mode, const uint64_t* seed0, int n_seeds,
                        int jobs, const char* out_root, char** summary_json) {
  return guarded(ctx, [&]() -> int {
    if (!ctx->loaded) {
      ctx->err = "no config loaded";
      return GPRAMPC_ERROR;
    }
    if (!bundle_path) {
      ctx->err = "bundle path is null";
      return GPRAMPC_ERROR;
    }
    gpr::ExperimentConfig cfg = ctx->cfg;
    if (!apply_mode(ctx, mode, cfg)) return GPRAMPC_ERROR;
    if (seed0) cfg.mc_seed0 = *seed0;
    if (n_seeds > 0) cfg.mc_seeds = n_seeds;
    if (jobs > 0) cfg.mc_jobs = jobs;

    if (cfg.mc_containment_min > 1.0 || cfg.mc_violation_max < 0.0) {
      ctx->err = "acceptance thresholds unsatisfiable: containment_min " +
                 gpr::format_double(cfg.mc_containment_min) +
                 ", violation_max " + gpr::format_double(cfg.mc_violation_max);
      return GPRAMPC_BAD_THRESHOLD;
    }
    if (cfg.mc_seeds <= 0) {
      ctx->err = "seed count must be positive";
      return GPRAMPC_ERROR;
    }

    const gpr::SystemModel model = gpr::make_system(cfg);
    const gpr::OfflineBundle b = gpr::load_bundle(bundle_path);
    const gpr::ClosedLoopSetup setup = gpr::make_setup(cfg, model, b);

    std::vector<std::uint64_t> seeds(static_cast<std::size_t>(cfg.mc_seeds));
    for (int i = 0; i < cfg.mc_seeds; ++i)
      seeds[static_cast<std::size_t>(i)] = cfg.mc_seed0 + static_cast<std::uint64_t>(i);

    const gpr::MonteCarloResult mc =
        gpr::monte_carlo(setup, seeds, cfg.mc_jobs, out_root ? out_root : "");
    set_summary(summary_json, gpr::monte_carlo_summary_json(mc));

    if (mc.containment_freq + 1e-12 < cfg.mc_containment_min ||
        mc.violation_freq > cfg.mc_violation_max + 1e-12) {
      ctx->err = "acceptance thresholds not met: containment " +
                 gpr::format_double(mc.containment_freq) + " (min " +
                 gpr::format_double(cfg.mc_containment_min) + "), violation " +
                 gpr::format_double(mc.violation_freq) + " (max " +
                 gpr::format_double(cfg.mc_violation_max) + ")";
      return GPRAMPC_ERROR;
    }
    return GPRAMPC_OK;
  });
}

void gprampc_string_free(char* s) { std::free(s); }

const char* gprampc_version(void) { return "0.1.0"; }

}  // extern "C"
