#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "gprampc.h"

namespace {

using njson = nlohmann::json;

struct Api {
  gprampc_ctx* ctx = gprampc_create();
  Api() = default;
  Api(const Api&) = delete;
  Api& operator=(const Api&) = delete;
  ~Api() { gprampc_destroy(ctx); }
};

std::string take(char* s) {
  std::string out = s ? s : "";
  gprampc_string_free(s);
  return out;
}

int fail(const Api& api, int rc) {
  std::fprintf(stderr, "error: %s\n", gprampc_last_error(api.ctx));
  return rc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"robust adaptive GP-MPC experiments"};
  app.set_version_flag("--version", std::string(gprampc_version()));
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string mode;
  std::uint64_t seed = 0;
  int seeds = 0;
  int jobs = 0;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("config", config_path, "experiment config file")
        ->required();
    cmd->add_option("--out", out_dir, "output directory (default: out)");
  };

  CLI::App* off = app.add_subcommand(
      "offline", "verify the metric and write the offline artifact bundle");
  add_common(off);

  CLI::App* run = app.add_subcommand("run", "single closed-loop run");
  add_common(run);
  run->add_option("--mode", mode, "controller mode (rmpc|rampc)")
      ->check(CLI::IsMember({"rmpc", "rampc"}));
  CLI::Option* run_seed = run->add_option("--seed", seed, "run seed");

  CLI::App* cmp = app.add_subcommand(
      "compare-tubes", "contraction tube vs Lipschitz ball over one horizon");
  add_common(cmp);

  CLI::App* mc = app.add_subcommand(
      "montecarlo", "independent closed-loop runs over consecutive seeds");
  add_common(mc);
  mc->add_option("--mode", mode, "controller mode (rmpc|rampc)")
      ->check(CLI::IsMember({"rmpc", "rampc"}));
  CLI::Option* mc_seed = mc->add_option("--seed", seed, "first seed");
  mc->add_option("--seeds", seeds, "number of seeds");
  mc->add_option("--jobs", jobs, "max parallel runs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 64;
  }

  Api api;
  if (!api.ctx) {
    std::fprintf(stderr, "error: out of memory\n");
    return 1;
  }
  if (int rc = gprampc_load_config(api.ctx, config_path.c_str());
      rc != GPRAMPC_OK)
    return fail(api, rc);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    std::fprintf(stderr, "error: cannot create %s: %s\n", out_dir.c_str(),
                 ec.message().c_str());
    return 1;
  }
  const std::string bundle = out_dir + "/bundle.json";

  char* info_raw = nullptr;
  if (int rc = gprampc_config_info(api.ctx, &info_raw); rc != GPRAMPC_OK)
    return fail(api, rc);
  const njson info = njson::parse(take(info_raw));
  const std::string eff_mode =
      mode.empty() ? info.at("mode").get<std::string>() : mode;

  if (off->parsed()) {
    char* summary = nullptr;
    const int rc = gprampc_offline(api.ctx, bundle.c_str(), &summary);
    const std::string s = take(summary);
    if (!s.empty()) std::fputs(s.c_str(), stdout);
    if (rc != GPRAMPC_OK) return fail(api, rc);
    std::fprintf(stderr, "bundle written to %s\n", bundle.c_str());
    return 0;
  }

  if (run->parsed()) {
    const std::uint64_t eff_seed =
        run_seed->count() ? seed : info.at("seed").get<std::uint64_t>();
    const std::string run_dir = out_dir + "/run_" + eff_mode + "_seed" +
                                std::to_string(eff_seed);
    char* summary = nullptr;
    const int rc = gprampc_run(api.ctx, bundle.c_str(),
                               mode.empty() ? nullptr : mode.c_str(),
                               run_seed->count() ? &seed : nullptr,
                               run_dir.c_str(), &summary);
    const std::string s = take(summary);
    if (!s.empty()) {
      const njson j = njson::parse(s);
      int feasible = 0;
      for (const njson& st : j.at("steps"))
        if (st.at("status").get<std::string>() == "feasible") ++feasible;
      std::printf(
          "mode=%s seed=%" PRIu64
          " cost=%g time_to_terminal=%g feasible_steps=%d/%d aborted=%s\n",
          eff_mode.c_str(), eff_seed, j.at("closed_loop_cost").get<double>(),
          j.at("time_to_terminal").get<double>(), feasible,
          j.at("steps_done").get<int>(),
          j.at("aborted").get<bool>() ? "yes" : "no");
    }
    if (rc != GPRAMPC_OK) return fail(api, rc);
    std::fprintf(stderr, "run artifacts in %s\n", run_dir.c_str());
    return 0;
  }

  if (cmp->parsed()) {
    const std::string csv = out_dir + "/tubes.csv";
    char* summary = nullptr;
    const int rc =
        gprampc_compare_tubes(api.ctx, bundle.c_str(), csv.c_str(), &summary);
    const std::string s = take(summary);
    if (!s.empty()) std::fputs(s.c_str(), stdout);
    if (rc != GPRAMPC_OK) return fail(api, rc);
    std::fprintf(stderr, "tube comparison written to %s\n", csv.c_str());
    return 0;
  }

  if (mc->parsed()) {
    const std::string mc_dir = out_dir + "/mc_" + eff_mode;
    char* summary = nullptr;
    const int rc = gprampc_monte_carlo(
        api.ctx, bundle.c_str(), mode.empty() ? nullptr : mode.c_str(),
        mc_seed->count() ? &seed : nullptr, seeds, jobs, mc_dir.c_str(),
        &summary);
    const std::string s = take(summary);
    if (!s.empty()) {
      std::fputs(s.c_str(), stdout);
      std::ofstream f(mc_dir + "/summary.json");
      if (f.is_open()) f << s;
    }
    if (rc != GPRAMPC_OK) return fail(api, rc);
    return 0;
  }

  return 64;
}
