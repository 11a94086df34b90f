#ifndef GPRAMPC_H
#define GPRAMPC_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* Result codes. Nonzero values double as CLI exit codes. */
enum {
  GPRAMPC_OK = 0,
  GPRAMPC_ERROR = 1,               /* unclassified failure; see last_error */
  GPRAMPC_VERIFICATION_FAILED = 2, /* contraction check failed on the grid */
  GPRAMPC_INFEASIBLE = 3,          /* terminal set empty or reference infeasible */
  GPRAMPC_PLANT_DIVERGED = 4,      /* closed-loop state left the simulation range */
  GPRAMPC_BAD_THRESHOLD = 5        /* monte-carlo acceptance threshold unsatisfiable */
};

typedef struct gprampc_ctx gprampc_ctx;

/* Allocates an empty context; NULL only on out-of-memory. */
gprampc_ctx* gprampc_create(void);
void gprampc_destroy(gprampc_ctx* ctx);

/* Message for the most recent failure on this context. Owned by the
 * context and valid until the next call on it. Never NULL. */
const char* gprampc_last_error(const gprampc_ctx* ctx);

/* Parses an experiment config file into the context. Must succeed before
 * any of the operations below. */
int gprampc_load_config(gprampc_ctx* ctx, const char* path);

/* Every operation accepts an optional summary output: when summary_json is
 * non-NULL and the operation gets far enough to produce a report, it
 * receives a malloc'd JSON string to release with gprampc_string_free. */

/* JSON view of the loaded config's run-relevant fields (system name, mode,
 * seed and monte-carlo defaults). */
int gprampc_config_info(gprampc_ctx* ctx, char** info_json);

/* Offline pipeline: metric factorization, contraction verification, tube
 * constants, terminal set. The artifact bundle is written to bundle_path;
 * on a failed grid check the bundle holds the report only and the summary
 * carries the worst sample. */
int gprampc_offline(gprampc_ctx* ctx, const char* bundle_path,
                    char** summary_json);

/* Single closed-loop run against a previously written bundle. mode is
 * "rmpc", "rampc", or NULL for the config value; seed NULL likewise. Run
 * artifacts go under out_dir (NULL or empty disables file output). */
int gprampc_run(gprampc_ctx* ctx, const char* bundle_path, const char* mode,
                const uint64_t* seed, const char* out_dir,
                char** summary_json);

/* Tube growth comparison over one prediction horizon: contraction tube vs
 * a Lipschitz ball with the same initial radius and disturbance level,
 * written as a per-node CSV. */
int gprampc_compare_tubes(gprampc_ctx* ctx, const char* bundle_path,
                          const char* csv_path, char** summary_json);

/* Monte-carlo batch over n_seeds consecutive seeds starting at seed0.
 * NULL mode/seed0 and n_seeds/jobs <= 0 fall back to the config. Returns
 * GPRAMPC_BAD_THRESHOLD without running when the config thresholds are
 * unsatisfiable by any outcome, and GPRAMPC_ERROR when the runs finish but
 * a threshold is not met. */
int gprampc_monte_carlo(gprampc_ctx* ctx, const char* bundle_path,
                        const char* mode, const uint64_t* seed0, int n_seeds,
                        int jobs, const char* out_root, char** summary_json);

void gprampc_string_free(char* s);

const char* gprampc_version(void);

#ifdef __cplusplus
}
#endif

#endif
