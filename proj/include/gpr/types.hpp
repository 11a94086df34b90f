#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace gpr {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Thrown when a caller violates an interface contract (dimension mismatch,
/// out-of-range argument, use of an unfitted model).
struct contract_error : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a numerical operation cannot be completed (factorization
/// breakdown, solver divergence).
struct numerical_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when an offline verification step fails (contraction condition
/// violated on the sampling grid, rho - L_G <= 0).
struct verification_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when the requested terminal set is empty (constraint bound below
/// the invariance lower bound).
struct infeasible_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed configuration input (unknown keys, bad shapes,
/// missing files, schema mismatch).
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define GPR_REQUIRE(cond, msg)                       \
  do {                                               \
    if (!(cond)) throw ::gpr::contract_error(msg);   \
  } while (0)

/// Deterministic random stream. All stochastic components draw through this
/// wrapper so that a (config, seed) pair fixes every sampled value, and so
/// that the draw sequence does not depend on the standard library's
/// distribution internals.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : eng_(seed) {}

  /// Uniform on [0, 1).
  double unit() {
    // 53-bit mantissa construction, endian-independent
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  /// Standard normal via Box-Muller (no cached spare, one fresh pair per call).
  double gaussian() {
    double u1 = unit();
    while (u1 <= 0.0) u1 = unit();
    const double u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Standard normal conditioned on |z| <= cut (rejection sampling).
  double truncated_gaussian(double cut) {
    double z = gaussian();
    while (std::abs(z) > cut) z = gaussian();
    return z;
  }

  /// Derive an independent child stream (used per monte-carlo run).
  RandomStream spawn(std::uint64_t salt) {
    return RandomStream(eng_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1)));
  }

 private:
  std::mt19937_64 eng_;
};

/// Shortest round-trip decimal form of a double, used by every log writer so
/// identical runs produce byte-identical files.
std::string format_double(double v);

enum class LogLevel { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

/// Current verbosity, read once from GPRAMPC_LOG (error|warn|info|debug).
LogLevel log_level();

void log_msg(LogLevel level, const std::string& msg);

}  // namespace gpr
