#pragma once

#include <string>
#include <utility>

#include "gpr/types.hpp"

namespace gpr {

/// Squared-exponential kernel with per-dimension lengthscales:
///   k(x, x') = sigma_f2 * exp(-1/2 * sum_d ((x_d - x'_d) / ell_d)^2)
struct KernelSpec {
  double sigma_f2 = 1.0;
  Vec lengthscales;

  double eval(const Vec& a, const Vec& b) const;
  void validate(int dim) const;
};

/// Ordered regression data, one scalar target per input point. Rows of X are
/// the inputs. Append-only; nested data sets share a common prefix.
struct DataSet {
  Mat X;  // N x dim
  Vec y;  // N

  int size() const { return static_cast<int>(y.size()); }
  int dim() const { return static_cast<int>(X.cols()); }
  void append(const Vec& x, double yval);
  bool is_prefix_of(const DataSet& other) const;

  void save_csv(const std::string& path) const;
  static DataSet load_csv(const std::string& path, int dim);
};

/// Inputs of the uniform error bound: RKHS norm bound B_g >= ||g||_k,
/// sub-Gaussian noise scale R, failure probability p in (0,1). Setting
/// fixed_beta >= 0 bypasses the formula and pins beta to that value.
struct BoundInputs {
  double B_g = 1.0;
  double R = 0.1;
  double p = 0.1;
  double fixed_beta = -1.0;
};

/// Exact GP posterior for one output dimension, backed by a Cholesky factor
/// of K_N + sigma^2 I. Models are immutable once fitted; append() returns a
/// new model whose factor extends the old one by a rank-one border.
class GpModel {
 public:
  GpModel() = default;

  /// Fit from scratch (full Cholesky factorization).
  static GpModel fit(DataSet data, KernelSpec kernel, double sigma,
                     BoundInputs bound);

  /// New model with one datum appended. Extends the triangular factor in
  /// O(N^2); every 50 appends the factor is rebuilt from scratch to bound
  /// round-off drift.
  GpModel append(const Vec& x, double yval) const;

  /// Posterior mean and standard deviation at x. With no data this is the
  /// prior (0, sqrt(k(x,x))). Negative variances above -1e-12 are clamped to
  /// zero; anything lower raises numerical_error.
  std::pair<double, double> posterior(const Vec& x) const;

  /// Frequentist error-bound scale: with probability at least 1-p,
  /// |g(x) - mu_N(x)| <= beta_N * sigma_N(x) uniformly over x, where
  ///   beta_N = B_g + R/sigma * sqrt(ln det(sb2/s2 K_N + sb2 I) - 2 ln p),
  /// sb2 = max{1, sigma^2}. Holds jointly over all data-set sizes.
  double beta() const { return beta_; }

  int size() const { return data_.size(); }
  const DataSet& data() const { return data_; }
  const KernelSpec& kernel() const { return kernel_; }
  double sigma() const { return sigma_; }
  const BoundInputs& bound() const { return bound_; }

  /// log det(K_N + sigma^2 I), from the cached factor.
  double logdet() const;

 private:
  void compute_beta();

  KernelSpec kernel_;
  DataSet data_;
  double sigma_ = 0.1;
  BoundInputs bound_;
  Mat L_;      // lower Cholesky factor of K_N + sigma^2 I
  Vec alpha_;  // (K_N + sigma^2 I)^{-1} y
  double beta_ = 0.0;
  int appends_since_refit_ = 0;
};

}  // namespace gpr
