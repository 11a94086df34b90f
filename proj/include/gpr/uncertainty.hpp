#pragma once

#include <vector>

#include "gpr/gp.hpp"
#include "gpr/types.hpp"

namespace gpr {

/// Ordered batch of GP models fitted to nested data sets (index k holds the
/// model trained on the data available at step k; one GpModel per output
/// dimension). Append-only; the selection below decides which indices the
/// controller actually uses.
class GpCollection {
 public:
  explicit GpCollection(int l) : l_(l) { GPR_REQUIRE(l > 0, "l must be positive"); }

  int add(std::vector<GpModel> per_dim);
  int size() const { return static_cast<int>(models_.size()); }
  int output_dim() const { return l_; }

  const GpModel& model(int index, int dim) const;
  const std::vector<GpModel>& models(int index) const;

  /// Data points in the newest model (adaptation freezes once this reaches
  /// the configured cap).
  int newest_size() const;

 private:
  int l_;
  std::vector<std::vector<GpModel>> models_;
};

/// Sorted set of collection indices the controller combines, capped at n_b.
struct Selection {
  std::vector<int> indices;
  int n_b = 10;

  int count() const { return static_cast<int>(indices.size()); }
  bool contains(int idx) const;
};

/// Per-model posterior band at one point: row i corresponds to
/// selection.indices[i], columns are output dimensions.
struct BandEval {
  Mat mu;  // posterior means
  Mat up;  // mu + beta * sigma
  Mat lo;  // mu - beta * sigma
};

BandEval eval_bands(const GpCollection& coll, const Selection& sel, const Vec& x);

/// Weighted combination gbar(x) = sum_i lambda_i mu_i(x), one value per
/// output dimension. lambda is indexed like sel.indices.
Vec gbar_eval(const GpCollection& coll, const Selection& sel, const Vec& lambda,
              const Vec& x);

/// Pointwise uncertainty of a weighted combination against the intersected
/// posterior bands:
///   w_d = max( min_i (mu_i + beta_i sigma_i) - gbar_d,
///              gbar_d - max_i (mu_i - beta_i sigma_i) ).
/// active_upper/active_lower list every selection position within tol of the
/// attained min/max (per output dimension).
struct WtildeResult {
  Vec w;
  std::vector<std::vector<int>> active_upper;
  std::vector<std::vector<int>> active_lower;
};

WtildeResult wtilde_eval(const BandEval& bands, const Vec& gbar,
                         double tol = 1e-8);
WtildeResult wtilde_eval(const GpCollection& coll, const Selection& sel,
                         const Vec& lambda, const Vec& x, double tol = 1e-8);

/// One-step selection update: drop indices whose weights stayed at zero and
/// that never entered the active band extremes, then insert new_index if
/// capacity allows (otherwise the selection is kept unchanged apart from the
/// removals). lambda_star columns follow the pre-update selection order, one
/// row per horizon interval; used_flags marks indices that were active in
/// the band extremes along the optimal trajectory.
struct SelectionUpdate {
  Selection selection;
  std::vector<int> dropped;
  bool inserted = false;
};

SelectionUpdate select_update(const Selection& sel, const Mat& lambda_star,
                              const std::vector<char>& used_flags,
                              int new_index, double zero_tol = 1e-8);

}  // namespace gpr
