#include "gpr/uncertainty.hpp"

#include <algorithm>

namespace gpr {

int GpCollection::add(std::vector<GpModel> per_dim) {
  GPR_REQUIRE(static_cast<int>(per_dim.size()) == l_,
              "collection entry needs one model per output dimension");
  if (!models_.empty()) {
    for (int d = 0; d < l_; ++d)
      GPR_REQUIRE(models_.back()[d].data().is_prefix_of(per_dim[d].data()),
                  "collection data sets must be nested");
  }
  models_.push_back(std::move(per_dim));
  return static_cast<int>(models_.size()) - 1;
}

const GpModel& GpCollection::model(int index, int dim) const {
  GPR_REQUIRE(index >= 0 && index < size(), "collection index out of range");
  GPR_REQUIRE(dim >= 0 && dim < l_, "output dimension out of range");
  return models_[index][dim];
}

const std::vector<GpModel>& GpCollection::models(int index) const {
  GPR_REQUIRE(index >= 0 && index < size(), "collection index out of range");
  return models_[index];
}

int GpCollection::newest_size() const {
  if (models_.empty()) return 0;
  return models_.back()[0].size();
}

bool Selection::contains(int idx) const {
  return std::find(indices.begin(), indices.end(), idx) != indices.end();
}

BandEval eval_bands(const GpCollection& coll, const Selection& sel, const Vec& x) {
  GPR_REQUIRE(sel.count() > 0, "selection is empty");
  const int l = coll.output_dim();
  BandEval b;
  b.mu.resize(sel.count(), l);
  b.up.resize(sel.count(), l);
  b.lo.resize(sel.count(), l);
  for (int i = 0; i < sel.count(); ++i)
    for (int d = 0; d < l; ++d) {
      const GpModel& gp = coll.model(sel.indices[i], d);
      const auto [mu, sd] = gp.posterior(x);
      b.mu(i, d) = mu;
      b.up(i, d) = mu + gp.beta() * sd;
      b.lo(i, d) = mu - gp.beta() * sd;
    }
  return b;
}

Vec gbar_eval(const GpCollection& coll, const Selection& sel, const Vec& lambda,
              const Vec& x) {
  GPR_REQUIRE(lambda.size() == sel.count(), "lambda length mismatch");
  const BandEval b = eval_bands(coll, sel, x);
  return b.mu.transpose() * lambda;
}

WtildeResult wtilde_eval(const BandEval& bands, const Vec& gbar, double tol) {
  const int l = static_cast<int>(gbar.size());
  GPR_REQUIRE(bands.mu.cols() == l, "band/gbar dimension mismatch");
  WtildeResult r;
  r.w.resize(l);
  r.active_upper.resize(l);
  r.active_lower.resize(l);
  for (int d = 0; d < l; ++d) {
    const double up_min = bands.up.col(d).minCoeff();
    const double lo_max = bands.lo.col(d).maxCoeff();
    r.w[d] = std::max(up_min - gbar[d], gbar[d] - lo_max);
    for (int i = 0; i < bands.up.rows(); ++i) {
      if (bands.up(i, d) <= up_min + tol) r.active_upper[d].push_back(i);
      if (bands.lo(i, d) >= lo_max - tol) r.active_lower[d].push_back(i);
    }
  }
  return r;
}

WtildeResult wtilde_eval(const GpCollection& coll, const Selection& sel,
                         const Vec& lambda, const Vec& x, double tol) {
  const BandEval b = eval_bands(coll, sel, x);
  const Vec gbar = b.mu.transpose() * lambda;
  return wtilde_eval(b, gbar, tol);
}

SelectionUpdate select_update(const Selection& sel, const Mat& lambda_star,
                              const std::vector<char>& used_flags,
                              int new_index, double zero_tol) {
  GPR_REQUIRE(lambda_star.cols() == sel.count(),
              "lambda_star column count mismatch");
  GPR_REQUIRE(static_cast<int>(used_flags.size()) == sel.count(),
              "used_flags length mismatch");

  SelectionUpdate out;
  out.selection.n_b = sel.n_b;
  for (int i = 0; i < sel.count(); ++i) {
    const bool zero_weight =
        lambda_star.rows() == 0 ||
        lambda_star.col(i).cwiseAbs().maxCoeff() <= zero_tol;
    if (zero_weight && !used_flags[i])
      out.dropped.push_back(sel.indices[i]);
    else
      out.selection.indices.push_back(sel.indices[i]);
  }
  if (!sel.contains(new_index) &&
      out.selection.count() < out.selection.n_b) {
    out.selection.indices.push_back(new_index);
    out.inserted = true;
  }
  std::sort(out.selection.indices.begin(), out.selection.indices.end());
  return out;
}

}  // namespace gpr
