#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"

#include "gpr/uncertainty.hpp"

using namespace gpr;

namespace {

KernelSpec unit_kernel(int dim) {
  KernelSpec k;
  k.sigma_f2 = 1.0;
  k.lengthscales = Vec::Constant(dim, 0.8);
  return k;
}

// collection over nested data sets of a 1-d target, one entry per prefix size
GpCollection nested_collection(int n_models, int n0, RandomStream& rng) {
  DataSet d;
  GpCollection coll(1);
  const KernelSpec k = unit_kernel(1);
  for (int i = 0; i < n0; ++i)
    d.append(Vec::Constant(1, rng.uniform(-2.0, 2.0)),
             0.4 * std::sin(2.0 * rng.uniform(-2.0, 2.0)));
  for (int mdl = 0; mdl < n_models; ++mdl) {
    coll.add({GpModel::fit(d, k, 0.1, BoundInputs{1.0, 0.1, 0.1, -1.0})});
    d.append(Vec::Constant(1, rng.uniform(-2.0, 2.0)),
             0.4 * std::sin(2.0 * rng.uniform(-2.0, 2.0)));
  }
  return coll;
}

Selection select_all(const GpCollection& coll) {
  Selection sel;
  for (int i = 0; i < coll.size(); ++i) sel.indices.push_back(i);
  sel.n_b = 10;
  return sel;
}

}  // namespace

TEST_CASE("bands match the per-model posterior") {
  RandomStream rng(31);
  const GpCollection coll = nested_collection(3, 4, rng);
  const Selection sel = select_all(coll);
  const Vec x = Vec::Constant(1, 0.7);
  const BandEval bands = eval_bands(coll, sel, x);
  REQUIRE(bands.mu.rows() == 3);
  REQUIRE(bands.mu.cols() == 1);
  for (int i = 0; i < 3; ++i) {
    const GpModel& m = coll.model(i, 0);
    const auto [mu, sd] = m.posterior(x);
    CHECK(bands.mu(i, 0) == doctest::Approx(mu).epsilon(1e-14));
    CHECK(bands.up(i, 0) == doctest::Approx(mu + m.beta() * sd).epsilon(1e-14));
    CHECK(bands.lo(i, 0) == doctest::Approx(mu - m.beta() * sd).epsilon(1e-14));
  }
}

TEST_CASE("gbar is the weighted mean combination") {
  RandomStream rng(32);
  const GpCollection coll = nested_collection(3, 4, rng);
  const Selection sel = select_all(coll);
  const Vec x = Vec::Constant(1, -0.4);
  Vec lambda(3);
  lambda << 0.2, 0.5, 0.3;
  const BandEval bands = eval_bands(coll, sel, x);
  const Vec gbar = gbar_eval(coll, sel, lambda, x);
  CHECK(gbar[0] ==
        doctest::Approx(bands.mu.col(0).dot(lambda)).epsilon(1e-14));
}

TEST_CASE("wtilde against hand-built bands") {
  BandEval bands;
  bands.mu.resize(2, 1);
  bands.up.resize(2, 1);
  bands.lo.resize(2, 1);
  bands.mu << 0.0, 0.2;
  bands.up << 0.5, 0.4;
  bands.lo << -0.5, 0.1;

  // intersected band is [0.1, 0.4]
  Vec gbar = Vec::Constant(1, 0.3);
  WtildeResult r = wtilde_eval(bands, gbar);
  CHECK(r.w[0] == doctest::Approx(std::max(0.4 - 0.3, 0.3 - 0.1)).epsilon(1e-14));
  REQUIRE(r.active_upper.size() == 1);
  CHECK(r.active_upper[0] == std::vector<int>{1});
  CHECK(r.active_lower[0] == std::vector<int>{1});

  // estimate outside the intersection still yields the signed distance
  gbar[0] = 0.6;
  r = wtilde_eval(bands, gbar);
  CHECK(r.w[0] == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("wtilde ties report every active position") {
  BandEval bands;
  bands.mu.resize(2, 1);
  bands.up.resize(2, 1);
  bands.lo.resize(2, 1);
  bands.mu << 0.0, 0.0;
  bands.up << 0.4, 0.4;
  bands.lo << -0.4, -0.1;
  const WtildeResult r = wtilde_eval(bands, Vec::Zero(1));
  CHECK((r.active_upper[0] == std::vector<int>{0, 1}));
  CHECK((r.active_lower[0] == std::vector<int>{1}));
}

TEST_CASE("larger selections never widen the uncertainty") {
  RandomStream rng(33);
  const GpCollection coll = nested_collection(10, 5, rng);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec x = Vec::Constant(1, rng.uniform(-2.0, 2.0));
    Selection sel;
    sel.n_b = 10;
    double prev = std::numeric_limits<double>::infinity();
    for (int grow = 0; grow < coll.size(); ++grow) {
      sel.indices.push_back(grow);
      const Vec lambda = Vec::Unit(sel.count(), 0);  // weight on the oldest
      const WtildeResult r = wtilde_eval(coll, sel, lambda, x);
      CHECK(r.w[0] <= prev + 1e-12);
      prev = r.w[0];
    }
  }
}

TEST_CASE("selection update drops unused zero-weight members") {
  Selection sel;
  sel.indices = {0, 2, 5};
  sel.n_b = 3;

  Mat lambda(4, 3);
  lambda.setZero();
  lambda.col(0).setConstant(0.5);  // index 0 carries weight
  std::vector<char> used = {1, 0, 1};  // index 5 active in the bands

  const SelectionUpdate upd = select_update(sel, lambda, used, 7);
  CHECK((upd.dropped == std::vector<int>{2}));
  CHECK(upd.inserted);
  CHECK((upd.selection.indices == std::vector<int>{0, 5, 7}));
}

TEST_CASE("selection update respects capacity") {
  Selection sel;
  sel.indices = {0, 1, 2};
  sel.n_b = 3;
  Mat lambda = Mat::Constant(4, 3, 0.3);
  const std::vector<char> used = {1, 1, 1};
  const SelectionUpdate upd = select_update(sel, lambda, used, 9);
  CHECK(!upd.inserted);
  CHECK(upd.dropped.empty());
  CHECK((upd.selection.indices == std::vector<int>{0, 1, 2}));
}

TEST_CASE("selection update keeps zero-weight members the bands rely on") {
  Selection sel;
  sel.indices = {0, 1};
  sel.n_b = 4;
  Mat lambda(2, 2);
  lambda << 1.0, 0.0, 1.0, 0.0;
  const std::vector<char> used = {0, 1};
  const SelectionUpdate upd = select_update(sel, lambda, used, 3);
  // index 1 has zero weight but an active band; index 0 has weight
  CHECK(upd.dropped.empty());
  CHECK(upd.inserted);
  CHECK((upd.selection.indices == std::vector<int>{0, 1, 3}));
}

TEST_CASE("collection bookkeeping") {
  RandomStream rng(34);
  GpCollection coll = nested_collection(4, 3, rng);
  CHECK(coll.size() == 4);
  CHECK(coll.output_dim() == 1);
  CHECK(coll.newest_size() == 6);  // 3 seed points + 3 appends
  for (int i = 0; i + 1 < coll.size(); ++i)
    CHECK(coll.model(i, 0).data().is_prefix_of(coll.model(i + 1, 0).data()));
}
