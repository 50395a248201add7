#include <doctest.h>

#include <cmath>

#include "fpswitch/align.h"
#include "fpswitch/error.h"
#include "support.h"

using namespace fpswitch;
using namespace fpswitch::align;
using fpcore::Modality;

TEST_CASE("cell_cost") {
  Rng rng(1);
  const auto model = MetricModel::Initialized(2, 0.3);
  const auto s = testing::RandomSequence(rng, 2, false);
  CHECK(CellCost(model, s.windows[0], s.windows[0]) == 0.0);
  CHECK(CellCost(model, s.windows[0], s.windows[1]) ==
        doctest::Approx(testing::OracleCellCost(model, s.windows[0], s.windows[1])).epsilon(1e-12));

  auto q = s.windows[0];
  auto f = s.windows[1];
  q.mask[fpcore::Index(Modality::kWifi)].present = false;
  const double before = CellCost(model, q, f);
  q.mutable_features(Modality::kWifi) = {9, 9, 9};
  CHECK(CellCost(model, q, f) == before);

  const auto pdr = testing::SingleModalityModel(Modality::kPdr);
  auto a = testing::FullWindow(0), b = testing::FullWindow(1);
  b.mutable_features(Modality::kPdr) = {1, 0, 0};
  CHECK(CellCost(pdr, a, b) == doctest::Approx(1.0).epsilon(1e-12));

  b.mutable_features(Modality::kPdr) = {1, 0};
  CHECK_THROWS_AS(CellCost(pdr, a, b), DomainError);
}

TEST_CASE("dtw: self alignment") {
  Rng rng(2);
  const auto s = testing::RandomSequence(rng, 5, false);
  const auto r = Dtw(MetricModel::Initialized(1), s, s, 2);
  CHECK(r.distance == 0.0);
  CHECK(r.similarity == 1.0);
  REQUIRE(r.path.size() == 5);
  for (int k = 0; k < 5; ++k) CHECK(r.path[k] == std::make_pair(k, k));
}

TEST_CASE("dtw: 1-D warping example") {
  const std::vector<double> q = {0, 1, 2}, p = {0, 1, 1, 2};
  const auto model = testing::SingleModalityModel(Modality::kPdr);
  const auto r = Dtw(model, testing::Scalar1d(q), testing::Scalar1d(p), 2);
  CHECK(r.distance == 0.0);
  CHECK(r.path.front() == std::make_pair(0, 0));
  CHECK(r.path.back() == std::make_pair(2, 3));
}

TEST_CASE("dtw: matches brute force on random pairs") {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const bool grid = t % 2 == 0;
    const auto q = testing::RandomSequence(rng, rng.UniformInt(2, 6), grid);
    const auto p = testing::RandomSequence(rng, rng.UniformInt(2, 6), grid);
    const int band = rng.UniformInt(2, 4);
    const auto model = grid ? testing::SingleModalityModel(Modality::kCell)
                            : MetricModel::Initialized(t, 0.2);
    const double oracle = testing::BruteForceDtw(model, q, p, band);
    if (std::isinf(oracle)) {
      CHECK_THROWS_AS(Dtw(model, q, p, band), DomainError);
      continue;
    }
    const double d = Dtw(model, q, p, band).distance;
    if (grid) {
      CHECK(d == oracle);
    } else {
      CHECK(std::fabs(d - oracle) <= 1e-9);
    }
  }
}

TEST_CASE("dtw: band errors") {
  Rng rng(4);
  const auto q = testing::RandomSequence(rng, 3, false);
  CHECK_THROWS_AS(Dtw(MetricModel(), q, q, 0), ParameterError);
}

TEST_CASE("in_band scales with the length ratio") {
  CHECK(InBand(0, 0, 3, 6, 1));
  CHECK(InBand(2, 5, 3, 6, 1));
  CHECK(InBand(1, 4, 3, 6, 1));
  CHECK_FALSE(InBand(0, 4, 3, 6, 1));
  CHECK_FALSE(InBand(0, 5, 3, 6, 1));
}

TEST_CASE("soft_dtw") {
  Rng rng(5);
  const auto model = MetricModel::Initialized(7, 0.2);
  const auto s = testing::RandomSequence(rng, 4, false);
  for (double g : {1.0, 0.1, 1e-3}) CHECK(SoftDtw(model, s, s, 2, g, false).value <= 1e-12);
  CHECK(std::fabs(SoftDtw(model, s, s, 2, 1e-4, false).value) < 1e-2);
  CHECK_THROWS_AS(SoftDtw(model, s, s, 2, 0.0), ParameterError);

  for (int t = 0; t < 20; ++t) {
    const auto q = testing::RandomSequence(rng, rng.UniformInt(2, 5), false);
    const auto p = testing::RandomSequence(rng, rng.UniformInt(2, 5), false);
    const double hard = Dtw(model, q, p, 3).distance;
    CHECK(std::fabs(SoftDtw(model, q, p, 3, 1e-3, false).value - hard) < 1e-2);
  }
}

TEST_CASE("soft_dtw gradient matches central difference") {
  Rng rng(6);
  const auto model = MetricModel::Initialized(8, 0.3);
  const auto q = testing::RandomSequence(rng, 4, false);
  const auto p = testing::RandomSequence(rng, 5, false);
  const auto res = SoftDtw(model, q, p, 2, 0.5);
  for (int k = 0; k < 5; ++k) {
    const size_t idx = rng.UniformInt(0, MetricModel::kParamCount - 1);
    auto f = [&](double v) {
      auto m = model;
      m.params()[idx] = v;
      return SoftDtw(m, q, p, 2, 0.5, false).value;
    };
    const double num = testing::CentralDifference(f, model.params()[idx], 1e-5);
    CHECK(testing::RelativeError(res.grad[idx], num, 1e-7) < 1e-3);
  }
}

TEST_CASE("margin loss arithmetic") {
  const std::vector<double> two = {2.0}, zero = {0.0};
  CHECK(MarginFromValues(0.0, two, 1.0) == 0.0);
  CHECK(MarginFromValues(2.0, zero, 1.0) == 3.0);
  // pos 2: negatives 6 and 0 give hinges 0 and 3.
  const std::vector<double> mixed = {6.0, 0.0};
  CHECK(MarginFromValues(2.0, mixed, 1.0) == 1.5);

  Rng rng(9);
  const auto q = testing::RandomSequence(rng, 3, false);
  CHECK_THROWS_AS(MarginLoss(MetricModel(), {&q, &q}, {}, {}), DomainError);
}

TEST_CASE("train_metric: zero epochs and determinism") {
  const auto task = testing::WifiDiscriminativeTask(3, 4, 2);
  MetricTrainOptions opt;
  opt.epochs = 0;
  const auto norm = fpcore::NormalizationConfig::Default();
  const auto init = MetricModel::Initialized(1);
  CHECK(TrainMetric(init, {}, task, opt, norm).metric == init);
  opt.epochs = 3;
  const auto a = TrainMetric(init, {}, task, opt, norm);
  const auto b = TrainMetric(init, {}, task, opt, norm);
  CHECK(a.metric == b.metric);
  CHECK_THROWS_AS(TrainMetric(init, {}, {}, opt, norm), DomainError);
}

TEST_CASE("train_metric: WiFi-discriminative task puts the top weight on WiFi") {
  const auto task = testing::WifiDiscriminativeTask(11, 8, 3);
  MetricTrainOptions opt;
  opt.epochs = 30;
  const auto out = TrainMetric(MetricModel::Initialized(11), {}, task, opt,
                               fpcore::NormalizationConfig::Default());
  const auto w = out.metric.weights();
  CHECK(std::max_element(w.begin(), w.end()) - w.begin() == fpcore::Index(Modality::kWifi));
  CHECK(out.loss_history.back() <= 0.5 * out.loss_history.front());
}

namespace {

fpcore::FingerprintSequence Shifted(const fpcore::FingerprintSequence& s, double c) {
  auto out = s;
  for (auto& w : out.windows) {
    for (auto m : fpcore::kAllModalities) {
      for (double& v : w.mutable_features(m)) v += c;
    }
  }
  return out;
}

}  // namespace

TEST_CASE("match ranking") {
  Rng rng(12);
  auto live = testing::RandomSequence(rng, 6, false);
  fpcore::FingerprintLibrary lib;
  const auto model = MetricModel();
  const filters::SelectorModel selector;
  const auto norm = fpcore::NormalizationConfig::Default();
  CHECK(Match(model, selector, live, lib, 2, 3, norm).empty());

  const auto far_id = lib.CommitSegment(Shifted(live, 0.8), {6.0, fpcore::SwitchKind::kWifiToCell, 0});
  const auto near_id = lib.CommitSegment(Shifted(live, 0.1), {6.0, fpcore::SwitchKind::kWifiToCell, 0});
  const auto ranked = Match(model, selector, live, lib, 2, 10, norm);
  REQUIRE(ranked.size() == 2);
  CHECK(ranked[0].prototype_id == near_id);
  CHECK(ranked[1].prototype_id == far_id);
  CHECK(ranked[0].result.similarity > ranked[1].result.similarity);
}

TEST_CASE("match: exact copy ranks first with similarity 1") {
  Rng rng(13);
  // Only a constant series passes every filter unchanged.
  auto live = testing::RandomSequence(rng, 6, false);
  for (size_t i = 1; i < live.windows.size(); ++i) {
    live.windows[i] = live.windows[0];
    live.windows[i].timestamp = static_cast<double>(i);
  }
  fpcore::FingerprintLibrary lib;
  lib.CommitSegment(Shifted(live, 0.5), {6.0, fpcore::SwitchKind::kApHandover, 0});
  const auto id = lib.CommitSegment(live, {6.0, fpcore::SwitchKind::kApHandover, 0});
  const auto ranked = Match(MetricModel(), filters::SelectorModel(), live, lib, 2, 1,
                            fpcore::NormalizationConfig::Default());
  REQUIRE(ranked.size() == 1);
  CHECK(ranked[0].prototype_id == id);
  CHECK(ranked[0].result.similarity == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("metric tensors round-trip") {
  const auto m = MetricModel::Initialized(5);
  CHECK(MetricModel::FromTensors(m.ToTensors()) == m);
}
