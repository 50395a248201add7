#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fpswitch/align.h"
#include "fpswitch/error.h"
#include "fpswitch/filters.h"
#include "support.h"

using namespace fpswitch;
using namespace fpswitch::filters;

namespace {

double ResidualVariance(const std::vector<double>& y, double slope, double icept) {
  double s = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double r = y[i] - (slope * i + icept);
    s += r * r;
  }
  return s / y.size();
}

}  // namespace

TEST_CASE("kalman: constant series converges") {
  const std::vector<double> x(5, 5.0);
  const auto y = ApplyKalman(x, 0.0, 1.0, 0.0, 100.0);
  for (size_t i = 1; i < y.size(); ++i) CHECK(std::fabs(y[i] - 5) <= std::fabs(y[i - 1] - 5));
  CHECK(std::fabs(y.back() - 5.0) < 0.05);
}

TEST_CASE("kalman: huge R ignores measurements") {
  const std::vector<double> x = {3, -8, 12, 0.5};
  for (double v : ApplyKalman(x, 0.0, 1e12, 2.0, 1.0)) CHECK(v == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("kalman: single measurement lands between prior and reading") {
  const std::vector<double> x = {10.0};
  const auto y = ApplyKalman(x, 0.1, 1.0, 0.0, 4.0);
  REQUIRE(y.size() == 1);
  CHECK(y[0] > 0.0);
  CHECK(y[0] < 10.0);
}

TEST_CASE("kalman: parameter errors") {
  const std::vector<double> x = {1.0};
  CHECK_THROWS_AS(ApplyKalman(x, 0.0, 0.0, 0.0, 1.0), ParameterError);
  CHECK_THROWS_AS(ApplyKalman(x, -1.0, 1.0, 0.0, 1.0), ParameterError);
  CHECK_THROWS_AS(ApplyKalman({}, 0.0, 1.0, 0.0, 1.0), ParameterError);
}

TEST_CASE("gaussian") {
  const std::vector<double> c(7, -3.25);
  for (double v : ApplyGaussian(c, 1.3)) CHECK(v == doctest::Approx(-3.25).epsilon(1e-12));
  const std::vector<double> x = {1, 4, -2, 8, 0.5};
  const auto d = ApplyGaussian(x, 0.01);
  for (size_t i = 0; i < x.size(); ++i) CHECK(std::fabs(d[i] - x[i]) < 1e-6);
  const std::vector<double> impulse = {0, 0, 1, 0, 0};
  const auto g = ApplyGaussian(impulse, 1.0);
  CHECK(g[0] == doctest::Approx(g[4]).epsilon(1e-12));
  CHECK(g[1] == doctest::Approx(g[3]).epsilon(1e-12));
  CHECK(g[2] > g[1]);
  CHECK(g[1] > g[0]);
  // Oracle: direct convolution with the same truncation and renormalization.
  for (int i = 0; i < 5; ++i) {
    double num = 0.0, den = 0.0;
    for (int k = -3; k <= 3; ++k) {
      const int j = i + k;
      if (j < 0 || j >= 5) continue;
      const double w = std::exp(-0.5 * k * k);
      num += w * impulse[j];
      den += w;
    }
    CHECK(g[i] == doctest::Approx(num / den).epsilon(1e-12));
  }
  CHECK_THROWS_AS(ApplyGaussian(x, 0.0), ParameterError);
}

TEST_CASE("gaussian: impulse mass away from edges is 1") {
  std::vector<double> impulse(21, 0.0);
  impulse[10] = 1.0;
  const auto g = ApplyGaussian(impulse, 1.0);
  CHECK(std::accumulate(g.begin(), g.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("elp") {
  const std::vector<double> x = {0.0, 1.0};
  const auto y = ApplyElp(x, 0.5);
  CHECK(y[0] == 0.0);
  CHECK(y[1] == 0.5);
  const std::vector<double> r = {3, 1, 4, 1, 5};
  CHECK(ApplyElp(r, 1.0) == r);
  const std::vector<double> c(4, 2.5);
  CHECK(ApplyElp(c, 0.3) == c);
  CHECK_THROWS_AS(ApplyElp(r, 0.0), ParameterError);
  CHECK_THROWS_AS(ApplyElp(r, 1.5), ParameterError);
}

TEST_CASE("shift equivariance") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> x(rng.UniformInt(1, 12));
    for (double& v : x) v = rng.Uniform(-10, 10);
    const double c = rng.Uniform(-5, 5);
    std::vector<double> xs = x;
    for (double& v : xs) v += c;
    const double sigma = rng.Uniform(0.1, 3.0), alpha = rng.Uniform(0.05, 1.0);
    const auto g0 = ApplyGaussian(x, sigma), g1 = ApplyGaussian(xs, sigma);
    const auto e0 = ApplyElp(x, alpha), e1 = ApplyElp(xs, alpha);
    const auto k0 = ApplyKalman(x, 0.2, 1.0, 1.0, 4.0), k1 = ApplyKalman(xs, 0.2, 1.0, 1.0 + c, 4.0);
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(g1[i] == doctest::Approx(g0[i] + c).epsilon(1e-9));
      CHECK(e1[i] == doctest::Approx(e0[i] + c).epsilon(1e-9));
      CHECK(k1[i] == doctest::Approx(k0[i] + c).epsilon(1e-9));
    }
  }
}

TEST_CASE("select_filter") {
  FilterContext ctx{4.0, 1.0, 1.5, {true, true, false, false, true}};
  const auto uniform = SelectFilter(SelectorModel(), ctx);
  for (double w : uniform.weights) CHECK(w == doctest::Approx(1.0 / 3).epsilon(1e-12));
  Rng rng(9);
  for (int t = 0; t < 100; ++t) {
    const auto model = SelectorModel::Initialized(t, 3.0);
    FilterContext c{rng.Uniform(0, 50), rng.Uniform(0, 10), rng.Uniform(0, 3), {}};
    for (auto& p : c.presence) p = rng.Bernoulli(0.5);
    const auto choice = SelectFilter(model, c);
    CHECK_NOTHROW(choice.Validate());
    CHECK(choice.weights[0] + choice.weights[1] + choice.weights[2] ==
          doctest::Approx(1.0).epsilon(1e-9));
  }
  const auto m = SelectorModel::Initialized(42);
  const auto a = SelectFilter(m, ctx), b = SelectFilter(m, ctx);
  CHECK(a.weights == b.weights);
  CHECK(a.sigma == b.sigma);
}

TEST_CASE("denoise: hard selection and tie-break") {
  FilterChoice elp;
  elp.weights = {0.1, 0.1, 0.8};
  elp.alpha = 1.0;
  const std::vector<double> x = {1, 5, 2, 8};
  CHECK(Denoise(elp, x) == x);
  FilterChoice tie;
  tie.weights = {0.5, 0.5, 0.0};
  CHECK(tie.Selected() == FilterKind::kKalman);
}

TEST_CASE("denoise: gaussian smoothing reduces residual variance on a noisy ramp") {
  Rng rng(21);
  std::vector<double> x(30);
  for (size_t i = 0; i < x.size(); ++i) x[i] = 0.5 * i + rng.Normal(0.0, 1.0);
  // Least-squares line through the input.
  std::vector<double> t(x.size());
  std::iota(t.begin(), t.end(), 0.0);
  const double slope = fpcore::LeastSquaresSlope(t, x);
  const double icept = std::accumulate(x.begin(), x.end(), 0.0) / x.size() -
                       slope * (x.size() - 1) / 2.0;
  FilterChoice g;
  g.weights = {0.0, 1.0, 0.0};
  g.sigma = 1.0;
  CHECK(ResidualVariance(Denoise(g, x), slope, icept) <= ResidualVariance(x, slope, icept));
}

TEST_CASE("soft mixture equals hard selection for a one-hot choice") {
  const std::vector<double> x = {2, -1, 4, 4.5, 0};
  for (int k = 0; k < kNumFilters; ++k) {
    FilterChoice c;
    c.weights = {0, 0, 0};
    c.weights[k] = 1.0;
    c.q = 0.1;
    c.r = 2.0;
    c.sigma = 0.7;
    c.alpha = 0.4;
    const auto hard = Denoise(c, x), soft = DenoiseSoft(c, x);
    for (size_t i = 0; i < x.size(); ++i) CHECK(soft[i] == doctest::Approx(hard[i]).epsilon(1e-12));
  }
}

namespace {

// A tiny selector batch scored by the Soft-DTW margin loss.
std::vector<SelectorBatch> MarginBatches(const align::MetricModel& metric, double margin) {
  const auto task = testing::WifiDiscriminativeTask(17, 3, 2);
  align::MarginOptions opt;
  opt.margin = margin;
  return align::BuildSelectorBatches(metric, task, opt, fpcore::NormalizationConfig::Default());
}

}  // namespace

TEST_CASE("train_selector: separated batch leaves the model unchanged") {
  // Negatives far beyond the margin: hinge inactive everywhere.
  align::MetricModel metric;
  auto batches = MarginBatches(metric, -1e6);
  const auto model = SelectorModel::Initialized(3);
  SelectorTrainOptions opt;
  opt.steps = 5;
  std::vector<double> hist;
  const auto out = TrainSelector(model, batches, opt, &hist);
  CHECK(hist.front() == 0.0);
  CHECK(out == model);
}

TEST_CASE("train_selector: loss non-increasing over a 5-step moving average") {
  align::MetricModel metric;
  auto batches = MarginBatches(metric, 1.0);
  SelectorTrainOptions opt;
  opt.steps = 50;
  opt.step_size = 0.05;
  std::vector<double> hist;
  TrainSelector(SelectorModel::Initialized(3), batches, opt, &hist);
  REQUIRE(hist.size() >= 50);
  for (double v : hist) CHECK(std::isfinite(v));
  for (size_t i = 5; i + 5 <= hist.size(); ++i) {
    const double prev = std::accumulate(hist.begin() + i - 5, hist.begin() + i, 0.0);
    const double cur = std::accumulate(hist.begin() + i - 4, hist.begin() + i + 1, 0.0);
    CHECK(cur <= prev + 1e-9);
  }
}

TEST_CASE("train_selector: gradient matches central difference") {
  align::MetricModel metric;
  auto batches = MarginBatches(metric, 1.0);
  auto model = SelectorModel::Initialized(8, 0.5);
  std::vector<double> grad;
  SelectorObjective(model, batches, 0.0, &grad);
  Rng rng(4);
  for (int k = 0; k < 5; ++k) {
    const size_t idx = rng.UniformInt(0, static_cast<int>(grad.size()) - 1);
    auto f = [&](double v) {
      auto m = model;
      m.net().params()[idx] = v;
      return SelectorObjective(m, batches, 0.0, nullptr);
    };
    const double num = testing::CentralDifference(f, model.net().params()[idx], 1e-4);
    CHECK(testing::RelativeError(grad[idx], num, 1e-7) < 1e-3);
  }
}

TEST_CASE("train_selector: empty batch") {
  CHECK_THROWS_AS(TrainSelector(SelectorModel(), {}, {}), DomainError);
}
