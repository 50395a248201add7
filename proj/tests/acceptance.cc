// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero when any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "fpswitch/align.h"
#include "fpswitch/error.h"
#include "fpswitch/filters.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/pipeline.h"
#include "fpswitch/policy.h"
#include "fpswitch/report.h"
#include "support.h"

using namespace fpswitch;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void Report(int id, const std::string& name, const Outcome& o) {
  if (!o.pass) ++failures;
  std::cout << fmt::format("criterion {} {}: {} ({})", id, name, o.pass ? "PASS" : "FAIL",
                           o.detail)
            << std::endl;
}

Outcome Guard(const std::function<Outcome()>& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    return {false, fmt::format("exception: {}", e.what())};
  }
}

// ---- 1 -------------------------------------------------------------------

Outcome DtwOracle() {
  const auto start = Clock::now();
  Rng rng(1001);
  int pairs = 0, agree = 0, infeasible = 0;
  double worst = 0.0;
  for (int t = 0; t < 600; ++t) {
    const bool grid = t % 2 == 0;
    const auto q = testing::RandomSequence(rng, rng.UniformInt(2, 6), grid);
    const auto p = testing::RandomSequence(rng, rng.UniformInt(2, 6), grid);
    const int band = rng.UniformInt(2, 5);
    const auto model =
        grid ? testing::SingleModalityModel(static_cast<fpcore::Modality>(t / 2 % fpcore::kNumModalities))
             : align::MetricModel::Initialized(DeriveSeed({1001, static_cast<uint64_t>(t)}), 0.3);
    const double oracle = testing::BruteForceDtw(model, q, p, band);
    ++pairs;
    if (std::isinf(oracle)) {
      ++infeasible;
      try {
        align::Dtw(model, q, p, band);
      } catch (const DomainError&) {
        ++agree;
      }
      continue;
    }
    const double d = align::Dtw(model, q, p, band).distance;
    const double err = std::fabs(d - oracle);
    worst = std::max(worst, grid ? 0.0 : err);
    if (grid ? d == oracle : err <= 1e-9) ++agree;
  }
  const double secs = Seconds(start);
  return {pairs >= 500 && agree == pairs && secs < 30.0,
          fmt::format("{}/{} pairs agree, {} infeasible on both sides, max real error {:.2e}, {:.2f} s",
                      agree, pairs, infeasible, worst, secs)};
}

// ---- 2 -------------------------------------------------------------------

Outcome SoftDtwChecks() {
  Rng rng(2002);
  int limit_ok = 0;
  double worst_limit = 0.0;
  for (int t = 0; t < 100; ++t) {
    const auto model = align::MetricModel::Initialized(DeriveSeed({2002, static_cast<uint64_t>(t)}), 0.3);
    const auto q = testing::RandomSequence(rng, rng.UniformInt(2, 6), false);
    const auto p = testing::RandomSequence(rng, rng.UniformInt(2, 6), false);
    const double hard = align::Dtw(model, q, p, 3).distance;
    const double soft = align::SoftDtw(model, q, p, 3, 1e-3, false).value;
    worst_limit = std::max(worst_limit, std::fabs(soft - hard));
    limit_ok += std::fabs(soft - hard) < 1e-2;
  }

  const auto model = align::MetricModel::Initialized(2003, 0.3);
  const auto q = testing::RandomSequence(rng, 5, false);
  const auto p = testing::RandomSequence(rng, 6, false);
  const double gamma = 0.5;
  const auto sd = align::SoftDtw(model, q, p, 3, gamma);

  std::vector<fpcore::FingerprintSequence> negs;
  for (int k = 0; k < 3; ++k) negs.push_back(testing::RandomSequence(rng, 5, false));
  std::vector<align::PairRef> neg_refs;
  for (const auto& n : negs) neg_refs.push_back({&q, &n});
  align::MarginOptions mopt;
  mopt.margin = 50.0;  // keeps every hinge active
  mopt.gamma = gamma;
  mopt.band = 3;
  std::vector<double> mgrad;
  align::MarginLoss(model, {&q, &p}, neg_refs, mopt, &mgrad);

  int grad_ok = 0, grad_total = 0;
  double worst_grad = 0.0;
  for (int k = 0; k < 25; ++k) {
    const size_t idx = rng.UniformInt(0, align::MetricModel::kParamCount - 1);
    const double x0 = model.params()[idx];
    auto soft_at = [&](double v) {
      auto m = model;
      m.params()[idx] = v;
      return align::SoftDtw(m, q, p, 3, gamma, false).value;
    };
    auto margin_at = [&](double v) {
      auto m = model;
      m.params()[idx] = v;
      return align::MarginLoss(m, {&q, &p}, neg_refs, mopt, nullptr);
    };
    const double e1 = testing::RelativeError(sd.grad[idx], testing::CentralDifference(soft_at, x0, 1e-5), 1e-7);
    const double e2 = testing::RelativeError(mgrad[idx], testing::CentralDifference(margin_at, x0, 1e-5), 1e-7);
    worst_grad = std::max({worst_grad, e1, e2});
    grad_ok += (e1 < 1e-3) + (e2 < 1e-3);
    grad_total += 2;
  }
  return {limit_ok == 100 && grad_ok == grad_total,
          fmt::format("limit {}/100 (max gap {:.2e}); gradients {}/{} over 25 parameters each "
                      "(max rel error {:.2e})",
                      limit_ok, worst_limit, grad_ok, grad_total, worst_grad)};
}

// ---- 3 -------------------------------------------------------------------

Outcome FilterProperties() {
  Rng rng(3003);
  int checks = 0, failed = 0;
  auto expect = [&](bool ok) {
    ++checks;
    failed += !ok;
  };
  for (int t = 0; t < 2000; ++t) {
    const int n = rng.UniformInt(1, 30);
    std::vector<double> x(n);
    for (double& v : x) v = rng.Uniform(-20, 20);
    const double c = rng.Uniform(-10, 10);
    const double sigma = rng.Uniform(0.1, 3.0), alpha = rng.Uniform(0.05, 1.0);
    const double q = rng.Uniform(0.0, 1.0), r = rng.Uniform(0.01, 10.0);
    const double m0 = rng.Uniform(-5, 5), p0 = rng.Uniform(0.1, 50);

    // Constant preservation: Gaussian and ELP exactly up to rounding, Kalman
    // when it starts on the constant.
    const std::vector<double> k(n, c);
    for (double v : filters::ApplyGaussian(k, sigma)) expect(std::fabs(v - c) <= 1e-12 * (1 + std::fabs(c)));
    for (double v : filters::ApplyElp(k, alpha)) expect(std::fabs(v - c) <= 1e-12 * (1 + std::fabs(c)));
    for (double v : filters::ApplyKalman(k, q, r, c, p0)) expect(std::fabs(v - c) <= 1e-12 * (1 + std::fabs(c)));

    // Shift equivariance.
    std::vector<double> xs = x;
    for (double& v : xs) v += c;
    const auto g0 = filters::ApplyGaussian(x, sigma), g1 = filters::ApplyGaussian(xs, sigma);
    const auto e0 = filters::ApplyElp(x, alpha), e1 = filters::ApplyElp(xs, alpha);
    const auto k0 = filters::ApplyKalman(x, q, r, m0, p0), k1 = filters::ApplyKalman(xs, q, r, m0 + c, p0);
    for (int i = 0; i < n; ++i) {
      expect(std::fabs(g1[i] - g0[i] - c) <= 1e-9);
      expect(std::fabs(e1[i] - e0[i] - c) <= 1e-9);
      expect(std::fabs(k1[i] - k0[i] - c) <= 1e-9);
    }

    // ELP identity at alpha = 1 (exact).
    expect(filters::ApplyElp(x, 1.0) == x);

    // Kalman constant convergence.
    const std::vector<double> five(5, c);
    const auto kc = filters::ApplyKalman(five, 0.0, 1.0, 0.0, 100.0);
    expect(std::fabs(kc.back() - c) < 0.05);
    for (int i = 1; i < 5; ++i) expect(std::fabs(kc[i] - c) <= std::fabs(kc[i - 1] - c));
  }
  return {failed == 0, fmt::format("{} of {} property checks hold over 2000 random inputs",
                                   checks - failed, checks)};
}

// ---- 4 -------------------------------------------------------------------

Outcome MetricSanity() {
  int ok = 0;
  std::string runs;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    const auto task = testing::WifiDiscriminativeTask(DeriveSeed({4004, seed}), 8, 3);
    align::MetricTrainOptions opt;
    const auto out = align::TrainMetric(align::MetricModel::Initialized(seed), {}, task, opt,
                                        fpcore::NormalizationConfig::Default());
    const auto w = out.metric.weights();
    const bool wifi_top =
        std::max_element(w.begin(), w.end()) - w.begin() == fpcore::Index(fpcore::Modality::kWifi);
    const double first = out.loss_history.front(), last = out.loss_history.back();
    const bool halved = last <= 0.5 * first;
    ok += wifi_top && halved;
    runs += fmt::format(" {}:{:.0f}%{}", seed, 100.0 * (1.0 - last / first), wifi_top ? "" : "!w");
  }
  return {ok >= 9, fmt::format("{}/10 seeds (loss drop per seed:{})", ok, runs)};
}

// ---- 5 -------------------------------------------------------------------

Outcome PpoCorrectness() {
  const bool clip = policy::ClippedRatio(1.5, 0.2) == 1.2 &&
                    policy::ClippedRatio(0.5, 0.2) == 0.8 &&
                    policy::ClippedRatio(1.0, 0.2) == 1.0 &&
                    policy::ClippedSurrogate(1.5, 1.0, 0.2) == 1.2 &&
                    policy::ClippedSurrogate(0.5, 1.0, 0.2) == 0.5 &&
                    policy::ClippedSurrogate(0.5, -1.0, 0.2) == -0.8 &&
                    policy::ClippedSurrogate(1.5, -1.0, 0.2) == -1.5;
  int solved = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) solved += testing::ToyPpoSolves(DeriveSeed({5005, seed}), 200);
  return {clip && solved >= 9,
          fmt::format("clip cases {}, toy environment solved in {}/10 seeds", clip ? "exact" : "wrong", solved)};
}

// ---- 6 and 8 -------------------------------------------------------------

pipeline::PipelineConfig EndToEndConfig() {
  auto kv = KvConfig::Parse("sites = A,B,C\nseed = 1\nsessions = 20\ncloudedge.rounds = 20\n");
  return pipeline::PipelineConfig::FromKv(kv);
}

void RunPipeline(const fs::path& dir) {
  fs::remove_all(dir);
  const auto cfg = EndToEndConfig();
  std::ostringstream log;
  pipeline::CmdSimulate(cfg, dir.string(), log);
  pipeline::CmdTrain(cfg, dir.string(), log);
  pipeline::CmdEvaluate(cfg, dir.string(), log);
}

Outcome EndToEnd(const fs::path& dir, double* runtime) {
  const auto start = Clock::now();
  RunPipeline(dir);
  *runtime = Seconds(start);
  double rel[3] = {};
  int sessions[3] = {};
  for (auto site : sim::kAllSites) {
    std::ifstream in(dir / fmt::format("report_{}.csv", sim::SiteName(site)));
    if (!in) throw IoError("missing report");
    const auto rows = report::ReadReportCsv(in);
    sessions[static_cast<int>(site)] = static_cast<int>(rows.size());
    rel[static_cast<int>(site)] = 100.0 * report::Summarize(rows).mean_relative;
  }
  const bool a = rel[0] >= 25.0, b = rel[1] >= 20.0, c = rel[2] >= 40.0;
  const bool order = rel[2] >= rel[0] && rel[0] >= rel[1];
  const bool enough = std::min({sessions[0], sessions[1], sessions[2]}) >= 20;
  return {a && b && c && order && enough && *runtime < 900.0,
          fmt::format("mean relative improvement A {:.1f}% (>=25), B {:.1f}% (>=20), C {:.1f}% (>=40), "
                      "ordering C>=A>=B {}, {} sessions per site, {:.1f} s",
                      rel[0], rel[1], rel[2], order ? "holds" : "broken", sessions[0], *runtime)};
}

Outcome Determinism(const fs::path& first, const fs::path& second) {
  RunPipeline(second);
  int compared = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(first)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), first);
    auto read = [](const fs::path& p) {
      std::ifstream in(p, std::ios::binary);
      std::ostringstream s;
      s << in.rdbuf();
      return s.str();
    };
    ++compared;
    if (!fs::exists(second / rel) || read(e.path()) != read(second / rel)) ++differ;
  }
  return {compared > 0 && differ == 0,
          fmt::format("{} output files compared byte for byte, {} differ", compared, differ)};
}

// ---- 7 -------------------------------------------------------------------

Outcome PrivacyGate() {
  Rng rng(7007);
  int leaks = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = testing::RandomPrivateSequence(rng);
    fpcore::DesensitizeOptions opt;
    opt.salt = rng.NextU64();
    leaks += fpcore::LeaksIdentity(s, fpcore::Desensitize(s, opt).Serialize());
  }
  return {leaks == 0, fmt::format("{} leaks over 1000 sequences", leaks)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "fpswitch_acceptance";
  Report(1, "dtw oracle equivalence", Guard(DtwOracle));
  Report(2, "soft-dtw limit and gradients", Guard(SoftDtwChecks));
  Report(3, "filter properties", Guard(FilterProperties));
  Report(4, "metric learning sanity", Guard(MetricSanity));
  Report(5, "ppo correctness", Guard(PpoCorrectness));
  double runtime = 0.0;
  Report(6, "end-to-end tts improvement", Guard([&] { return EndToEnd(work / "run1", &runtime); }));
  Report(7, "privacy gate", Guard(PrivacyGate));
  Report(8, "pipeline determinism", Guard([&] { return Determinism(work / "run1", work / "run2"); }));
  std::cout << (failures ? fmt::format("{} criteria failed", failures) : std::string("all criteria passed"))
            << std::endl;
  return failures ? 1 : 0;
}
