#include <doctest.h>

#include <cmath>

#include "fpswitch/error.h"
#include "fpswitch/policy.h"
#include "support.h"

using namespace fpswitch;
using namespace fpswitch::policy;

TEST_CASE("act: zero model is uniform") {
  const PolicyModel model;
  Rng rng(1);
  PolicyState s;
  const auto r = Act(model, s, ActMode::kSample, rng);
  for (double p : r.probs) CHECK(p == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(r.log_prob == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  CHECK(r.value == 0.0);
}

TEST_CASE("act: greedy picks the largest logit") {
  PolicyModel model;
  // Output bias of the actor is the last kNumActions parameters.
  auto p = model.actor().params();
  p[p.size() - kNumActions + 1] = 5.0;
  Rng rng(2);
  const auto f = PolicyState{}.Features();
  CHECK(model.Logits(f)[1] == 5.0);
  for (int k = 0; k < 5; ++k) {
    CHECK(Act(model, f, ActMode::kGreedy, rng).action == static_cast<int>(Action::kIncreaseScanRate));
  }
}

TEST_CASE("act: sampling is reproducible") {
  const auto model = PolicyModel::Initialized(4);
  const auto f = PolicyState{}.Features();
  Rng a(9), b(9);
  for (int k = 0; k < 20; ++k) {
    CHECK(Act(model, f, ActMode::kSample, a).action == Act(model, f, ActMode::kSample, b).action);
  }
}

TEST_CASE("policy state validation") {
  PolicyState s;
  s.similarity = 1.5;
  CHECK_THROWS_AS(s.Validate(), DomainError);
  s.similarity = 0.5;
  s.rssi = NAN;
  CHECK_THROWS_AS(s.Validate(), DomainError);
}

TEST_CASE("composite reward") {
  RewardWeights w{1.0, 0.0, 0.0};
  CHECK(CompositeReward(w, 6.08, 0.0, 0.0) == doctest::Approx(6.08).epsilon(1e-12));
  CHECK(CompositeReward(RewardWeights{}, 0.0, 0.0, 0.0) == 0.0);
  const RewardWeights d;
  CHECK(CompositeReward(d, 2.0, 0.4, -1.0) == doctest::Approx(2.0 + 0.2 - 2.0).epsilon(1e-12));
  // Linear in each weight.
  CHECK(CompositeReward({2, 0, 0}, 3.0, 0, 0) == 2 * CompositeReward({1, 0, 0}, 3.0, 0, 0));
  RewardWeights bad{-1.0, 0.5, 2.0};
  CHECK_THROWS_AS(bad.Validate(), ParameterError);
}

TEST_CASE("ppo clip arithmetic") {
  CHECK(ClippedRatio(1.5, 0.2) == 1.2);
  CHECK(ClippedRatio(0.5, 0.2) == 0.8);
  CHECK(ClippedRatio(1.1, 0.2) == 1.1);
  CHECK(ClippedSurrogate(1.5, 2.0, 0.2) == doctest::Approx(2.4).epsilon(1e-15));
  CHECK(ClippedSurrogate(0.5, 2.0, 0.2) == 1.0);
  CHECK(ClippedSurrogate(0.5, -1.0, 0.2) == -0.8);
  CHECK(ClippedSurrogate(1.5, -1.0, 0.2) == -1.5);
}

TEST_CASE("ppo: identity ratio gives the mean advantage") {
  const auto model = PolicyModel::Initialized(5);
  Rng rng(3);
  std::vector<PpoSample> samples;
  double mean_adv = 0.0;
  for (int k = 0; k < 10; ++k) {
    PpoSample s;
    s.features = testing::ToyFeatures(k % 2);
    s.action = k % kNumActions;
    s.old_log_prob = LogProb(model, s.features, s.action);
    s.advantage = rng.Uniform(-1, 1);
    s.ret = 0.0;
    mean_adv += s.advantage / 10;
    samples.push_back(s);
  }
  PpoConfig cfg;
  cfg.value_coef = 0.0;
  cfg.entropy_coef = 0.0;
  std::vector<double> grad;
  const double loss = PpoLoss(model, samples, cfg, &grad);
  CHECK(-loss == doctest::Approx(mean_adv).epsilon(1e-12));
  for (double g : grad) CHECK(std::isfinite(g));
}

TEST_CASE("ppo loss gradient matches central difference") {
  const auto model = PolicyModel::Initialized(6);
  Rng rng(4);
  std::vector<PpoSample> samples;
  for (int k = 0; k < 8; ++k) {
    PpoSample s;
    s.features.resize(PolicyState::kFeatures);
    for (double& v : s.features) v = rng.Uniform(-1, 1);
    s.action = rng.UniformInt(0, kNumActions - 1);
    s.old_log_prob = LogProb(model, s.features, s.action) + rng.Uniform(-0.1, 0.1);
    s.advantage = rng.Uniform(-1, 1);
    s.ret = rng.Uniform(-1, 1);
    samples.push_back(s);
  }
  const PpoConfig cfg;
  std::vector<double> grad;
  PpoLoss(model, samples, cfg, &grad);
  const auto flat = model.FlatParams();
  for (int k = 0; k < 10; ++k) {
    const size_t idx = rng.UniformInt(0, static_cast<int>(flat.size()) - 1);
    auto f = [&](double v) {
      auto m = model;
      auto p = flat;
      p[idx] = v;
      m.SetFlatParams(p);
      return PpoLoss(m, samples, cfg, nullptr);
    };
    CHECK(testing::RelativeError(grad[idx], testing::CentralDifference(f, flat[idx], 1e-6), 1e-7) < 1e-3);
  }
}

TEST_CASE("gae on a terminal episode") {
  const std::vector<double> rewards = {0, 0, 1}, values = {0, 0, 0};
  std::vector<double> adv, ret;
  ComputeGae(rewards, values, 1.0, 1.0, adv, ret);
  CHECK(adv == std::vector<double>{1, 1, 1});
  ComputeGae(rewards, values, 0.5, 1.0, adv, ret);
  CHECK(adv[0] == 0.25);
}

TEST_CASE("ppo: empty batch") {
  CHECK_THROWS_AS(PpoUpdate(PolicyModel(), {}, {}, 1), DomainError);
}

TEST_CASE("ppo solves the toy environment") {
  int solved = 0;
  for (uint64_t seed = 1; seed <= 3; ++seed) solved += testing::ToyPpoSolves(seed, 200);
  CHECK(solved == 3);
}

namespace {

const fpcore::NormalizationConfig& Norm() {
  static const auto norm = fpcore::NormalizationConfig::Default();
  return norm;
}

}  // namespace

TEST_CASE("rollout: never handing over is censored") {
  const auto trace = sim::Generate(sim::MakeScenario(sim::Site::kB, 2));
  ScriptedSource hold([](const PolicyState&, double) { return Action::kHold; });
  const AidtwStack stack{nullptr, nullptr, nullptr, &Norm()};
  const auto traj = Rollout(hold, trace, stack, RolloutConfig{}, 1);
  CHECK(traj.censored);
  CHECK_FALSE(traj.switched);
  CHECK(traj.dtime < -5.0);
  CHECK(traj.hf == -1.0);
}

TEST_CASE("rollout: pre-association shortens the handover") {
  int checked = 0;
  for (uint64_t seed = 1; seed <= 5; ++seed) {
    const auto trace = sim::Generate(sim::MakeScenario(sim::Site::kC, seed));
    const double h = std::ceil(trace.truth.degradation_onset);
    const RolloutConfig cfg;
    if (sim::RollbackTime(trace, h + 0.5, cfg.feedback) ||
        sim::RollbackTime(trace, h + 2.0, cfg.feedback)) {
      continue;
    }
    ScriptedSource pre([h](const PolicyState& s, double t) {
      if (t >= h) return Action::kHandover;
      return s.preassociated ? Action::kHold : Action::kPreAssociate;
    });
    ScriptedSource plain([h](const PolicyState&, double t) {
      return t >= h ? Action::kHandover : Action::kHold;
    });
    const AidtwStack stack{nullptr, nullptr, nullptr, &Norm()};
    const auto a = Rollout(pre, trace, stack, cfg, 1);
    const auto b = Rollout(plain, trace, stack, cfg, 1);
    REQUIRE(a.switched);
    REQUIRE(b.switched);
    CHECK(a.completion == h + 0.5);
    CHECK(b.completion - a.completion == 1.5);
    ++checked;
  }
  CHECK(checked >= 3);
}

TEST_CASE("rollout is deterministic") {
  const auto trace = sim::Generate(sim::MakeScenario(sim::Site::kA, 4));
  const auto model = PolicyModel::Initialized(2);
  ModelSource src(model, ActMode::kSample);
  const AidtwStack stack{nullptr, nullptr, nullptr, &Norm()};
  const auto a = Rollout(src, trace, stack, RolloutConfig{}, 77);
  const auto b = Rollout(src, trace, stack, RolloutConfig{}, 77);
  REQUIRE(a.steps.size() == b.steps.size());
  for (size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].action == b.steps[i].action);
  CHECK(a.total_reward == b.total_reward);
}

TEST_CASE("policy tensors round-trip") {
  const auto m = PolicyModel::Initialized(3);
  CHECK(PolicyModel::FromTensors(m.ToTensors()) == m);
}
