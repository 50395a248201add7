#include "support.h"

#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "fpswitch/nn.h"

namespace fpswitch::testing {

using fpcore::Fingerprint;
using fpcore::FingerprintSequence;
using fpcore::Modality;

Fingerprint FullWindow(double t) {
  Fingerprint f = Fingerprint::Empty(t);
  for (auto m : fpcore::kAllModalities) {
    f.mask[fpcore::Index(m)] = {true, 1.0};
    f.summaries[fpcore::Index(m)].quality = 1.0;
  }
  return f;
}

FingerprintSequence Scalar1d(std::span<const double> values) {
  FingerprintSequence s;
  for (size_t i = 0; i < values.size(); ++i) {
    Fingerprint f = Fingerprint::Empty(static_cast<double>(i));
    f.mask[fpcore::Index(Modality::kPdr)] = {true, 1.0};
    f.mutable_features(Modality::kPdr)[0] = values[i];
    s.windows.push_back(f);
  }
  return s;
}

FingerprintSequence RandomSequence(Rng& rng, int length, bool integer_grid, double t0) {
  FingerprintSequence s;
  for (int i = 0; i < length; ++i) {
    Fingerprint f = FullWindow(t0 + i);
    for (auto m : fpcore::kAllModalities) {
      for (double& v : f.mutable_features(m)) {
        v = integer_grid ? rng.UniformInt(-2, 2) : rng.Uniform(-1.0, 1.0);
      }
    }
    s.windows.push_back(f);
  }
  return s;
}

align::MetricModel SingleModalityModel(Modality m) {
  align::MetricModel model;
  for (auto k : fpcore::kAllModalities) {
    model.scores()[fpcore::Index(k)] = k == m ? 0.0 : -1000.0;
  }
  return model;
}

double OracleCellCost(const align::MetricModel& model, const Fingerprint& q,
                      const Fingerprint& f) {
  const auto w = model.weights();
  double total = 0.0;
  for (auto m : fpcore::kAllModalities) {
    if (!q.present(m) || !f.present(m)) continue;
    const int dim = fpcore::kFeatureDims[fpcore::Index(m)];
    const auto emb = model.embedding(m);  // kEmbedDim x dim, row-major
    double sq = 0.0;
    for (int r = 0; r < align::kEmbedDim; ++r) {
      double d = 0.0;
      for (int c = 0; c < dim; ++c) {
        d += emb[r * dim + c] * (q.features(m)[c] - f.features(m)[c]);
      }
      sq += d * d;
    }
    total += w[fpcore::Index(m)] * sq;
  }
  return total;
}

namespace {

void Walk(const std::vector<std::vector<double>>& cost, int i, int j, int band, double acc,
          double& best) {
  const int n = static_cast<int>(cost.size());
  const int m = static_cast<int>(cost[0].size());
  if (std::fabs(i - static_cast<double>(j) * n / m) > band + 1e-9) return;
  acc += cost[i][j];
  if (i == n - 1 && j == m - 1) {
    best = std::min(best, acc);
    return;
  }
  if (i + 1 < n && j + 1 < m) Walk(cost, i + 1, j + 1, band, acc, best);
  if (i + 1 < n) Walk(cost, i + 1, j, band, acc, best);
  if (j + 1 < m) Walk(cost, i, j + 1, band, acc, best);
}

}  // namespace

double BruteForceDtw(const align::MetricModel& model, const FingerprintSequence& q,
                     const FingerprintSequence& p, int band) {
  std::vector<std::vector<double>> cost(q.size(), std::vector<double>(p.size()));
  for (size_t i = 0; i < q.size(); ++i) {
    for (size_t j = 0; j < p.size(); ++j) cost[i][j] = OracleCellCost(model, q.windows[i], p.windows[j]);
  }
  double best = std::numeric_limits<double>::infinity();
  Walk(cost, 0, 0, band, 0.0, best);
  return best;
}

double RelativeError(double analytic, double numeric, double floor) {
  const double scale = std::max(std::fabs(analytic), std::fabs(numeric));
  if (scale < floor) return 0.0;
  return std::fabs(analytic - numeric) / scale;
}

double CentralDifference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

std::vector<double> ToyFeatures(int state) {
  std::vector<double> x(policy::PolicyState::kFeatures, 0.0);
  x[0] = state == 0 ? 1.0 : -1.0;
  x[1] = 1.0;
  return x;
}

policy::PpoEpisode ToyEpisode(const policy::PolicyModel& model, Rng& rng, int length) {
  policy::PpoEpisode ep;
  for (int k = 0; k < length; ++k) {
    const int s = rng.UniformInt(0, 1);
    const auto x = ToyFeatures(s);
    const auto act = policy::Act(model, x, policy::ActMode::kSample, rng);
    ep.features.push_back(x);
    ep.actions.push_back(act.action);
    ep.old_log_probs.push_back(act.log_prob);
    ep.rewards.push_back(act.action == kToyOptimal[s] ? 1.0 : 0.0);
  }
  return ep;
}

bool ToyPpoSolves(uint64_t seed, int updates, int episodes) {
  auto model = policy::PolicyModel::Initialized(seed, 2, 8);
  Rng rng(DeriveSeed({seed, 1}));
  policy::PpoConfig cfg;
  cfg.minibatch = 16;
  for (int u = 0; u < updates; ++u) {
    std::vector<policy::PpoEpisode> batch;
    for (int e = 0; e < episodes; ++e) batch.push_back(ToyEpisode(model, rng, 4));
    model = policy::PpoUpdate(model, batch, cfg, DeriveSeed({seed, 2, static_cast<uint64_t>(u)}));
  }
  Rng unused(0);
  for (int s = 0; s < 2; ++s) {
    if (policy::Act(model, ToyFeatures(s), policy::ActMode::kGreedy, unused).action !=
        kToyOptimal[s]) {
      return false;
    }
  }
  return true;
}

std::vector<align::TrainingExample> WifiDiscriminativeTask(uint64_t seed, int examples,
                                                           int negatives) {
  Rng rng(seed);
  auto reroll_except = [&](FingerprintSequence s, Modality keep) {
    for (auto& w : s.windows) {
      for (auto m : fpcore::kAllModalities) {
        if (m == keep) continue;
        for (double& v : w.mutable_features(m)) v = rng.Uniform(-1.0, 1.0);
      }
    }
    return s;
  };
  std::vector<align::TrainingExample> out;
  for (int e = 0; e < examples; ++e) {
    const auto q = RandomSequence(rng, 8, false);
    align::TrainingExample ex;
    ex.positive = {q, reroll_except(q, Modality::kWifi)};
    for (int k = 0; k < negatives; ++k) {
      // Same construction, but the WiFi track belongs to another walk.
      auto other = RandomSequence(rng, 8, false);
      auto neg = reroll_except(q, Modality::kWifi);
      for (size_t i = 0; i < neg.windows.size(); ++i) {
        neg.windows[i].mutable_features(Modality::kWifi) = other.windows[i].features(Modality::kWifi);
      }
      ex.negatives.push_back({q, std::move(neg)});
    }
    out.push_back(std::move(ex));
  }
  return out;
}

FingerprintSequence RandomPrivateSequence(Rng& rng) {
  const double t0 = rng.Uniform(1e5, 2e9);
  auto s = RandomSequence(rng, rng.UniformInt(2, 12), false, t0);
  const int ids = rng.UniformInt(1, 6);
  for (int k = 0; k < ids; ++k) {
    if (rng.Bernoulli(0.5)) {
      std::string mac;
      for (int b = 0; b < 6; ++b) {
        mac += fmt::format("{}{:02x}", b ? ":" : "", rng.UniformInt(0, 255));
      }
      s.raw_identifiers.push_back(mac);
    } else {
      s.raw_identifiers.push_back(
          fmt::format("{}-{}-{}", rng.UniformInt(200, 499), rng.UniformInt(0, 99),
                      rng.UniformInt(10000, 999999)));
    }
  }
  const auto kind = static_cast<fpcore::SwitchKind>(rng.UniformInt(0, 2));
  s.label = fpcore::SwitchEvent{s.windows.back().timestamp, kind, 0};
  return s;
}

}  // namespace fpswitch::testing
