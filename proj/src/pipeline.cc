#include "fpswitch/pipeline.h"

#include <filesystem>
#include <fstream>
#include <ostream>

#include <fmt/format.h>

#include "fpswitch/error.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/rng.h"

namespace fpswitch::pipeline {
namespace fs = std::filesystem;

PipelineConfig PipelineConfig::FromKv(const KvConfig& cfg) {
  PipelineConfig c;
  if (cfg.Has("sites")) {
    c.sites.clear();
    for (const auto& s : cfg.GetList("sites", {})) c.sites.push_back(sim::ParseSite(s, "sites"));
  }
  c.seed = cfg.GetU64("seed", c.seed);
  c.sessions = cfg.GetInt("sessions", c.sessions);
  c.history_sessions = cfg.GetInt("history_sessions", c.history_sessions);
  c.edges_per_site = cfg.GetInt("edges_per_site", c.edges_per_site);
  c.commit_rssi = cfg.GetDouble("commit_rssi", c.commit_rssi);
  c.negatives_per_positive = cfg.GetInt("negatives_per_positive", c.negatives_per_positive);
  c.metric.epochs = cfg.GetInt("metric.epochs", c.metric.epochs);
  c.metric.step_size = cfg.GetDouble("metric.step_size", c.metric.step_size);
  c.metric.train_selector = cfg.GetBool("metric.train_selector", true);
  c.metric.margin.margin = cfg.GetDouble("metric.margin", c.metric.margin.margin);
  c.metric.margin.gamma = cfg.GetDouble("align.gamma", c.metric.margin.gamma);
  c.metric.margin.band = cfg.GetInt("align.band", c.metric.margin.band);
  if (c.sessions < 0) throw ConfigError("sessions", "must be >= 0");
  if (c.history_sessions < 2) throw ConfigError("history_sessions", "must be >= 2");
  if (c.edges_per_site < 1) throw ConfigError("edges_per_site", "must be >= 1");
  if (c.negatives_per_positive < 1) throw ConfigError("negatives_per_positive", "must be >= 1");
  if (!(c.metric.margin.gamma > 0.0)) throw ConfigError("align.gamma", "must be > 0");
  c.radio.ApplyOverrides(cfg);
  c.norm.ApplyOverrides(cfg);
  c.cloud.ApplyOverrides(cfg);
  return c;
}

int DefaultSessions(sim::Site site) {
  switch (site) {
    case sim::Site::kA: return 5;
    case sim::Site::kB: return 10;
    case sim::Site::kC: return 6;
  }
  return 5;
}

uint64_t SessionSeed(uint64_t seed, sim::Site site, Purpose purpose, uint64_t index) {
  return DeriveSeed({seed, static_cast<uint64_t>(site), static_cast<uint64_t>(purpose), index});
}

sim::RawTrace SessionTrace(const PipelineConfig& cfg, sim::Site site, Purpose purpose,
                           uint64_t index) {
  const auto scenario =
      sim::MakeScenario(site, SessionSeed(cfg.seed, site, purpose, index), cfg.radio);
  return sim::Generate(scenario, cfg.radio);
}

std::optional<int> CommitTime(const sim::RawTrace& trace, const PipelineConfig& cfg) {
  const int n = static_cast<int>(trace.wifi.size());
  const int first = cfg.cloud.rollout.buffer_windows;
  for (int t = first; t <= n; ++t) {
    const double now = trace.ServingRssi(t - 1);
    if (trace.site == sim::Site::kC) {
      const bool gnss_ok = trace.gnss[t - 1].fix;
      const bool decay = t >= 4 && now < trace.ServingRssi(t - 4) - 3.0;
      bool walking = false;
      for (int k = (t - 1) * 10; k < t * 10 && k < static_cast<int>(trace.pdr.size()); ++k) {
        walking |= trace.pdr[k].step;
      }
      if (gnss_ok && decay && walking) return t;
    } else if (t >= 2 && now < cfg.commit_rssi && trace.ServingRssi(t - 2) < cfg.commit_rssi) {
      return t;
    }
  }
  return std::nullopt;
}

History BuildHistory(const PipelineConfig& cfg, sim::Site site) {
  History h;
  const int len = cfg.cloud.rollout.buffer_windows;
  for (int i = 0; i < cfg.history_sessions; ++i) {
    const auto trace = SessionTrace(cfg, site, Purpose::kHistory, i);
    const auto commit = CommitTime(trace, cfg);
    if (commit) {
      auto buffer = sim::WindowsBetween(trace, *commit - len + 1, *commit, cfg.norm);
      buffer.created_at = i;
      buffer.raw_identifiers = trace.Identifiers();
      if (site == sim::Site::kC) {
        h.library.CommitOutdoorTransition(std::move(buffer), true, true, true);
      } else {
        h.library.CommitSegment(std::move(buffer),
                                {static_cast<double>(*commit), fpcore::SwitchKind::kWifiToCell, 0});
      }
    }
    // A stretch of ordinary walking well before the degradation.
    const int quiet_end = static_cast<int>(trace.truth.degradation_onset) - 6;
    if (quiet_end >= len) {
      h.background.push_back(sim::WindowsBetween(trace, quiet_end - len + 1, quiet_end, cfg.norm));
    }
  }
  return h;
}

void Models::Save(const std::string& dir) const {
  fs::create_directories(dir);
  SaveTensors((fs::path(dir) / "metric.tensors").string(), metric.ToTensors());
  SaveTensors((fs::path(dir) / "selector.tensors").string(), selector.ToTensors());
  SaveTensors((fs::path(dir) / "policy.tensors").string(), policy.ToTensors());
  SaveTensors((fs::path(dir) / "reward_model.tensors").string(), reward_model.ToTensors());
  for (const auto& [site, lib] : libraries) {
    lib.Save((fs::path(dir) / fmt::format("library_{}", sim::SiteName(site))).string());
  }
}

Models Models::Load(const std::string& dir, const std::vector<sim::Site>& sites) {
  Models m;
  m.metric = align::MetricModel::FromTensors(LoadTensors((fs::path(dir) / "metric.tensors").string()));
  m.selector =
      filters::SelectorModel::FromTensors(LoadTensors((fs::path(dir) / "selector.tensors").string()));
  m.policy =
      policy::PolicyModel::FromTensors(LoadTensors((fs::path(dir) / "policy.tensors").string()));
  m.reward_model = cloudedge::RewardModel::FromTensors(
      LoadTensors((fs::path(dir) / "reward_model.tensors").string()));
  for (auto site : sites) {
    const auto lib_dir = fs::path(dir) / fmt::format("library_{}", sim::SiteName(site));
    if (!fs::exists(lib_dir)) throw IoError(fmt::format("missing library {}", lib_dir.string()));
    m.libraries.emplace(site, fpcore::FingerprintLibrary::Load(lib_dir.string(), {}));
  }
  return m;
}

TrainResult Train(const PipelineConfig& cfg,
                  const std::function<void(const cloudedge::RoundReport&)>& on_round) {
  if (cfg.sites.empty()) throw ConfigError("sites", "no sites selected");
  TrainResult out;
  auto& models = out.models;

  std::vector<fpcore::FingerprintSequence> queries, background;
  fpcore::FingerprintLibrary pooled;
  for (auto site : cfg.sites) {
    auto h = BuildHistory(cfg, site);
    for (const auto& s : h.library.sequences()) {
      queries.push_back(s);
      pooled.CommitSegment(s, *s.label);
    }
    for (auto& b : h.background) background.push_back(std::move(b));
    models.libraries.emplace(site, std::move(h.library));
  }
  // Pooled ids differ from per-site ids; queries must carry pooled ids so a
  // query is never its own positive.
  queries = pooled.sequences();

  const auto examples = align::BuildTrainingExamples(
      queries, pooled, cfg.negatives_per_positive, DeriveSeed({cfg.seed, 0xe1ULL}), 3,
      background);
  auto metric = align::MetricModel::Initialized(DeriveSeed({cfg.seed, 0xa1ULL}));
  auto selector = filters::SelectorModel::Initialized(DeriveSeed({cfg.seed, 0xf1ULL}));
  if (!examples.empty()) {
    auto trained = align::TrainMetric(std::move(metric), std::move(selector), examples,
                                      cfg.metric, cfg.norm);
    metric = std::move(trained.metric);
    selector = std::move(trained.selector);
    out.metric_loss = std::move(trained.loss_history);
  }
  models.metric = std::move(metric);
  models.selector = std::move(selector);

  const auto initial = policy::PolicyModel::Initialized(DeriveSeed({cfg.seed, 0x9aULL}));
  auto state = cloudedge::RoundState::Start(
      initial, cloudedge::RewardModel::Initialized(DeriveSeed({cfg.seed, 0x7eULL})),
      cfg.cloud.rounds);
  std::vector<cloudedge::EdgeAgent> edges;
  for (auto site : cfg.sites) {
    for (int k = 0; k < cfg.edges_per_site; ++k) {
      cloudedge::EdgeAgent e;
      e.name = fmt::format("edge-{}-{}", sim::SiteName(site), k);
      e.site = site;
      e.seed = DeriveSeed({cfg.seed, static_cast<uint64_t>(site), static_cast<uint64_t>(k), 0xedULL});
      e.policy = initial;
      e.library = &models.libraries.at(site);
      edges.push_back(std::move(e));
    }
  }
  cloudedge::RoundEnv env;
  env.metric = &models.metric;
  env.selector = &models.selector;
  env.norm = &cfg.norm;
  env.traces = [&cfg](const cloudedge::EdgeAgent& edge, int round, int episode) {
    const uint64_t index = DeriveSeed({edge.seed, static_cast<uint64_t>(round),
                                       static_cast<uint64_t>(episode)});
    return SessionTrace(cfg, edge.site, Purpose::kTrain, index);
  };
  for (int r = 0; r < cfg.cloud.rounds; ++r) {
    cloudedge::RoundReport rep;
    state = cloudedge::RunRound(std::move(state), edges, env, cfg.cloud, &rep);
    if (on_round) on_round(rep);
    out.rounds.push_back(std::move(rep));
  }
  models.policy = state.cloud_policy;
  models.reward_model = state.reward_model;
  return out;
}

std::vector<report::SessionReport> Evaluate(const PipelineConfig& cfg, const Models& models,
                                            sim::Site site, int sessions,
                                            std::vector<policy::Trajectory>* trajectories) {
  const auto lib = models.libraries.find(site);
  const policy::AidtwStack stack{&models.metric, &models.selector,
                                 lib == models.libraries.end() ? nullptr : &lib->second,
                                 &cfg.norm};
  policy::ModelSource source(models.policy, policy::ActMode::kGreedy);
  std::vector<report::SessionReport> rows;
  for (int s = 1; s <= sessions; ++s) {
    const auto trace = SessionTrace(cfg, site, Purpose::kEvaluate, s);
    auto traj = policy::Rollout(source, trace, stack, cfg.cloud.rollout,
                                SessionSeed(cfg.seed, site, Purpose::kEvaluate, s));
    rows.push_back(report::MakeSessionReport(site, s, traj.baseline_tts, traj.tts,
                                             traj.trace_checksum));
    rows.back().rollbacks = traj.rollbacks;
    if (trajectories) trajectories->push_back(std::move(traj));
  }
  return rows;
}

namespace {

int SessionsFor(const PipelineConfig& cfg, sim::Site site) {
  return cfg.sessions > 0 ? cfg.sessions : DefaultSessions(site);
}

std::ofstream OpenOut(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  return out;
}

}  // namespace

void CmdSimulate(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  for (auto site : cfg.sites) {
    for (int s = 1; s <= SessionsFor(cfg, site); ++s) {
      const auto trace = SessionTrace(cfg, site, Purpose::kEvaluate, s);
      const auto stem = fmt::format("{}_{}", sim::SiteName(site), s);
      auto t = OpenOut(fs::path(out_dir) / fmt::format("trace_{}.csv", stem));
      sim::WriteTraceCsv(t, trace, cfg.norm);
      auto g = OpenOut(fs::path(out_dir) / fmt::format("truth_{}.csv", stem));
      sim::WriteGroundTruthCsv(g, trace.truth);
      log << fmt::format("site {} session {}: onset {:.1f} s, checksum {:016x}\n",
                         sim::SiteName(site), s, trace.truth.degradation_onset,
                         trace.Checksum());
    }
  }
}

void CmdTrain(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  auto round_log = OpenOut(fs::path(out_dir) / "train_log.csv");
  round_log << "round,mean_reward,mean_tts,switch_rate,reward_model_loss,filled_by_model,"
               "cloud_version,edge_versions\n";
  auto result = Train(cfg, [&](const cloudedge::RoundReport& r) {
    std::string versions;
    for (size_t i = 0; i < r.edge_versions.size(); ++i) {
      versions += (i ? ";" : "") + std::to_string(r.edge_versions[i]);
    }
    round_log << fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g},{},{},{}\n", r.round + 1,
                             r.mean_reward, r.mean_tts, r.switch_rate, r.reward_model_loss,
                             r.filled_by_model, r.cloud_version, versions);
    log << fmt::format("round {:>2}: mean reward {:8.3f}  mean TTS {:6.2f} s  switch rate {:.2f}\n",
                       r.round + 1, r.mean_reward, r.mean_tts, r.switch_rate);
  });
  result.models.Save(out_dir);
  auto metric_log = OpenOut(fs::path(out_dir) / "metric_loss.csv");
  metric_log << "epoch,loss\n";
  for (size_t i = 0; i < result.metric_loss.size(); ++i) {
    metric_log << fmt::format("{},{:.17g}\n", i, result.metric_loss[i]);
  }
  log << fmt::format("models written to {}\n", out_dir);
}

void CmdEvaluate(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log) {
  const auto models = Models::Load(out_dir, cfg.sites);
  for (auto site : cfg.sites) {
    std::vector<policy::Trajectory> trajs;
    const auto rows = Evaluate(cfg, models, site, SessionsFor(cfg, site), &trajs);
    const auto name = sim::SiteName(site);
    auto csv = OpenOut(fs::path(out_dir) / fmt::format("report_{}.csv", name));
    report::WriteReportCsv(csv, rows);
    const std::string table = report::RenderTable(rows);
    auto txt = OpenOut(fs::path(out_dir) / fmt::format("report_{}.txt", name));
    txt << table;
    for (size_t i = 0; i < trajs.size(); ++i) {
      auto tl = OpenOut(fs::path(out_dir) / fmt::format("trajectory_{}_{}.csv", name, i + 1));
      policy::WriteTrajectoryLog(tl, trajs[i]);
    }
    log << table << '\n';
  }
}

}  // namespace fpswitch::pipeline
