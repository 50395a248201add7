#ifndef FPSWITCH_PIPELINE_H_
#define FPSWITCH_PIPELINE_H_

// End-to-end runs behind the CLI: trace simulation, library building, metric
// and selector training, cloud-edge rounds, and greedy evaluation.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fpswitch/align.h"
#include "fpswitch/cloudedge.h"
#include "fpswitch/filters.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/policy.h"
#include "fpswitch/report.h"
#include "fpswitch/simworld.h"

namespace fpswitch {
class KvConfig;
}

namespace fpswitch::pipeline {

struct PipelineConfig {
  std::vector<sim::Site> sites{sim::kAllSites.begin(), sim::kAllSites.end()};
  int sessions = 0;  // evaluation/simulation sessions per site; 0 = site default
  uint64_t seed = 1;
  int history_sessions = 6;  // per site, feed the prototype library
  int edges_per_site = 1;
  double commit_rssi = -75.0;  // observed serving RSSI that labels a switch
  int negatives_per_positive = 4;
  sim::RadioConfig radio;
  fpcore::NormalizationConfig norm = fpcore::NormalizationConfig::Default();
  align::MetricTrainOptions metric;
  cloudedge::CloudEdgeConfig cloud;

  // Keys: seed, sessions, rounds, history_sessions, edges_per_site,
  // commit_rssi, metric.*, plus every nested section.
  static PipelineConfig FromKv(const KvConfig& cfg);
};

int DefaultSessions(sim::Site site);  // A 5, B 10, C 6

enum class Purpose : int { kEvaluate = 1, kTrain = 2, kHistory = 3 };
uint64_t SessionSeed(uint64_t seed, sim::Site site, Purpose purpose, uint64_t index);
sim::RawTrace SessionTrace(const PipelineConfig& cfg, sim::Site site, Purpose purpose,
                           uint64_t index);

// Window end at which a history trace commits its WiFi->Cell prototype.
// Sites A and B: the first of two consecutive scans below commit_rssi.
// Site C: the first second with a GNSS fix, a 3 dB WiFi drop over three
// seconds and walking.
std::optional<int> CommitTime(const sim::RawTrace& trace, const PipelineConfig& cfg);

struct History {
  fpcore::FingerprintLibrary library;
  std::vector<fpcore::FingerprintSequence> background;  // no-switch stretches
};
History BuildHistory(const PipelineConfig& cfg, sim::Site site);

struct Models {
  align::MetricModel metric;
  filters::SelectorModel selector;
  policy::PolicyModel policy;
  cloudedge::RewardModel reward_model;
  std::map<sim::Site, fpcore::FingerprintLibrary> libraries;

  // metric.tensors, selector.tensors, policy.tensors, reward_model.tensors,
  // library_<site>/.
  void Save(const std::string& dir) const;
  static Models Load(const std::string& dir, const std::vector<sim::Site>& sites);
};

struct TrainResult {
  Models models;
  std::vector<double> metric_loss;
  std::vector<cloudedge::RoundReport> rounds;
};

TrainResult Train(const PipelineConfig& cfg,
                  const std::function<void(const cloudedge::RoundReport&)>& on_round = {});

// Greedy policy against the baseline on fresh evaluation traces.
std::vector<report::SessionReport> Evaluate(const PipelineConfig& cfg, const Models& models,
                                            sim::Site site, int sessions,
                                            std::vector<policy::Trajectory>* trajectories = nullptr);

// CLI subcommands. Each writes into `out_dir` (created if needed).
void CmdSimulate(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log);
void CmdTrain(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log);
void CmdEvaluate(const PipelineConfig& cfg, const std::string& out_dir, std::ostream& log);

}  // namespace fpswitch::pipeline

#endif  // FPSWITCH_PIPELINE_H_
