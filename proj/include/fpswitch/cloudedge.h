#ifndef FPSWITCH_CLOUDEDGE_H_
#define FPSWITCH_CLOUDEDGE_H_

// Cloud-edge feedback loop: edge summaries on the wire, cloud aggregation,
// reward-model fitting, PPO in the cloud, distillation back to the edges and
// the offline fallback update.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpswitch/align.h"
#include "fpswitch/filters.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/nn.h"
#include "fpswitch/policy.h"
#include "fpswitch/simworld.h"

namespace fpswitch {
class KvConfig;
}

namespace fpswitch::cloudedge {

// hf column of a tuple: a number, `?` (a verdict was due but the user gave
// none; the reward model fills it) or `-` (no feedback event at this step).
enum class HfKind { kNone, kMissing, kValue };

struct SummaryTuple {
  std::vector<double> state;  // quantized policy features
  int action = 0;
  HfKind hf_kind = HfKind::kNone;
  double hf = 0.0;
  double offset = 0.0;      // seconds since the trajectory's first step
  double env_reward = 0.0;  // reward excluding the feedback term

  bool operator==(const SummaryTuple&) const = default;
};

// One trajectory leaving an edge. Carries no raw identifiers and no absolute
// time: prototypes are salted hashes and timing is relative.
struct EdgeSummary {
  int policy_version = 0;
  std::string edge_id_hash;
  std::string digest;  // salted hash naming the trajectory
  std::optional<fpcore::SwitchKind> kind;
  double sim_mean = 0.0;  // quantized similarity statistics
  double sim_max = 0.0;
  std::vector<std::string> prototype_hashes;  // sorted, unique
  std::vector<SummaryTuple> tuples;

  // Length-prefixed text frame:
  //   <payload bytes>\n
  //   <version>,<edge_id_hash>,<tuple_count>\n
  //   meta,digest=<hex>,kind=<name|->,sim_mean=<v>,sim_max=<v>,protos=<h;h>\n
  //   <f1;...;f8>|<action>|<hf|?|->|<offset>|<env_reward>\n   (per tuple)
  std::string Encode() const;
  // Throws DomainError on malformed frames.
  static EdgeSummary Decode(std::string_view frame);

  bool operator==(const EdgeSummary&) const = default;
};

struct SummaryOptions {
  uint64_t salt = 0;
  double quant_step = 1e-3;  // state features and similarity statistics
};

// `feedback_given` says whether the user answered the final verdict; rollback
// feedback is an implicit signal and is always recorded.
EdgeSummary Summarize(const policy::Trajectory& trajectory,
                      std::string_view edge_name, int policy_version,
                      std::string_view trajectory_name, bool feedback_given,
                      const SummaryOptions& options);

// True when the frame contains any of the raw identifiers.
bool FrameLeaks(std::string_view frame, std::span<const std::string> raw_identifiers);

// Distillation message: `<payload bytes>\n<version>\n<named tensors>`.
std::string EncodeDistillation(int version, const policy::PolicyModel& model);
std::pair<int, policy::PolicyModel> DecodeDistillation(std::string_view frame);

// ---- aggregation ---------------------------------------------------------

struct TrainingTuple {
  std::string edge_id_hash;
  std::string digest;
  int version = 0;
  SummaryTuple tuple;
};

// Canonical order: edge id hash, digest, offset, then tuple contents.
struct TrainingBatch {
  std::vector<TrainingTuple> tuples;
};

TrainingBatch Aggregate(std::span<const EdgeSummary> inbox);

// ---- reward model --------------------------------------------------------

// (state features, one-hot action) -> tanh(16) -> tanh output in [-1, 1].
class RewardModel {
 public:
  static constexpr int kHidden = 16;
  explicit RewardModel(int state_dim = policy::PolicyState::kFeatures,
                       int num_actions = policy::kNumActions);
  static RewardModel Initialized(uint64_t seed,
                                 int state_dim = policy::PolicyState::kFeatures,
                                 int num_actions = policy::kNumActions);

  double Predict(std::span<const double> state, int action) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }
  int state_dim() const { return state_dim_; }
  int num_actions() const { return num_actions_; }

  std::vector<NamedTensor> ToTensors() const { return net_.ToTensors("reward_model"); }
  static RewardModel FromTensors(const std::vector<NamedTensor>& tensors);

  bool operator==(const RewardModel& o) const { return net_ == o.net_; }

 private:
  std::vector<double> Input(std::span<const double> state, int action) const;
  friend double RewardLoss(const RewardModel&, std::span<const struct RewardSample>,
                           std::vector<double>*);

  int state_dim_;
  int num_actions_;
  Mlp net_;
};

struct RewardSample {
  std::vector<double> state;
  int action = 0;
  double hf = 0.0;
};

// Mean squared error and its gradient w.r.t. net().params().
double RewardLoss(const RewardModel& model, std::span<const RewardSample> samples,
                  std::vector<double>* grad);

// Full-batch gradient descent. Throws DomainError on an empty batch.
RewardModel FitRewardModel(RewardModel model, std::span<const RewardSample> samples,
                           int epochs, double step_size,
                           std::vector<double>* loss_history = nullptr);

std::vector<RewardSample> RewardSamples(const TrainingBatch& batch);

// Per-tuple feedback actually used for training.
struct FilledFeedback {
  double hf = 0.0;
  bool from_model = false;
};
// Direct values verbatim, `?` predicted by the model, `-` as 0.
std::vector<FilledFeedback> FillFeedback(const TrainingBatch& batch,
                                         const RewardModel& model);

// Groups the batch into PPO episodes; behavior log-probabilities come from
// the policy snapshot matching each summary's version.
std::vector<policy::PpoEpisode> BuildEpisodes(
    const TrainingBatch& batch, std::span<const FilledFeedback> feedback,
    double gamma, const std::map<int, policy::PolicyModel>& snapshots);

// ---- offline update ------------------------------------------------------

struct OfflineConfig {
  double temperature = 1.0;
  double max_delta_norm = 0.5;
  double bc_coef = 0.1;
  double max_weight = 20.0;
  int steps = 30;
  double step_size = 0.02;
  double discount = 0.99;
};

struct OfflineStats {
  double loss = 0.0;
  double delta_norm = 0.0;  // after clipping
};

// Advantage-weighted regression plus behavior cloning on the local log only.
// Advantages are z-scored before exp(A / temperature); the parameter change
// is clipped to max_delta_norm. Throws DomainError on an empty log.
policy::PolicyModel OfflineUpdate(const policy::PolicyModel& model,
                                  std::span<const policy::PpoEpisode> log,
                                  const OfflineConfig& config,
                                  OfflineStats* stats = nullptr);

// ---- rounds --------------------------------------------------------------

struct CloudEdgeConfig {
  int rounds = 20;
  int distill_period = 2;
  int episodes_per_edge = 64;
  double feedback_rate = 0.7;  // probability the user answers the verdict
  uint64_t salt = 0x5a17;
  int reward_epochs = 60;
  double reward_step_size = 0.1;
  bool offline_personalization = false;
  policy::PpoConfig ppo;
  policy::RolloutConfig rollout;
  OfflineConfig offline;
  SummaryOptions summary;

  void ApplyOverrides(const KvConfig& cfg);  // keys `cloudedge.*` and nested
};

struct EdgeAgent {
  std::string name;
  sim::Site site = sim::Site::kA;
  uint64_t seed = 0;
  policy::PolicyModel policy;
  int version = 0;
  const fpcore::FingerprintLibrary* library = nullptr;
  std::vector<policy::PpoEpisode> local_log;  // latest round only
};

struct RoundState {
  int round = 0;
  int total_rounds = 0;
  policy::PolicyModel cloud_policy;
  int cloud_version = 0;
  RewardModel reward_model;
  std::map<int, policy::PolicyModel> snapshots;  // version -> policy
  std::vector<EdgeSummary> inbox;

  // Fresh state: version 0 snapshot, zero reward model.
  static RoundState Start(policy::PolicyModel initial, RewardModel reward_model,
                          int total_rounds);
  bool operator==(const RoundState& o) const;
};

struct RoundReport {
  int round = 0;
  double mean_reward = 0.0;  // mean total trajectory reward across edges
  double mean_tts = 0.0;
  double switch_rate = 0.0;
  double reward_model_loss = 0.0;
  int tuples = 0;
  int filled_by_model = 0;
  int cloud_version = 0;
  std::vector<int> edge_versions;
};

// Makes the trace an edge rolls out in (round, episode).
using TraceSource =
    std::function<sim::RawTrace(const EdgeAgent& edge, int round, int episode)>;

struct RoundEnv {
  const align::MetricModel* metric = nullptr;
  const filters::SelectorModel* selector = nullptr;
  const fpcore::NormalizationConfig* norm = nullptr;
  TraceSource traces;
};

// Edges roll out and send summaries; the cloud aggregates, fits the reward
// model, runs PPO; every distill_period rounds the edges receive the cloud
// policy. Throws DomainError once the round budget is exhausted.
RoundState RunRound(RoundState state, std::vector<EdgeAgent>& edges,
                    const RoundEnv& env, const CloudEdgeConfig& config,
                    RoundReport* report = nullptr);

}  // namespace fpswitch::cloudedge

#endif  // FPSWITCH_CLOUDEDGE_H_
