#ifndef FPSWITCH_POLICY_H_
#define FPSWITCH_POLICY_H_

// Edge decision policy: state features, the four environment-aware actions,
// the composite reward, trace rollouts and the PPO trainer.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fpswitch/align.h"
#include "fpswitch/filters.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/nn.h"
#include "fpswitch/rng.h"
#include "fpswitch/simworld.h"

namespace fpswitch {
class KvConfig;
}

namespace fpswitch::policy {

enum class Action : int { kHold = 0, kIncreaseScanRate, kPreAssociate, kHandover };
inline constexpr int kNumActions = 4;
std::string_view ActionName(Action a);

enum class Link : int { kWifi = 0, kCell };

struct PolicyState {
  double similarity = 0.0;        // top-1 S in [0, 1]
  double similarity_trend = 0.0;  // S now minus S three windows ago
  double rssi = -100.0;           // latest scanned serving RSSI, dBm
  bool gnss_fix = false;
  double step_rate = 0.0;  // steps/s
  double scan_age = 0.0;   // s since the latest scan
  Link link = Link::kWifi;
  bool preassociated = false;

  static constexpr int kFeatures = 8;
  // [S, dS, (rssi + 75) / 5, fix, step_rate / 2, scan_age / 5, link, pre].
  std::vector<double> Features() const;
  void Validate() const;  // DomainError on non-finite fields or S outside [0, 1]
};

struct RewardWeights {
  double eta = 1.0;     // per second of TTS improvement
  double lambda = 0.5;  // similarity
  double gamma = 2.0;   // human feedback

  void Validate() const;                     // ParameterError
  void ApplyOverrides(const KvConfig& cfg);  // keys `reward.eta|lambda|gamma`
};

// eta * dtime + lambda * sim + gamma * hf.
double CompositeReward(const RewardWeights& w, double dtime, double sim, double hf);

// Actor (features -> tanh hidden -> action logits) and critic (features ->
// tanh hidden -> value) sharing no parameters.
class PolicyModel {
 public:
  static constexpr int kDefaultHidden = 32;

  // All parameters zero: uniform policy, zero value.
  explicit PolicyModel(int num_actions = kNumActions, int hidden = kDefaultHidden,
                       int inputs = PolicyState::kFeatures);
  static PolicyModel Initialized(uint64_t seed, int num_actions = kNumActions,
                                 int hidden = kDefaultHidden,
                                 int inputs = PolicyState::kFeatures);

  int num_actions() const { return actor_.output_size(); }
  int num_inputs() const { return actor_.input_size(); }
  Mlp& actor() { return actor_; }
  const Mlp& actor() const { return actor_; }
  Mlp& critic() { return critic_; }
  const Mlp& critic() const { return critic_; }

  std::vector<double> Logits(std::span<const double> features) const;
  double Value(std::span<const double> features) const;

  // Concatenated actor then critic parameters.
  std::vector<double> FlatParams() const;
  void SetFlatParams(std::span<const double> flat);

  std::vector<NamedTensor> ToTensors() const;
  static PolicyModel FromTensors(const std::vector<NamedTensor>& tensors);

  bool operator==(const PolicyModel& o) const {
    return actor_ == o.actor_ && critic_ == o.critic_;
  }

 private:
  Mlp actor_;
  Mlp critic_;
};

enum class ActMode { kSample, kGreedy };

struct ActResult {
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  std::vector<double> probs;
};

// Softmax sampling, or argmax with the lowest index winning ties.
ActResult Act(const PolicyModel& model, std::span<const double> features,
              ActMode mode, Rng& rng);
ActResult Act(const PolicyModel& model, const PolicyState& state, ActMode mode,
              Rng& rng);

double LogProb(const PolicyModel& model, std::span<const double> features, int action);

// ---- rollout -------------------------------------------------------------

struct RolloutConfig {
  double start_time = 10.0;  // first decision (s); the live buffer fills first
  int buffer_windows = 10;
  double scan_interval = 2.0;       // s
  double fast_scan_interval = 1.0;  // after IncreaseScanRate
  double association_delay = 2.0;
  double preassociated_delay = 0.5;
  double tau = 0.7;  // similarity level at which proactive actions pay off
  // Seconds back on WiFi after a rollback before the next decision.
  double rollback_cooldown = 3.0;
  int band = 3;
  RewardWeights weights;
  sim::BaselineConfig baseline;
  sim::FeedbackConfig feedback;

  void ApplyOverrides(const KvConfig& cfg);  // keys `rollout.*`, reward.*, ...
};

// The AIDTW matching stack used to compute S. Any pointer may be null except
// `norm`; a null library yields S = 0.
struct AidtwStack {
  const align::MetricModel* metric = nullptr;
  const filters::SelectorModel* selector = nullptr;
  const fpcore::FingerprintLibrary* library = nullptr;
  const fpcore::NormalizationConfig* norm = nullptr;
};

// Decides one action per step.
class ActionSource {
 public:
  virtual ~ActionSource() = default;
  virtual ActResult Choose(const PolicyState& state, double t, Rng& rng) = 0;
};

class ModelSource : public ActionSource {
 public:
  ModelSource(const PolicyModel& model, ActMode mode) : model_(model), mode_(mode) {}
  ActResult Choose(const PolicyState& state, double t, Rng& rng) override;

 private:
  const PolicyModel& model_;
  ActMode mode_;
};

// Fixed rule; log_prob and value are reported as 0.
class ScriptedSource : public ActionSource {
 public:
  using Rule = std::function<Action(const PolicyState&, double t)>;
  explicit ScriptedSource(Rule rule) : rule_(std::move(rule)) {}
  ActResult Choose(const PolicyState& state, double t, Rng& rng) override;

 private:
  Rule rule_;
};

struct Step {
  double t = 0.0;
  std::vector<double> features;
  int action = 0;
  double log_prob = 0.0;
  double value = 0.0;
  double similarity = 0.0;
  uint64_t matched_id = 0;  // top-1 prototype, 0 when none
  // Reward from the environment alone: similarity shaping plus, on the last
  // step, eta * dtime.
  double env_reward = 0.0;
  // Direct human feedback observed at this step (rollback or final verdict).
  std::optional<double> hf;
  double reward = 0.0;  // env_reward + gamma * hf
};

struct Trajectory {
  std::vector<Step> steps;
  bool switched = false;
  bool censored = false;
  double completion = 0.0;
  double onset = 0.0;
  double tts = 0.0;           // reported (floored)
  double baseline_tts = 0.0;  // reported (floored)
  double dtime = 0.0;
  double hf = 0.0;
  int rollbacks = 0;
  double total_reward = 0.0;
  uint64_t trace_checksum = 0;
};

// Steps the trace at 1 Hz from start_time. Deterministic in (source, trace,
// stack, config, seed).
Trajectory Rollout(ActionSource& source, const sim::RawTrace& trace,
                   const AidtwStack& stack, const RolloutConfig& config,
                   uint64_t seed);

// `t,state_feats,action,reward_step` per step, then `TTS,dtime,HF,R_total`.
void WriteTrajectoryLog(std::ostream& out, const Trajectory& trajectory);

// ---- PPO -----------------------------------------------------------------

struct PpoConfig {
  double clip = 0.2;
  double discount = 0.99;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  int epochs = 4;
  int minibatch = 64;
  double step_size = 3e-3;
  double max_grad_norm = 1.0;

  void ApplyOverrides(const KvConfig& cfg);  // keys `ppo.*`
  void Validate() const;                     // ParameterError
};

// One episode as the learner sees it. old_log_probs are the behavior
// policy's log-probabilities of the taken actions.
struct PpoEpisode {
  std::vector<std::vector<double>> features;
  std::vector<int> actions;
  std::vector<double> old_log_probs;
  std::vector<double> rewards;
};

PpoEpisode ToEpisode(const Trajectory& trajectory);

double ClippedRatio(double ratio, double clip);
// min(r A, clip(r, 1 - eps, 1 + eps) A).
double ClippedSurrogate(double ratio, double advantage, double clip);

// GAE over one episode ending in a terminal state (bootstrap 0).
void ComputeGae(std::span<const double> rewards, std::span<const double> values,
                double discount, double lambda, std::vector<double>& advantages,
                std::vector<double>& returns);

struct PpoStats {
  double surrogate = 0.0;  // mean clipped surrogate (first epoch, pre-step)
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
};

// Clipped-surrogate loss with value and entropy terms, minimized with Adam
// over shuffled minibatches. Throws DomainError on an empty batch.
PolicyModel PpoUpdate(const PolicyModel& model, std::span<const PpoEpisode> batch,
                      const PpoConfig& config, uint64_t seed,
                      PpoStats* stats = nullptr);

// Loss and flat-parameter gradient for fixed advantages/returns; exposed for
// finite-difference checks.
struct PpoSample {
  std::vector<double> features;
  int action = 0;
  double old_log_prob = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};
double PpoLoss(const PolicyModel& model, std::span<const PpoSample> samples,
               const PpoConfig& config, std::vector<double>* grad);

}  // namespace fpswitch::policy

#endif  // FPSWITCH_POLICY_H_
