#include "fpswitch/policy.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>
#include <ostream>

#include "fpswitch/error.h"
#include "fpswitch/kv_config.h"

namespace fpswitch::policy {

std::string_view ActionName(Action a) {
  switch (a) {
    case Action::kHold: return "Hold";
    case Action::kIncreaseScanRate: return "IncreaseScanRate";
    case Action::kPreAssociate: return "PreAssociate";
    case Action::kHandover: return "Handover";
  }
  return "?";
}

std::vector<double> PolicyState::Features() const {
  return {similarity,
          similarity_trend,
          (rssi + 75.0) / 5.0,
          gnss_fix ? 1.0 : 0.0,
          step_rate / 2.0,
          scan_age / 5.0,
          link == Link::kCell ? 1.0 : 0.0,
          preassociated ? 1.0 : 0.0};
}

void PolicyState::Validate() const {
  for (double v : {similarity, similarity_trend, rssi, step_rate, scan_age}) {
    if (!std::isfinite(v)) throw DomainError("policy state has a non-finite feature");
  }
  if (similarity < 0.0 || similarity > 1.0) {
    throw DomainError(fmt::format("similarity {} outside [0, 1]", similarity));
  }
}

void RewardWeights::Validate() const {
  if (eta < 0.0 || lambda < 0.0 || gamma < 0.0) {
    throw ParameterError("reward weights must be nonnegative");
  }
  if (eta == 0.0 && lambda == 0.0 && gamma == 0.0) {
    throw ParameterError("reward weights must not all be zero");
  }
}

void RewardWeights::ApplyOverrides(const KvConfig& cfg) {
  eta = cfg.GetDouble("reward.eta", eta);
  lambda = cfg.GetDouble("reward.lambda", lambda);
  gamma = cfg.GetDouble("reward.gamma", gamma);
  try {
    Validate();
  } catch (const ParameterError& e) {
    throw ConfigError("reward", e.what());
  }
}

double CompositeReward(const RewardWeights& w, double dtime, double sim, double hf) {
  return w.eta * dtime + w.lambda * sim + w.gamma * hf;
}

// ---- model ---------------------------------------------------------------

PolicyModel::PolicyModel(int num_actions, int hidden, int inputs)
    : actor_({inputs, hidden, num_actions}), critic_({inputs, hidden, 1}) {}

PolicyModel PolicyModel::Initialized(uint64_t seed, int num_actions, int hidden,
                                     int inputs) {
  PolicyModel m(num_actions, hidden, inputs);
  Rng rng(seed);
  m.actor_.Initialize(rng, 0.01);
  m.critic_.Initialize(rng, 1.0);
  return m;
}

std::vector<double> PolicyModel::Logits(std::span<const double> features) const {
  return actor_.Forward(features);
}

double PolicyModel::Value(std::span<const double> features) const {
  return critic_.Forward(features)[0];
}

std::vector<double> PolicyModel::FlatParams() const {
  std::vector<double> flat(actor_.params().begin(), actor_.params().end());
  flat.insert(flat.end(), critic_.params().begin(), critic_.params().end());
  return flat;
}

void PolicyModel::SetFlatParams(std::span<const double> flat) {
  const size_t na = actor_.params().size();
  if (flat.size() != na + critic_.params().size()) {
    throw DomainError("policy parameter vector has the wrong length");
  }
  std::copy(flat.begin(), flat.begin() + na, actor_.params().begin());
  std::copy(flat.begin() + na, flat.end(), critic_.params().begin());
}

std::vector<NamedTensor> PolicyModel::ToTensors() const {
  auto t = actor_.ToTensors("policy.actor");
  auto c = critic_.ToTensors("policy.critic");
  t.insert(t.end(), c.begin(), c.end());
  return t;
}

PolicyModel PolicyModel::FromTensors(const std::vector<NamedTensor>& tensors) {
  // Shapes come from the first/last layers.
  const auto& w0 = FindTensor(tensors, "policy.actor.w0", -1, -1);
  const auto& w1 = FindTensor(tensors, "policy.actor.w1", -1, -1);
  PolicyModel m(w1.rows, w0.rows, w0.cols);
  m.actor_.FromTensors(tensors, "policy.actor");
  m.critic_.FromTensors(tensors, "policy.critic");
  return m;
}

ActResult Act(const PolicyModel& model, std::span<const double> features,
              ActMode mode, Rng& rng) {
  ActResult r;
  r.probs = Softmax(model.Logits(features));
  const int n = static_cast<int>(r.probs.size());
  if (mode == ActMode::kGreedy) {
    r.action = static_cast<int>(std::max_element(r.probs.begin(), r.probs.end()) -
                                r.probs.begin());
  } else {
    const double u = rng.Uniform();
    double acc = 0.0;
    r.action = n - 1;
    for (int i = 0; i < n; ++i) {
      acc += r.probs[i];
      if (u < acc) {
        r.action = i;
        break;
      }
    }
  }
  r.log_prob = std::log(std::max(r.probs[r.action], 1e-300));
  r.value = model.Value(features);
  return r;
}

ActResult Act(const PolicyModel& model, const PolicyState& state, ActMode mode,
              Rng& rng) {
  state.Validate();
  const auto f = state.Features();
  return Act(model, f, mode, rng);
}

double LogProb(const PolicyModel& model, std::span<const double> features, int action) {
  const auto logits = model.Logits(features);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[action] - mx - std::log(z);
}

// ---- rollout -------------------------------------------------------------

void RolloutConfig::ApplyOverrides(const KvConfig& cfg) {
  start_time = cfg.GetDouble("rollout.start_time", start_time);
  buffer_windows = cfg.GetInt("rollout.buffer_windows", buffer_windows);
  scan_interval = cfg.GetDouble("rollout.scan_interval", scan_interval);
  fast_scan_interval = cfg.GetDouble("rollout.fast_scan_interval", fast_scan_interval);
  association_delay = cfg.GetDouble("rollout.association_delay", association_delay);
  preassociated_delay = cfg.GetDouble("rollout.preassociated_delay", preassociated_delay);
  tau = cfg.GetDouble("rollout.tau", tau);
  rollback_cooldown = cfg.GetDouble("rollout.rollback_cooldown", rollback_cooldown);
  band = cfg.GetInt("align.band", band);
  if (buffer_windows < 2) throw ConfigError("rollout.buffer_windows", "must be >= 2");
  if (!(scan_interval >= 1.0)) throw ConfigError("rollout.scan_interval", "must be >= 1");
  if (!(fast_scan_interval >= 1.0)) {
    throw ConfigError("rollout.fast_scan_interval", "must be >= 1");
  }
  if (band < 1) throw ConfigError("align.band", "must be >= 1");
  weights.ApplyOverrides(cfg);
  baseline.ApplyOverrides(cfg);
  feedback.ApplyOverrides(cfg);
}

ActResult ModelSource::Choose(const PolicyState& state, double, Rng& rng) {
  return Act(model_, state, mode_, rng);
}

ActResult ScriptedSource::Choose(const PolicyState& state, double t, Rng&) {
  ActResult r;
  r.action = static_cast<int>(rule_(state, t));
  return r;
}

Trajectory Rollout(ActionSource& source, const sim::RawTrace& trace,
                   const AidtwStack& stack, const RolloutConfig& config,
                   uint64_t seed) {
  if (!stack.norm) throw DomainError("rollout needs a normalization config");
  config.weights.Validate();
  const int samples = static_cast<int>(trace.wifi.size());
  const int first = static_cast<int>(std::ceil(config.start_time - 1e-9));
  if (first < config.buffer_windows || first > samples) {
    throw DomainError(fmt::format("rollout start {} outside the trace", config.start_time));
  }
  Rng rng(seed);
  Trajectory traj;
  traj.onset = trace.truth.degradation_onset;
  traj.trace_checksum = trace.Checksum();
  const auto base = sim::BaselinePolicy(trace, config.baseline);
  traj.baseline_tts = sim::ReportedTts(sim::Tts(base.completion, traj.onset));

  std::optional<align::Matcher> matcher;
  if (stack.library && !stack.library->empty() && stack.metric && stack.selector) {
    matcher.emplace(*stack.metric, *stack.selector, *stack.library, *stack.norm,
                    config.band);
  }

  sim::ScanSelection scans;
  scans.taken.assign(samples, false);
  double interval = config.scan_interval;
  int last_scan = -1;
  // Decides whether the device scans at sample k.
  auto advance_scans = [&](int upto) {
    for (int k = 0; k <= upto && k < samples; ++k) {
      if (scans.taken[k] || k <= last_scan) continue;
      if (last_scan < 0 || k - last_scan >= interval - 1e-9) {
        scans.taken[k] = true;
        last_scan = k;
      }
    }
  };

  std::deque<fpcore::Fingerprint> buffer;
  std::vector<double> sim_history;  // S per decision step
  bool preassociated = false;
  const auto& w = config.weights;
  int t = first;
  int next_buffered = first - config.buffer_windows + 1;  // next window end to add
  while (t <= samples) {
    advance_scans(t - 1);
    for (; next_buffered <= t; ++next_buffered) {
      buffer.push_back(sim::WindowAt(trace, next_buffered, *stack.norm, scans));
      if (static_cast<int>(buffer.size()) > config.buffer_windows) buffer.pop_front();
    }

    PolicyState state;
    Step step;
    step.t = t;
    if (matcher) {
      fpcore::FingerprintSequence live;
      live.windows.assign(buffer.begin(), buffer.end());
      const auto top = matcher->Match(live, 1, t - 1 - last_scan);
      if (!top.empty()) {
        state.similarity = std::clamp(top.front().result.similarity, 0.0, 1.0);
        step.matched_id = top.front().prototype_id;
      }
    }
    sim_history.push_back(state.similarity);
    state.similarity_trend =
        sim_history.size() > 3 ? state.similarity - sim_history[sim_history.size() - 4] : 0.0;
    state.rssi = trace.ServingRssi(last_scan);
    state.gnss_fix = trace.gnss[t - 1].fix;
    int steps = 0;
    for (int k = (t - 1) * 10; k < t * 10 && k < static_cast<int>(trace.pdr.size()); ++k) {
      steps += trace.pdr[k].step;
    }
    state.step_rate = steps;
    state.scan_age = (t - 1) - last_scan;
    state.link = Link::kWifi;
    state.preassociated = preassociated;

    const ActResult choice = source.Choose(state, t, rng);
    if (choice.action < 0 || choice.action >= kNumActions) {
      throw DomainError("action index out of range");
    }
    step.features = state.Features();
    step.action = choice.action;
    step.log_prob = choice.log_prob;
    step.value = choice.value;
    step.similarity = state.similarity;
    const Action action = static_cast<Action>(choice.action);
    if (action == Action::kIncreaseScanRate || action == Action::kPreAssociate) {
      step.env_reward += w.lambda * (state.similarity - config.tau);
    }
    int next_t = t + 1;
    if (action == Action::kIncreaseScanRate) interval = config.fast_scan_interval;
    if (action == Action::kPreAssociate) preassociated = true;
    if (action == Action::kHandover) {
      const double completion =
          t + (preassociated ? config.preassociated_delay : config.association_delay);
      if (const auto back = sim::RollbackTime(trace, completion, config.feedback)) {
        // On the new link until the revert, then back on WiFi.
        step.hf = -1.0;
        ++traj.rollbacks;
        preassociated = false;
        next_t = std::max(t + 1, static_cast<int>(std::ceil(*back + config.rollback_cooldown - 1e-9)));
      } else {
        traj.switched = true;
        traj.completion = completion;
      }
    }
    const bool last_step = traj.switched || next_t > samples;
    if (last_step) {
      if (!traj.switched) {
        traj.censored = true;
        traj.completion = trace.duration;
      }
      traj.tts = sim::ReportedTts(sim::Tts(traj.completion, traj.onset));
      traj.dtime = traj.baseline_tts - traj.tts;
      // Any rollback during the episode makes the verdict -1.
      traj.hf = sim::FeedbackOracle({traj.switched, traj.completion, traj.rollbacks > 0},
                                    trace.truth, config.feedback);
      step.env_reward += w.eta * traj.dtime;
      // A rollback on the final step already carries its own verdict.
      if (!step.hf) step.hf = traj.hf;
    }
    step.reward = step.env_reward + (step.hf ? w.gamma * *step.hf : 0.0);
    traj.total_reward += step.reward;
    traj.steps.push_back(std::move(step));
    if (last_step) break;
    t = next_t;
  }
  return traj;
}

void WriteTrajectoryLog(std::ostream& out, const Trajectory& trajectory) {
  out << "t,state_feats,action,reward_step\n";
  for (const auto& s : trajectory.steps) {
    std::string feats;
    for (size_t i = 0; i < s.features.size(); ++i) {
      if (i) feats += ';';
      feats += fmt::format("{:.6g}", s.features[i]);
    }
    out << fmt::format("{:.17g},{},{},{:.17g}\n", s.t, feats,
                       ActionName(static_cast<Action>(s.action)), s.reward);
  }
  out << "TTS,dtime,HF,R_total\n";
  out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g}\n", trajectory.tts,
                     trajectory.dtime, trajectory.hf, trajectory.total_reward);
}

// ---- PPO -----------------------------------------------------------------

void PpoConfig::ApplyOverrides(const KvConfig& cfg) {
  clip = cfg.GetDouble("ppo.clip", clip);
  discount = cfg.GetDouble("ppo.discount", discount);
  gae_lambda = cfg.GetDouble("ppo.gae_lambda", gae_lambda);
  entropy_coef = cfg.GetDouble("ppo.entropy_coef", entropy_coef);
  value_coef = cfg.GetDouble("ppo.value_coef", value_coef);
  epochs = cfg.GetInt("ppo.epochs", epochs);
  minibatch = cfg.GetInt("ppo.minibatch", minibatch);
  step_size = cfg.GetDouble("ppo.step_size", step_size);
  max_grad_norm = cfg.GetDouble("ppo.max_grad_norm", max_grad_norm);
  try {
    Validate();
  } catch (const ParameterError& e) {
    throw ConfigError("ppo", e.what());
  }
}

void PpoConfig::Validate() const {
  if (!(clip > 0.0 && clip < 1.0)) throw ParameterError("PPO clip must be in (0, 1)");
  if (!(discount > 0.0 && discount <= 1.0)) throw ParameterError("discount must be in (0, 1]");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
    throw ParameterError("GAE lambda must be in [0, 1]");
  }
  if (epochs < 0) throw ParameterError("PPO epochs must be >= 0");
  if (minibatch < 1) throw ParameterError("PPO minibatch must be >= 1");
  if (!(step_size > 0.0)) throw ParameterError("PPO step size must be > 0");
}

PpoEpisode ToEpisode(const Trajectory& trajectory) {
  PpoEpisode e;
  for (const auto& s : trajectory.steps) {
    e.features.push_back(s.features);
    e.actions.push_back(s.action);
    e.old_log_probs.push_back(s.log_prob);
    e.rewards.push_back(s.reward);
  }
  return e;
}

double ClippedRatio(double ratio, double clip) {
  return std::clamp(ratio, 1.0 - clip, 1.0 + clip);
}

double ClippedSurrogate(double ratio, double advantage, double clip) {
  return std::min(ratio * advantage, ClippedRatio(ratio, clip) * advantage);
}

void ComputeGae(std::span<const double> rewards, std::span<const double> values,
                double discount, double lambda, std::vector<double>& advantages,
                std::vector<double>& returns) {
  const size_t n = rewards.size();
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  double gae = 0.0;
  for (size_t i = n; i-- > 0;) {
    const double next_v = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + discount * next_v - values[i];
    gae = delta + discount * lambda * gae;
    advantages[i] = gae;
    returns[i] = gae + values[i];
  }
}

double PpoLoss(const PolicyModel& model, std::span<const PpoSample> samples,
               const PpoConfig& config, std::vector<double>* grad) {
  const size_t na = model.actor().params().size();
  const size_t nc = model.critic().params().size();
  if (grad) grad->assign(na + nc, 0.0);
  if (samples.empty()) return 0.0;
  const double inv = 1.0 / samples.size();
  double loss = 0.0;
  std::span<double> ga, gc;
  if (grad) {
    ga = std::span(*grad).subspan(0, na);
    gc = std::span(*grad).subspan(na, nc);
  }
  for (const auto& s : samples) {
    Mlp::Tape tape;
    const auto logits = model.actor().Forward(s.features, tape);
    const auto p = Softmax(logits);
    const int n = static_cast<int>(p.size());
    const double logp = std::log(std::max(p[s.action], 1e-300));
    const double ratio = std::exp(logp - s.old_log_prob);
    const double surr = ClippedSurrogate(ratio, s.advantage, config.clip);
    double entropy = 0.0;
    for (double q : p) entropy -= q > 0.0 ? q * std::log(q) : 0.0;
    loss += inv * (-surr - config.entropy_coef * entropy);

    Mlp::Tape vtape;
    const double v = model.critic().Forward(s.features, vtape)[0];
    loss += inv * config.value_coef * (v - s.ret) * (v - s.ret);

    if (!grad) continue;
    // The unclipped branch is active when it attains the min.
    const bool unclipped = ratio * s.advantage <= ClippedRatio(ratio, config.clip) * s.advantage;
    const double d_logp = unclipped ? -inv * s.advantage * ratio : 0.0;
    std::vector<double> g_logits(n, 0.0);
    for (int k = 0; k < n; ++k) {
      const double onehot = k == s.action ? 1.0 : 0.0;
      g_logits[k] += d_logp * (onehot - p[k]);
      // d(-c H)/d logit_k = c p_k (log p_k + H)
      const double lp = p[k] > 0.0 ? std::log(p[k]) : 0.0;
      g_logits[k] += inv * config.entropy_coef * p[k] * (lp + entropy);
    }
    model.actor().Backward(tape, g_logits, ga);
    const double g_v = inv * config.value_coef * 2.0 * (v - s.ret);
    model.critic().Backward(vtape, std::span<const double>(&g_v, 1), gc);
  }
  return loss;
}

PolicyModel PpoUpdate(const PolicyModel& model, std::span<const PpoEpisode> batch,
                      const PpoConfig& config, uint64_t seed, PpoStats* stats) {
  config.Validate();
  std::vector<PpoSample> samples;
  for (const auto& ep : batch) {
    const size_t n = ep.actions.size();
    if (ep.features.size() != n || ep.old_log_probs.size() != n || ep.rewards.size() != n) {
      throw DomainError("PPO episode fields have mismatched lengths");
    }
    std::vector<double> values(n), adv, ret;
    for (size_t i = 0; i < n; ++i) values[i] = model.Value(ep.features[i]);
    ComputeGae(ep.rewards, values, config.discount, config.gae_lambda, adv, ret);
    for (size_t i = 0; i < n; ++i) {
      samples.push_back({ep.features[i], ep.actions[i], ep.old_log_probs[i], adv[i], ret[i]});
    }
  }
  if (samples.empty()) throw DomainError("PPO batch is empty");

  if (samples.size() > 1) {
    double mean = 0.0, var = 0.0;
    for (const auto& s : samples) mean += s.advantage / samples.size();
    for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean) / samples.size();
    const double sd = std::sqrt(var) + 1e-8;
    for (auto& s : samples) s.advantage = (s.advantage - mean) / sd;
  }

  if (stats) {
    *stats = {};
    double clipped = 0.0;
    for (const auto& s : samples) {
      const double ratio = std::exp(LogProb(model, s.features, s.action) - s.old_log_prob);
      stats->surrogate += ClippedSurrogate(ratio, s.advantage, config.clip) / samples.size();
      clipped += std::abs(ratio - 1.0) > config.clip ? 1.0 : 0.0;
      const double v = model.Value(s.features);
      stats->value_loss += (v - s.ret) * (v - s.ret) / samples.size();
      const auto p = Softmax(model.Logits(s.features));
      for (double q : p) stats->entropy -= q > 0.0 ? q * std::log(q) / samples.size() : 0.0;
    }
    stats->clip_fraction = clipped / samples.size();
  }

  PolicyModel out = model;
  auto params = out.FlatParams();
  Adam adam(params.size(), config.step_size);
  Rng rng(seed);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> grad;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (size_t i = order.size(); i-- > 1;) {
      std::swap(order[i], order[static_cast<size_t>(rng.UniformInt(0, static_cast<int>(i)))]);
    }
    for (size_t b = 0; b < order.size(); b += config.minibatch) {
      std::vector<PpoSample> mb;
      for (size_t i = b; i < std::min(order.size(), b + config.minibatch); ++i) {
        mb.push_back(samples[order[i]]);
      }
      PpoLoss(out, mb, config, &grad);
      ClipNorm(grad, config.max_grad_norm);
      adam.Step(params, grad);
      out.SetFlatParams(params);
    }
  }
  return out;
}

}  // namespace fpswitch::policy
