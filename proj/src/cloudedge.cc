#include "fpswitch/cloudedge.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include <fmt/format.h>

#include "fpswitch/error.h"
#include "fpswitch/hash.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/rng.h"

namespace fpswitch::cloudedge {
namespace {

std::vector<std::string_view> Split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    const size_t pos = text.find(sep, start);
    out.push_back(text.substr(start, pos == std::string_view::npos ? pos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double ParseNumber(std::string_view text, std::string_view what) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw DomainError(fmt::format("malformed summary frame: bad {} '{}'", what, text));
  }
  return v;
}

int ParseInt(std::string_view text, std::string_view what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw DomainError(fmt::format("malformed summary frame: bad {} '{}'", what, text));
  }
  return v;
}

// Splits `<len>\n<payload>` and checks the length.
std::string_view Unframe(std::string_view frame) {
  const size_t nl = frame.find('\n');
  if (nl == std::string_view::npos) throw DomainError("malformed frame: no length line");
  const int len = ParseInt(frame.substr(0, nl), "length");
  std::string_view payload = frame.substr(nl + 1);
  if (len < 0 || static_cast<size_t>(len) != payload.size()) {
    throw DomainError(fmt::format("malformed frame: length {} but {} payload bytes", len,
                                  payload.size()));
  }
  return payload;
}

std::string Frame(const std::string& payload) {
  return fmt::format("{}\n{}", payload.size(), payload);
}

std::string_view StripKey(std::string_view field, std::string_view key) {
  if (field.substr(0, key.size()) != key || field.size() <= key.size() ||
      field[key.size()] != '=') {
    throw DomainError(fmt::format("malformed summary frame: expected {}=", key));
  }
  return field.substr(key.size() + 1);
}

}  // namespace

// ---- summaries -------------------------------------------------------------

std::string EdgeSummary::Encode() const {
  std::string p = fmt::format("{},{},{}\n", policy_version, edge_id_hash, tuples.size());
  std::string protos;
  for (size_t i = 0; i < prototype_hashes.size(); ++i) {
    if (i) protos += ';';
    protos += prototype_hashes[i];
  }
  p += fmt::format("meta,digest={},kind={},sim_mean={:.17g},sim_max={:.17g},protos={}\n",
                   digest, kind ? fpcore::SwitchKindName(*kind) : "-", sim_mean, sim_max,
                   protos);
  for (const auto& tp : tuples) {
    std::string feats;
    for (size_t i = 0; i < tp.state.size(); ++i) {
      if (i) feats += ';';
      feats += fmt::format("{:.17g}", tp.state[i]);
    }
    std::string hf = tp.hf_kind == HfKind::kValue     ? fmt::format("{:.17g}", tp.hf)
                     : tp.hf_kind == HfKind::kMissing ? "?"
                                                      : "-";
    p += fmt::format("{}|{}|{}|{:.17g}|{:.17g}\n", feats, tp.action, hf, tp.offset,
                     tp.env_reward);
  }
  return Frame(p);
}

EdgeSummary EdgeSummary::Decode(std::string_view frame) {
  std::string_view payload = Unframe(frame);
  auto lines = Split(payload, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() < 2) throw DomainError("malformed summary frame: missing header");
  EdgeSummary s;
  const auto header = Split(lines[0], ',');
  if (header.size() != 3) throw DomainError("malformed summary frame: bad header");
  s.policy_version = ParseInt(header[0], "version");
  s.edge_id_hash = std::string(header[1]);
  const int count = ParseInt(header[2], "tuple count");
  if (count < 0 || static_cast<size_t>(count) + 2 != lines.size()) {
    throw DomainError(fmt::format("malformed summary frame: header says {} tuples, got {}",
                                  count, lines.size() - 2));
  }
  const auto meta = Split(lines[1], ',');
  if (meta.size() != 6 || meta[0] != "meta") {
    throw DomainError("malformed summary frame: bad meta line");
  }
  s.digest = std::string(StripKey(meta[1], "digest"));
  const auto kind = StripKey(meta[2], "kind");
  if (kind != "-") {
    try {
      s.kind = fpcore::ParseSwitchKind(kind);
    } catch (const std::exception&) {
      throw DomainError(fmt::format("malformed summary frame: kind '{}'", kind));
    }
  }
  s.sim_mean = ParseNumber(StripKey(meta[3], "sim_mean"), "sim_mean");
  s.sim_max = ParseNumber(StripKey(meta[4], "sim_max"), "sim_max");
  const std::string_view protos = StripKey(meta[5], "protos");
  if (!protos.empty()) {
    for (auto h : Split(protos, ';')) s.prototype_hashes.emplace_back(h);
  }
  for (size_t li = 2; li < lines.size(); ++li) {
    const auto cols = Split(lines[li], '|');
    if (cols.size() != 5) throw DomainError("malformed summary frame: tuple needs 5 fields");
    SummaryTuple tp;
    for (auto f : Split(cols[0], ';')) tp.state.push_back(ParseNumber(f, "state feature"));
    tp.action = ParseInt(cols[1], "action");
    if (tp.action < 0 || tp.action >= policy::kNumActions) {
      throw DomainError("malformed summary frame: action out of range");
    }
    if (cols[2] == "?") {
      tp.hf_kind = HfKind::kMissing;
    } else if (cols[2] == "-") {
      tp.hf_kind = HfKind::kNone;
    } else {
      tp.hf_kind = HfKind::kValue;
      tp.hf = ParseNumber(cols[2], "hf");
    }
    tp.offset = ParseNumber(cols[3], "offset");
    tp.env_reward = ParseNumber(cols[4], "env_reward");
    s.tuples.push_back(std::move(tp));
  }
  return s;
}

EdgeSummary Summarize(const policy::Trajectory& trajectory, std::string_view edge_name,
                      int policy_version, std::string_view trajectory_name,
                      bool feedback_given, const SummaryOptions& options) {
  if (trajectory.steps.empty()) throw DomainError("empty trajectory");
  EdgeSummary s;
  s.policy_version = policy_version;
  s.edge_id_hash = HashHex(HashId(edge_name, options.salt));
  s.digest = HashHex(HashId(trajectory_name, options.salt ^ 0x9e3779b97f4a7c15ULL));
  if (trajectory.switched) s.kind = fpcore::SwitchKind::kWifiToCell;
  const double t0 = trajectory.steps.front().t;
  std::set<std::string> protos;
  double sim_sum = 0.0, sim_max = 0.0;
  const auto& last = trajectory.steps.back();
  // The last step's verdict is explicit feedback unless it was a rollback.
  const bool last_is_rollback =
      last.action == static_cast<int>(policy::Action::kHandover) && !trajectory.switched;
  for (size_t i = 0; i < trajectory.steps.size(); ++i) {
    const auto& st = trajectory.steps[i];
    SummaryTuple tp;
    for (double f : st.features) tp.state.push_back(fpcore::Quantize(f, options.quant_step));
    tp.action = st.action;
    if (st.hf) {
      const bool explicit_verdict = i + 1 == trajectory.steps.size() && !last_is_rollback;
      if (explicit_verdict && !feedback_given) {
        tp.hf_kind = HfKind::kMissing;
      } else {
        tp.hf_kind = HfKind::kValue;
        tp.hf = *st.hf;
      }
    }
    tp.offset = st.t - t0;
    tp.env_reward = st.env_reward;
    s.tuples.push_back(std::move(tp));
    sim_sum += st.similarity;
    sim_max = std::max(sim_max, st.similarity);
    if (st.matched_id != 0) {
      protos.insert(HashHex(HashId(fmt::format("proto:{}", st.matched_id), options.salt)));
    }
  }
  s.sim_mean = fpcore::Quantize(sim_sum / trajectory.steps.size(), options.quant_step);
  s.sim_max = fpcore::Quantize(sim_max, options.quant_step);
  s.prototype_hashes.assign(protos.begin(), protos.end());
  return s;
}

bool FrameLeaks(std::string_view frame, std::span<const std::string> raw_identifiers) {
  for (const auto& id : raw_identifiers) {
    if (!id.empty() && frame.find(id) != std::string_view::npos) return true;
  }
  return false;
}

std::string EncodeDistillation(int version, const policy::PolicyModel& model) {
  std::ostringstream body;
  WriteTensors(body, model.ToTensors());
  return Frame(fmt::format("{}\n{}", version, body.str()));
}

std::pair<int, policy::PolicyModel> DecodeDistillation(std::string_view frame) {
  std::string_view payload = Unframe(frame);
  const size_t nl = payload.find('\n');
  if (nl == std::string_view::npos) throw DomainError("malformed distillation frame");
  const int version = ParseInt(payload.substr(0, nl), "version");
  std::istringstream in{std::string(payload.substr(nl + 1))};
  return {version, policy::PolicyModel::FromTensors(ReadTensors(in))};
}

// ---- aggregation -----------------------------------------------------------

TrainingBatch Aggregate(std::span<const EdgeSummary> inbox) {
  TrainingBatch batch;
  for (const auto& s : inbox) {
    for (const auto& tp : s.tuples) {
      batch.tuples.push_back({s.edge_id_hash, s.digest, s.policy_version, tp});
    }
  }
  auto key = [](const TrainingTuple& x) {
    return std::tie(x.edge_id_hash, x.digest, x.tuple.offset, x.version, x.tuple.action,
                    x.tuple.state, x.tuple.hf_kind, x.tuple.hf, x.tuple.env_reward);
  };
  std::sort(batch.tuples.begin(), batch.tuples.end(),
            [&](const TrainingTuple& a, const TrainingTuple& b) { return key(a) < key(b); });
  return batch;
}

// ---- reward model ----------------------------------------------------------

RewardModel::RewardModel(int state_dim, int num_actions)
    : state_dim_(state_dim), num_actions_(num_actions),
      net_({state_dim + num_actions, kHidden, 1}) {}

RewardModel RewardModel::Initialized(uint64_t seed, int state_dim, int num_actions) {
  RewardModel m(state_dim, num_actions);
  Rng rng(seed);
  m.net_.Initialize(rng, 0.1);
  return m;
}

std::vector<double> RewardModel::Input(std::span<const double> state, int action) const {
  if (static_cast<int>(state.size()) != state_dim_) {
    throw DomainError(fmt::format("reward model expects {} state features, got {}",
                                  state_dim_, state.size()));
  }
  if (action < 0 || action >= num_actions_) throw DomainError("action index out of range");
  std::vector<double> x(state.begin(), state.end());
  x.resize(state_dim_ + num_actions_, 0.0);
  x[state_dim_ + action] = 1.0;
  return x;
}

double RewardModel::Predict(std::span<const double> state, int action) const {
  return std::tanh(net_.Forward(Input(state, action))[0]);
}

RewardModel RewardModel::FromTensors(const std::vector<NamedTensor>& tensors) {
  const auto& w0 = FindTensor(tensors, "reward_model.w0", -1, -1);
  RewardModel m(w0.cols - policy::kNumActions, policy::kNumActions);
  m.net_.FromTensors(tensors, "reward_model");
  return m;
}

double RewardLoss(const RewardModel& model, std::span<const RewardSample> samples,
                  std::vector<double>* grad) {
  if (samples.empty()) throw DomainError("empty reward batch");
  if (grad) grad->assign(model.net_.params().size(), 0.0);
  double loss = 0.0;
  const double n = static_cast<double>(samples.size());
  Mlp::Tape tape;
  for (const auto& s : samples) {
    const auto x = model.Input(s.state, s.action);
    const double z = model.net_.Forward(x, tape)[0];
    const double y = std::tanh(z);
    const double err = y - s.hf;
    loss += err * err / n;
    if (grad) {
      const double g = 2.0 * err * (1.0 - y * y) / n;
      model.net_.Backward(tape, std::span<const double>(&g, 1), *grad);
    }
  }
  return loss;
}

RewardModel FitRewardModel(RewardModel model, std::span<const RewardSample> samples,
                           int epochs, double step_size, std::vector<double>* loss_history) {
  if (samples.empty()) throw DomainError("empty reward batch");
  if (epochs < 0 || !(step_size > 0.0)) {
    throw ParameterError("reward fit needs epochs >= 0 and step_size > 0");
  }
  std::vector<double> grad;
  for (int e = 0; e < epochs; ++e) {
    const double loss = RewardLoss(model, samples, &grad);
    if (loss_history) loss_history->push_back(loss);
    auto p = model.net().params();
    for (size_t i = 0; i < p.size(); ++i) p[i] -= step_size * grad[i];
  }
  if (loss_history) loss_history->push_back(RewardLoss(model, samples, nullptr));
  return model;
}

std::vector<RewardSample> RewardSamples(const TrainingBatch& batch) {
  std::vector<RewardSample> out;
  for (const auto& t : batch.tuples) {
    if (t.tuple.hf_kind == HfKind::kValue) {
      out.push_back({t.tuple.state, t.tuple.action, t.tuple.hf});
    }
  }
  return out;
}

std::vector<FilledFeedback> FillFeedback(const TrainingBatch& batch,
                                         const RewardModel& model) {
  std::vector<FilledFeedback> out;
  out.reserve(batch.tuples.size());
  for (const auto& t : batch.tuples) {
    switch (t.tuple.hf_kind) {
      case HfKind::kValue:
        out.push_back({t.tuple.hf, false});
        break;
      case HfKind::kMissing:
        out.push_back({model.Predict(t.tuple.state, t.tuple.action), true});
        break;
      case HfKind::kNone:
        out.push_back({0.0, false});
        break;
    }
  }
  return out;
}

std::vector<policy::PpoEpisode> BuildEpisodes(
    const TrainingBatch& batch, std::span<const FilledFeedback> feedback, double gamma,
    const std::map<int, policy::PolicyModel>& snapshots) {
  if (feedback.size() != batch.tuples.size()) {
    throw DomainError("feedback and batch sizes differ");
  }
  std::vector<policy::PpoEpisode> episodes;
  for (size_t i = 0; i < batch.tuples.size(); ++i) {
    const auto& t = batch.tuples[i];
    const bool fresh = i == 0 || t.edge_id_hash != batch.tuples[i - 1].edge_id_hash ||
                       t.digest != batch.tuples[i - 1].digest;
    if (fresh) episodes.emplace_back();
    const auto snap = snapshots.find(t.version);
    if (snap == snapshots.end()) {
      throw DomainError(fmt::format("no policy snapshot for version {}", t.version));
    }
    auto& ep = episodes.back();
    ep.features.push_back(t.tuple.state);
    ep.actions.push_back(t.tuple.action);
    ep.old_log_probs.push_back(policy::LogProb(snap->second, t.tuple.state, t.tuple.action));
    ep.rewards.push_back(t.tuple.env_reward + gamma * feedback[i].hf);
  }
  return episodes;
}

// ---- offline update --------------------------------------------------------

policy::PolicyModel OfflineUpdate(const policy::PolicyModel& model,
                                  std::span<const policy::PpoEpisode> log,
                                  const OfflineConfig& config, OfflineStats* stats) {
  if (!(config.temperature > 0.0) || !(config.max_delta_norm > 0.0) ||
      !(config.step_size > 0.0) || config.steps < 0) {
    throw ParameterError("offline update needs positive temperature, clip and step size");
  }
  std::vector<const std::vector<double>*> feats;
  std::vector<int> actions;
  std::vector<double> returns;
  for (const auto& ep : log) {
    double g = 0.0;
    std::vector<double> rets(ep.rewards.size());
    for (size_t k = ep.rewards.size(); k-- > 0;) {
      g = ep.rewards[k] + config.discount * g;
      rets[k] = g;
    }
    for (size_t k = 0; k < ep.rewards.size(); ++k) {
      feats.push_back(&ep.features[k]);
      actions.push_back(ep.actions[k]);
      returns.push_back(rets[k]);
    }
  }
  if (feats.empty()) throw DomainError("empty offline log");
  const size_t n = feats.size();

  std::vector<double> adv(n);
  for (size_t i = 0; i < n; ++i) adv[i] = returns[i] - model.Value(*feats[i]);
  const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / n;
  double var = 0.0;
  for (double a : adv) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / n) + 1e-8;
  std::vector<double> weight(n);
  for (size_t i = 0; i < n; ++i) {
    weight[i] = std::min(std::exp((adv[i] - mean) / sd / config.temperature),
                         config.max_weight) + config.bc_coef;
  }

  policy::PolicyModel out = model;
  const size_t na = out.actor().params().size();
  const size_t nc = out.critic().params().size();
  std::vector<double> ga, gc;
  double loss = 0.0;
  Mlp::Tape tape;
  for (int step = 0; step < config.steps; ++step) {
    ga.assign(na, 0.0);
    gc.assign(nc, 0.0);
    loss = 0.0;
    for (size_t i = 0; i < n; ++i) {
      const auto logits = out.actor().Forward(*feats[i], tape);
      const auto probs = Softmax(logits);
      loss -= weight[i] * std::log(std::max(probs[actions[i]], 1e-300)) / n;
      std::vector<double> g(probs.size());
      for (size_t a = 0; a < probs.size(); ++a) {
        g[a] = weight[i] * (probs[a] - (static_cast<int>(a) == actions[i] ? 1.0 : 0.0)) / n;
      }
      out.actor().Backward(tape, g, ga);
      const double v = out.critic().Forward(*feats[i], tape)[0];
      const double err = v - returns[i];
      loss += err * err / n;
      const double gv = 2.0 * err / n;
      out.critic().Backward(tape, std::span<const double>(&gv, 1), gc);
    }
    auto pa = out.actor().params();
    for (size_t k = 0; k < na; ++k) pa[k] -= config.step_size * ga[k];
    auto pc = out.critic().params();
    for (size_t k = 0; k < nc; ++k) pc[k] -= config.step_size * gc[k];
  }

  const auto before = model.FlatParams();
  auto after = out.FlatParams();
  std::vector<double> delta(after.size());
  for (size_t k = 0; k < after.size(); ++k) delta[k] = after[k] - before[k];
  ClipNorm(delta, config.max_delta_norm);
  double norm2 = 0.0;
  for (size_t k = 0; k < after.size(); ++k) {
    after[k] = before[k] + delta[k];
    norm2 += delta[k] * delta[k];
  }
  out.SetFlatParams(after);
  if (stats) {
    stats->loss = loss;
    stats->delta_norm = std::sqrt(norm2);
  }
  return out;
}

// ---- rounds ----------------------------------------------------------------

void CloudEdgeConfig::ApplyOverrides(const KvConfig& cfg) {
  rounds = cfg.GetInt("cloudedge.rounds", rounds);
  distill_period = cfg.GetInt("cloudedge.distill_period", distill_period);
  episodes_per_edge = cfg.GetInt("cloudedge.episodes_per_edge", episodes_per_edge);
  feedback_rate = cfg.GetDouble("cloudedge.feedback_rate", feedback_rate);
  salt = cfg.GetU64("cloudedge.salt", salt);
  reward_epochs = cfg.GetInt("cloudedge.reward_epochs", reward_epochs);
  reward_step_size = cfg.GetDouble("cloudedge.reward_step_size", reward_step_size);
  offline_personalization =
      cfg.GetBool("cloudedge.offline_personalization", offline_personalization);
  offline.temperature = cfg.GetDouble("offline.temperature", offline.temperature);
  offline.max_delta_norm = cfg.GetDouble("offline.max_delta_norm", offline.max_delta_norm);
  offline.bc_coef = cfg.GetDouble("offline.bc_coef", offline.bc_coef);
  offline.steps = cfg.GetInt("offline.steps", offline.steps);
  offline.step_size = cfg.GetDouble("offline.step_size", offline.step_size);
  summary.quant_step = cfg.GetDouble("cloudedge.quant_step", summary.quant_step);
  summary.salt = salt;
  if (rounds < 1) throw ConfigError("cloudedge.rounds", "must be >= 1");
  if (distill_period < 1) throw ConfigError("cloudedge.distill_period", "must be >= 1");
  if (episodes_per_edge < 1) throw ConfigError("cloudedge.episodes_per_edge", "must be >= 1");
  if (!(feedback_rate >= 0.0 && feedback_rate <= 1.0)) {
    throw ConfigError("cloudedge.feedback_rate", "must lie in [0, 1]");
  }
  if (!(summary.quant_step > 0.0)) throw ConfigError("cloudedge.quant_step", "must be > 0");
  if (!(offline.temperature > 0.0)) throw ConfigError("offline.temperature", "must be > 0");
  if (!(offline.max_delta_norm > 0.0)) {
    throw ConfigError("offline.max_delta_norm", "must be > 0");
  }
  ppo.ApplyOverrides(cfg);
  rollout.ApplyOverrides(cfg);
}

RoundState RoundState::Start(policy::PolicyModel initial, RewardModel reward_model,
                             int total_rounds) {
  RoundState s;
  s.total_rounds = total_rounds;
  s.snapshots.emplace(0, initial);
  s.cloud_policy = std::move(initial);
  s.reward_model = std::move(reward_model);
  return s;
}

bool RoundState::operator==(const RoundState& o) const {
  return round == o.round && total_rounds == o.total_rounds &&
         cloud_policy == o.cloud_policy && cloud_version == o.cloud_version &&
         reward_model == o.reward_model && snapshots == o.snapshots && inbox == o.inbox;
}

RoundState RunRound(RoundState state, std::vector<EdgeAgent>& edges, const RoundEnv& env,
                    const CloudEdgeConfig& config, RoundReport* report) {
  if (state.round >= state.total_rounds) {
    throw DomainError(fmt::format("round budget exhausted ({} rounds)", state.total_rounds));
  }
  if (!env.norm || !env.traces) throw DomainError("round environment incomplete");
  const int round = state.round;
  RoundReport rep;
  rep.round = round;
  double reward_sum = 0.0, tts_sum = 0.0;
  int episodes = 0, switches = 0;

  for (size_t ei = 0; ei < edges.size(); ++ei) {
    auto& edge = edges[ei];
    edge.local_log.clear();
    policy::ModelSource source(edge.policy, policy::ActMode::kSample);
    const policy::AidtwStack stack{env.metric, env.selector, edge.library, env.norm};
    for (int e = 0; e < config.episodes_per_edge; ++e) {
      const auto trace = env.traces(edge, round, e);
      const uint64_t seed = DeriveSeed({edge.seed, static_cast<uint64_t>(round),
                                        static_cast<uint64_t>(e)});
      const auto traj = policy::Rollout(source, trace, stack, config.rollout, seed);
      Rng fb(DeriveSeed({seed, 0xfeedULL}));
      const bool answered = fb.Bernoulli(config.feedback_rate);
      auto summary = Summarize(traj, edge.name, edge.version,
                               fmt::format("{}/{}/{}", edge.name, round, e), answered,
                               config.summary);
      // Through the wire format, as the cloud would receive it.
      state.inbox.push_back(EdgeSummary::Decode(summary.Encode()));
      edge.local_log.push_back(policy::ToEpisode(traj));
      reward_sum += traj.total_reward;
      tts_sum += traj.tts;
      switches += traj.switched;
      ++episodes;
    }
  }

  const TrainingBatch batch = Aggregate(state.inbox);
  const auto samples = RewardSamples(batch);
  if (!samples.empty()) {
    std::vector<double> history;
    state.reward_model = FitRewardModel(std::move(state.reward_model), samples,
                                        config.reward_epochs, config.reward_step_size,
                                        &history);
    rep.reward_model_loss = history.back();
  }
  const auto filled = FillFeedback(batch, state.reward_model);
  for (const auto& f : filled) rep.filled_by_model += f.from_model;
  rep.tuples = static_cast<int>(batch.tuples.size());
  if (!batch.tuples.empty()) {
    const auto eps = BuildEpisodes(batch, filled, config.rollout.weights.gamma,
                                   state.snapshots);
    state.cloud_policy =
        policy::PpoUpdate(state.cloud_policy, eps, config.ppo,
                          DeriveSeed({config.salt, static_cast<uint64_t>(round), 0x990ULL}));
    ++state.cloud_version;
    state.snapshots.emplace(state.cloud_version, state.cloud_policy);
  }
  state.inbox.clear();

  if ((round + 1) % config.distill_period == 0) {
    const std::string msg = EncodeDistillation(state.cloud_version, state.cloud_policy);
    for (auto& edge : edges) {
      auto [version, model] = DecodeDistillation(msg);
      edge.version = version;
      edge.policy = std::move(model);
    }
  } else if (config.offline_personalization) {
    for (auto& edge : edges) {
      if (!edge.local_log.empty()) {
        edge.policy = OfflineUpdate(edge.policy, edge.local_log, config.offline);
      }
    }
  }

  ++state.round;
  rep.cloud_version = state.cloud_version;
  for (const auto& edge : edges) rep.edge_versions.push_back(edge.version);
  if (episodes > 0) {
    rep.mean_reward = reward_sum / episodes;
    rep.mean_tts = tts_sum / episodes;
    rep.switch_rate = static_cast<double>(switches) / episodes;
  }
  if (report) *report = std::move(rep);
  return state;
}

}  // namespace fpswitch::cloudedge
