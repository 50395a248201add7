#include "fpswitch/align.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fpswitch/error.h"
#include "fpswitch/nn.h"
#include "fpswitch/rng.h"

namespace fpswitch::align {
namespace {

using fpcore::FingerprintSequence;
using fpcore::kAllModalities;
using fpcore::kFeatureDims;
using fpcore::kNumModalities;
using fpcore::Modality;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Embedded windows: per window and modality, W_m x (kEmbedDim values).
struct Embedded {
  int n = 0;
  std::vector<double> e;         // n * kNumModalities * kEmbedDim
  std::vector<uint8_t> present;  // n * kNumModalities
  const double* at(int i, int m) const {
    return e.data() + (static_cast<size_t>(i) * kNumModalities + m) * kEmbedDim;
  }
};

void CheckSchema(const fpcore::Fingerprint& f) {
  for (Modality m : kAllModalities) {
    if (static_cast<int>(f.features(m).size()) != kFeatureDims[fpcore::Index(m)]) {
      throw DomainError(fmt::format("fingerprint schema mismatch in {}",
                                    fpcore::ModalityName(m)));
    }
  }
}

Embedded Embed(const MetricModel& model, const FingerprintSequence& seq) {
  Embedded out;
  out.n = static_cast<int>(seq.size());
  out.e.assign(static_cast<size_t>(out.n) * kNumModalities * kEmbedDim, 0.0);
  out.present.assign(static_cast<size_t>(out.n) * kNumModalities, 0);
  for (int i = 0; i < out.n; ++i) {
    const auto& w = seq.windows[i];
    CheckSchema(w);
    for (Modality m : kAllModalities) {
      const int mi = fpcore::Index(m);
      out.present[static_cast<size_t>(i) * kNumModalities + mi] = w.present(m);
      if (!w.present(m)) continue;
      const auto W = model.embedding(m);
      const auto& x = w.features(m);
      const int d = kFeatureDims[mi];
      double* dst = out.e.data() + (static_cast<size_t>(i) * kNumModalities + mi) * kEmbedDim;
      for (int r = 0; r < kEmbedDim; ++r) {
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += W[r * d + c] * x[c];
        dst[r] = s;
      }
    }
  }
  return out;
}

CostMatrix CostsFromEmbedded(const MetricModel& model, const Embedded& q,
                             const Embedded& p) {
  const auto w = model.weights();
  CostMatrix c;
  c.rows = q.n;
  c.cols = p.n;
  c.values.assign(static_cast<size_t>(q.n) * p.n, 0.0);
  for (int i = 0; i < q.n; ++i) {
    for (int j = 0; j < p.n; ++j) {
      double s = 0.0;
      for (int m = 0; m < kNumModalities; ++m) {
        if (!q.present[static_cast<size_t>(i) * kNumModalities + m] ||
            !p.present[static_cast<size_t>(j) * kNumModalities + m]) {
          continue;
        }
        const double* a = q.at(i, m);
        const double* b = p.at(j, m);
        double d2 = 0.0;
        for (int r = 0; r < kEmbedDim; ++r) d2 += (a[r] - b[r]) * (a[r] - b[r]);
        s += w[m] * d2;
      }
      c.values[static_cast<size_t>(i) * p.n + j] = s;
    }
  }
  return c;
}

double SoftMin3(double a, double b, double c, double gamma) {
  const double mn = std::min({a, b, c});
  if (mn == kInf) return kInf;
  double z = 0.0;
  for (double v : {a, b, c}) {
    if (v != kInf) z += std::exp(-(v - mn) / gamma);
  }
  return mn - gamma * std::log(z);
}

// Accumulates coef * sum_ij E_ij * d cost_ij / d theta into grad.
void AccumulateCostGradient(const MetricModel& model, const FingerprintSequence& q,
                            const FingerprintSequence& p,
                            std::span<const double> cost_grad, double coef,
                            std::vector<double>& grad) {
  const auto w = model.weights();
  const int n = static_cast<int>(q.size()), m = static_cast<int>(p.size());
  std::array<double, kNumModalities> d_w{};
  for (Modality mod : kAllModalities) {
    const int mi = fpcore::Index(mod);
    const int d = kFeatureDims[mi];
    // G = sum_ij E_ij delta delta^T
    std::vector<double> G(static_cast<size_t>(d) * d, 0.0);
    bool any = false;
    for (int i = 0; i < n; ++i) {
      if (!q.windows[i].present(mod)) continue;
      const auto& x = q.windows[i].features(mod);
      for (int j = 0; j < m; ++j) {
        const double e = cost_grad[static_cast<size_t>(i) * m + j];
        if (e == 0.0 || !p.windows[j].present(mod)) continue;
        const auto& y = p.windows[j].features(mod);
        any = true;
        for (int a = 0; a < d; ++a) {
          const double da = x[a] - y[a];
          for (int b = 0; b < d; ++b) G[a * d + b] += e * da * (x[b] - y[b]);
        }
      }
    }
    if (!any) continue;
    const auto W = model.embedding(mod);
    const size_t off = MetricModel::EmbedOffset(mod);
    // WG = W G; d cost / d W_m = 2 w_m W G; d cost / d w_m = tr(W G W^T)
    double tr = 0.0;
    for (int r = 0; r < kEmbedDim; ++r) {
      for (int b = 0; b < d; ++b) {
        double wg = 0.0;
        for (int a = 0; a < d; ++a) wg += W[r * d + a] * G[a * d + b];
        grad[off + r * d + b] += coef * 2.0 * w[mi] * wg;
        tr += wg * W[r * d + b];
      }
    }
    d_w[mi] += coef * tr;
  }
  double dot = 0.0;
  for (int k = 0; k < kNumModalities; ++k) dot += w[k] * d_w[k];
  for (int k = 0; k < kNumModalities; ++k) {
    grad[MetricModel::kScoresOffset + k] += w[k] * (d_w[k] - dot);
  }
}

void CheckBand(int band) {
  if (band < 1) throw ParameterError(fmt::format("band must be >= 1 (got {})", band));
}

void CheckPairShapes(const FingerprintSequence& q, const FingerprintSequence& p) {
  if (q.size() < 2 || p.size() < 2) {
    throw DomainError("alignment needs sequences of at least two windows");
  }
}

}  // namespace

// ---- model ---------------------------------------------------------------

MetricModel::MetricModel() : theta_(kParamCount, 0.0) {
  for (Modality m : kAllModalities) {
    const int d = kFeatureDims[fpcore::Index(m)];
    auto W = mutable_embedding(m);
    for (int r = 0; r < std::min(kEmbedDim, d); ++r) W[r * d + r] = 1.0;
  }
}

MetricModel MetricModel::Initialized(uint64_t seed, double noise) {
  MetricModel model;
  Rng rng(seed);
  for (size_t i = 0; i < kScoresOffset; ++i) {
    model.theta_[i] += rng.Uniform(-noise, noise);
  }
  return model;
}

std::span<const double> MetricModel::embedding(Modality m) const {
  return std::span(theta_).subspan(EmbedOffset(m),
                                   kEmbedDim * kFeatureDims[fpcore::Index(m)]);
}

std::span<double> MetricModel::mutable_embedding(Modality m) {
  return std::span(theta_).subspan(EmbedOffset(m),
                                   kEmbedDim * kFeatureDims[fpcore::Index(m)]);
}

double MetricModel::beta() const { return std::exp(log_beta()); }

std::array<double, kNumModalities> MetricModel::weights() const {
  const auto p = Softmax(scores());
  std::array<double, kNumModalities> w{};
  std::copy(p.begin(), p.end(), w.begin());
  return w;
}

std::vector<NamedTensor> MetricModel::ToTensors() const {
  std::vector<NamedTensor> out;
  for (Modality m : kAllModalities) {
    const auto W = embedding(m);
    out.push_back({fmt::format("metric.W_{}", fpcore::ModalityName(m)), kEmbedDim,
                   kFeatureDims[fpcore::Index(m)],
                   std::vector<double>(W.begin(), W.end())});
  }
  const auto s = scores();
  out.push_back({"metric.scores", kNumModalities, 1,
                 std::vector<double>(s.begin(), s.end())});
  out.push_back({"metric.log_beta", 1, 1, {log_beta()}});
  return out;
}

MetricModel MetricModel::FromTensors(const std::vector<NamedTensor>& tensors) {
  MetricModel model;
  for (Modality m : kAllModalities) {
    const auto& t = FindTensor(tensors, fmt::format("metric.W_{}", fpcore::ModalityName(m)),
                               kEmbedDim, kFeatureDims[fpcore::Index(m)]);
    std::copy(t.values.begin(), t.values.end(), model.mutable_embedding(m).begin());
  }
  const auto& s = FindTensor(tensors, "metric.scores", kNumModalities, 1);
  std::copy(s.values.begin(), s.values.end(), model.scores().begin());
  model.set_log_beta(FindTensor(tensors, "metric.log_beta", 1, 1).values[0]);
  return model;
}

std::string FormatAlignmentRecord(uint64_t prototype_id, const AlignmentResult& r) {
  return fmt::format("{},{:.17g},{:.17g},{}", prototype_id, r.distance,
                     r.similarity, r.path.size());
}

// ---- costs and DTW -------------------------------------------------------

double CellCost(const MetricModel& model, const fpcore::Fingerprint& q,
                const fpcore::Fingerprint& f) {
  FingerprintSequence a, b;
  a.windows = {q};
  b.windows = {f};
  return CostsFromEmbedded(model, Embed(model, a), Embed(model, b)).values[0];
}

bool InBand(int i, int j, int len_q, int len_f, int band) {
  const double center = static_cast<double>(j) * len_q / len_f;
  return std::abs(i - center) <= band + 1e-9;
}

CostMatrix ComputeCosts(const MetricModel& model, const FingerprintSequence& query,
                        const FingerprintSequence& proto) {
  return CostsFromEmbedded(model, Embed(model, query), Embed(model, proto));
}

double DtwOnCosts(const CostMatrix& costs, int band,
                  std::vector<std::pair<int, int>>* path) {
  CheckBand(band);
  const int n = costs.rows, m = costs.cols;
  if (n < 1 || m < 1) throw DomainError("empty cost matrix");
  std::vector<double> D(static_cast<size_t>(n) * m, kInf);
  auto at = [&](int i, int j) -> double {
    return (i < 0 || j < 0) ? kInf : D[static_cast<size_t>(i) * m + j];
  };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!InBand(i, j, n, m, band)) continue;
      const double c = costs.at(i, j);
      double best = (i == 0 && j == 0) ? 0.0
                                       : std::min({at(i - 1, j - 1), at(i - 1, j), at(i, j - 1)});
      if (best == kInf) continue;
      D[static_cast<size_t>(i) * m + j] = best + c;
    }
  }
  const double total = at(n - 1, m - 1);
  if (total == kInf) throw DomainError("band too narrow");
  if (path) {
    path->clear();
    int i = n - 1, j = m - 1;
    path->emplace_back(i, j);
    while (i > 0 || j > 0) {
      const double diag = at(i - 1, j - 1);
      const double vert = at(i - 1, j);
      const double horiz = at(i, j - 1);
      if (diag <= vert && diag <= horiz) {
        --i;
        --j;
      } else if (vert <= horiz) {
        --i;
      } else {
        --j;
      }
      path->emplace_back(i, j);
    }
    std::reverse(path->begin(), path->end());
  }
  return total;
}

AlignmentResult Dtw(const MetricModel& model, const FingerprintSequence& query,
                    const FingerprintSequence& proto, int band) {
  CheckBand(band);
  CheckPairShapes(query, proto);
  AlignmentResult r;
  r.distance = DtwOnCosts(ComputeCosts(model, query, proto), band, &r.path);
  r.similarity = std::exp(-model.beta() * r.distance);
  return r;
}

SoftDtwOnCosts SoftDtwCore(const CostMatrix& costs, int band, double gamma) {
  CheckBand(band);
  if (!(gamma > 0.0)) {
    throw ParameterError(fmt::format("soft-DTW gamma must be > 0 (got {})", gamma));
  }
  const int n = costs.rows, m = costs.cols;
  auto idx = [m](int i, int j) { return static_cast<size_t>(i) * m + j; };
  std::vector<double> R(static_cast<size_t>(n) * m, kInf);
  auto r_at = [&](int i, int j) { return (i < 0 || j < 0) ? kInf : R[idx(i, j)]; };
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      if (!InBand(i, j, n, m, band)) continue;
      const double prev = (i == 0 && j == 0)
                              ? 0.0
                              : SoftMin3(r_at(i - 1, j - 1), r_at(i - 1, j),
                                         r_at(i, j - 1), gamma);
      if (prev == kInf) continue;
      R[idx(i, j)] = costs.at(i, j) + prev;
    }
  }
  SoftDtwOnCosts out;
  out.value = R[idx(n - 1, m - 1)];
  if (out.value == kInf) throw DomainError("band too narrow");

  // E_ij = d value / d R_ij = d value / d cost_ij.
  std::vector<double>& E = out.cost_grad;
  E.assign(R.size(), 0.0);
  E[idx(n - 1, m - 1)] = 1.0;
  for (int i = n - 1; i >= 0; --i) {
    for (int j = m - 1; j >= 0; --j) {
      const double rij = R[idx(i, j)];
      if (rij == kInf || (i == n - 1 && j == m - 1)) continue;
      double e = 0.0;
      const std::array<std::pair<int, int>, 3> succ = {
          std::pair{i + 1, j}, std::pair{i, j + 1}, std::pair{i + 1, j + 1}};
      for (auto [si, sj] : succ) {
        if (si >= n || sj >= m) continue;
        const double rs = R[idx(si, sj)];
        if (rs == kInf) continue;
        e += E[idx(si, sj)] * std::exp((rs - costs.at(si, sj) - rij) / gamma);
      }
      E[idx(i, j)] = e;
    }
  }
  return out;
}

SoftDtwResult SoftDtw(const MetricModel& model, const FingerprintSequence& query,
                      const FingerprintSequence& proto, int band, double gamma,
                      bool with_grad) {
  CheckPairShapes(query, proto);
  const auto costs = ComputeCosts(model, query, proto);
  const auto core = SoftDtwCore(costs, band, gamma);
  SoftDtwResult out;
  out.value = core.value;
  if (with_grad) {
    out.grad.assign(MetricModel::kParamCount, 0.0);
    AccumulateCostGradient(model, query, proto, core.cost_grad, 1.0, out.grad);
  }
  return out;
}

filters::SeriesMatrix SoftDtwQueryGradient(const MetricModel& model,
                                           const FingerprintSequence& query,
                                           const FingerprintSequence& proto,
                                           int band, double gamma) {
  CheckPairShapes(query, proto);
  const auto core = SoftDtwCore(ComputeCosts(model, query, proto), band, gamma);
  const auto w = model.weights();
  const int n = static_cast<int>(query.size()), m = static_cast<int>(proto.size());
  filters::SeriesMatrix g;
  g.rows = n;
  g.cols = fpcore::kTotalFeatures;
  g.values.assign(static_cast<size_t>(n) * g.cols, 0.0);
  for (Modality mod : kAllModalities) {
    const int mi = fpcore::Index(mod);
    const int d = kFeatureDims[mi];
    const int off = fpcore::FeatureOffset(mod);
    const auto W = model.embedding(mod);
    // M = W^T W (d x d)
    std::vector<double> M(static_cast<size_t>(d) * d, 0.0);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        for (int r = 0; r < kEmbedDim; ++r) M[a * d + b] += W[r * d + a] * W[r * d + b];
    for (int i = 0; i < n; ++i) {
      if (!query.windows[i].present(mod)) continue;
      const auto& x = query.windows[i].features(mod);
      for (int j = 0; j < m; ++j) {
        const double e = core.cost_grad[static_cast<size_t>(i) * m + j];
        if (e == 0.0 || !proto.windows[j].present(mod)) continue;
        const auto& y = proto.windows[j].features(mod);
        for (int a = 0; a < d; ++a) {
          double s = 0.0;
          for (int b = 0; b < d; ++b) s += M[a * d + b] * (x[b] - y[b]);
          g.at(i, off + a) += e * 2.0 * w[mi] * s;
        }
      }
    }
  }
  return g;
}

double MarginFromValues(double positive_value,
                        std::span<const double> negative_values, double margin) {
  if (negative_values.empty()) throw DomainError("margin loss needs at least one negative");
  double s = 0.0;
  for (double v : negative_values) s += std::max(0.0, margin + positive_value - v);
  return s / negative_values.size();
}

double MarginLoss(const MetricModel& model, const PairRef& positive,
                  std::span<const PairRef> negatives, const MarginOptions& options,
                  std::vector<double>* grad) {
  if (negatives.empty()) throw DomainError("margin loss needs at least one negative");
  if (!(options.margin > 0.0)) throw ParameterError("margin must be > 0");
  const bool want = grad != nullptr;
  const auto pos = SoftDtw(model, *positive.query, *positive.proto, options.band,
                           options.gamma, want);
  std::vector<SoftDtwResult> negs;
  std::vector<double> values;
  for (const auto& nref : negatives) {
    negs.push_back(SoftDtw(model, *nref.query, *nref.proto, options.band,
                           options.gamma, want));
    values.push_back(negs.back().value);
  }
  const double loss = MarginFromValues(pos.value, values, options.margin);
  if (want) {
    grad->assign(MetricModel::kParamCount, 0.0);
    const double k = 1.0 / negatives.size();
    for (size_t i = 0; i < negs.size(); ++i) {
      if (options.margin + pos.value - negs[i].value <= 0.0) continue;
      for (size_t p = 0; p < grad->size(); ++p) {
        (*grad)[p] += k * (pos.grad[p] - negs[i].grad[p]);
      }
    }
  }
  return loss;
}

// ---- training ------------------------------------------------------------

namespace {

std::vector<PairRef> NegRefs(const TrainingExample& ex) {
  std::vector<PairRef> refs;
  for (const auto& n : ex.negatives) refs.push_back({&n.query, &n.proto});
  return refs;
}

// Logistic calibration of beta: positives should map to S -> 1, negatives
// to S -> 0. Distances are treated as constants.
double CalibrateLogBeta(double log_beta, std::span<const double> pos_d,
                        std::span<const double> neg_d, double step, int steps) {
  for (int s = 0; s < steps; ++s) {
    const double beta = std::exp(log_beta);
    double g = 0.0;
    for (double d : pos_d) g += beta * d / pos_d.size();  // -log S
    for (double d : neg_d) {
      const double x = beta * d;
      // -log(1 - exp(-x)); derivative w.r.t. log beta is -x e^{-x}/(1-e^{-x})
      const double em = std::exp(-x);
      g += (x > 1e-12 ? -x * em / (1.0 - em) : -1.0) / neg_d.size();
    }
    log_beta = std::clamp(log_beta - step * g, -8.0, 5.0);
  }
  return log_beta;
}

}  // namespace

double MeanMarginLoss(const MetricModel& model,
                      std::span<const TrainingExample> examples,
                      const MarginOptions& options) {
  if (examples.empty()) return 0.0;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto refs = NegRefs(ex);
    total += MarginLoss(model, {&ex.positive.query, &ex.positive.proto}, refs, options);
  }
  return total / examples.size();
}

std::vector<filters::SelectorBatch> BuildSelectorBatches(
    const MetricModel& model, std::span<const TrainingExample> examples,
    const MarginOptions& options, const fpcore::NormalizationConfig& norm) {
  std::vector<filters::SelectorBatch> batches;
  for (const auto& ex : examples) {
    filters::SelectorBatch b;
    std::vector<const OwnedPair*> pairs = {&ex.positive};
    for (const auto& n : ex.negatives) pairs.push_back(&n);
    for (const auto* p : pairs) {
      b.samples.push_back({filters::ContextFromSequence(p->query, 0.0, norm),
                           filters::ToMatrix(p->query)});
    }
    // The closure copies what it needs; examples may be temporaries.
    b.loss = [model, options, pairs_copy = std::vector<OwnedPair>(
                                  [&] {
                                    std::vector<OwnedPair> v;
                                    for (const auto* p : pairs) v.push_back(*p);
                                    return v;
                                  }())](const std::vector<filters::SeriesMatrix>& denoised) {
      filters::LossAndGrad lg;
      std::vector<FingerprintSequence> queries;
      for (size_t k = 0; k < pairs_copy.size(); ++k) {
        FingerprintSequence q = pairs_copy[k].query;
        filters::FromMatrix(denoised[k], q);
        queries.push_back(std::move(q));
      }
      std::vector<double> values;
      for (size_t k = 0; k < queries.size(); ++k) {
        values.push_back(SoftDtw(model, queries[k], pairs_copy[k].proto, options.band,
                                 options.gamma, false)
                             .value);
      }
      const std::span<const double> neg_values(values.data() + 1, values.size() - 1);
      lg.loss = MarginFromValues(values[0], neg_values, options.margin);
      const double k = 1.0 / neg_values.size();
      for (size_t q = 0; q < queries.size(); ++q) {
        filters::SeriesMatrix zero{denoised[q].rows, denoised[q].cols,
                                   std::vector<double>(denoised[q].values.size(), 0.0)};
        lg.grads.push_back(std::move(zero));
      }
      bool pos_active = false;
      for (size_t n = 0; n < neg_values.size(); ++n) {
        if (options.margin + values[0] - neg_values[n] <= 0.0) continue;
        pos_active = true;
        const auto g = SoftDtwQueryGradient(model, queries[n + 1], pairs_copy[n + 1].proto,
                                            options.band, options.gamma);
        for (size_t i = 0; i < g.values.size(); ++i) lg.grads[n + 1].values[i] -= k * g.values[i];
        const auto gp = SoftDtwQueryGradient(model, queries[0], pairs_copy[0].proto,
                                             options.band, options.gamma);
        for (size_t i = 0; i < gp.values.size(); ++i) lg.grads[0].values[i] += k * gp.values[i];
      }
      (void)pos_active;
      return lg;
    };
    batches.push_back(std::move(b));
  }
  return batches;
}

MetricTrainResult TrainMetric(MetricModel model, filters::SelectorModel selector,
                              std::span<const TrainingExample> examples,
                              const MetricTrainOptions& options,
                              const fpcore::NormalizationConfig& norm) {
  if (examples.empty()) throw DomainError("metric training needs at least one positive");
  MetricTrainResult out;
  std::vector<double> grad, step_grad(MetricModel::kParamCount);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    std::fill(step_grad.begin(), step_grad.end(), 0.0);
    double loss = 0.0;
    for (const auto& ex : examples) {
      const auto refs = NegRefs(ex);
      loss += MarginLoss(model, {&ex.positive.query, &ex.positive.proto}, refs,
                         options.margin, &grad);
      for (size_t i = 0; i < grad.size(); ++i) step_grad[i] += grad[i] / examples.size();
    }
    out.loss_history.push_back(loss / examples.size());
    step_grad[MetricModel::kLogBetaOffset] = 0.0;
    ClipNorm(step_grad, options.max_grad_norm);
    for (size_t i = 0; i < step_grad.size(); ++i) {
      model.params()[i] -= options.step_size * step_grad[i];
    }
    if (options.train_selector) {
      const auto batches = BuildSelectorBatches(model, examples, options.margin, norm);
      filters::SelectorTrainOptions so;
      so.steps = 1;
      so.step_size = options.selector_step_size;
      selector = filters::TrainSelector(std::move(selector), batches, so);
    }
  }
  out.loss_history.push_back(MeanMarginLoss(model, examples, options.margin));

  if (options.epochs > 0 && options.beta_steps > 0) {
    std::vector<double> pos_d, neg_d;
    for (const auto& ex : examples) {
      pos_d.push_back(Dtw(model, ex.positive.query, ex.positive.proto,
                          options.margin.band).distance);
      for (const auto& n : ex.negatives) {
        neg_d.push_back(Dtw(model, n.query, n.proto, options.margin.band).distance);
      }
    }
    model.set_log_beta(CalibrateLogBeta(model.log_beta(), pos_d, neg_d,
                                        options.beta_step_size,
                                        options.beta_steps * std::max(1, options.epochs)));
  }
  out.metric = std::move(model);
  out.selector = std::move(selector);
  return out;
}

std::vector<TrainingExample> BuildTrainingExamples(
    std::span<const FingerprintSequence> queries,
    const fpcore::FingerprintLibrary& library, int negatives_per_positive,
    uint64_t seed, int max_positives_per_query,
    std::span<const FingerprintSequence> background) {
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (const auto& q : queries) {
    if (!q.label) continue;
    std::vector<const FingerprintSequence*> same, cross;
    for (const auto& p : library.sequences()) {
      if (!p.label || p.prototype_id == q.prototype_id) continue;
      (p.label->kind == q.label->kind ? same : cross).push_back(&p);
    }
    int used = 0;
    for (const auto* p : same) {
      if (used++ >= max_positives_per_query) break;
      TrainingExample ex;
      ex.positive = {q, *p};
      for (int k = 0; k < negatives_per_positive; ++k) {
        if (k < negatives_per_positive / 2) {
          if (k < static_cast<int>(cross.size())) {
            ex.negatives.push_back({q, *cross[rng.UniformInt(0, static_cast<int>(cross.size()) - 1)]});
            continue;
          }
          if (!background.empty()) {
            const int b = rng.UniformInt(0, static_cast<int>(background.size()) - 1);
            ex.negatives.push_back({background[b], *p});
            continue;
          }
        }
        // Time-shuffled query: same windows, permuted order, original stamps.
        FingerprintSequence shuffled = q;
        std::vector<int> order(q.size());
        std::iota(order.begin(), order.end(), 0);
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
          std::swap(order[i], order[rng.UniformInt(0, i)]);
        }
        for (size_t i = 0; i < order.size(); ++i) {
          shuffled.windows[i] = q.windows[order[i]];
          shuffled.windows[i].timestamp = q.windows[i].timestamp;
        }
        ex.negatives.push_back({std::move(shuffled), *p});
      }
      out.push_back(std::move(ex));
    }
  }
  return out;
}

// ---- matching ------------------------------------------------------------

Matcher::Matcher(const MetricModel& model, const filters::SelectorModel& selector,
                 const fpcore::FingerprintLibrary& library,
                 const fpcore::NormalizationConfig& norm, int band)
    : model_(model), selector_(selector), library_(library), norm_(norm), band_(band) {
  CheckBand(band);
}

std::vector<MatchEntry> Matcher::Match(const FingerprintSequence& live, int top_k,
                                       double scan_age) const {
  std::vector<MatchEntry> out;
  if (library_.empty() || top_k <= 0) return out;
  const auto choice =
      filters::SelectFilter(selector_, filters::ContextFromSequence(live, scan_age, norm_));
  const auto cleaned = filters::DenoiseSequence(choice, live);
  const Embedded q = Embed(model_, cleaned);
  const double beta = model_.beta();
  for (const auto& proto : library_.sequences()) {
    if (proto.size() < 2) continue;
    const auto costs = CostsFromEmbedded(model_, q, Embed(model_, proto));
    MatchEntry e;
    e.prototype_id = proto.prototype_id;
    try {
      e.result.distance = DtwOnCosts(costs, band_, &e.result.path);
    } catch (const DomainError&) {
      continue;
    }
    e.result.similarity = std::exp(-beta * e.result.distance);
    out.push_back(std::move(e));
  }
  std::sort(out.begin(), out.end(), [](const MatchEntry& a, const MatchEntry& b) {
    if (a.result.similarity != b.result.similarity) {
      return a.result.similarity > b.result.similarity;
    }
    return a.prototype_id < b.prototype_id;
  });
  if (static_cast<int>(out.size()) > top_k) out.resize(top_k);
  return out;
}

std::vector<MatchEntry> Match(const MetricModel& model,
                              const filters::SelectorModel& selector,
                              const FingerprintSequence& live,
                              const fpcore::FingerprintLibrary& library, int band,
                              int top_k, const fpcore::NormalizationConfig& norm,
                              double scan_age) {
  return Matcher(model, selector, library, norm, band).Match(live, top_k, scan_age);
}

}  // namespace fpswitch::align
