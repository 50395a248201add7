#include "fpswitch/filters.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "fpswitch/dual.h"
#include "fpswitch/error.h"

namespace fpswitch::filters {
namespace {

using fpcore::kNumModalities;
using fpcore::kTotalFeatures;
using fpcore::Modality;

template <typename T>
std::vector<T> KalmanImpl(std::span<const double> x, T q, T r, T mean, T var) {
  std::vector<T> out;
  out.reserve(x.size());
  for (double z : x) {
    var += q;
    const T gain = var / (var + r);
    mean += gain * (T(z) - mean);
    var = (T(1.0) - gain) * var;
    out.push_back(mean);
  }
  return out;
}

template <typename T>
std::vector<T> GaussianImpl(std::span<const double> x, T sigma) {
  using std::exp;
  const double s = Value(sigma);
  const int n = static_cast<int>(x.size());
  const int radius = static_cast<int>(std::ceil(3.0 * s));
  std::vector<T> kernel(radius + 1);
  for (int k = 0; k <= radius; ++k) {
    kernel[k] = exp(T(-0.5 * k * k) / (sigma * sigma));
  }
  std::vector<T> out(n);
  for (int i = 0; i < n; ++i) {
    T num(0.0), den(0.0);
    for (int k = -radius; k <= radius; ++k) {
      const int j = i + k;
      if (j < 0 || j >= n) continue;
      const T& w = kernel[std::abs(k)];
      num += w * T(x[j]);
      den += w;
    }
    out[i] = num / den;
  }
  return out;
}

template <typename T>
std::vector<T> ElpImpl(std::span<const double> x, T alpha) {
  std::vector<T> out;
  out.reserve(x.size());
  T y(x.empty() ? 0.0 : x[0]);
  for (size_t i = 0; i < x.size(); ++i) {
    if (i > 0) y = alpha * T(x[i]) + (T(1.0) - alpha) * y;
    out.push_back(y);
  }
  return out;
}

void CheckKalman(double q, double r) {
  if (!(r > 0.0) || !std::isfinite(r)) {
    throw ParameterError(fmt::format("Kalman R must be > 0 (got {})", r));
  }
  if (!(q >= 0.0) || !std::isfinite(q)) {
    throw ParameterError(fmt::format("Kalman Q must be >= 0 (got {})", q));
  }
}
void CheckSigma(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError(fmt::format("Gaussian sigma must be > 0 (got {})", sigma));
  }
}
void CheckAlpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    throw ParameterError(fmt::format("ELP alpha must be in (0,1] (got {})", alpha));
  }
}
void CheckNonEmpty(std::span<const double> s) {
  if (s.empty()) throw ParameterError("filter input series is empty");
}

double Squash(double raw, double lo, double hi) {
  return lo + (hi - lo) * Sigmoid(raw);
}
// d Squash / d raw
double SquashSlope(double raw, double lo, double hi) {
  const double s = Sigmoid(raw);
  return (hi - lo) * s * (1.0 - s);
}

}  // namespace

void FilterContext::Validate() const {
  for (double v : {rssi_variance, scan_age, step_rate}) {
    if (!std::isfinite(v) || v < 0.0) {
      throw DomainError("filter context fields must be finite and >= 0");
    }
  }
}

std::vector<double> FilterContext::Features() const {
  std::vector<double> f = {std::log1p(rssi_variance) / 3.0, scan_age / 5.0,
                           step_rate / 2.0};
  for (bool p : presence) f.push_back(p ? 1.0 : 0.0);
  return f;
}

FilterKind FilterChoice::Selected() const {
  int best = 0;
  for (int k = 1; k < kNumFilters; ++k) {
    if (weights[k] > weights[best]) best = k;
  }
  return static_cast<FilterKind>(best);
}

void FilterChoice::Validate() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw DomainError("filter weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw DomainError("filter weights must sum to 1");
  CheckKalman(q, r);
  CheckSigma(sigma);
  CheckAlpha(alpha);
}

std::vector<double> ApplyKalman(std::span<const double> series, double q,
                                double r, double init_mean, double init_var) {
  CheckKalman(q, r);
  CheckNonEmpty(series);
  if (!(init_var >= 0.0)) throw ParameterError("Kalman initial variance must be >= 0");
  return KalmanImpl<double>(series, q, r, init_mean, init_var);
}

std::vector<double> ApplyGaussian(std::span<const double> series, double sigma) {
  CheckSigma(sigma);
  CheckNonEmpty(series);
  return GaussianImpl<double>(series, sigma);
}

std::vector<double> ApplyElp(std::span<const double> series, double alpha) {
  CheckAlpha(alpha);
  CheckNonEmpty(series);
  return ElpImpl<double>(series, alpha);
}

std::vector<double> Denoise(const FilterChoice& choice,
                            std::span<const double> series) {
  CheckNonEmpty(series);
  switch (choice.Selected()) {
    case FilterKind::kKalman:
      return ApplyKalman(series, choice.q, choice.r, series[0], choice.r);
    case FilterKind::kGaussian:
      return ApplyGaussian(series, choice.sigma);
    case FilterKind::kElp:
      return ApplyElp(series, choice.alpha);
  }
  return {};
}

std::vector<double> DenoiseSoft(const FilterChoice& choice,
                                std::span<const double> series) {
  CheckNonEmpty(series);
  const auto k = ApplyKalman(series, choice.q, choice.r, series[0], choice.r);
  const auto g = ApplyGaussian(series, choice.sigma);
  const auto e = ApplyElp(series, choice.alpha);
  std::vector<double> out(series.size());
  for (size_t i = 0; i < out.size(); ++i) {
    out[i] = choice.weights[0] * k[i] + choice.weights[1] * g[i] +
             choice.weights[2] * e[i];
  }
  return out;
}

std::vector<double> SeriesMatrix::Column(int c) const {
  std::vector<double> out(rows);
  for (int r = 0; r < rows; ++r) out[r] = at(r, c);
  return out;
}

void SeriesMatrix::SetColumn(int c, std::span<const double> v) {
  for (int r = 0; r < rows; ++r) at(r, c) = v[r];
}

SeriesMatrix ToMatrix(const fpcore::FingerprintSequence& sequence) {
  SeriesMatrix m;
  m.rows = static_cast<int>(sequence.size());
  m.cols = kTotalFeatures;
  m.values.reserve(static_cast<size_t>(m.rows) * m.cols);
  for (const auto& w : sequence.windows) {
    for (double v : w.Flat()) m.values.push_back(v);
  }
  return m;
}

void FromMatrix(const SeriesMatrix& m, fpcore::FingerprintSequence& sequence) {
  for (int r = 0; r < m.rows; ++r) {
    int c = 0;
    for (Modality mod : fpcore::kAllModalities) {
      for (double& v : sequence.windows[r].mutable_features(mod)) v = m.at(r, c++);
    }
  }
}

fpcore::FingerprintSequence DenoiseSequence(
    const FilterChoice& choice, const fpcore::FingerprintSequence& sequence) {
  SeriesMatrix m = ToMatrix(sequence);
  for (int c = 0; c < m.cols; ++c) m.SetColumn(c, Denoise(choice, m.Column(c)));
  fpcore::FingerprintSequence out = sequence;
  FromMatrix(m, out);
  return out;
}

FilterContext ContextFromSequence(const fpcore::FingerprintSequence& sequence,
                                  double scan_age,
                                  const fpcore::NormalizationConfig& norm) {
  FilterContext ctx;
  ctx.scan_age = std::max(0.0, scan_age);
  const int rssi_col = fpcore::FeatureOffset(Modality::kWifi);
  const int step_col = fpcore::FeatureOffset(Modality::kPdr);
  std::vector<double> rssi;
  double steps = 0.0;
  int pdr_windows = 0;
  for (const auto& w : sequence.windows) {
    for (Modality m : fpcore::kAllModalities) {
      if (w.present(m)) ctx.presence[fpcore::Index(m)] = true;
    }
    if (w.present(Modality::kWifi)) {
      rssi.push_back(norm.Denormalize(rssi_col, w.features(Modality::kWifi)[0]));
    }
    if (w.present(Modality::kPdr)) {
      steps += norm.Denormalize(step_col, w.features(Modality::kPdr)[0]);
      ++pdr_windows;
    }
  }
  if (rssi.size() >= 2) {
    double mean = 0.0;
    for (double v : rssi) mean += v;
    mean /= rssi.size();
    double var = 0.0;
    for (double v : rssi) var += (v - mean) * (v - mean);
    ctx.rssi_variance = var / rssi.size();
  }
  ctx.step_rate = pdr_windows > 0 ? std::max(0.0, steps / pdr_windows) : 0.0;
  return ctx;
}

SelectorModel::SelectorModel() : net_({kInputs, kHidden, kOutputs}) {}

SelectorModel SelectorModel::Initialized(uint64_t seed, double scale) {
  SelectorModel m;
  Rng rng(seed);
  m.net_.Initialize(rng, scale);
  return m;
}

SelectorModel SelectorModel::FromTensors(const std::vector<NamedTensor>& tensors) {
  SelectorModel m;
  m.net_.FromTensors(tensors, "selector");
  return m;
}

namespace {

struct SelectorForward {
  Mlp::Tape tape;
  std::vector<double> out;  // 3 logits + 4 raw
  FilterChoice choice;
};

SelectorForward RunSelector(const SelectorModel& model, const FilterContext& ctx) {
  SelectorForward f;
  const auto x = ctx.Features();
  f.out = model.net().Forward(x, f.tape);
  const auto p = Softmax(std::span<const double>(f.out).first(kNumFilters));
  std::copy(p.begin(), p.end(), f.choice.weights.begin());
  using R = ParamRanges;
  f.choice.q = Squash(f.out[3], R::kQMin, R::kQMax);
  f.choice.r = Squash(f.out[4], R::kRMin, R::kRMax);
  f.choice.sigma = Squash(f.out[5], R::kSigmaMin, R::kSigmaMax);
  f.choice.alpha = Squash(f.out[6], R::kAlphaMin, R::kAlphaMax);
  // Sigmoid can round to an endpoint for extreme raw values.
  f.choice.r = std::max(f.choice.r, R::kRMin);
  f.choice.sigma = std::max(f.choice.sigma, R::kSigmaMin);
  f.choice.alpha = std::clamp(f.choice.alpha, R::kAlphaMin, R::kAlphaMax);
  return f;
}

}  // namespace

FilterChoice SelectFilter(const SelectorModel& model, const FilterContext& ctx) {
  return RunSelector(model, ctx).choice;
}

double SelectorObjective(const SelectorModel& model,
                         std::span<const SelectorBatch> batches, double l2,
                         std::vector<double>* grad) {
  if (batches.empty()) throw DomainError("selector training batch is empty");
  const auto params = model.net().params();
  if (grad) grad->assign(params.size(), 0.0);
  double total = 0.0;
  const double scale = 1.0 / batches.size();

  for (const auto& batch : batches) {
    if (batch.samples.empty()) throw DomainError("selector batch has no samples");
    std::vector<SelectorForward> fwd;
    std::vector<SeriesMatrix> denoised;
    // Per sample, per column: filter outputs with their coefficient tangents.
    std::vector<std::vector<std::vector<Dual<2>>>> kal;
    std::vector<std::vector<std::vector<Dual<1>>>> gau, elp;
    for (const auto& s : batch.samples) {
      fwd.push_back(RunSelector(model, s.context));
      const FilterChoice& c = fwd.back().choice;
      SeriesMatrix d = s.series;
      auto& ks = kal.emplace_back();
      auto& gs = gau.emplace_back();
      auto& es = elp.emplace_back();
      for (int col = 0; col < s.series.cols; ++col) {
        const auto x = s.series.Column(col);
        const Dual<2> q = Dual<2>::Variable(c.q, 0);
        const Dual<2> r = Dual<2>::Variable(c.r, 1);
        ks.push_back(KalmanImpl<Dual<2>>(x, q, r, Dual<2>(x[0]), r));
        gs.push_back(GaussianImpl<Dual<1>>(x, Dual<1>::Variable(c.sigma, 0)));
        es.push_back(ElpImpl<Dual<1>>(x, Dual<1>::Variable(c.alpha, 0)));
        for (int row = 0; row < s.series.rows; ++row) {
          d.at(row, col) = c.weights[0] * ks[col][row].v +
                           c.weights[1] * gs[col][row].v +
                           c.weights[2] * es[col][row].v;
        }
      }
      denoised.push_back(std::move(d));
    }
    const LossAndGrad lg = batch.loss(denoised);
    total += scale * lg.loss;
    if (!grad) continue;
    if (lg.grads.size() != batch.samples.size()) {
      throw DomainError("alignment loss returned wrong gradient count");
    }
    for (size_t si = 0; si < batch.samples.size(); ++si) {
      const FilterChoice& c = fwd[si].choice;
      const SeriesMatrix& g = lg.grads[si];
      std::array<double, kNumFilters> d_w{};
      double d_q = 0.0, d_r = 0.0, d_sigma = 0.0, d_alpha = 0.0;
      for (int col = 0; col < g.cols; ++col) {
        for (int row = 0; row < g.rows; ++row) {
          const double gv = g.at(row, col);
          if (gv == 0.0) continue;
          const auto& k = kal[si][col][row];
          const auto& ga = gau[si][col][row];
          const auto& e = elp[si][col][row];
          d_w[0] += gv * k.v;
          d_w[1] += gv * ga.v;
          d_w[2] += gv * e.v;
          d_q += gv * c.weights[0] * k.d[0];
          d_r += gv * c.weights[0] * k.d[1];
          d_sigma += gv * c.weights[1] * ga.d[0];
          d_alpha += gv * c.weights[2] * e.d[0];
        }
      }
      const auto& out = fwd[si].out;
      std::vector<double> d_out(SelectorModel::kOutputs, 0.0);
      double dot = 0.0;
      for (int k = 0; k < kNumFilters; ++k) dot += c.weights[k] * d_w[k];
      for (int k = 0; k < kNumFilters; ++k) d_out[k] = c.weights[k] * (d_w[k] - dot);
      using R = ParamRanges;
      d_out[3] = d_q * SquashSlope(out[3], R::kQMin, R::kQMax);
      d_out[4] = d_r * SquashSlope(out[4], R::kRMin, R::kRMax);
      d_out[5] = d_sigma * SquashSlope(out[5], R::kSigmaMin, R::kSigmaMax);
      d_out[6] = d_alpha * SquashSlope(out[6], R::kAlphaMin, R::kAlphaMax);
      for (double& v : d_out) v *= scale;
      model.net().Backward(fwd[si].tape, d_out, *grad);
    }
  }
  if (l2 > 0.0) {
    for (size_t i = 0; i < params.size(); ++i) {
      total += l2 * params[i] * params[i];
      if (grad) (*grad)[i] += 2.0 * l2 * params[i];
    }
  }
  return total;
}

SelectorModel TrainSelector(SelectorModel model,
                            std::span<const SelectorBatch> batches,
                            const SelectorTrainOptions& options,
                            std::vector<double>* loss_history) {
  if (batches.empty()) throw DomainError("selector training batch is empty");
  std::vector<double> grad;
  for (int step = 0; step < options.steps; ++step) {
    const double loss = SelectorObjective(model, batches, options.l2, &grad);
    if (!std::isfinite(loss)) throw DomainError("selector loss is not finite");
    if (loss_history) loss_history->push_back(loss);
    auto p = model.net().params();
    for (size_t i = 0; i < p.size(); ++i) p[i] -= options.step_size * grad[i];
  }
  return model;
}

}  // namespace fpswitch::filters
