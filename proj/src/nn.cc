#include "fpswitch/nn.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "fpswitch/error.h"

namespace fpswitch {

Mlp::Mlp(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ParameterError("Mlp needs at least two layers");
  size_t n = 0;
  for (size_t k = 0; k + 1 < sizes_.size(); ++k) {
    n += static_cast<size_t>(sizes_[k + 1]) * (sizes_[k] + 1);
  }
  params_.assign(n, 0.0);
}

size_t Mlp::WeightOffset(int layer) const {
  size_t off = 0;
  for (int k = 0; k < layer; ++k) {
    off += static_cast<size_t>(sizes_[k + 1]) * (sizes_[k] + 1);
  }
  return off;
}

void Mlp::Initialize(Rng& rng, double output_scale) {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  for (int k = 0; k < layers; ++k) {
    const int in = sizes_[k], out = sizes_[k + 1];
    const double limit = std::sqrt(6.0 / (in + out)) *
                         (k == layers - 1 ? output_scale : 1.0);
    double* w = params_.data() + WeightOffset(k);
    for (int i = 0; i < out * in; ++i) w[i] = rng.Uniform(-limit, limit);
    std::fill(w + out * in, w + out * in + out, 0.0);
  }
}

std::vector<double> Mlp::Forward(std::span<const double> input) const {
  Tape tape;
  return Forward(input, tape);
}

std::vector<double> Mlp::Forward(std::span<const double> input,
                                 Tape& tape) const {
  if (static_cast<int>(input.size()) != sizes_.front()) {
    throw DomainError(fmt::format("Mlp input size {} != {}", input.size(),
                                  sizes_.front()));
  }
  const int layers = static_cast<int>(sizes_.size()) - 1;
  tape.activations.assign(1, std::vector<double>(input.begin(), input.end()));
  for (int k = 0; k < layers; ++k) {
    const int in = sizes_[k], out = sizes_[k + 1];
    const double* w = params_.data() + WeightOffset(k);
    const double* b = w + static_cast<size_t>(out) * in;
    const auto& x = tape.activations.back();
    std::vector<double> y(out);
    for (int o = 0; o < out; ++o) {
      double s = b[o];
      for (int i = 0; i < in; ++i) s += w[o * in + i] * x[i];
      y[o] = (k == layers - 1) ? s : std::tanh(s);
    }
    tape.activations.push_back(std::move(y));
  }
  return tape.activations.back();
}

std::vector<double> Mlp::Backward(const Tape& tape,
                                  std::span<const double> grad_output,
                                  std::span<double> grad_params) const {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  std::vector<double> delta(grad_output.begin(), grad_output.end());
  for (int k = layers - 1; k >= 0; --k) {
    const int in = sizes_[k], out = sizes_[k + 1];
    const size_t off = WeightOffset(k);
    const double* w = params_.data() + off;
    double* gw = grad_params.data() + off;
    double* gb = gw + static_cast<size_t>(out) * in;
    const auto& x = tape.activations[k];
    if (k != layers - 1) {
      const auto& y = tape.activations[k + 1];
      for (int o = 0; o < out; ++o) delta[o] *= 1.0 - y[o] * y[o];
    }
    std::vector<double> grad_in(in, 0.0);
    for (int o = 0; o < out; ++o) {
      gb[o] += delta[o];
      for (int i = 0; i < in; ++i) {
        gw[o * in + i] += delta[o] * x[i];
        grad_in[i] += delta[o] * w[o * in + i];
      }
    }
    delta = std::move(grad_in);
  }
  return delta;
}

std::vector<NamedTensor> Mlp::ToTensors(const std::string& prefix) const {
  std::vector<NamedTensor> out;
  const int layers = static_cast<int>(sizes_.size()) - 1;
  for (int k = 0; k < layers; ++k) {
    const int in = sizes_[k], o = sizes_[k + 1];
    const double* w = params_.data() + WeightOffset(k);
    out.push_back({fmt::format("{}.w{}", prefix, k), o, in,
                   std::vector<double>(w, w + o * in)});
    out.push_back({fmt::format("{}.b{}", prefix, k), o, 1,
                   std::vector<double>(w + o * in, w + o * in + o)});
  }
  return out;
}

void Mlp::FromTensors(const std::vector<NamedTensor>& tensors,
                      const std::string& prefix) {
  const int layers = static_cast<int>(sizes_.size()) - 1;
  for (int k = 0; k < layers; ++k) {
    const int in = sizes_[k], o = sizes_[k + 1];
    double* w = params_.data() + WeightOffset(k);
    const auto& tw = FindTensor(tensors, fmt::format("{}.w{}", prefix, k), o, in);
    const auto& tb = FindTensor(tensors, fmt::format("{}.b{}", prefix, k), o, 1);
    std::copy(tw.values.begin(), tw.values.end(), w);
    std::copy(tb.values.begin(), tb.values.end(), w + o * in);
  }
}

void Adam::Step(std::span<double> params, std::span<const double> grad) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= step_size_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::vector<double> Softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    z += p[i];
  }
  for (double& x : p) x /= z;
  return p;
}

void ClipNorm(std::span<double> grad, double max_norm) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (double& g : grad) g *= s;
  }
}

double Sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace fpswitch
