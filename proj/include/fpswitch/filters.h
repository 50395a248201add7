#ifndef FPSWITCH_FILTERS_H_
#define FPSWITCH_FILTERS_H_

// Adaptive denoising bank (Kalman / Gaussian / exponential low-pass) and the
// context-driven selector network that picks a filter per window.

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fpswitch/fpcore.h"
#include "fpswitch/nn.h"
#include "fpswitch/tensor_io.h"

namespace fpswitch::filters {

enum class FilterKind : int { kKalman = 0, kGaussian, kElp };
inline constexpr int kNumFilters = 3;

// Legal coefficient ranges; the selector squashes its raw outputs into them.
struct ParamRanges {
  static constexpr double kQMin = 0.0, kQMax = 1.0;
  static constexpr double kRMin = 0.01, kRMax = 10.0;
  static constexpr double kSigmaMin = 0.1, kSigmaMax = 3.0;
  static constexpr double kAlphaMin = 0.05, kAlphaMax = 1.0;
};

// Window context c_t.
struct FilterContext {
  double rssi_variance = 0.0;  // dB^2
  double scan_age = 0.0;       // s
  double step_rate = 0.0;      // steps/s
  std::array<bool, fpcore::kNumModalities> presence{};

  void Validate() const;
  // Selector input vector (kSelectorInputs entries).
  std::vector<double> Features() const;
};

struct FilterChoice {
  std::array<double, kNumFilters> weights{1.0 / 3, 1.0 / 3, 1.0 / 3};
  double q = 0.0;      // Kalman process noise
  double r = 1.0;      // Kalman measurement noise
  double sigma = 1.0;  // Gaussian width, samples
  double alpha = 1.0;  // ELP smoothing factor

  // Argmax of weights; exact ties resolve Kalman < Gaussian < ELP.
  FilterKind Selected() const;
  void Validate() const;
};

// Scalar random-walk Kalman filter. Throws ParameterError unless R > 0,
// Q >= 0 and the series is nonempty.
std::vector<double> ApplyKalman(std::span<const double> series, double q,
                                double r, double init_mean, double init_var);
// Normalized Gaussian kernel truncated at +-3 sigma, renormalized at edges.
std::vector<double> ApplyGaussian(std::span<const double> series, double sigma);
// y0 = x0, y_i = alpha x_i + (1 - alpha) y_{i-1}, alpha in (0, 1].
std::vector<double> ApplyElp(std::span<const double> series, double alpha);

// Hard selection (inference path). Kalman starts at the first sample with
// variance R.
std::vector<double> Denoise(const FilterChoice& choice,
                            std::span<const double> series);
// Weighted mixture of all three filter outputs (training path).
std::vector<double> DenoiseSoft(const FilterChoice& choice,
                                std::span<const double> series);

// Row-major windows x features matrix.
struct SeriesMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;

  double at(int r, int c) const { return values[static_cast<size_t>(r) * cols + c]; }
  double& at(int r, int c) { return values[static_cast<size_t>(r) * cols + c]; }
  std::vector<double> Column(int c) const;
  void SetColumn(int c, std::span<const double> v);
};

SeriesMatrix ToMatrix(const fpcore::FingerprintSequence& sequence);
// Copies the matrix back into the sequence's feature slots.
void FromMatrix(const SeriesMatrix& m, fpcore::FingerprintSequence& sequence);

// Filters every feature column of the sequence with the hard choice.
fpcore::FingerprintSequence DenoiseSequence(
    const FilterChoice& choice, const fpcore::FingerprintSequence& sequence);

// Context from a sequence: variance of the WiFi top-K RSSI (in dB^2), mean
// PDR step rate, and per-modality presence (present in any window).
FilterContext ContextFromSequence(const fpcore::FingerprintSequence& sequence,
                                  double scan_age,
                                  const fpcore::NormalizationConfig& norm);

// g_psi: context features -> 16 tanh units -> 3 filter logits + 4 raw params.
class SelectorModel {
 public:
  static constexpr int kInputs = 3 + fpcore::kNumModalities;
  static constexpr int kHidden = 16;
  static constexpr int kOutputs = kNumFilters + 4;

  SelectorModel();  // all parameters zero
  static SelectorModel Initialized(uint64_t seed, double scale = 0.1);

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  std::vector<NamedTensor> ToTensors() const { return net_.ToTensors("selector"); }
  static SelectorModel FromTensors(const std::vector<NamedTensor>& tensors);

  bool operator==(const SelectorModel& o) const { return net_ == o.net_; }

 private:
  Mlp net_;
};

// Softmax over logits, sigmoid-squashed coefficients. Deterministic.
FilterChoice SelectFilter(const SelectorModel& model, const FilterContext& ctx);

// ---- training ------------------------------------------------------------

struct SelectorSample {
  FilterContext context;
  SeriesMatrix series;
};

struct LossAndGrad {
  double loss = 0.0;
  // dL/d(denoised series), one matrix per sample, same shape.
  std::vector<SeriesMatrix> grads;
};

// Alignment loss over the soft-denoised samples of one batch (typically the
// align module's Soft-DTW margin loss against fixed prototypes).
using AlignmentLossFn =
    std::function<LossAndGrad(const std::vector<SeriesMatrix>& denoised)>;

// One (positive pair, negative pairs) set: the query-side samples that get
// filtered and the loss that scores them.
struct SelectorBatch {
  std::vector<SelectorSample> samples;
  AlignmentLossFn loss;
};

struct SelectorTrainOptions {
  int steps = 1;
  double step_size = 0.05;
  double l2 = 0.0;  // weight decay on psi
};

// Mean batch loss (+ l2 term) and, when `grad` is non-null, its gradient
// w.r.t. the selector parameters, flowing through the soft mixture.
double SelectorObjective(const SelectorModel& model,
                         std::span<const SelectorBatch> batches, double l2,
                         std::vector<double>* grad);

// Plain gradient descent. Throws DomainError on an empty batch list.
// `loss_history`, when given, receives the objective before each step.
SelectorModel TrainSelector(SelectorModel model,
                            std::span<const SelectorBatch> batches,
                            const SelectorTrainOptions& options,
                            std::vector<double>* loss_history = nullptr);

}  // namespace fpswitch::filters

#endif  // FPSWITCH_FILTERS_H_
