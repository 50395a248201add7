#ifndef FPSWITCH_ALIGN_H_
#define FPSWITCH_ALIGN_H_

// Banded DTW and Soft-DTW over a learned modality-weighted metric, similarity
// calibration S = exp(-beta D), and the margin-loss trainer.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fpswitch/filters.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/tensor_io.h"

namespace fpswitch::align {

inline constexpr int kEmbedDim = 4;

// Parameters {W_m, s_m, log beta} in one flat vector:
//   W_PDR (4x3) | W_WiFi (4x3) | W_Cell (4x3) | W_GNSS (4x3) | W_Time (4x2)
//   | scores (5) | log_beta (1)
// Gradients use the same layout.
class MetricModel {
 public:
  static constexpr size_t kScoresOffset = 4 * fpcore::kTotalFeatures;
  static constexpr size_t kLogBetaOffset = kScoresOffset + fpcore::kNumModalities;
  static constexpr size_t kParamCount = kLogBetaOffset + 1;

  // Truncated identity embeddings, equal scores, beta = 1.
  MetricModel();
  // Truncated identity plus uniform noise in [-noise, noise].
  static MetricModel Initialized(uint64_t seed, double noise = 0.05);

  static size_t EmbedOffset(fpcore::Modality m) {
    return static_cast<size_t>(kEmbedDim) * fpcore::FeatureOffset(m);
  }
  std::span<const double> embedding(fpcore::Modality m) const;
  std::span<double> mutable_embedding(fpcore::Modality m);
  std::span<double> scores() { return std::span(theta_).subspan(kScoresOffset, fpcore::kNumModalities); }
  std::span<const double> scores() const { return std::span(theta_).subspan(kScoresOffset, fpcore::kNumModalities); }
  double log_beta() const { return theta_[kLogBetaOffset]; }
  void set_log_beta(double v) { theta_[kLogBetaOffset] = v; }
  double beta() const;
  // Softmax of the scores.
  std::array<double, fpcore::kNumModalities> weights() const;

  std::vector<double>& params() { return theta_; }
  const std::vector<double>& params() const { return theta_; }

  std::vector<NamedTensor> ToTensors() const;
  static MetricModel FromTensors(const std::vector<NamedTensor>& tensors);

  bool operator==(const MetricModel& o) const { return theta_ == o.theta_; }

 private:
  std::vector<double> theta_;
};

struct AlignmentResult {
  double distance = 0.0;
  std::vector<std::pair<int, int>> path;
  double similarity = 1.0;
};

// `proto_id,distance,similarity,path_len`
std::string FormatAlignmentRecord(uint64_t prototype_id, const AlignmentResult& r);

// sum_m w_m ||W_m (q_m - f_m)||^2 over modalities present in both windows.
// Throws DomainError on schema mismatch.
double CellCost(const MetricModel& model, const fpcore::Fingerprint& q,
                const fpcore::Fingerprint& f);

// Slope-scaled Sakoe-Chiba band: |i - j * len_q / len_f| <= band.
bool InBand(int i, int j, int len_q, int len_f, int band);

// Row-major len_q x len_f cell costs.
struct CostMatrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  double at(int i, int j) const { return values[static_cast<size_t>(i) * cols + j]; }
};

CostMatrix ComputeCosts(const MetricModel& model,
                        const fpcore::FingerprintSequence& query,
                        const fpcore::FingerprintSequence& proto);

// Exact banded DTW on a precomputed cost matrix. Backtracking prefers
// diagonal, then vertical (i-1, j), then horizontal (i, j-1).
// Throws DomainError("band too narrow") when no banded path exists and
// ParameterError when band < 1.
double DtwOnCosts(const CostMatrix& costs, int band,
                  std::vector<std::pair<int, int>>* path);

AlignmentResult Dtw(const MetricModel& model,
                    const fpcore::FingerprintSequence& query,
                    const fpcore::FingerprintSequence& proto, int band);

struct SoftDtwOnCosts {
  double value = 0.0;
  // d value / d cost(i,j), row-major like the cost matrix (zero off-band).
  std::vector<double> cost_grad;
};
SoftDtwOnCosts SoftDtwCore(const CostMatrix& costs, int band, double gamma);

struct SoftDtwResult {
  double value = 0.0;
  std::vector<double> grad;  // w.r.t. MetricModel::params()
};

// Soft-min recursion over the same band. Throws ParameterError for gamma <= 0.
SoftDtwResult SoftDtw(const MetricModel& model,
                      const fpcore::FingerprintSequence& query,
                      const fpcore::FingerprintSequence& proto, int band,
                      double gamma, bool with_grad = true);

// d SoftDtw / d query features (windows x 14), for selector training.
filters::SeriesMatrix SoftDtwQueryGradient(
    const MetricModel& model, const fpcore::FingerprintSequence& query,
    const fpcore::FingerprintSequence& proto, int band, double gamma);

struct PairRef {
  const fpcore::FingerprintSequence* query;
  const fpcore::FingerprintSequence* proto;
};

struct MarginOptions {
  double margin = 1.0;
  double gamma = 0.1;
  int band = 3;
};

// mean_k max(0, m + softdtw(pos) - softdtw(neg_k)); gradient w.r.t. model
// params when `grad` is non-null. Throws DomainError on empty negatives.
double MarginLoss(const MetricModel& model, const PairRef& positive,
                  std::span<const PairRef> negatives,
                  const MarginOptions& options,
                  std::vector<double>* grad = nullptr);

// Hinge mean over precomputed soft-DTW values.
double MarginFromValues(double positive_value,
                        std::span<const double> negative_values, double margin);

// ---- training ------------------------------------------------------------

struct OwnedPair {
  fpcore::FingerprintSequence query;
  fpcore::FingerprintSequence proto;
};

// One weakly supervised example: the live pre-switch window against a
// same-kind prototype, plus negatives (cross-kind prototypes or
// time-shuffled windows).
struct TrainingExample {
  OwnedPair positive;
  std::vector<OwnedPair> negatives;
};

struct MetricTrainOptions {
  int epochs = 30;
  double step_size = 0.05;
  double max_grad_norm = 5.0;
  MarginOptions margin;
  // Inverse-temperature calibration (logistic loss on S for pos/neg pairs).
  double beta_step_size = 0.5;
  int beta_steps = 5;
  // Joint selector training through the soft filter mixture.
  bool train_selector = false;
  double selector_step_size = 0.02;
};

struct MetricTrainResult {
  MetricModel metric;
  filters::SelectorModel selector;
  std::vector<double> loss_history;  // mean margin loss before each epoch + final
};

// Throws DomainError when `examples` is empty. Zero epochs returns the
// model untouched (no beta calibration either).
MetricTrainResult TrainMetric(MetricModel model, filters::SelectorModel selector,
                              std::span<const TrainingExample> examples,
                              const MetricTrainOptions& options,
                              const fpcore::NormalizationConfig& norm);

// Mean margin loss over examples (no filtering).
double MeanMarginLoss(const MetricModel& model,
                      std::span<const TrainingExample> examples,
                      const MarginOptions& options);

// Builds examples from labelled library sequences: each labelled query is
// paired with every same-kind prototype (excluding itself) as positive, and
// `negatives_per_positive` negatives. Up to half come from cross-kind
// prototypes, or failing those from `background` segments (unlabelled
// stretches with no switch) paired with the prototype; the rest are
// within-sequence shuffles.
std::vector<TrainingExample> BuildTrainingExamples(
    std::span<const fpcore::FingerprintSequence> queries,
    const fpcore::FingerprintLibrary& library, int negatives_per_positive,
    uint64_t seed, int max_positives_per_query = 3,
    std::span<const fpcore::FingerprintSequence> background = {});

// Selector batches whose loss is the margin loss of `examples` evaluated on
// the denoised queries.
std::vector<filters::SelectorBatch> BuildSelectorBatches(
    const MetricModel& model, std::span<const TrainingExample> examples,
    const MarginOptions& options, const fpcore::NormalizationConfig& norm);

// ---- matching ------------------------------------------------------------

struct MatchEntry {
  uint64_t prototype_id = 0;
  AlignmentResult result;
};

// Library with prototype costs precomputable per query. Holds references;
// the model, selector and library must outlive it.
class Matcher {
 public:
  Matcher(const MetricModel& model, const filters::SelectorModel& selector,
          const fpcore::FingerprintLibrary& library,
          const fpcore::NormalizationConfig& norm, int band);

  // Denoises the live window with the selector's hard choice, aligns it to
  // every prototype, and returns the top_k by similarity (ties: smaller id).
  // Prototypes the band cannot reach are skipped.
  std::vector<MatchEntry> Match(const fpcore::FingerprintSequence& live,
                                int top_k, double scan_age = 0.0) const;

 private:
  const MetricModel& model_;
  const filters::SelectorModel& selector_;
  const fpcore::FingerprintLibrary& library_;
  const fpcore::NormalizationConfig& norm_;
  int band_;
};

std::vector<MatchEntry> Match(const MetricModel& model,
                              const filters::SelectorModel& selector,
                              const fpcore::FingerprintSequence& live,
                              const fpcore::FingerprintLibrary& library,
                              int band, int top_k,
                              const fpcore::NormalizationConfig& norm,
                              double scan_age = 0.0);

}  // namespace fpswitch::align

#endif  // FPSWITCH_ALIGN_H_
