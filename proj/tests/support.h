#ifndef FPSWITCH_TESTS_SUPPORT_H_
#define FPSWITCH_TESTS_SUPPORT_H_

// Independent oracles and fixtures shared by the unit tests and the
// acceptance binary.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fpswitch/align.h"
#include "fpswitch/fpcore.h"
#include "fpswitch/policy.h"
#include "fpswitch/rng.h"

namespace fpswitch::testing {

// Every modality present, all features zero.
fpcore::Fingerprint FullWindow(double t);

// Only PDR present; feature 0 carries `value`.
fpcore::FingerprintSequence Scalar1d(std::span<const double> values);

// All modalities present with features drawn from {-2..2} (integer grid) or
// U(-1, 1).
fpcore::FingerprintSequence RandomSequence(Rng& rng, int length, bool integer_grid,
                                           double t0 = 0.0);

// Metric with identity-like embeddings and every weight on one modality.
align::MetricModel SingleModalityModel(fpcore::Modality m);

// Cell cost computed from the model's embeddings and weights directly.
double OracleCellCost(const align::MetricModel& model, const fpcore::Fingerprint& q,
                      const fpcore::Fingerprint& f);

// Exhaustive minimum over monotone (1,0)/(0,1)/(1,1) paths whose cells all
// satisfy |i - j len_q / len_f| <= band. +inf when no such path exists.
double BruteForceDtw(const align::MetricModel& model, const fpcore::FingerprintSequence& q,
                     const fpcore::FingerprintSequence& p, int band);

// |a - n| / max(|a|, |n|), 0 when both are below `floor`.
double RelativeError(double analytic, double numeric, double floor = 1e-9);

double CentralDifference(const std::function<double(double)>& f, double x, double h);

// Two states, two actions, episodes of `length` steps with uniformly random
// states; reward 1 when the action matches kToyOptimal[state], else 0.
inline constexpr int kToyOptimal[2] = {1, 0};
std::vector<double> ToyFeatures(int state);
policy::PpoEpisode ToyEpisode(const policy::PolicyModel& model, Rng& rng, int length);
// Runs `updates` PPO updates of `episodes` episodes each; true when the
// greedy policy is optimal in both states afterwards.
bool ToyPpoSolves(uint64_t seed, int updates, int episodes = 8);

// Queries whose positives share only WiFi features and whose negatives
// differ only in WiFi features; every other modality is fresh noise.
std::vector<align::TrainingExample> WifiDiscriminativeTask(uint64_t seed, int examples,
                                                           int negatives);

// Random labelled sequence with raw identifiers and an absolute start time.
fpcore::FingerprintSequence RandomPrivateSequence(Rng& rng);

}  // namespace fpswitch::testing

#endif  // FPSWITCH_TESTS_SUPPORT_H_
