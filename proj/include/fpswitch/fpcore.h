#ifndef FPSWITCH_FPCORE_H_
#define FPSWITCH_FPCORE_H_

// Multi-modal fingerprints and the on-device personalized library.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fpswitch {
class KvConfig;
}

namespace fpswitch::fpcore {

enum class Modality : int { kPdr = 0, kWifi, kCell, kGnss, kTime };

inline constexpr int kNumModalities = 5;
inline constexpr std::array<int, kNumModalities> kFeatureDims = {3, 3, 3, 3, 2};
inline constexpr int kTotalFeatures = 14;
inline constexpr std::array<Modality, kNumModalities> kAllModalities = {
    Modality::kPdr, Modality::kWifi, Modality::kCell, Modality::kGnss,
    Modality::kTime};

constexpr int Index(Modality m) { return static_cast<int>(m); }
int FeatureOffset(Modality m);
std::string_view ModalityName(Modality m);

// Column names of the flat 14-feature layout, in order.
const std::array<std::string_view, kTotalFeatures>& FeatureNames();

struct ModalitySummary {
  Modality kind = Modality::kPdr;
  std::vector<double> features;  // kFeatureDims[kind] normalized values
  double quality = 0.0;          // [0, 1]
};

struct MaskEntry {
  bool present = false;
  double quality = 0.0;
};

// One time window (the fused f_t plus its presence mask m_t). Features of a
// modality whose mask entry is absent are carried but never read by any cost.
struct Fingerprint {
  double timestamp = 0.0;
  std::array<ModalitySummary, kNumModalities> summaries;
  std::array<MaskEntry, kNumModalities> mask;

  // All modalities absent, zero features.
  static Fingerprint Empty(double timestamp);

  bool present(Modality m) const { return mask[Index(m)].present; }
  const std::vector<double>& features(Modality m) const {
    return summaries[Index(m)].features;
  }
  std::vector<double>& mutable_features(Modality m) {
    return summaries[Index(m)].features;
  }

  // Flat 14-vector in modality order.
  std::array<double, kTotalFeatures> Flat() const;

  // Throws DomainError on shape or range violations.
  void Validate() const;
};

enum class SwitchKind : int { kWifiToCell = 0, kCellToWifi, kApHandover };
std::string_view SwitchKindName(SwitchKind k);
SwitchKind ParseSwitchKind(std::string_view name);

struct SwitchEvent {
  double time = 0.0;
  SwitchKind kind = SwitchKind::kWifiToCell;
  uint64_t anchor = 0;  // prototype id of the labelled sequence
};

struct FingerprintSequence {
  std::vector<Fingerprint> windows;
  std::optional<SwitchEvent> label;
  int created_at = 0;  // day index
  uint64_t prototype_id = 0;
  // Device-local raw identifiers (BSSIDs, cell ids) seen in the segment.
  // Never leave the device; Desensitize() only emits their salted hashes.
  std::vector<std::string> raw_identifiers;

  size_t size() const { return windows.size(); }
  // Timestamps strictly increasing and at least two windows.
  void Validate() const;
};

// ---- window summarization ------------------------------------------------

struct RawPdrTick {
  double t = 0.0;
  bool step = false;
  double heading = 0.0;  // radians
};
struct RawApReading {
  std::string bssid;
  double rssi = -100.0;  // dBm
};
struct RawWifiScan {
  double t = 0.0;
  std::vector<RawApReading> readings;
};
struct RawCellSample {
  double t = 0.0;
  std::string cell_id;
  double rsrp = -140.0;  // dBm
  double rsrq = -20.0;   // dB
};
struct RawGnssSample {
  double t = 0.0;
  double snr = 0.0;  // dB-Hz
  int satellites = 0;
  bool fix = false;
};

// Raw samples of one window, already time-aligned to the PDR backbone.
struct RawWindow {
  double start = 0.0;
  double duration = 1.0;
  double hour_of_day = 12.0;  // at `start`
  std::vector<RawPdrTick> pdr;
  std::vector<RawWifiScan> wifi;
  std::vector<RawCellSample> cell;
  std::vector<RawGnssSample> gnss;
  // Strongest AP / serving cell at the end of the previous window, for the
  // churn and change features. Empty when unknown.
  std::string previous_strongest_ap;
  std::string previous_cell;
};

struct Presence {
  std::array<bool, kNumModalities> present{};
  std::array<double, kNumModalities> quality{};
};

// Per-feature affine map [lo, hi] -> [-1, 1].
struct FeatureRange {
  double lo = -1.0;
  double hi = 1.0;
};

struct NormalizationConfig {
  std::array<FeatureRange, kTotalFeatures> ranges;
  int wifi_top_k = 3;

  static NormalizationConfig Default();
  // Keys `norm.<feature name>.lo|hi` and `norm.wifi_top_k`.
  void ApplyOverrides(const KvConfig& cfg);

  double Normalize(int feature, double raw) const;
  double Denormalize(int feature, double value) const;
};

// Unnormalized summary statistics, flat 14-vector. Features of absent
// modalities are zero.
std::array<double, kTotalFeatures> SummarizeWindowRaw(
    const RawWindow& raw, const Presence& presence,
    const NormalizationConfig& norm);

// Throws DomainError("inconsistent mask") when a modality marked present has
// no samples in the window.
Fingerprint SummarizeWindow(const RawWindow& raw, const Presence& presence,
                            const NormalizationConfig& norm);

// Least-squares slope of `values` against `times`; 0 for fewer than two
// distinct times.
double LeastSquaresSlope(std::span<const double> times,
                         std::span<const double> values);

// ---- library -------------------------------------------------------------

struct LibraryConfig {
  int retention_days = 14;
  int capacity = 256;
  int min_windows = 2;
  double window_seconds = 1.0;
};

// Per-user store of labelled pre-switch sequences. Single writer, many
// readers: const member functions never mutate, so concurrent readers are
// safe while commits and maintenance are serialized by the owner.
class FingerprintLibrary {
 public:
  explicit FingerprintLibrary(LibraryConfig config = {}) : config_(config) {}

  // Stores `buffer` labelled with `event`. Evicts oldest-first (ties: smaller
  // id) when full. Throws DomainError("insufficient context") for buffers
  // shorter than min_windows.
  uint64_t CommitSegment(FingerprintSequence buffer, const SwitchEvent& event);

  // Commits a WiFi->Cell segment ending at the buffer's end, only when all
  // three door-exit conditions hold.
  std::optional<uint64_t> CommitOutdoorTransition(FingerprintSequence buffer,
                                                  bool gnss_ok,
                                                  bool wifi_decay,
                                                  bool pdr_exit);

  // Drops sequences older than retention_days and enforces capacity.
  // Idempotent for a fixed day.
  void Maintain(int current_day);

  const std::vector<FingerprintSequence>& sequences() const { return seqs_; }
  size_t size() const { return seqs_.size(); }
  bool empty() const { return seqs_.empty(); }
  const LibraryConfig& config() const { return config_; }
  const FingerprintSequence* Find(uint64_t prototype_id) const;

  // Snapshot: `index.csv` plus one `seq_<id>.csv` per sequence.
  void Save(const std::string& dir) const;
  static FingerprintLibrary Load(const std::string& dir, LibraryConfig config);

  bool operator==(const FingerprintLibrary& o) const;

 private:
  void EnforceCapacity();

  LibraryConfig config_;
  std::vector<FingerprintSequence> seqs_;  // ascending prototype_id
  uint64_t next_id_ = 1;
};

// ---- desensitization -----------------------------------------------------

struct DesensitizeOptions {
  uint64_t salt = 0;
  double quant_step = 0.1;
};

// Privacy-preserving digest of one sequence: salted hashes instead of
// identifiers, quantized feature aggregates, timing relative to the first
// window only.
struct DesensitizedSummary {
  std::string prototype_hash;
  std::vector<std::string> id_hashes;
  std::array<double, kTotalFeatures> feature_means{};
  std::array<bool, kNumModalities> modality_seen{};
  std::optional<SwitchKind> kind;
  double label_offset = 0.0;
  std::vector<double> window_offsets;

  std::string Serialize() const;
  bool operator==(const DesensitizedSummary&) const = default;
};

// Round to nearest multiple of `step` (halves away from zero).
double Quantize(double value, double step);

DesensitizedSummary Desensitize(const FingerprintSequence& sequence,
                                const DesensitizeOptions& options);

// True when `serialized` contains any raw identifier of `sequence` or any of
// its absolute window timestamps (formatted as Serialize() would).
bool LeaksIdentity(const FingerprintSequence& sequence,
                   std::string_view serialized);

// ---- text persistence ----------------------------------------------------

// One window per line: t, 14 features, mask bits (PDR..Time as '0'/'1'),
// 5 qualities. First line is the column header.
std::string SequenceCsvHeader();
void WriteSequenceCsv(std::ostream& out, const FingerprintSequence& sequence);
FingerprintSequence ReadSequenceCsv(std::istream& in);

}  // namespace fpswitch::fpcore

#endif  // FPSWITCH_FPCORE_H_
