#ifndef FPSWITCH_SIMWORLD_H_
#define FPSWITCH_SIMWORLD_H_

// Deterministic Site A/B/C trajectory generator, the threshold+hysteresis
// baseline, TTS bookkeeping and the simulated human-feedback oracle.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fpswitch/fpcore.h"

namespace fpswitch {
class KvConfig;
}

namespace fpswitch::sim {

// A: office, fully indoor: corridor behind one wall, restroom behind two.
// B: corridor with a shadowed stretch (elevator shaft), then a door exit.
// C: apartment, indoor -> outdoor exactly once.
enum class Site : int { kA = 0, kB, kC };
inline constexpr std::array<Site, 3> kAllSites = {Site::kA, Site::kB, Site::kC};

std::string_view SiteName(Site s);  // "A", "B", "C"
std::string_view SiteLongName(Site s);  // "A_indoor", ...
// Accepts both forms. Throws ConfigError naming `field`.
Site ParseSite(std::string_view text, std::string_view field = "site");

// Wall counts to the serving AP: indoor 0, room 1, inner 2, outdoor 2.
enum class Zone : int { kIndoor = 0, kRoom, kInner, kOutdoor };
std::string_view ZoneName(Zone z);
// Walls between a zone and the serving AP.
int WallCount(Zone z);

struct Waypoint {
  double x = 0.0;
  double y = 0.0;
  Zone zone = Zone::kIndoor;
  double pause = 0.0;  // seconds spent standing at this waypoint
};

struct AccessPoint {
  std::string bssid;
  double x = 0.0;
  double y = 0.0;
  double tx_power = -38.0;  // dBm at 1 m
};

struct RadioConfig {
  double exponent_indoor = 2.2;
  double exponent_outdoor = 2.0;
  double wall_db = 8.0;
  double shadow_sigma = 2.0;
  double shadow_corr = 0.7;  // AR(1) coefficient per second
  double rssi_min = -100.0;
  double rssi_max = -30.0;
  double onset_rssi = -75.0;
  double cell_rsrp_indoor = -95.0;
  double cell_rsrp_outdoor = -86.0;
  double cell_sigma = 1.5;
  double walker_speed = 1.2;  // m/s
  double turn_pause = 0.5;    // s
  double step_cadence = 1.8;  // steps/s

  // Keys `radio.<field>`.
  void ApplyOverrides(const KvConfig& cfg);
  void Validate() const;
};

struct Scenario {
  Site site = Site::kA;
  double duration = 0.0;
  std::vector<Waypoint> waypoints;
  std::vector<AccessPoint> aps;  // aps[0] is the serving AP
  double degradation_onset = 0.0;
  double start_hour = 12.0;
  std::string cell_id;
  uint64_t seed = 0;

  // Throws DomainError when malformed.
  void Validate() const;
};

// Position and zone along the waypoint path at time t. Segment k -> k+1
// carries the zone of waypoint k+1; time spent paused at a waypoint carries
// that waypoint's zone.
struct PathState {
  double x = 0.0;
  double y = 0.0;
  Zone zone = Zone::kIndoor;
  bool moving = false;
  double heading = 0.0;
};

// Precomputed arrival/departure times along a scenario's path.
class Walker {
 public:
  Walker(const std::vector<Waypoint>& waypoints, double speed);
  PathState At(double t) const;
  double end_time() const { return departures_.back(); }
  // Departure time from waypoint k.
  double departure(size_t k) const { return departures_[k]; }
  double arrival(size_t k) const { return arrivals_[k]; }

 private:
  std::vector<Waypoint> wps_;
  std::vector<double> arrivals_, departures_;
  double speed_;
};

// Noiseless RSSI of `ap` at a point in `zone`.
double PathLossRssi(const RadioConfig& radio, const AccessPoint& ap, double x,
                    double y, Zone zone);

// Builds the site layout for `seed` (jittered geometry, pauses, hour) and
// computes its ground-truth onset.
Scenario MakeScenario(Site site, uint64_t seed, const RadioConfig& radio = {});

// Onset := first time (0.1 s grid) the noiseless serving RSSI crosses
// `onset_rssi` heading down. Returns a negative value when it never does.
double ComputeOnset(const Scenario& scenario, const RadioConfig& radio);

struct GroundTruth {
  double degradation_onset = 0.0;
  double door_time = -1.0;  // last indoor departure; -1 without an exit
  std::vector<std::pair<double, Zone>> zone_transitions;
};

struct RawTrace {
  Site site = Site::kA;
  double duration = 0.0;
  double start_hour = 12.0;
  std::string serving_bssid;
  std::vector<fpcore::RawPdrTick> pdr;    // 10 Hz
  std::vector<fpcore::RawWifiScan> wifi;  // 1 Hz, at t = 0, 1, ...
  std::vector<fpcore::RawCellSample> cell;
  std::vector<fpcore::RawGnssSample> gnss;
  std::vector<Zone> zones;                // 1 Hz zone label
  std::vector<double> serving_noiseless;  // 1 Hz
  GroundTruth truth;

  // Serving-AP RSSI of the 1 Hz scan at index k (-100 when absent).
  double ServingRssi(size_t k) const;
  // Raw identifiers (BSSIDs, cell ids) present in the trace.
  std::vector<std::string> Identifiers() const;
  // FNV-1a over the canonical CSV rendering.
  uint64_t Checksum() const;
};

// Pure function of (scenario, radio).
RawTrace Generate(const Scenario& scenario, const RadioConfig& radio = {});

// Same trace with every timestamp moved by `delta` seconds.
RawTrace ShiftTrace(const RawTrace& trace, double delta);

// ---- windowing -----------------------------------------------------------

// Which 1 Hz scans the device actually took; empty means all.
struct ScanSelection {
  std::vector<bool> taken;
  bool Taken(size_t k) const { return taken.empty() || (k < taken.size() && taken[k]); }
};

// Scans within this many seconds before a window end feed its WiFi summary.
inline constexpr double kWifiLookback = 3.0;

// Window [end - 1, end) summarized into a fingerprint.
fpcore::Fingerprint WindowAt(const RawTrace& trace, double end,
                             const fpcore::NormalizationConfig& norm,
                             const ScanSelection& scans = {});

// Consecutive windows ending at end_first, end_first + 1, ..., end_last.
fpcore::FingerprintSequence WindowsBetween(const RawTrace& trace,
                                           double end_first, double end_last,
                                           const fpcore::NormalizationConfig& norm,
                                           const ScanSelection& scans = {});

// ---- baseline and TTS ----------------------------------------------------

struct BaselineConfig {
  double threshold = -75.0;
  double hysteresis = 5.0;
  double dwell = 3.0;
  double association_delay = 2.0;

  void ApplyOverrides(const KvConfig& cfg);  // keys `baseline.<field>`
  void Validate() const;
};

struct SwitchOutcome {
  double completion = 0.0;
  bool censored = false;
};

// First time the series stays below threshold - hysteresis for `dwell`
// seconds, plus the association delay. Censored outcomes complete at
// `end_time`. Throws ParameterError for thresholds outside (-100, -30).
SwitchOutcome BaselineOnSeries(const std::vector<double>& times,
                               const std::vector<double>& rssi,
                               double end_time, const BaselineConfig& cfg);
SwitchOutcome BaselinePolicy(const RawTrace& trace, const BaselineConfig& cfg);

inline constexpr double kTtsFloor = -5.0;
// Signed difference; throws ParameterError for negative inputs.
double Tts(double completion, double onset);
double ReportedTts(double tts, double floor = kTtsFloor);

// ---- feedback ------------------------------------------------------------

struct FeedbackConfig {
  double early_window = 2.0;  // s before onset still rewarded +1
  double late_window = 3.0;   // s after onset
  double taper = 15.0;        // HF falls by 2 per `taper` seconds outside
  // The user reverts a switch when the old WiFi link is still usable: its
  // shadowing-free RSSI is >= revert_rssi within revert_window seconds after
  // completion.
  double revert_rssi = -75.0;
  double revert_window = 5.0;
  // A switch onto a cell link below usability for this long rolls back.
  double cell_unusable_rsrp = -110.0;
  double cell_unusable_duration = 2.0;

  void ApplyOverrides(const KvConfig& cfg);  // keys `feedback.<field>`
};

struct PolicyDecision {
  bool switched = false;
  double completion = 0.0;
  bool rollback = false;
};

// Time at which a switch completed at `completion` is rolled back, if it is.
std::optional<double> RollbackTime(const RawTrace& trace, double completion,
                                   const FeedbackConfig& cfg);
bool DetectRollback(const RawTrace& trace, double completion,
                    const FeedbackConfig& cfg);
// +1 inside [onset - early, onset + late]; -1 on rollback or no switch;
// otherwise 1 - 2 x / taper for x seconds outside, clamped at -1.
double FeedbackOracle(const PolicyDecision& decision, const GroundTruth& truth,
                      const FeedbackConfig& cfg);

// ---- export --------------------------------------------------------------

// 1 Hz fingerprints with every scan, fpcore line format.
void WriteTraceCsv(std::ostream& out, const RawTrace& trace,
                   const fpcore::NormalizationConfig& norm);
// `degradation_onset,door_time,zone_transitions` with transitions rendered
// as `t:zone;t:zone`.
void WriteGroundTruthCsv(std::ostream& out, const GroundTruth& truth);

// Key-value scenario file: site, seed, duration (optional trim), radio.*.
Scenario LoadScenario(const KvConfig& cfg, const RadioConfig& radio);

}  // namespace fpswitch::sim

#endif  // FPSWITCH_SIMWORLD_H_
