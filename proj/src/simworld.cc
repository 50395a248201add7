#include "fpswitch/simworld.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "fpswitch/error.h"
#include "fpswitch/hash.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/rng.h"

namespace fpswitch::sim {
namespace {

constexpr double kTick = 0.1;

std::string MakeBssid(Rng& rng) {
  std::string s = "02";
  for (int i = 0; i < 5; ++i) s += fmt::format(":{:02x}", rng.UniformInt(0, 255));
  return s;
}

void ApplyDoubles(const KvConfig& cfg, const std::string& prefix,
                  std::initializer_list<std::pair<const char*, double*>> fields) {
  for (const auto& [name, ptr] : fields) {
    *ptr = cfg.GetDouble(prefix + name, *ptr);
  }
}

double Dist(double x0, double y0, double x1, double y1) {
  return std::hypot(x1 - x0, y1 - y0);
}

}  // namespace

std::string_view SiteName(Site s) {
  switch (s) {
    case Site::kA: return "A";
    case Site::kB: return "B";
    case Site::kC: return "C";
  }
  return "?";
}

std::string_view SiteLongName(Site s) {
  switch (s) {
    case Site::kA: return "A_indoor";
    case Site::kB: return "B_door_egress";
    case Site::kC: return "C_apartment_mixed";
  }
  return "?";
}

Site ParseSite(std::string_view text, std::string_view field) {
  for (Site s : kAllSites) {
    if (text == SiteName(s) || text == SiteLongName(s)) return s;
  }
  throw ConfigError(std::string(field),
                    fmt::format("unknown site '{}' (expected A, B or C)", text));
}

std::string_view ZoneName(Zone z) {
  switch (z) {
    case Zone::kIndoor: return "indoor";
    case Zone::kRoom: return "room";
    case Zone::kInner: return "inner";
    case Zone::kOutdoor: return "outdoor";
  }
  return "?";
}

int WallCount(Zone z) {
  switch (z) {
    case Zone::kIndoor: return 0;
    case Zone::kRoom: return 1;
    case Zone::kInner: return 2;
    case Zone::kOutdoor: return 2;
  }
  return 0;
}

void RadioConfig::ApplyOverrides(const KvConfig& cfg) {
  ApplyDoubles(cfg, "radio.",
               {{"exponent_indoor", &exponent_indoor},
                {"exponent_outdoor", &exponent_outdoor},
                {"wall_db", &wall_db},
                {"shadow_sigma", &shadow_sigma},
                {"shadow_corr", &shadow_corr},
                {"rssi_min", &rssi_min},
                {"rssi_max", &rssi_max},
                {"onset_rssi", &onset_rssi},
                {"cell_rsrp_indoor", &cell_rsrp_indoor},
                {"cell_rsrp_outdoor", &cell_rsrp_outdoor},
                {"cell_sigma", &cell_sigma},
                {"walker_speed", &walker_speed},
                {"turn_pause", &turn_pause},
                {"step_cadence", &step_cadence}});
  Validate();
}

void RadioConfig::Validate() const {
  if (!(exponent_indoor > 0.0)) throw ConfigError("radio.exponent_indoor", "must be > 0");
  if (!(exponent_outdoor > 0.0)) throw ConfigError("radio.exponent_outdoor", "must be > 0");
  if (wall_db < 0.0) throw ConfigError("radio.wall_db", "must be >= 0");
  if (shadow_sigma < 0.0) throw ConfigError("radio.shadow_sigma", "must be >= 0");
  if (shadow_corr < 0.0 || shadow_corr >= 1.0) {
    throw ConfigError("radio.shadow_corr", "must be in [0, 1)");
  }
  if (!(rssi_min < rssi_max)) throw ConfigError("radio.rssi_min", "must be below rssi_max");
  if (!(walker_speed > 0.0)) throw ConfigError("radio.walker_speed", "must be > 0");
  if (turn_pause < 0.0) throw ConfigError("radio.turn_pause", "must be >= 0");
  if (!(step_cadence > 0.0)) throw ConfigError("radio.step_cadence", "must be > 0");
}

// ---- path ----------------------------------------------------------------

Walker::Walker(const std::vector<Waypoint>& waypoints, double speed)
    : wps_(waypoints), speed_(speed) {
  if (wps_.empty()) throw DomainError("scenario has no waypoints");
  arrivals_.resize(wps_.size());
  departures_.resize(wps_.size());
  arrivals_[0] = 0.0;
  departures_[0] = wps_[0].pause;
  for (size_t k = 1; k < wps_.size(); ++k) {
    const double d = Dist(wps_[k - 1].x, wps_[k - 1].y, wps_[k].x, wps_[k].y);
    arrivals_[k] = departures_[k - 1] + d / speed_;
    departures_[k] = arrivals_[k] + wps_[k].pause;
  }
}

PathState Walker::At(double t) const {
  // Heading of the segment leaving k (or arriving at the last point).
  auto heading_of = [&](size_t k) {
    if (wps_.size() < 2) return 0.0;
    const size_t a = k + 1 < wps_.size() ? k : k - 1;
    return std::atan2(wps_[a + 1].y - wps_[a].y, wps_[a + 1].x - wps_[a].x);
  };
  auto standing = [&](size_t k) {
    return PathState{wps_[k].x, wps_[k].y, wps_[k].zone, false, heading_of(k)};
  };
  if (t <= departures_[0]) return standing(0);
  for (size_t k = 0; k + 1 < wps_.size(); ++k) {
    if (t > departures_[k] && t < arrivals_[k + 1]) {
      const double f = (t - departures_[k]) / (arrivals_[k + 1] - departures_[k]);
      return PathState{wps_[k].x + f * (wps_[k + 1].x - wps_[k].x),
                       wps_[k].y + f * (wps_[k + 1].y - wps_[k].y),
                       wps_[k + 1].zone, true, heading_of(k)};
    }
    if (t >= arrivals_[k + 1] && t <= departures_[k + 1]) return standing(k + 1);
  }
  return standing(wps_.size() - 1);
}

double PathLossRssi(const RadioConfig& radio, const AccessPoint& ap, double x,
                    double y, Zone zone) {
  const double d = std::max(1.0, Dist(ap.x, ap.y, x, y));
  const double n = zone == Zone::kOutdoor ? radio.exponent_outdoor : radio.exponent_indoor;
  return ap.tx_power - 10.0 * n * std::log10(d) - radio.wall_db * WallCount(zone);
}

// ---- scenarios -----------------------------------------------------------

void Scenario::Validate() const {
  if (waypoints.size() < 2) throw DomainError("scenario needs at least two waypoints");
  if (aps.empty()) throw DomainError("scenario needs a serving access point");
  if (!(duration > 0.0)) throw DomainError("scenario duration must be positive");
  if (!(degradation_onset > 0.0 && degradation_onset < duration)) {
    throw DomainError(fmt::format("degradation onset {} outside (0, {})",
                                  degradation_onset, duration));
  }
  for (const auto& w : waypoints) {
    if (!std::isfinite(w.x) || !std::isfinite(w.y) || w.pause < 0.0) {
      throw DomainError("malformed waypoint");
    }
  }
  int exits = 0, entries = 0, outdoor = 0;
  for (size_t k = 1; k < waypoints.size(); ++k) {
    const Zone a = waypoints[k - 1].zone, b = waypoints[k].zone;
    if (a != Zone::kOutdoor && b == Zone::kOutdoor) ++exits;
    if (a == Zone::kOutdoor && b != Zone::kOutdoor) ++entries;
  }
  for (const auto& w : waypoints) outdoor += w.zone == Zone::kOutdoor;
  switch (site) {
    case Site::kA:
      if (outdoor > 0) throw DomainError("site A paths stay indoors");
      break;
    case Site::kB:
      if (exits != 1 || entries != 0) throw DomainError("site B paths exit through one door");
      break;
    case Site::kC:
      if (exits != 1 || entries != 0 || waypoints.front().zone == Zone::kOutdoor) {
        throw DomainError("site C paths go indoor -> outdoor exactly once");
      }
      break;
  }
}

double ComputeOnset(const Scenario& scenario, const RadioConfig& radio) {
  const Walker walker(scenario.waypoints, radio.walker_speed);
  const auto& ap = scenario.aps.front();
  auto rssi = [&](double t) {
    const auto s = walker.At(t);
    return PathLossRssi(radio, ap, s.x, s.y, s.zone);
  };
  double prev = rssi(0.0);
  const int n = static_cast<int>(std::floor(scenario.duration / kTick));
  for (int k = 1; k <= n; ++k) {
    const double t = k * kTick;
    const double cur = rssi(t);
    if (prev >= radio.onset_rssi && cur < radio.onset_rssi) return t;
    prev = cur;
  }
  return -1.0;
}

Scenario MakeScenario(Site site, uint64_t seed, const RadioConfig& radio) {
  radio.Validate();
  Rng rng(DeriveSeed({seed, static_cast<uint64_t>(site), 0x5ce7a410ULL}));
  Scenario sc;
  sc.site = site;
  sc.seed = seed;
  sc.start_hour = rng.Uniform(7.0, 21.0);
  sc.cell_id = fmt::format("460-01-{}-{}", rng.UniformInt(1000, 9999),
                           rng.UniformInt(10000, 99999));
  const double tp = radio.turn_pause;
  using Z = Zone;
  switch (site) {
    case Site::kA: {
      sc.aps = {{MakeBssid(rng), 0.0, 0.0, rng.Uniform(-38.5, -37.5)},
                {MakeBssid(rng), -12.0, 14.0, -42.0}};
      const double jog_x = rng.Uniform(13.0, 16.0);
      const double door_x = rng.Uniform(27.0, 30.0);
      sc.waypoints = {
          {2.0, 1.0, Z::kIndoor, rng.Uniform(0.0, 2.0)},
          {5.0, 1.0, Z::kIndoor, tp},
          {5.0, 4.0, Z::kRoom, tp},
          {jog_x, 4.0, Z::kRoom, tp + rng.Uniform(0.0, 1.5)},
          {jog_x + 1.5, 5.5, Z::kRoom, tp},
          {door_x, 5.5, Z::kRoom, rng.Uniform(0.5, 1.5)},
          {door_x + rng.Uniform(3.0, 5.0), 5.5, Z::kInner, rng.Uniform(1.0, 3.0)},
          {door_x + 16.0, 5.5, Z::kInner, tp},
          {door_x + 16.0, 16.0, Z::kInner, 0.0},
      };
      break;
    }
    case Site::kB: {
      sc.aps = {{MakeBssid(rng), 0.0, 0.0, -38.0},
                {MakeBssid(rng), 20.0, 12.0, -46.0}};
      const double shaft_x = rng.Uniform(19.0, 20.0);
      const double lobby_x = shaft_x + rng.Uniform(4.5, 5.5);
      const double door_x = lobby_x + rng.Uniform(2.5, 4.0);
      sc.waypoints = {
          {3.0, 0.0, Z::kIndoor, rng.Uniform(0.0, 1.5)},
          {shaft_x, 0.0, Z::kIndoor, 0.0},
          {lobby_x, 0.0, Z::kRoom, 0.0},
          {door_x, 0.0, Z::kIndoor, rng.Uniform(1.0, 2.5)},
          {door_x + 6.0, 2.0, Z::kOutdoor, tp},
          {door_x + 30.0, 8.0, Z::kOutdoor, 0.0},
      };
      break;
    }
    case Site::kC: {
      sc.aps = {{MakeBssid(rng), 0.0, 0.0, rng.Uniform(-38.5, -37.5)},
                {MakeBssid(rng), -8.0, 9.0, -44.0}};
      const double door_x = rng.Uniform(9.5, 11.0);
      sc.waypoints = {
          {1.5, 1.5, Z::kIndoor, rng.Uniform(0.0, 2.0)},
          {6.0, 1.5, Z::kIndoor, tp},
          {6.0, 5.0, Z::kIndoor, rng.Uniform(1.0, 3.0)},
          {door_x, 5.0, Z::kIndoor, rng.Uniform(0.5, 1.5)},
          {door_x + 2.5, 5.5, Z::kOutdoor, rng.Uniform(3.0, 6.0)},
          {door_x + 2.5, 21.5, Z::kOutdoor, tp},
          {door_x + 25.0, 24.0, Z::kOutdoor, 0.0},
      };
      break;
    }
  }
  const Walker walker(sc.waypoints, radio.walker_speed);
  sc.duration = std::floor(walker.end_time());
  sc.degradation_onset = ComputeOnset(sc, radio);
  sc.Validate();
  return sc;
}

// ---- generation ----------------------------------------------------------

double RawTrace::ServingRssi(size_t k) const {
  if (k >= wifi.size()) return -100.0;
  for (const auto& r : wifi[k].readings) {
    if (r.bssid == serving_bssid) return r.rssi;
  }
  return -100.0;
}

std::vector<std::string> RawTrace::Identifiers() const {
  std::vector<std::string> ids;
  for (const auto& s : wifi)
    for (const auto& r : s.readings) ids.push_back(r.bssid);
  for (const auto& c : cell) ids.push_back(c.cell_id);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  return ids;
}

uint64_t RawTrace::Checksum() const {
  std::string s = fmt::format("{} {:.17g} {:.17g} {}\n", SiteName(site), duration,
                              start_hour, serving_bssid);
  for (const auto& p : pdr) s += fmt::format("p {:.17g} {} {:.17g}\n", p.t, p.step, p.heading);
  for (const auto& w : wifi) {
    s += fmt::format("w {:.17g}", w.t);
    for (const auto& r : w.readings) s += fmt::format(" {} {:.17g}", r.bssid, r.rssi);
    s += '\n';
  }
  for (const auto& c : cell) {
    s += fmt::format("c {:.17g} {} {:.17g} {:.17g}\n", c.t, c.cell_id, c.rsrp, c.rsrq);
  }
  for (const auto& g : gnss) {
    s += fmt::format("g {:.17g} {:.17g} {} {}\n", g.t, g.snr, g.satellites, g.fix);
  }
  s += fmt::format("onset {:.17g}\n", truth.degradation_onset);
  return HashId(s, 0);
}

RawTrace Generate(const Scenario& scenario, const RadioConfig& radio) {
  scenario.Validate();
  radio.Validate();
  const Walker walker(scenario.waypoints, radio.walker_speed);
  RawTrace tr;
  tr.site = scenario.site;
  tr.duration = scenario.duration;
  tr.start_hour = scenario.start_hour;
  tr.serving_bssid = scenario.aps.front().bssid;

  const uint64_t base = DeriveSeed({scenario.seed, static_cast<uint64_t>(scenario.site)});
  Rng pdr_rng(DeriveSeed({base, 1}));
  Rng shadow_rng(DeriveSeed({base, 2}));
  Rng cell_rng(DeriveSeed({base, 3}));
  Rng gnss_rng(DeriveSeed({base, 4}));

  const int seconds = static_cast<int>(scenario.duration);
  // PDR ticks at 10 Hz.
  double phase = 0.0;
  for (int k = 0; k < seconds * 10; ++k) {
    const double t = k * kTick;
    const auto s = walker.At(t);
    bool step = false;
    if (s.moving) {
      phase += radio.step_cadence * kTick;
      if (phase >= 1.0) {
        phase -= 1.0;
        step = true;
      }
    }
    tr.pdr.push_back({t, step, s.heading + pdr_rng.Normal(0.0, 0.03)});
  }

  // First outdoor time, for the GNSS ramp.
  double outdoor_since = -1.0;
  std::vector<double> shadow(scenario.aps.size(), 0.0);
  const double rho = radio.shadow_corr;
  const double innov = std::sqrt(1.0 - rho * rho) * radio.shadow_sigma;
  double cell_noise = 0.0;
  for (int k = 0; k < seconds; ++k) {
    const double t = k;
    const auto s = walker.At(t);
    tr.zones.push_back(s.zone);
    fpcore::RawWifiScan scan;
    scan.t = t;
    for (size_t a = 0; a < scenario.aps.size(); ++a) {
      shadow[a] = k == 0 ? shadow_rng.Normal(0.0, radio.shadow_sigma)
                         : rho * shadow[a] + innov * shadow_rng.Normal();
      const double clean = PathLossRssi(radio, scenario.aps[a], s.x, s.y, s.zone);
      if (a == 0) tr.serving_noiseless.push_back(clean);
      const double obs = std::clamp(clean + shadow[a], radio.rssi_min, radio.rssi_max);
      if (a == 0 || obs > -95.0) scan.readings.push_back({scenario.aps[a].bssid, obs});
    }
    tr.wifi.push_back(std::move(scan));

    cell_noise = k == 0 ? cell_rng.Normal(0.0, radio.cell_sigma)
                        : 0.8 * cell_noise + 0.6 * radio.cell_sigma * cell_rng.Normal();
    const double rsrp = (s.zone == Zone::kOutdoor ? radio.cell_rsrp_outdoor
                                                  : radio.cell_rsrp_indoor) + cell_noise;
    const double rsrq = std::clamp(-10.0 + 0.1 * (rsrp + 90.0) + cell_rng.Normal(0.0, 0.5),
                                   -20.0, -3.0);
    tr.cell.push_back({t, scenario.cell_id, rsrp, rsrq});

    fpcore::RawGnssSample g;
    g.t = t;
    if (s.zone == Zone::kOutdoor) {
      if (outdoor_since < 0.0) outdoor_since = t;
      const double ramp = std::min(1.0, (t - outdoor_since) / 5.0);
      g.snr = std::max(0.0, 5.0 + 30.0 * ramp + gnss_rng.Normal(0.0, 2.0));
      g.satellites = std::max(0, static_cast<int>(std::lround(1.0 + 9.0 * ramp +
                                                              gnss_rng.Normal(0.0, 0.7))));
      g.fix = t - outdoor_since >= 3.0;
    } else {
      outdoor_since = -1.0;
      g.snr = gnss_rng.Uniform(0.0, 4.0);
      g.satellites = gnss_rng.UniformInt(0, 1);
      g.fix = false;
    }
    tr.gnss.push_back(g);
  }

  tr.truth.degradation_onset = scenario.degradation_onset;
  const auto& wps = scenario.waypoints;
  for (size_t k = 0; k + 1 < wps.size(); ++k) {
    if (wps[k + 1].zone != wps[k].zone) {
      tr.truth.zone_transitions.emplace_back(walker.departure(k), wps[k + 1].zone);
      if (wps[k + 1].zone == Zone::kOutdoor && tr.truth.door_time < 0.0) {
        tr.truth.door_time = walker.departure(k);
      }
    }
  }
  return tr;
}

RawTrace ShiftTrace(const RawTrace& trace, double delta) {
  RawTrace out = trace;
  out.duration += delta;
  for (auto& p : out.pdr) p.t += delta;
  for (auto& w : out.wifi) w.t += delta;
  for (auto& c : out.cell) c.t += delta;
  for (auto& g : out.gnss) g.t += delta;
  out.truth.degradation_onset += delta;
  if (out.truth.door_time >= 0.0) out.truth.door_time += delta;
  for (auto& z : out.truth.zone_transitions) z.first += delta;
  return out;
}

// ---- windowing -----------------------------------------------------------

fpcore::Fingerprint WindowAt(const RawTrace& trace, double end,
                             const fpcore::NormalizationConfig& norm,
                             const ScanSelection& scans) {
  const int last = static_cast<int>(std::lround(end)) - 1;  // 1 Hz sample index
  if (last < 0 || last >= static_cast<int>(trace.wifi.size())) {
    throw DomainError(fmt::format("window ending at {} outside the trace", end));
  }
  fpcore::RawWindow raw;
  raw.start = end - 1.0;
  raw.duration = 1.0;
  raw.hour_of_day = trace.start_hour + raw.start / 3600.0;
  fpcore::Presence pres;

  for (int k = last * 10; k < (last + 1) * 10 && k < static_cast<int>(trace.pdr.size()); ++k) {
    raw.pdr.push_back(trace.pdr[k]);
  }
  const int lookback = static_cast<int>(kWifiLookback);
  int newest = -1;
  for (int k = std::max(0, last - lookback + 1); k <= last; ++k) {
    if (!scans.Taken(k)) continue;
    raw.wifi.push_back(trace.wifi[k]);
    newest = k;
  }
  for (int k = last - lookback; k >= 0; --k) {
    if (!scans.Taken(k)) continue;
    const auto& r = trace.wifi[k].readings;
    const auto it = std::max_element(r.begin(), r.end(), [](const auto& a, const auto& b) {
      return a.rssi != b.rssi ? a.rssi < b.rssi : a.bssid > b.bssid;
    });
    if (it != r.end()) raw.previous_strongest_ap = it->bssid;
    break;
  }
  raw.cell.push_back(trace.cell[last]);
  if (last > 0) raw.previous_cell = trace.cell[last - 1].cell_id;
  raw.gnss.push_back(trace.gnss[last]);

  using fpcore::Index;
  using fpcore::Modality;
  pres.present[Index(Modality::kPdr)] = !raw.pdr.empty();
  pres.quality[Index(Modality::kPdr)] = 1.0;
  pres.present[Index(Modality::kWifi)] = newest >= 0;
  pres.quality[Index(Modality::kWifi)] = newest >= 0 ? 1.0 / (1.0 + (last - newest)) : 0.0;
  pres.present[Index(Modality::kCell)] = true;
  pres.quality[Index(Modality::kCell)] = 1.0;
  pres.present[Index(Modality::kGnss)] = true;
  pres.quality[Index(Modality::kGnss)] = std::min(1.0, trace.gnss[last].satellites / 8.0);
  pres.present[Index(Modality::kTime)] = true;
  pres.quality[Index(Modality::kTime)] = 1.0;
  return fpcore::SummarizeWindow(raw, pres, norm);
}

fpcore::FingerprintSequence WindowsBetween(const RawTrace& trace, double end_first,
                                           double end_last,
                                           const fpcore::NormalizationConfig& norm,
                                           const ScanSelection& scans) {
  fpcore::FingerprintSequence seq;
  for (double e = end_first; e <= end_last + 1e-9; e += 1.0) {
    seq.windows.push_back(WindowAt(trace, e, norm, scans));
  }
  return seq;
}

// ---- baseline and TTS ----------------------------------------------------

void BaselineConfig::ApplyOverrides(const KvConfig& cfg) {
  ApplyDoubles(cfg, "baseline.",
               {{"threshold", &threshold},
                {"hysteresis", &hysteresis},
                {"dwell", &dwell},
                {"association_delay", &association_delay}});
  Validate();
}

void BaselineConfig::Validate() const {
  if (!(threshold > -100.0 && threshold < -30.0)) {
    throw ParameterError(fmt::format("baseline threshold {} outside (-100, -30)", threshold));
  }
  if (hysteresis < 0.0) throw ParameterError("baseline hysteresis must be >= 0");
  if (dwell < 0.0) throw ParameterError("baseline dwell must be >= 0");
  if (association_delay < 0.0) throw ParameterError("association delay must be >= 0");
}

SwitchOutcome BaselineOnSeries(const std::vector<double>& times,
                               const std::vector<double>& rssi, double end_time,
                               const BaselineConfig& cfg) {
  cfg.Validate();
  if (times.size() != rssi.size()) throw DomainError("baseline series length mismatch");
  const double level = cfg.threshold - cfg.hysteresis;
  double run_start = -1.0;
  bool in_run = false;
  for (size_t i = 0; i < times.size(); ++i) {
    if (rssi[i] < level) {
      if (!in_run) {
        in_run = true;
        run_start = times[i];
      }
      if (times[i] - run_start >= cfg.dwell - 1e-9) {
        return {times[i] + cfg.association_delay, false};
      }
    } else {
      in_run = false;
    }
  }
  return {end_time, true};
}

SwitchOutcome BaselinePolicy(const RawTrace& trace, const BaselineConfig& cfg) {
  std::vector<double> t, r;
  for (size_t k = 0; k < trace.wifi.size(); ++k) {
    t.push_back(trace.wifi[k].t);
    r.push_back(trace.ServingRssi(k));
  }
  return BaselineOnSeries(t, r, trace.duration, cfg);
}

double Tts(double completion, double onset) {
  if (completion < 0.0 || onset < 0.0) {
    throw ParameterError("TTS inputs must be nonnegative");
  }
  return completion - onset;
}

double ReportedTts(double tts, double floor) { return std::max(tts, floor); }

// ---- feedback ------------------------------------------------------------

void FeedbackConfig::ApplyOverrides(const KvConfig& cfg) {
  ApplyDoubles(cfg, "feedback.",
               {{"early_window", &early_window},
                {"late_window", &late_window},
                {"taper", &taper},
                {"revert_rssi", &revert_rssi},
                {"revert_window", &revert_window},
                {"cell_unusable_rsrp", &cell_unusable_rsrp},
                {"cell_unusable_duration", &cell_unusable_duration}});
  if (!(taper > 0.0)) throw ConfigError("feedback.taper", "must be > 0");
}

std::optional<double> RollbackTime(const RawTrace& trace, double completion,
                                   const FeedbackConfig& cfg) {
  for (size_t k = 0; k < trace.wifi.size() && k < trace.serving_noiseless.size(); ++k) {
    const double t = trace.wifi[k].t;
    if (t < completion - 1e-9) continue;
    if (t > completion + cfg.revert_window + 1e-9) break;
    if (trace.serving_noiseless[k] >= cfg.revert_rssi) return t;
  }
  double run_start = -1.0;
  for (const auto& c : trace.cell) {
    if (c.t < completion - 1e-9) continue;
    if (c.rsrp < cfg.cell_unusable_rsrp) {
      if (run_start < 0.0) run_start = c.t;
      if (c.t - run_start >= cfg.cell_unusable_duration - 1e-9) return c.t;
    } else {
      run_start = -1.0;
    }
  }
  return std::nullopt;
}

bool DetectRollback(const RawTrace& trace, double completion, const FeedbackConfig& cfg) {
  return RollbackTime(trace, completion, cfg).has_value();
}

double FeedbackOracle(const PolicyDecision& decision, const GroundTruth& truth,
                      const FeedbackConfig& cfg) {
  if (!decision.switched || decision.rollback) return -1.0;
  const double lo = truth.degradation_onset - cfg.early_window;
  const double hi = truth.degradation_onset + cfg.late_window;
  const double c = decision.completion;
  if (c >= lo && c <= hi) return 1.0;
  const double x = c < lo ? lo - c : c - hi;
  return std::max(-1.0, 1.0 - 2.0 * x / cfg.taper);
}

// ---- export --------------------------------------------------------------

void WriteTraceCsv(std::ostream& out, const RawTrace& trace,
                   const fpcore::NormalizationConfig& norm) {
  const auto seq = WindowsBetween(trace, 1.0, std::floor(trace.duration), norm);
  fpcore::WriteSequenceCsv(out, seq);
}

void WriteGroundTruthCsv(std::ostream& out, const GroundTruth& truth) {
  out << "degradation_onset,door_time,zone_transitions\n";
  std::string zones;
  for (const auto& [t, z] : truth.zone_transitions) {
    if (!zones.empty()) zones += ';';
    zones += fmt::format("{:.17g}:{}", t, ZoneName(z));
  }
  out << fmt::format("{:.17g},{:.17g},{}\n", truth.degradation_onset, truth.door_time, zones);
}

Scenario LoadScenario(const KvConfig& cfg, const RadioConfig& radio) {
  if (!cfg.Has("site")) throw ConfigError("site", "missing");
  const Site site = ParseSite(cfg.GetString("site", ""), "site");
  Scenario sc = MakeScenario(site, cfg.GetU64("seed", 1), radio);
  if (cfg.Has("aps")) {
    const auto entries = cfg.GetList("aps", {});
    if (entries.empty()) throw ConfigError("aps", "empty access point list");
    Rng rng(DeriveSeed({sc.seed, 0xa9}));
    std::vector<AccessPoint> aps;
    for (size_t i = 0; i < entries.size(); ++i) {
      double x, y, tx;
      char c1, c2;
      std::istringstream in(entries[i]);
      if (!(in >> x >> c1 >> y >> c2 >> tx) || c1 != ':' || c2 != ':') {
        throw ConfigError("aps", fmt::format("entry '{}' is not x:y:tx_power", entries[i]));
      }
      aps.push_back({i < sc.aps.size() ? sc.aps[i].bssid : MakeBssid(rng), x, y, tx});
    }
    sc.aps = std::move(aps);
  }
  if (cfg.Has("duration")) {
    sc.duration = cfg.GetDouble("duration", sc.duration);
    if (!(sc.duration > 0.0)) throw ConfigError("duration", "must be > 0");
  }
  sc.degradation_onset = ComputeOnset(sc, radio);
  try {
    sc.Validate();
  } catch (const DomainError& e) {
    throw ConfigError("site", e.what());
  }
  return sc;
}

}  // namespace fpswitch::sim
