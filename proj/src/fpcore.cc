#include "fpswitch/fpcore.h"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>

#include "fpswitch/error.h"
#include "fpswitch/hash.h"
#include "fpswitch/kv_config.h"

namespace fpswitch::fpcore {
namespace {

constexpr std::array<std::string_view, kTotalFeatures> kFeatureNames = {
    "pdr_step_rate", "pdr_heading_change", "pdr_stop",
    "wifi_topk_rssi", "wifi_rssi_slope",   "wifi_churn",
    "cell_rsrp",     "cell_rsrq",          "cell_change",
    "gnss_snr",      "gnss_satellites",    "gnss_fix",
    "time_sin",      "time_cos"};

double WrapAngle(double a) {
  while (a > M_PI) a -= 2.0 * M_PI;
  while (a < -M_PI) a += 2.0 * M_PI;
  return a;
}

std::string FormatQ(double v) {
  // Quantized values print without float noise; -0 folds to 0.
  if (v == 0.0) v = 0.0;
  return fmt::format("{:.6g}", v);
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

int FeatureOffset(Modality m) {
  int off = 0;
  for (int i = 0; i < Index(m); ++i) off += kFeatureDims[i];
  return off;
}

std::string_view ModalityName(Modality m) {
  static constexpr std::array<std::string_view, kNumModalities> kNames = {
      "PDR", "WiFi", "Cell", "GNSS", "Time"};
  return kNames[Index(m)];
}

const std::array<std::string_view, kTotalFeatures>& FeatureNames() {
  return kFeatureNames;
}

Fingerprint Fingerprint::Empty(double timestamp) {
  Fingerprint f;
  f.timestamp = timestamp;
  for (Modality m : kAllModalities) {
    f.summaries[Index(m)].kind = m;
    f.summaries[Index(m)].features.assign(kFeatureDims[Index(m)], 0.0);
  }
  return f;
}

std::array<double, kTotalFeatures> Fingerprint::Flat() const {
  std::array<double, kTotalFeatures> out{};
  int k = 0;
  for (const auto& s : summaries) {
    for (double v : s.features) out[k++] = v;
  }
  return out;
}

void Fingerprint::Validate() const {
  if (!std::isfinite(timestamp)) throw DomainError("non-finite timestamp");
  for (Modality m : kAllModalities) {
    const auto& s = summaries[Index(m)];
    if (s.kind != m) throw DomainError("summary kind out of order");
    if (static_cast<int>(s.features.size()) != kFeatureDims[Index(m)]) {
      throw DomainError(fmt::format("{} summary has {} features, want {}",
                                    ModalityName(m), s.features.size(),
                                    kFeatureDims[Index(m)]));
    }
    for (double v : s.features) {
      if (!std::isfinite(v)) throw DomainError("non-finite feature");
    }
    if (!(s.quality >= 0.0 && s.quality <= 1.0)) {
      throw DomainError("summary quality outside [0,1]");
    }
    const auto& q = mask[Index(m)].quality;
    if (!(q >= 0.0 && q <= 1.0)) throw DomainError("mask quality outside [0,1]");
  }
}

std::string_view SwitchKindName(SwitchKind k) {
  switch (k) {
    case SwitchKind::kWifiToCell: return "WiFiToCell";
    case SwitchKind::kCellToWifi: return "CellToWiFi";
    case SwitchKind::kApHandover: return "APHandover";
  }
  return "?";
}

SwitchKind ParseSwitchKind(std::string_view name) {
  if (name == "WiFiToCell") return SwitchKind::kWifiToCell;
  if (name == "CellToWiFi") return SwitchKind::kCellToWifi;
  if (name == "APHandover") return SwitchKind::kApHandover;
  throw DomainError("unknown switch kind '" + std::string(name) + "'");
}

void FingerprintSequence::Validate() const {
  if (windows.size() < 2) {
    throw DomainError("sequence needs at least two windows");
  }
  for (size_t i = 1; i < windows.size(); ++i) {
    if (!(windows[i].timestamp > windows[i - 1].timestamp)) {
      throw DomainError("sequence timestamps not strictly increasing");
    }
  }
}

// ---- normalization -------------------------------------------------------

NormalizationConfig NormalizationConfig::Default() {
  NormalizationConfig c;
  c.ranges = {{
      {0.0, 3.0},        // step rate, steps/s
      {-M_PI, M_PI},     // heading change, rad
      {0.0, 1.0},        // stop flag
      {-100.0, -30.0},   // top-K mean RSSI, dBm
      {-10.0, 10.0},     // RSSI slope, dB/s
      {0.0, 1.0},        // strongest-AP churn
      {-140.0, -60.0},   // RSRP, dBm
      {-20.0, -3.0},     // RSRQ, dB
      {0.0, 1.0},        // cell change flag
      {0.0, 50.0},       // SNR, dB-Hz
      {0.0, 20.0},       // satellites
      {0.0, 1.0},        // fix flag
      {-1.0, 1.0},       // hour sine
      {-1.0, 1.0},       // hour cosine
  }};
  return c;
}

void NormalizationConfig::ApplyOverrides(const KvConfig& cfg) {
  for (int i = 0; i < kTotalFeatures; ++i) {
    const std::string base = "norm." + std::string(kFeatureNames[i]);
    ranges[i].lo = cfg.GetDouble(base + ".lo", ranges[i].lo);
    ranges[i].hi = cfg.GetDouble(base + ".hi", ranges[i].hi);
    if (!(ranges[i].hi > ranges[i].lo)) {
      throw ConfigError(base, "hi must exceed lo");
    }
  }
  wifi_top_k = cfg.GetInt("norm.wifi_top_k", wifi_top_k);
  if (wifi_top_k < 1) throw ConfigError("norm.wifi_top_k", "must be >= 1");
}

double NormalizationConfig::Normalize(int feature, double raw) const {
  const auto& r = ranges[feature];
  return 2.0 * (raw - r.lo) / (r.hi - r.lo) - 1.0;
}

double NormalizationConfig::Denormalize(int feature, double value) const {
  const auto& r = ranges[feature];
  return r.lo + (value + 1.0) * 0.5 * (r.hi - r.lo);
}

double LeastSquaresSlope(std::span<const double> times,
                         std::span<const double> values) {
  const size_t n = std::min(times.size(), values.size());
  if (n < 2) return 0.0;
  const double mt = std::accumulate(times.begin(), times.begin() + n, 0.0) / n;
  const double mv = std::accumulate(values.begin(), values.begin() + n, 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (size_t i = 0; i < n; ++i) {
    sxy += (times[i] - mt) * (values[i] - mv);
    sxx += (times[i] - mt) * (times[i] - mt);
  }
  return sxx > 0.0 ? sxy / sxx : 0.0;
}

std::array<double, kTotalFeatures> SummarizeWindowRaw(
    const RawWindow& raw, const Presence& presence,
    const NormalizationConfig& norm) {
  auto present = [&](Modality m) { return presence.present[Index(m)]; };
  auto require = [&](Modality m, bool empty) {
    if (present(m) && empty) {
      throw DomainError(fmt::format("inconsistent mask: {} marked present but "
                                    "window has no samples",
                                    ModalityName(m)));
    }
  };
  require(Modality::kPdr, raw.pdr.empty());
  require(Modality::kWifi, raw.wifi.empty());
  require(Modality::kCell, raw.cell.empty());
  require(Modality::kGnss, raw.gnss.empty());

  std::array<double, kTotalFeatures> f{};
  if (present(Modality::kPdr)) {
    const int steps = static_cast<int>(
        std::count_if(raw.pdr.begin(), raw.pdr.end(),
                      [](const RawPdrTick& t) { return t.step; }));
    f[0] = steps / raw.duration;
    f[1] = WrapAngle(raw.pdr.back().heading - raw.pdr.front().heading);
    f[2] = steps == 0 ? 1.0 : 0.0;
  }
  if (present(Modality::kWifi)) {
    std::vector<double> times, strongest;
    double topk_sum = 0.0;
    int changes = 0;
    std::string prev = raw.previous_strongest_ap;
    int comparisons = 0;
    for (const auto& scan : raw.wifi) {
      std::vector<RawApReading> r = scan.readings;
      std::sort(r.begin(), r.end(), [](const auto& a, const auto& b) {
        return a.rssi != b.rssi ? a.rssi > b.rssi : a.bssid < b.bssid;
      });
      const int k = std::min<int>(norm.wifi_top_k, static_cast<int>(r.size()));
      double s = 0.0;
      for (int i = 0; i < k; ++i) s += r[i].rssi;
      topk_sum += k > 0 ? s / k : -100.0;
      times.push_back(scan.t);
      strongest.push_back(r.empty() ? -100.0 : r.front().rssi);
      const std::string top = r.empty() ? std::string() : r.front().bssid;
      if (!prev.empty()) {
        ++comparisons;
        if (top != prev) ++changes;
      }
      prev = top;
    }
    f[3] = topk_sum / raw.wifi.size();
    f[4] = LeastSquaresSlope(times, strongest);
    f[5] = comparisons > 0 ? static_cast<double>(changes) / comparisons : 0.0;
  }
  if (present(Modality::kCell)) {
    double rsrp = 0.0, rsrq = 0.0;
    bool changed = false;
    std::string prev = raw.previous_cell;
    for (const auto& c : raw.cell) {
      rsrp += c.rsrp;
      rsrq += c.rsrq;
      if (!prev.empty() && c.cell_id != prev) changed = true;
      prev = c.cell_id;
    }
    f[6] = rsrp / raw.cell.size();
    f[7] = rsrq / raw.cell.size();
    f[8] = changed ? 1.0 : 0.0;
  }
  if (present(Modality::kGnss)) {
    double snr = 0.0, sats = 0.0, fix = 0.0;
    for (const auto& g : raw.gnss) {
      snr += g.snr;
      sats += g.satellites;
      fix += g.fix ? 1.0 : 0.0;
    }
    const double n = static_cast<double>(raw.gnss.size());
    f[9] = snr / n;
    f[10] = sats / n;
    f[11] = fix / n;
  }
  if (present(Modality::kTime)) {
    const double hour = raw.hour_of_day + (raw.duration * 0.5) / 3600.0;
    const double phase = 2.0 * M_PI * hour / 24.0;
    f[12] = std::sin(phase);
    f[13] = std::cos(phase);
  }
  return f;
}

Fingerprint SummarizeWindow(const RawWindow& raw, const Presence& presence,
                            const NormalizationConfig& norm) {
  const auto flat = SummarizeWindowRaw(raw, presence, norm);
  Fingerprint fp = Fingerprint::Empty(raw.start);
  for (Modality m : kAllModalities) {
    const int mi = Index(m);
    const double q = std::clamp(presence.quality[mi], 0.0, 1.0);
    fp.mask[mi] = {presence.present[mi], presence.present[mi] ? q : 0.0};
    fp.summaries[mi].quality = fp.mask[mi].quality;
    if (!presence.present[mi]) continue;
    const int off = FeatureOffset(m);
    for (int k = 0; k < kFeatureDims[mi]; ++k) {
      fp.summaries[mi].features[k] = norm.Normalize(off + k, flat[off + k]);
    }
  }
  return fp;
}

// ---- library -------------------------------------------------------------

uint64_t FingerprintLibrary::CommitSegment(FingerprintSequence buffer,
                                           const SwitchEvent& event) {
  if (static_cast<int>(buffer.windows.size()) <
      std::max(config_.min_windows, 2)) {
    throw DomainError("insufficient context");
  }
  buffer.Validate();
  const double span_begin = buffer.windows.front().timestamp;
  const double span_end = buffer.windows.back().timestamp + config_.window_seconds;
  if (event.time < span_begin || event.time > span_end + 1e-9) {
    throw DomainError("switch event outside the buffered segment");
  }
  const uint64_t id = next_id_++;
  buffer.prototype_id = id;
  buffer.label = event;
  buffer.label->anchor = id;
  seqs_.push_back(std::move(buffer));
  EnforceCapacity();
  return id;
}

std::optional<uint64_t> FingerprintLibrary::CommitOutdoorTransition(
    FingerprintSequence buffer, bool gnss_ok, bool wifi_decay, bool pdr_exit) {
  if (!(gnss_ok && wifi_decay && pdr_exit)) return std::nullopt;
  if (buffer.windows.empty()) throw DomainError("insufficient context");
  SwitchEvent event;
  event.kind = SwitchKind::kWifiToCell;
  event.time = buffer.windows.back().timestamp + config_.window_seconds;
  return CommitSegment(std::move(buffer), event);
}

void FingerprintLibrary::EnforceCapacity() {
  while (static_cast<int>(seqs_.size()) > config_.capacity) {
    auto oldest = std::min_element(
        seqs_.begin(), seqs_.end(), [](const auto& a, const auto& b) {
          return a.created_at != b.created_at ? a.created_at < b.created_at
                                              : a.prototype_id < b.prototype_id;
        });
    seqs_.erase(oldest);
  }
}

void FingerprintLibrary::Maintain(int current_day) {
  std::erase_if(seqs_, [&](const FingerprintSequence& s) {
    return current_day - s.created_at > config_.retention_days;
  });
  EnforceCapacity();
}

const FingerprintSequence* FingerprintLibrary::Find(uint64_t prototype_id) const {
  for (const auto& s : seqs_) {
    if (s.prototype_id == prototype_id) return &s;
  }
  return nullptr;
}

bool FingerprintLibrary::operator==(const FingerprintLibrary& o) const {
  if (seqs_.size() != o.seqs_.size() || next_id_ != o.next_id_) return false;
  for (size_t i = 0; i < seqs_.size(); ++i) {
    const auto& a = seqs_[i];
    const auto& b = o.seqs_[i];
    if (a.prototype_id != b.prototype_id || a.created_at != b.created_at ||
        a.windows.size() != b.windows.size() ||
        a.label.has_value() != b.label.has_value()) {
      return false;
    }
    if (a.label && (a.label->kind != b.label->kind || a.label->time != b.label->time)) {
      return false;
    }
    for (size_t w = 0; w < a.windows.size(); ++w) {
      if (a.windows[w].timestamp != b.windows[w].timestamp ||
          a.windows[w].Flat() != b.windows[w].Flat()) {
        return false;
      }
      for (int m = 0; m < kNumModalities; ++m) {
        if (a.windows[w].mask[m].present != b.windows[w].mask[m].present ||
            a.windows[w].mask[m].quality != b.windows[w].mask[m].quality) {
          return false;
        }
      }
    }
  }
  return true;
}

void FingerprintLibrary::Save(const std::string& dir) const {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  std::ofstream index(fs::path(dir) / "index.csv");
  if (!index) throw IoError("cannot write library index in " + dir);
  index << "prototype_id,created_at,label_kind,label_time\n";
  for (const auto& s : seqs_) {
    index << s.prototype_id << ',' << s.created_at << ','
          << (s.label ? SwitchKindName(s.label->kind) : "none") << ','
          << fmt::format("{:.17g}", s.label ? s.label->time : 0.0) << '\n';
    std::ofstream seq(fs::path(dir) / fmt::format("seq_{}.csv", s.prototype_id));
    if (!seq) throw IoError("cannot write sequence file in " + dir);
    WriteSequenceCsv(seq, s);
  }
}

FingerprintLibrary FingerprintLibrary::Load(const std::string& dir,
                                            LibraryConfig config) {
  namespace fs = std::filesystem;
  std::ifstream index(fs::path(dir) / "index.csv");
  if (!index) throw IoError("cannot read library index in " + dir);
  FingerprintLibrary lib(config);
  std::string line;
  std::getline(index, line);  // header
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto cols = SplitCsv(line);
    if (cols.size() != 4) throw IoError("bad library index line: " + line);
    std::ifstream seq_in(fs::path(dir) / fmt::format("seq_{}.csv", cols[0]));
    if (!seq_in) throw IoError("missing sequence file for " + cols[0]);
    FingerprintSequence seq = ReadSequenceCsv(seq_in);
    seq.prototype_id = std::stoull(cols[0]);
    seq.created_at = std::stoi(cols[1]);
    if (cols[2] != "none") {
      seq.label = SwitchEvent{std::strtod(cols[3].c_str(), nullptr),
                              ParseSwitchKind(cols[2]), seq.prototype_id};
    }
    lib.next_id_ = std::max(lib.next_id_, seq.prototype_id + 1);
    lib.seqs_.push_back(std::move(seq));
  }
  std::sort(lib.seqs_.begin(), lib.seqs_.end(), [](const auto& a, const auto& b) {
    return a.prototype_id < b.prototype_id;
  });
  return lib;
}

// ---- desensitization -----------------------------------------------------

double Quantize(double value, double step) {
  if (!(step > 0.0)) throw ParameterError("quantization step must be > 0");
  const double q = std::round(value / step) * step;
  // Snap to the decimal grid so 6 * 0.1 prints as 0.6.
  return std::round(q * 1e9) / 1e9;
}

DesensitizedSummary Desensitize(const FingerprintSequence& sequence,
                                const DesensitizeOptions& options) {
  DesensitizedSummary out;
  out.prototype_hash =
      HashHex(HashId(std::to_string(sequence.prototype_id), options.salt));
  for (const auto& id : sequence.raw_identifiers) {
    out.id_hashes.push_back(HashHex(HashId(id, options.salt)));
  }
  std::sort(out.id_hashes.begin(), out.id_hashes.end());
  out.id_hashes.erase(std::unique(out.id_hashes.begin(), out.id_hashes.end()),
                      out.id_hashes.end());

  std::array<double, kTotalFeatures> sums{};
  std::array<int, kNumModalities> counts{};
  for (const auto& w : sequence.windows) {
    for (Modality m : kAllModalities) {
      if (!w.present(m)) continue;
      ++counts[Index(m)];
      const int off = FeatureOffset(m);
      const auto& f = w.features(m);
      for (int k = 0; k < kFeatureDims[Index(m)]; ++k) sums[off + k] += f[k];
    }
  }
  for (Modality m : kAllModalities) {
    const int mi = Index(m);
    out.modality_seen[mi] = counts[mi] > 0;
    const int off = FeatureOffset(m);
    for (int k = 0; k < kFeatureDims[mi]; ++k) {
      out.feature_means[off + k] =
          counts[mi] > 0 ? Quantize(sums[off + k] / counts[mi], options.quant_step)
                         : 0.0;
    }
  }

  const double origin =
      sequence.windows.empty() ? 0.0 : sequence.windows.front().timestamp;
  for (const auto& w : sequence.windows) {
    out.window_offsets.push_back(Quantize(w.timestamp - origin, options.quant_step));
  }
  if (sequence.label) {
    out.kind = sequence.label->kind;
    out.label_offset = Quantize(sequence.label->time - origin, options.quant_step);
  }
  return out;
}

std::string DesensitizedSummary::Serialize() const {
  auto join = [](const auto& items, auto fmt_one) {
    std::string s;
    for (size_t i = 0; i < items.size(); ++i) {
      if (i) s += ';';
      s += fmt_one(items[i]);
    }
    return s;
  };
  std::string bits;
  for (bool b : modality_seen) bits += b ? '1' : '0';
  std::string out;
  out += "proto=" + prototype_hash + "\n";
  out += "ids=" + join(id_hashes, [](const std::string& s) { return s; }) + "\n";
  out += "kind=" + std::string(kind ? SwitchKindName(*kind) : "none") + "\n";
  out += "label_offset=" + FormatQ(label_offset) + "\n";
  out += "offsets=" + join(window_offsets, FormatQ) + "\n";
  out += "features=" + join(feature_means, FormatQ) + "\n";
  out += "seen=" + bits + "\n";
  return out;
}

bool LeaksIdentity(const FingerprintSequence& sequence,
                   std::string_view serialized) {
  for (const auto& id : sequence.raw_identifiers) {
    if (!id.empty() && serialized.find(id) != std::string_view::npos) return true;
  }
  return false;
}

// ---- text persistence ----------------------------------------------------

std::string SequenceCsvHeader() {
  std::string h = "t";
  for (auto name : kFeatureNames) h += "," + std::string(name);
  h += ",mask,q_pdr,q_wifi,q_cell,q_gnss,q_time";
  return h;
}

void WriteSequenceCsv(std::ostream& out, const FingerprintSequence& sequence) {
  out << SequenceCsvHeader() << '\n';
  for (const auto& w : sequence.windows) {
    out << fmt::format("{:.17g}", w.timestamp);
    for (double v : w.Flat()) out << ',' << fmt::format("{:.17g}", v);
    out << ',';
    for (const auto& m : w.mask) out << (m.present ? '1' : '0');
    for (const auto& m : w.mask) out << ',' << fmt::format("{:.17g}", m.quality);
    out << '\n';
  }
}

FingerprintSequence ReadSequenceCsv(std::istream& in) {
  FingerprintSequence seq;
  std::string line;
  if (!std::getline(in, line) || line != SequenceCsvHeader()) {
    throw IoError("unexpected sequence header");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cols = SplitCsv(line);
    if (cols.size() != 1 + kTotalFeatures + 1 + kNumModalities ||
        cols[1 + kTotalFeatures].size() != kNumModalities) {
      throw IoError("bad sequence line: " + line);
    }
    Fingerprint fp = Fingerprint::Empty(std::strtod(cols[0].c_str(), nullptr));
    int k = 1;
    for (Modality m : kAllModalities) {
      for (double& v : fp.mutable_features(m)) v = std::strtod(cols[k++].c_str(), nullptr);
    }
    const std::string& bits = cols[k++];
    for (int m = 0; m < kNumModalities; ++m) {
      fp.mask[m].present = bits[m] == '1';
      fp.mask[m].quality = std::strtod(cols[k++].c_str(), nullptr);
      fp.summaries[m].quality = fp.mask[m].quality;
    }
    seq.windows.push_back(std::move(fp));
  }
  return seq;
}

}  // namespace fpswitch::fpcore
