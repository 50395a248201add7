#include "fpswitch/report.h"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "fpswitch/error.h"
#include "fpswitch/hash.h"

namespace fpswitch::report {

SessionReport MakeSessionReport(sim::Site site, int session, double baseline_tts,
                                double proposed_tts, uint64_t trace_checksum) {
  SessionReport r;
  r.site = site;
  r.session = session;
  r.baseline_tts = baseline_tts;
  r.proposed_tts = proposed_tts;
  r.improvement = baseline_tts - proposed_tts;
  r.relative = baseline_tts > 0.0 ? r.improvement / baseline_tts : 0.0;
  r.trace_checksum = trace_checksum;
  return r;
}

ReportSummary Summarize(std::span<const SessionReport> rows) {
  if (rows.empty()) throw DomainError("empty report");
  ReportSummary s;
  for (const auto& r : rows) {
    s.mean_baseline += r.baseline_tts;
    s.mean_proposed += r.proposed_tts;
    s.mean_improvement += r.improvement;
    s.mean_relative += r.relative;
  }
  const double n = static_cast<double>(rows.size());
  s.mean_baseline /= n;
  s.mean_proposed /= n;
  s.mean_improvement /= n;
  s.mean_relative /= n;
  s.ratio_of_means = s.mean_baseline > 0.0 ? s.mean_improvement / s.mean_baseline : 0.0;
  return s;
}

double RoundHalfUp(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  const double mag = std::fabs(value) * scale;
  const double rounded = std::floor(mag * (1.0 + 1e-12) + 0.5 + 1e-9) / scale;
  return std::copysign(rounded, value);
}

std::string FormatFixed(double value, int decimals) {
  double r = RoundHalfUp(value, decimals);
  if (r == 0.0) r = 0.0;  // no "-0.00"
  return fmt::format("{:.{}f}", r, decimals);
}

void WriteReportCsv(std::ostream& out, std::span<const SessionReport> rows) {
  out << kReportCsvHeader << '\n';
  for (const auto& r : rows) {
    out << fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g}\n", sim::SiteName(r.site),
                       r.session, r.baseline_tts, r.proposed_tts, r.improvement, r.relative);
  }
  if (!rows.empty()) {
    const auto s = Summarize(rows);
    out << fmt::format("{},Average,{:.17g},{:.17g},{:.17g},{:.17g}\n",
                       sim::SiteName(rows.front().site), s.mean_baseline, s.mean_proposed,
                       s.mean_improvement, s.mean_relative);
  }
}

std::vector<SessionReport> ReadReportCsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kReportCsvHeader) {
    throw IoError("report csv: missing header");
  }
  std::vector<SessionReport> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string site, session, b, p, imp, rel;
    if (!std::getline(ss, site, ',') || !std::getline(ss, session, ',') ||
        !std::getline(ss, b, ',') || !std::getline(ss, p, ',') ||
        !std::getline(ss, imp, ',') || !std::getline(ss, rel, ',')) {
      throw IoError(fmt::format("report csv: short row '{}'", line));
    }
    if (session == "Average") continue;
    try {
      SessionReport r;
      r.site = sim::ParseSite(site);
      r.session = std::stoi(session);
      r.baseline_tts = std::stod(b);
      r.proposed_tts = std::stod(p);
      r.improvement = std::stod(imp);
      r.relative = std::stod(rel);
      rows.push_back(r);
    } catch (const std::exception& e) {
      throw IoError(fmt::format("report csv: bad row '{}': {}", line, e.what()));
    }
  }
  return rows;
}

std::string RenderTable(std::span<const SessionReport> rows) {
  if (rows.empty()) throw DomainError("empty report");
  std::string out = fmt::format("Site {} ({})\n", sim::SiteName(rows.front().site),
                                sim::SiteLongName(rows.front().site));
  const std::string rule(72, '-');
  out += fmt::format("{:<9}{:>17}{:>17}{:>17}{:>12}\n", "Session", "Baseline TTS (s)",
                     "Proposed TTS (s)", "Improvement (s)", "Relative");
  out += rule + '\n';
  for (const auto& r : rows) {
    out += fmt::format("{:<9}{:>17}{:>17}{:>17}{:>11}%\n", r.session,
                       FormatFixed(r.baseline_tts, 2), FormatFixed(r.proposed_tts, 2),
                       FormatFixed(r.improvement, 2), FormatFixed(100.0 * r.relative, 1));
  }
  const auto s = Summarize(rows);
  out += rule + '\n';
  out += fmt::format("{:<9}{:>17}{:>17}{:>17}{:>11}%\n", "Average",
                     FormatFixed(s.mean_baseline, 2), FormatFixed(s.mean_proposed, 2),
                     FormatFixed(s.mean_improvement, 2), FormatFixed(100.0 * s.mean_relative, 1));
  out += fmt::format("Relative improvement: mean of ratios {}%, ratio of means {}%\n",
                     FormatFixed(100.0 * s.mean_relative, 1),
                     FormatFixed(100.0 * s.ratio_of_means, 1));
  int rollbacks = 0;
  for (const auto& r : rows) rollbacks += r.rollbacks;
  out += fmt::format("Rollbacks: {} over {} sessions\n", rollbacks, rows.size());
  out += "Trace checksums:";
  for (const auto& r : rows) out += fmt::format(" {}:{}", r.session, HashHex(r.trace_checksum));
  out += '\n';
  return out;
}

}  // namespace fpswitch::report
