#ifndef FPSWITCH_REPORT_H_
#define FPSWITCH_REPORT_H_

// Per-session TTS comparison rows, their CSV form and the rendered table.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "fpswitch/simworld.h"

namespace fpswitch::report {

struct SessionReport {
  sim::Site site = sim::Site::kA;
  int session = 0;  // 1-based
  double baseline_tts = 0.0;
  double proposed_tts = 0.0;
  double improvement = 0.0;  // baseline - proposed
  double relative = 0.0;     // improvement / baseline; 0 when baseline <= 0
  uint64_t trace_checksum = 0;
  int rollbacks = 0;  // reverted handovers before the final switch
};

SessionReport MakeSessionReport(sim::Site site, int session, double baseline_tts,
                                double proposed_tts, uint64_t trace_checksum = 0);

struct ReportSummary {
  double mean_baseline = 0.0;
  double mean_proposed = 0.0;
  double mean_improvement = 0.0;
  double mean_relative = 0.0;    // mean of per-session ratios
  double ratio_of_means = 0.0;   // mean_improvement / mean_baseline
};

// Throws DomainError on an empty span.
ReportSummary Summarize(std::span<const SessionReport> rows);

// Round half away from zero at `decimals` places; a 1e-9 relative nudge keeps
// decimal ties such as 6.955 from rounding down through binary error.
double RoundHalfUp(double value, int decimals);
std::string FormatFixed(double value, int decimals);

inline constexpr const char* kReportCsvHeader =
    "site,session,baseline_tts,proposed_tts,improvement,relative";

// Header, one row per session (%.17g), then an Average row.
void WriteReportCsv(std::ostream& out, std::span<const SessionReport> rows);
std::vector<SessionReport> ReadReportCsv(std::istream& in);  // skips Average

// Fixed-width table with 2-decimal values, an Average row, both relative
// aggregates, the rollback count and the trace checksums.
std::string RenderTable(std::span<const SessionReport> rows);

}  // namespace fpswitch::report

#endif  // FPSWITCH_REPORT_H_
