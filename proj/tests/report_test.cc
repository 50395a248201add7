#include <doctest.h>

#include <sstream>

#include "fpswitch/error.h"
#include "fpswitch/report.h"

using namespace fpswitch;
using namespace fpswitch::report;

TEST_CASE("session row arithmetic") {
  const auto r = MakeSessionReport(sim::Site::kA, 1, 12.68, 6.60);
  CHECK(r.improvement == doctest::Approx(6.08).epsilon(1e-12));
  CHECK(r.relative == doctest::Approx(6.08 / 12.68).epsilon(1e-12));
  const auto neg = MakeSessionReport(sim::Site::kB, 7, 3.0, 4.01);
  CHECK(neg.improvement == doctest::Approx(-1.01).epsilon(1e-12));
  CHECK(neg.relative < 0.0);
  CHECK(MakeSessionReport(sim::Site::kA, 1, 0.0, 1.0).relative == 0.0);
}

TEST_CASE("average rounds half up") {
  std::vector<SessionReport> rows;
  const double imp[] = {6.08, 7.81, 5.88, 8.68, 6.33};
  for (int i = 0; i < 5; ++i) rows.push_back(MakeSessionReport(sim::Site::kA, i + 1, 14.0, 14.0 - imp[i]));
  const auto s = Summarize(rows);
  CHECK(s.mean_improvement == doctest::Approx(6.956).epsilon(1e-12));
  CHECK(FormatFixed(s.mean_improvement, 2) == "6.96");
  CHECK(FormatFixed(6.955, 2) == "6.96");
  CHECK(FormatFixed(-0.001, 2) == "0.00");
  CHECK(FormatFixed(-1.01, 2) == "-1.01");
  CHECK_THROWS_AS(Summarize({}), DomainError);
}

TEST_CASE("negative improvement is kept in the table") {
  std::vector<SessionReport> rows = {MakeSessionReport(sim::Site::kB, 1, 5.0, 2.0),
                                     MakeSessionReport(sim::Site::kB, 2, 3.0, 4.01)};
  const auto table = RenderTable(rows);
  CHECK(table.find("-1.01") != std::string::npos);
  CHECK(table.find("Average") != std::string::npos);
}

TEST_CASE("report csv round-trips") {
  std::vector<SessionReport> rows;
  for (int i = 0; i < 3; ++i) rows.push_back(MakeSessionReport(sim::Site::kC, i + 1, 10.0 + i / 3.0, 2.0 + i));
  std::stringstream io;
  WriteReportCsv(io, rows);
  CHECK(io.str().rfind(kReportCsvHeader, 0) == 0);
  CHECK(io.str().find("C,Average,") != std::string::npos);
  const auto back = ReadReportCsv(io);
  REQUIRE(back.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(back[i].baseline_tts == rows[i].baseline_tts);
    CHECK(back[i].improvement == rows[i].improvement);
  }
}
