#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpswitch/error.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/pipeline.h"

using namespace fpswitch;
using namespace fpswitch::pipeline;
namespace fs = std::filesystem;

namespace {

fs::path Scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fpswitch_" + name);
  fs::remove_all(dir);
  return dir;
}

std::string Slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int CountWithPrefix(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  int n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    n += name.rfind(prefix, 0) == 0 && e.path().extension() == ext;
  }
  return n;
}

}  // namespace

TEST_CASE("simulate: five site A sessions") {
  auto kv = KvConfig::Parse("sites = A\nsessions = 5\nseed = 3\n");
  const auto cfg = PipelineConfig::FromKv(kv);
  const auto a = Scratch("sim_a"), b = Scratch("sim_b");
  std::ostringstream log;
  CmdSimulate(cfg, a.string(), log);
  CmdSimulate(cfg, b.string(), log);
  CHECK(CountWithPrefix(a, "trace_", ".csv") == 5);
  CHECK(CountWithPrefix(a, "truth_", ".csv") == 5);
  for (const auto& e : fs::directory_iterator(a)) {
    CHECK(Slurp(e.path()) == Slurp(b / e.path().filename()));
  }
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("invalid site names the field") {
  auto kv = KvConfig::Parse("sites = A,Z\n");
  try {
    PipelineConfig::FromKv(kv);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field() == "sites");
  }
}

TEST_CASE("evaluate without models fails") {
  const auto dir = Scratch("no_models");
  std::ostringstream log;
  CHECK_THROWS(CmdEvaluate(PipelineConfig{}, dir.string(), log));
  fs::remove_all(dir);
}

TEST_CASE("train: one round smoke run emits the model files") {
  auto kv = KvConfig::Parse(
      "sites = A,C\nseed = 2\ncloudedge.rounds = 1\ncloudedge.episodes_per_edge = 4\n"
      "metric.epochs = 2\nhistory_sessions = 3\n");
  const auto cfg = PipelineConfig::FromKv(kv);
  const auto dir = Scratch("train_smoke");
  std::ostringstream log;
  CmdTrain(cfg, dir.string(), log);
  CHECK(CountWithPrefix(dir, "", ".tensors") == 4);
  CHECK(fs::exists(dir / "train_log.csv"));
  const auto models = Models::Load(dir.string(), cfg.sites);
  CHECK(models.libraries.size() == 2);
  fs::remove_all(dir);
}

TEST_CASE("site C commits its prototype on the triple condition") {
  PipelineConfig cfg;
  int committed = 0;
  for (uint64_t i = 0; i < 5; ++i) {
    const auto trace = SessionTrace(cfg, sim::Site::kC, Purpose::kHistory, i);
    const auto t = CommitTime(trace, cfg);
    if (!t) continue;
    ++committed;
    CHECK(trace.gnss[*t - 1].fix);
  }
  CHECK(committed >= 4);
}

TEST_CASE("train: mean reward of the last five rounds beats the first five") {
  const auto result = Train(PipelineConfig{});
  REQUIRE(result.rounds.size() == 20);
  double first = 0.0, last = 0.0;
  for (int r = 0; r < 5; ++r) {
    first += result.rounds[r].mean_reward / 5;
    last += result.rounds[15 + r].mean_reward / 5;
  }
  CHECK(last >= first);
}
