// fpswitch simulate|train|evaluate

#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "fpswitch/error.h"
#include "fpswitch/kv_config.h"
#include "fpswitch/pipeline.h"
#include "fpswitch/simworld.h"

namespace {

using fpswitch::pipeline::PipelineConfig;

PipelineConfig Resolve(const std::string& config_path, const std::string& site,
                       int sessions, const std::string& seed, int rounds) {
  auto kv = config_path.empty() ? fpswitch::KvConfig() : fpswitch::KvConfig::Load(config_path);
  if (!seed.empty()) kv.Set("seed", seed);
  if (sessions >= 0) kv.Set("sessions", std::to_string(sessions));
  if (rounds >= 0) kv.Set("cloudedge.rounds", std::to_string(rounds));
  if (!site.empty() && site != "all") kv.Set("sites", site);
  return PipelineConfig::FromKv(kv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fingerprint-driven network switching: simulate, train, evaluate"};
  app.require_subcommand(1);
  std::string site = "all", config_path, out = "fpswitch_out", seed;
  int sessions = -1, rounds = -1;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--site", site, "A, B, C or all")->capture_default_str();
    cmd->add_option("--sessions", sessions, "sessions per site (default: per-site)");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--config", config_path, "key = value config file");
    cmd->add_option("--out", out, "output directory")->capture_default_str();
  };
  auto* simulate = app.add_subcommand("simulate", "write traces and ground truth");
  auto* train = app.add_subcommand("train", "build libraries, train models, run rounds");
  auto* evaluate = app.add_subcommand("evaluate", "greedy policy vs. baseline report");
  for (auto* cmd : {simulate, train, evaluate}) add_common(cmd);
  train->add_option("--rounds", rounds, "cloud-edge rounds");

  CLI11_PARSE(app, argc, argv);
  try {
    const auto cfg = Resolve(config_path, site, sessions, seed, rounds);
    if (*simulate) fpswitch::pipeline::CmdSimulate(cfg, out, std::cout);
    if (*train) fpswitch::pipeline::CmdTrain(cfg, out, std::cout);
    if (*evaluate) fpswitch::pipeline::CmdEvaluate(cfg, out, std::cout);
  } catch (const fpswitch::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const fpswitch::IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
