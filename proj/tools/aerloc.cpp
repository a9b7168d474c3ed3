// aerloc command-line front end: render priors, simulate runs, localize, and
// evaluate reports.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aerloc/aerloc.hpp"
#include "aerloc/testing/instances.hpp"
#include "aerloc/testing/registration_oracle.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitDiverged = 2;
constexpr int kExitConfig = 3;

struct MakeMapArgs {
  std::string scenario = "desk-mcity";
  std::string modality = "aerial";
  double resolution = 0.08;
  std::uint64_t seed = 1;
  bool identity_gap = false;
  std::string out;
};

int make_map(const MakeMapArgs& a) {
  const auto modality = aerloc::sim::parse_modality(a.modality);
  aerloc::sim::Scenario sc = aerloc::sim::make_scenario(a.scenario, a.seed);
  if (a.identity_gap) sc.noise.modality_gap = aerloc::sim::ModalityGap::identity();
  const aerloc::PriorMap map = aerloc::render_scenario_prior(sc, modality, a.resolution);
  const auto manifest = aerloc::save_map(map, a.out);
  std::printf("wrote %zu tiles, manifest %s\n", map.tile_count(), manifest.string().c_str());
  return kExitOk;
}

struct SimulateArgs {
  std::string scenario = "desk-mcity";
  std::uint64_t seed = 1;
  double duration = 0.0;
  bool zero_noise = false;
  std::string out;
};

int simulate(const SimulateArgs& a) {
  aerloc::ExperimentConfig cfg;
  cfg.scenario = a.scenario;
  cfg.seed = a.seed;
  cfg.duration = a.duration;
  cfg.zero_noise = a.zero_noise;
  const auto inputs = aerloc::simulate_inputs(cfg);
  aerloc::sim::save_runlog(inputs.log, a.out);
  std::printf("wrote %zu poses, %zu scans to %s\n", inputs.log.truth.size(),
              inputs.log.scans.size(), a.out.c_str());
  return kExitOk;
}

struct LocalizeArgs {
  std::string map;
  std::string runlog;
  std::string config;
  std::string out;
};

int localize(const LocalizeArgs& a) {
  aerloc::ExperimentConfig cfg;
  if (!a.config.empty()) cfg = aerloc::load_config(a.config);
  const std::string map_path = a.map.empty() ? cfg.map_path : a.map;
  const std::string runlog_path = a.runlog.empty() ? cfg.runlog_path : a.runlog;
  const std::string out = a.out.empty() ? cfg.output_dir : a.out;
  if (map_path.empty() || runlog_path.empty() || out.empty()) {
    throw aerloc::ConfigError("localize needs a map, a run log and an output directory");
  }
  if (!fs::exists(map_path)) throw aerloc::ConfigError("map not found: " + map_path);
  if (!fs::exists(runlog_path)) throw aerloc::ConfigError("run log not found: " + runlog_path);

  const aerloc::PriorMap prior = aerloc::load_map(map_path);
  const aerloc::sim::RunLog log = aerloc::sim::load_runlog(runlog_path);
  const aerloc::ErrorReport report = aerloc::run_experiment(cfg, log, prior);
  aerloc::write_report(report, out);
  std::cout << aerloc::format_summary(report);
  return report.diverged ? kExitDiverged : kExitOk;
}

struct EvalArgs {
  std::vector<std::string> reports;
  double alert_limit = 0.29;
};

int eval(const EvalArgs& a) {
  std::vector<aerloc::ErrorReport> reports;
  for (const auto& dir : a.reports) reports.push_back(aerloc::read_report(dir));
  std::cout << aerloc::format_comparison(aerloc::compare_runs(reports));
  std::printf("\nreport  avail_lat_%%  avail_lon_%%  (|err| < %.3f m)\n", a.alert_limit);
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto av = aerloc::availability(reports[i], a.alert_limit);
    std::printf("%-6s  %11.2f  %11.2f  %s\n", reports[i].method.c_str(), av.lateral,
                av.longitudinal, a.reports[i].c_str());
  }
  return kExitOk;
}

struct OracleArgs {
  std::uint64_t seed = 1;
  int trials = 100;
};

int oracle(const OracleArgs& a) {
  int mismatches = 0;
  for (int t = 0; t < a.trials; ++t) {
    const auto in = aerloc::testing::oracle_instance(a.seed, static_cast<std::uint64_t>(t));
    const auto fast = aerloc::search(in.prior, in.local, in.center, in.spec);
    const auto slow = aerloc::testing::oracle_search(in.prior, in.local, in.center, in.spec);
    double worst = 0.0;
    bool nan_mismatch = false;
    for (std::size_t k = 0; k < slow.score_field.size(); ++k) {
      const double f = fast.score_field[k], s = slow.score_field[k];
      if (std::isnan(f) != std::isnan(s)) nan_mismatch = true;
      if (!std::isnan(f) && !std::isnan(s)) worst = std::max(worst, std::abs(f - s));
    }
    const bool same_argmax =
        fast.has_fix == slow.has_fix && (!fast.has_fix || fast.best_index == slow.best_index);
    const bool ok = same_argmax && !nan_mismatch && worst <= 1e-12;
    if (!ok) ++mismatches;
    std::printf("trial %3d  nodes %5zu  argmax %s  max|d| %.3g  %s\n", t, slow.grid.size(),
                same_argmax ? "same" : "DIFF", worst, ok ? "ok" : "MISMATCH");
  }
  std::printf("%d/%d trials agree\n", a.trials - mismatches, a.trials);
  return mismatches == 0 ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-modal aerial-prior localization toolkit"};
  app.require_subcommand(1);

  MakeMapArgs mm;
  auto* c_map = app.add_subcommand("make-map", "Render a prior map for a scenario");
  c_map->add_option("--scenario", mm.scenario, "Scenario name");
  c_map->add_option("--modality", mm.modality, "aerial | lidar")->check(CLI::IsMember({"aerial", "lidar"}));
  c_map->add_option("--resolution", mm.resolution, "Cell size in metres")->check(CLI::PositiveNumber);
  c_map->add_option("--seed", mm.seed, "World seed");
  c_map->add_flag("--identity-gap", mm.identity_gap, "Render without the aerial appearance gap");
  c_map->add_option("--out", mm.out, "Output directory")->required();

  SimulateArgs sm;
  auto* c_sim = app.add_subcommand("simulate", "Simulate a run and write its RunLog");
  c_sim->add_option("--scenario", sm.scenario, "Scenario name");
  c_sim->add_option("--seed", sm.seed, "Seed for world and sensor noise");
  c_sim->add_option("--duration", sm.duration, "Truncate the drive to this many seconds");
  c_sim->add_flag("--zero-noise", sm.zero_noise, "Disable all sensor noise");
  c_sim->add_option("--out", sm.out, "RunLog path")->required();

  LocalizeArgs lo;
  auto* c_loc = app.add_subcommand("localize", "Run the localization pipeline on a RunLog");
  c_loc->add_option("--map", lo.map, "Prior map manifest");
  c_loc->add_option("--runlog", lo.runlog, "RunLog path");
  c_loc->add_option("--config", lo.config, "Experiment config (key = value)");
  c_loc->add_option("--out", lo.out, "Report directory");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Compare reports and compute availability");
  c_eval->add_option("--reports", ev.reports, "Report directories; the first is the ratio reference")
      ->required()
      ->expected(1, -1);
  c_eval->add_option("--alert-limit", ev.alert_limit, "Alert limit in metres");

  OracleArgs orc;
  auto* c_orc = app.add_subcommand("oracle", "Cross-check the search kernel against brute force");
  c_orc->add_option("--seed", orc.seed, "Instance seed");
  c_orc->add_option("--trials", orc.trials, "Number of random instances")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (c_map->parsed()) return make_map(mm);
    if (c_sim->parsed()) return simulate(sm);
    if (c_loc->parsed()) return localize(lo);
    if (c_eval->parsed()) return eval(ev);
    if (c_orc->parsed()) return oracle(orc);
  } catch (const aerloc::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
