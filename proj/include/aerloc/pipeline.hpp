#pragma once

// End-to-end localization run (RunLog -> local map -> registration -> EKF),
// error metrics against ground truth, and report I/O.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include "aerloc/ekf.hpp"
#include "aerloc/grid_map.hpp"
#include "aerloc/local_map.hpp"
#include "aerloc/registration.hpp"
#include "aerloc/simulator.hpp"

namespace aerloc {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // data source
  std::string scenario = "desk-mcity";
  std::uint64_t seed = 1;
  double duration = 0.0;  // s, 0 = whole scenario
  std::string runlog_path;
  std::string map_path;

  // prior
  sim::Modality modality = sim::Modality::kAerial;
  double resolution = 0.08;

  // sensor noise (scenario defaults unless overridden)
  sim::SensorNoiseSpec noise;
  bool zero_noise = false;

  // registration
  RegistrationConfig registration;
  double xy_step_cells = 1.0;
  double theta_step_deg = 0.5;
  double max_window = 3.0;
  double max_theta_deg = 3.0;
  int max_nodes_per_axis = 15;
  double local_map_side = 40.0;

  // filter
  FilterConfig filter;

  // schedule
  double cadence_hz = 2.0;
  bool updates_enabled = true;
  int no_fix_limit = 10;
  double alert_limit = 0.29;

  std::string output_dir;
};

/// Parses `key = value` lines ('#' comments) over a default config. Unknown
/// keys and unparsable values raise ConfigError.
inline ExperimentConfig parse_config(const std::string& text, ExperimentConfig cfg = {}) {
  std::map<std::string, std::function<void(const std::string&)>> setters;
  auto num = [](const std::string& key, const std::string& v) {
    std::size_t used = 0;
    double d = 0.0;
    try {
      d = std::stod(v, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used == 0 || used != v.size() || !std::isfinite(d)) {
      throw ConfigError("config: `" + key + "` expects a number, got `" + v + "`");
    }
    return d;
  };
  auto boolean = [](const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config: `" + key + "` expects true|false, got `" + v + "`");
  };
  auto dbl = [&](const char* key, double& field) {
    setters[key] = [&, key](const std::string& v) { field = num(key, v); };
  };
  auto integer = [&](const char* key, auto& field) {
    setters[key] = [&, key](const std::string& v) {
      const double d = num(key, v);
      if (d != std::floor(d) || d < 0) throw ConfigError(std::string("config: `") + key + "` expects a non-negative integer");
      field = static_cast<std::remove_reference_t<decltype(field)>>(d);
    };
  };
  auto flag = [&](const char* key, bool& field) {
    setters[key] = [&, key](const std::string& v) { field = boolean(key, v); };
  };
  auto text_field = [&](const char* key, std::string& field) {
    setters[key] = [&field](const std::string& v) { field = v; };
  };

  text_field("scenario", cfg.scenario);
  integer("seed", cfg.seed);
  dbl("duration", cfg.duration);
  text_field("runlog", cfg.runlog_path);
  text_field("map", cfg.map_path);
  setters["modality"] = [&](const std::string& v) {
    try {
      cfg.modality = sim::parse_modality(v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
  };
  dbl("resolution", cfg.resolution);
  dbl("odo_v_std", cfg.noise.odo_v_std);
  dbl("odo_omega_std", cfg.noise.odo_omega_std);
  dbl("odo_bias_v", cfg.noise.odo_bias_v);
  dbl("odo_bias_omega", cfg.noise.odo_bias_omega);
  dbl("reflectivity_std", cfg.noise.reflectivity_std);
  dbl("dropout_rate", cfg.noise.dropout_rate);
  dbl("gps_offset_x", cfg.noise.gps_offset_x);
  dbl("gps_offset_y", cfg.noise.gps_offset_y);
  setters["modality_gap"] = [&](const std::string& v) {
    if (v == "default") {
      cfg.noise.modality_gap = sim::ModalityGap::desk_default();
    } else if (v == "identity") {
      cfg.noise.modality_gap = sim::ModalityGap::identity();
    } else {
      throw ConfigError("config: modality_gap expects default|identity");
    }
  };
  flag("zero_noise", cfg.zero_noise);
  integer("bins", cfg.registration.nmi.bins);
  integer("min_overlap", cfg.registration.nmi.min_overlap);
  dbl("lambda", cfg.registration.lambda);
  dbl("boundary_penalty", cfg.registration.boundary_penalty);
  dbl("xy_step_cells", cfg.xy_step_cells);
  dbl("theta_step_deg", cfg.theta_step_deg);
  dbl("max_window", cfg.max_window);
  dbl("max_theta_deg", cfg.max_theta_deg);
  integer("max_nodes_per_axis", cfg.max_nodes_per_axis);
  dbl("local_map_side", cfg.local_map_side);
  setters["q_xy"] = [&](const std::string& v) {
    cfg.filter.q_base(0, 0) = cfg.filter.q_base(1, 1) = num("q_xy", v);
  };
  setters["q_theta"] = [&](const std::string& v) { cfg.filter.q_base(2, 2) = num("q_theta", v); };
  setters["init_sigma_xy"] = [&](const std::string& v) {
    cfg.filter.init_sigma(0, 0) = cfg.filter.init_sigma(1, 1) = num("init_sigma_xy", v);
  };
  setters["init_sigma_theta"] = [&](const std::string& v) {
    cfg.filter.init_sigma(2, 2) = num("init_sigma_theta", v);
  };
  dbl("gating_threshold", cfg.filter.gating_threshold);
  integer("min_updates_settled", cfg.filter.min_updates_settled);
  dbl("cadence_hz", cfg.cadence_hz);
  flag("updates_enabled", cfg.updates_enabled);
  integer("no_fix_limit", cfg.no_fix_limit);
  dbl("alert_limit", cfg.alert_limit);
  text_field("output_dir", cfg.output_dir);

  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected `key = value`");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    auto it = setters.find(key);
    if (it == setters.end()) throw ConfigError("config line " + std::to_string(line_no) + ": unknown key `" + key + "`");
    it->second(value);
  }
  if (!(cfg.cadence_hz > 0.0)) throw ConfigError("config: cadence_hz must be > 0");
  if (!(cfg.resolution > 0.0)) throw ConfigError("config: resolution must be > 0");
  if (cfg.registration.nmi.bins < 1 || cfg.registration.nmi.bins > 256) throw ConfigError("config: bins must be in [1, 256]");
  if (!(cfg.xy_step_cells > 0.0) || !(cfg.theta_step_deg > 0.0)) throw ConfigError("config: steps must be > 0");
  return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), std::move(base));
}

// ---------------------------------------------------------------------------
// Reports

enum class GateCode : int { kAccepted = 0, kGated = 1, kNoFix = 2, kSkipped = 3, kRejected = 4 };

struct StepRecord {
  double t = 0.0;
  Pose2D truth;
  Pose2D estimate;
  double err_lat = 0.0;
  double err_lon = 0.0;
  double err_l2 = 0.0;
  double nmi = 0.0;
  int gated = 0;
};

struct ErrorDecomposition {
  double lateral;
  double longitudinal;
  double l2;
};

/// Position error in the ground-truth vehicle frame.
inline ErrorDecomposition decompose_error(const Pose2D& truth, const Pose2D& estimate) {
  const double dx = estimate.x - truth.x;
  const double dy = estimate.y - truth.y;
  const double c = std::cos(truth.theta), s = std::sin(truth.theta);
  return {-dx * s + dy * c, dx * c + dy * s, std::hypot(dx, dy)};
}

struct ErrorReport {
  std::string method;  // AL, LGR or Pose
  double resolution = 0.0;
  std::vector<StepRecord> steps;
  double rmse_lat = 0.0;
  double rmse_lon = 0.0;
  double max_lat = 0.0;
  double max_lon = 0.0;
  double max_l2 = 0.0;
  double terminal_l2 = 0.0;
  double alert_limit = 0.29;
  double availability_lat = 0.0;  // percent
  double availability_lon = 0.0;
  bool diverged = false;
  std::size_t fixes_accepted = 0;
  std::size_t fixes_gated = 0;
  std::size_t no_fix = 0;
  double runtime_s = 0.0;
};

struct Availability {
  double lateral = 0.0;  // percent of steps with |error| < limit
  double longitudinal = 0.0;
};

inline Availability availability(const ErrorReport& r, double alert_limit) {
  if (r.steps.empty()) throw std::invalid_argument("availability: empty report");
  std::size_t lat = 0, lon = 0;
  for (const auto& s : r.steps) {
    lat += std::abs(s.err_lat) < alert_limit;
    lon += std::abs(s.err_lon) < alert_limit;
  }
  const double n = static_cast<double>(r.steps.size());
  return {100.0 * static_cast<double>(lat) / n, 100.0 * static_cast<double>(lon) / n};
}

/// Fills RMSE, maxima, terminal error and availability from the step records.
inline void summarize(ErrorReport& r) {
  double sl = 0.0, so = 0.0;
  r.max_lat = r.max_lon = r.max_l2 = 0.0;
  for (const auto& s : r.steps) {
    sl += s.err_lat * s.err_lat;
    so += s.err_lon * s.err_lon;
    r.max_lat = std::max(r.max_lat, std::abs(s.err_lat));
    r.max_lon = std::max(r.max_lon, std::abs(s.err_lon));
    r.max_l2 = std::max(r.max_l2, s.err_l2);
  }
  if (r.steps.empty()) return;
  const double n = static_cast<double>(r.steps.size());
  r.rmse_lat = std::sqrt(sl / n);
  r.rmse_lon = std::sqrt(so / n);
  r.terminal_l2 = r.steps.back().err_l2;
  const Availability a = availability(r, r.alert_limit);
  r.availability_lat = a.lateral;
  r.availability_lon = a.longitudinal;
}

inline const char* kStepsCsvHeader =
    "t,truth_x,truth_y,truth_theta,est_x,est_y,est_theta,err_lat,err_lon,err_l2,nmi,gated";

inline std::string format_steps_csv(const ErrorReport& r) {
  std::string out = std::string(kStepsCsvHeader) + "\n";
  char buf[512];
  for (const auto& s : r.steps) {
    std::snprintf(buf, sizeof buf,
                  "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", s.t,
                  s.truth.x, s.truth.y, s.truth.theta, s.estimate.x, s.estimate.y,
                  s.estimate.theta, s.err_lat, s.err_lon, s.err_l2, s.nmi, s.gated);
    out += buf;
  }
  return out;
}

inline std::vector<StepRecord> parse_steps_csv(const std::string& text) {
  std::istringstream lines(text);
  std::string line;
  if (!std::getline(lines, line) || detail::trim(line) != kStepsCsvHeader) {
    throw std::runtime_error("steps csv: unexpected header");
  }
  std::vector<StepRecord> steps;
  while (std::getline(lines, line)) {
    if (detail::trim(line).empty()) continue;
    StepRecord s;
    const int n = std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%d", &s.t,
                              &s.truth.x, &s.truth.y, &s.truth.theta, &s.estimate.x,
                              &s.estimate.y, &s.estimate.theta, &s.err_lat, &s.err_lon,
                              &s.err_l2, &s.nmi, &s.gated);
    if (n != 12) throw std::runtime_error("steps csv: malformed row");
    steps.push_back(s);
  }
  return steps;
}

inline std::string format_summary(const ErrorReport& r) {
  char buf[256];
  std::string out;
  auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%s = %.17g\n", key, v);
    out += buf;
  };
  out += "method = " + r.method + "\n";
  line("resolution", r.resolution);
  line("steps", static_cast<double>(r.steps.size()));
  line("rmse_lat", r.rmse_lat);
  line("rmse_lon", r.rmse_lon);
  line("max_lat", r.max_lat);
  line("max_lon", r.max_lon);
  line("max_l2", r.max_l2);
  line("terminal_l2", r.terminal_l2);
  line("alert_limit", r.alert_limit);
  line("availability_lat", r.availability_lat);
  line("availability_lon", r.availability_lon);
  out += std::string("diverged = ") + (r.diverged ? "true" : "false") + "\n";
  line("fixes_accepted", static_cast<double>(r.fixes_accepted));
  line("fixes_gated", static_cast<double>(r.fixes_gated));
  line("no_fix", static_cast<double>(r.no_fix));
  return out;
}

/// Writes steps.csv, summary.txt and timing.txt (the only non-deterministic
/// file) into `dir`.
inline void write_report(const ErrorReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "steps.csv") << format_steps_csv(r);
  std::ofstream(dir / "summary.txt") << format_summary(r);
  std::ofstream(dir / "timing.txt") << "runtime_s = " << r.runtime_s << "\n";
}

/// Loads a report directory; aggregates are recomputed from steps.csv.
inline ErrorReport read_report(const std::filesystem::path& dir) {
  ErrorReport r;
  {
    std::ifstream in(dir / "summary.txt");
    if (!in) throw std::runtime_error("missing " + (dir / "summary.txt").string());
    std::string line;
    while (std::getline(in, line)) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (key == "method") r.method = value;
      if (key == "resolution") r.resolution = std::stod(value);
      if (key == "alert_limit") r.alert_limit = std::stod(value);
      if (key == "diverged") r.diverged = value == "true";
    }
  }
  std::ifstream in(dir / "steps.csv");
  if (!in) throw std::runtime_error("missing " + (dir / "steps.csv").string());
  std::stringstream buf;
  buf << in.rdbuf();
  r.steps = parse_steps_csv(buf.str());
  summarize(r);
  return r;
}

// ---------------------------------------------------------------------------
// Comparison table

struct ComparisonRow {
  std::string method;
  double resolution = 0.0;
  double rmse_lat = 0.0;
  double rmse_lon = 0.0;
  double ratio_lat = 0.0;  // relative to the reference (first) report
  double ratio_lon = 0.0;
};

/// One row per report, ordered by method then resolution; ratios are taken
/// against the first report given.
inline std::vector<ComparisonRow> compare_runs(const std::vector<ErrorReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("compare_runs: no reports");
  const ErrorReport& ref = reports.front();
  std::vector<ComparisonRow> rows;
  for (const auto& r : reports) {
    rows.push_back({r.method, r.resolution, r.rmse_lat, r.rmse_lon, r.rmse_lat / ref.rmse_lat,
                    r.rmse_lon / ref.rmse_lon});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const ComparisonRow& a, const ComparisonRow& b) {
    if (a.method != b.method) return a.method < b.method;
    return a.resolution < b.resolution;
  });
  return rows;
}

inline std::string format_comparison(const std::vector<ComparisonRow>& rows) {
  std::string out = "method  res_cm  rmse_lat_m  rmse_lon_m  ratio_lat  ratio_lon\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-6s  %6.1f  %10.4f  %10.4f  %9.3f  %9.3f\n", r.method.c_str(),
                  100.0 * r.resolution, r.rmse_lat, r.rmse_lon, r.ratio_lat, r.ratio_lon);
    out += buf;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pipeline

inline std::string method_label(const ExperimentConfig& cfg) {
  if (!cfg.updates_enabled) return "Pose";
  return cfg.modality == sim::Modality::kAerial ? "AL" : "LGR";
}

inline WindowLimits window_limits(const ExperimentConfig& cfg, double res) {
  WindowLimits lim;
  lim.x_step = lim.y_step = cfg.xy_step_cells * res;
  lim.theta_step = cfg.theta_step_deg * std::numbers::pi / 180.0;
  lim.min_xy = res;
  lim.max_xy = cfg.max_window;
  lim.max_theta = cfg.max_theta_deg * std::numbers::pi / 180.0;
  lim.max_nodes_per_axis = cfg.max_nodes_per_axis;
  return lim;
}

/// Moves a search centre so the patch's cell centres land on prior cell
/// centres (exactly so at zero rotation). Nearest-neighbour NMI is flat within
/// a cell, so a lattice anchored on the estimate itself would leave a one-cell
/// dead zone in which fixes never correct drift; anchoring on the prior
/// lattice turns that into a rounding error that varies as the vehicle moves.
inline Pose2D snap_to_lattice(Pose2D center, const Patch& image, double res) {
  const double hx = 0.5 * image.cols;
  const double hy = 0.5 * image.rows;
  center.x = (std::round(center.x / res - hx) + hx) * res;
  center.y = (std::round(center.y / res - hy) + hy) * res;
  return center;
}

/// Replays a RunLog against a prior map.
///
/// Scans are accumulated in the dead-reckoned frame D (odometry integrated
/// from the GPS fix), which is locally consistent but drifts. At each
/// registration instant the filter estimate fixes the hypothesised transform
/// from D to the map frame; the search refines where the local grid's centre
/// lands in the prior, and the result is mapped back to a vehicle pose fix.
inline ErrorReport run_experiment(const ExperimentConfig& cfg, const sim::RunLog& log,
                                  const PriorMap& prior) {
  const auto wall_start = std::chrono::steady_clock::now();
  const double res = prior.cell_resolution();
  if (log.truth.empty() || log.odometry.size() != log.truth.size()) {
    throw std::invalid_argument("run_experiment: malformed run log");
  }

  ErrorReport report;
  report.method = method_label(cfg);
  report.resolution = res;
  report.alert_limit = cfg.alert_limit;

  const double t0 = log.odometry.front().timestamp;
  PoseFilter filter(initialize(log.gps, prior.frame(), cfg.filter, t0), cfg.filter);
  Pose2D dead_reckoned = filter.state().mu;
  LocalGridMap local(dead_reckoned.x, dead_reckoned.y, cfg.local_map_side, res);
  const WindowLimits limits = window_limits(cfg, res);

  const double period = 1.0 / cfg.cadence_hz;
  double next_registration = t0;
  std::size_t scan = 0;
  int no_fix_streak = 0;
  std::vector<ReflectivityPoint> points;

  for (std::size_t k = 0; k < log.odometry.size(); ++k) {
    const double t = log.odometry[k].timestamp;
    if (k > 0) {
      const auto& odo = log.odometry[k - 1];
      dead_reckoned = propagate(dead_reckoned, odo.v, odo.omega, t - log.odometry[k - 1].timestamp);
      filter.predict_to(odo, t);
    }
    while (scan < log.scans.size() && log.scans[scan].t <= t) {
      const auto& frame = log.scans[scan++];
      local.recenter(dead_reckoned.x, dead_reckoned.y);
      points.clear();
      for (const auto& p : frame.points) {
        const Eigen::Vector2d w = transform_point(dead_reckoned, p.x, p.y);
        points.push_back({w.x(), w.y(), p.reflectivity, frame.t});
      }
      local.insert_points(points);
    }
    if (t + 1e-9 < next_registration) continue;
    next_registration += period;

    StepRecord rec;
    rec.t = t;
    rec.gated = static_cast<int>(GateCode::kSkipped);
    if (cfg.updates_enabled) {
      const Patch image = local.as_match_image();
      bool fixed = false;
      if (image.valid_count() >= std::max<std::size_t>(1, cfg.registration.nmi.min_overlap)) {
        const SearchSpec spec = search_window(filter.state(), limits);
        const Pose2D grid_center = local.center();
        // map <- D transform implied by the current estimate
        const Pose2D map_from_d = compose(filter.state().mu, inverse(dead_reckoned));
        const Pose2D center = snap_to_lattice(compose(map_from_d, grid_center), image, res);
        const RegistrationResult reg = search(prior, image, center, spec, cfg.registration);
        if (reg.has_fix) {
          fixed = true;
          const Pose2D best{center.x + reg.offset.x, center.y + reg.offset.y,
                            center.theta + reg.offset.theta};
          const Pose2D lever = compose(inverse(grid_center), dead_reckoned);
          const Pose2D z = compose(best, lever);
          // propagate the fitted covariance through the lever arm
          const Eigen::Vector2d arm = transform_point({0.0, 0.0, best.theta}, lever.x, lever.y);
          Mat3 j = Mat3::Identity();
          j(0, 2) = -arm.y();
          j(1, 2) = arm.x();
          const Mat3 r = j * reg.fitted_covariance * j.transpose();
          const auto outcome = filter.apply_fix(z, r, t);
          rec.nmi = reg.score;
          switch (outcome.status) {
            case PoseFilter::FixStatus::kAccepted:
              rec.gated = static_cast<int>(GateCode::kAccepted);
              ++report.fixes_accepted;
              break;
            case PoseFilter::FixStatus::kGated:
              rec.gated = static_cast<int>(GateCode::kGated);
              ++report.fixes_gated;
              break;
            default:
              rec.gated = static_cast<int>(GateCode::kRejected);
              break;
          }
        }
      }
      if (!fixed) {
        rec.gated = static_cast<int>(GateCode::kNoFix);
        ++report.no_fix;
        if (++no_fix_streak > cfg.no_fix_limit) report.diverged = true;
      } else {
        no_fix_streak = 0;
      }
    }
    rec.truth = log.truth[k].pose;
    rec.estimate = filter.state().mu;
    const ErrorDecomposition e = decompose_error(rec.truth, rec.estimate);
    rec.err_lat = e.lateral;
    rec.err_lon = e.longitudinal;
    rec.err_l2 = e.l2;
    report.steps.push_back(rec);
  }
  summarize(report);
  report.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

/// Everything an in-process experiment needs, generated from the config.
struct SimulatedInputs {
  sim::Scenario scenario;
  sim::RunLog log;
};

inline sim::SensorNoiseSpec effective_noise(const ExperimentConfig& cfg, const sim::Scenario& sc) {
  if (cfg.zero_noise) return sim::SensorNoiseSpec::zero();
  sim::SensorNoiseSpec n = cfg.noise;
  n.occlusion_patches = sc.noise.occlusion_patches;
  return n;
}

inline SimulatedInputs simulate_inputs(const ExperimentConfig& cfg) {
  sim::Scenario sc = sim::make_scenario(cfg.scenario, cfg.seed);
  sc.trajectory.duration = cfg.duration;
  sc.noise = effective_noise(cfg, sc);
  sim::RunLog log = sim::simulate_run(sc.world, sc.trajectory, sc.noise, sc.frame, cfg.seed);
  return {std::move(sc), std::move(log)};
}

inline PriorMap render_scenario_prior(const sim::Scenario& sc, sim::Modality modality,
                                      double resolution) {
  return sim::render_prior(sc.world, modality, resolution, sc.noise.modality_gap,
                           sc.noise.occlusion_patches, sc.frame);
}

}  // namespace aerloc
