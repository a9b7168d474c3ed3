#pragma once

// Vehicle run simulation: ground-truth trajectory, noisy odometry, body-frame
// reflectivity scans and an initial GPS fix, plus the RunLog text format.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "aerloc/counter_rng.hpp"
#include "aerloc/ekf.hpp"
#include "aerloc/grid_map.hpp"
#include "aerloc/pose.hpp"
#include "aerloc/sim_world.hpp"

namespace aerloc::sim {

/// Drive plan: constant-curvature pieces driven at constant speed from
/// `start`. Truth poses come from integrating the commanded (v, omega) with
/// the same unicycle step the filter uses.
struct TrajectorySpec {
  Pose2D start;
  std::vector<PathPiece> pieces;  // only length and curvature are used
  double speed = 8.0;             // m/s
  double sample_rate = 50.0;      // odometry / truth rate, Hz
  double scan_rate = 2.0;         // Hz, must divide sample_rate
  double scan_radius = 25.0;      // m
  double point_density = 55.0;    // candidate points per m^2 per scan
  double duration = 0.0;          // s; 0 = drive every piece

  double path_length() const {
    double l = 0.0;
    for (const auto& p : pieces) l += p.length;
    return l;
  }
};

struct SensorNoiseSpec {
  double odo_v_std = 0.05;
  double odo_omega_std = 0.005;
  double odo_bias_v = 0.04;
  double odo_bias_omega = -3e-4;  // rad/s, gyro-style heading drift
  double reflectivity_std = 8.0;
  double dropout_rate = 0.05;
  ModalityGap modality_gap = ModalityGap::desk_default();
  double gps_offset_x = 1.0;
  double gps_offset_y = -0.8;
  std::vector<OcclusionPatch> occlusion_patches;

  static SensorNoiseSpec zero() {
    SensorNoiseSpec n;
    n.odo_v_std = n.odo_omega_std = n.odo_bias_v = n.odo_bias_omega = 0.0;
    n.reflectivity_std = n.dropout_rate = 0.0;
    n.modality_gap = ModalityGap::identity();
    n.gps_offset_x = n.gps_offset_y = 0.0;
    return n;
  }
};

struct TimedPose {
  double t = 0.0;
  Pose2D pose;
  friend bool operator==(const TimedPose&, const TimedPose&) = default;
};

/// Return in the vehicle body frame (x forward, y left).
struct ScanPoint {
  float x = 0.0f;
  float y = 0.0f;
  std::uint8_t reflectivity = 0;
  friend bool operator==(const ScanPoint&, const ScanPoint&) = default;
};

struct ScanFrame {
  double t = 0.0;
  std::vector<ScanPoint> points;
  friend bool operator==(const ScanFrame&, const ScanFrame&) = default;
};

struct RunLog {
  GpsFix gps;
  std::vector<TimedPose> truth;
  std::vector<OdometryMeasurement> odometry;  // odometry[k] holds over [t_k, t_k+1)
  std::vector<ScanFrame> scans;

  friend bool operator==(const RunLog& a, const RunLog& b) {
    auto odo_eq = [](const OdometryMeasurement& p, const OdometryMeasurement& q) {
      return p.v == q.v && p.omega == q.omega && p.timestamp == q.timestamp;
    };
    return a.gps.lat == b.gps.lat && a.gps.lon == b.gps.lon && a.gps.heading == b.gps.heading &&
           a.truth == b.truth && a.scans == b.scans &&
           std::equal(a.odometry.begin(), a.odometry.end(), b.odometry.begin(), b.odometry.end(),
                      odo_eq);
  }
};

/// Random stream identifiers; each stream is addressed by (step, index).
enum class Stream : std::uint64_t { kOdoV = 1, kOdoOmega = 2, kScanGeometry = 3, kScanDropout = 4, kScanNoise = 5 };

namespace detail {

/// Value as it survives a '%.9g' text round trip.
inline double quantize9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return std::strtod(buf, nullptr);
}

}  // namespace detail

inline RunLog simulate_run(const SimWorld& world, const TrajectorySpec& traj,
                           const SensorNoiseSpec& noise, const GlobalFrame& frame,
                           std::uint64_t seed) {
  if (!(traj.speed > 0.0) || !(traj.sample_rate > 0.0) || !(traj.scan_rate > 0.0)) {
    throw std::invalid_argument("simulate_run: speed and rates must be positive");
  }
  if (!(noise.dropout_rate >= 0.0 && noise.dropout_rate < 1.0)) {
    throw std::invalid_argument("simulate_run: dropout_rate must be in [0, 1)");
  }
  const double dt = 1.0 / traj.sample_rate;
  const long scan_every = std::lround(traj.sample_rate / traj.scan_rate);
  const double total = traj.duration > 0.0 ? std::min(traj.duration, traj.path_length() / traj.speed)
                                           : traj.path_length() / traj.speed;
  const long steps = static_cast<long>(std::floor(total / dt + 1e-9)) + 1;

  const CounterRng rng_v(seed, static_cast<std::uint64_t>(Stream::kOdoV));
  const CounterRng rng_w(seed, static_cast<std::uint64_t>(Stream::kOdoOmega));
  const CounterRng rng_geo(seed, static_cast<std::uint64_t>(Stream::kScanGeometry));
  const CounterRng rng_drop(seed, static_cast<std::uint64_t>(Stream::kScanDropout));
  const CounterRng rng_refl(seed, static_cast<std::uint64_t>(Stream::kScanNoise));

  RunLog log;
  log.truth.reserve(static_cast<std::size_t>(steps));
  log.odometry.reserve(static_cast<std::size_t>(steps));
  const auto candidates = static_cast<std::uint64_t>(
      std::lround(traj.point_density * std::numbers::pi * traj.scan_radius * traj.scan_radius));

  Pose2D pose = traj.start;
  for (long k = 0; k < steps; ++k) {
    const double t = detail::quantize9(k * dt);
    // commanded curvature of the piece under the vehicle
    double s = traj.speed * k * dt;
    double curvature = 0.0;
    for (const auto& p : traj.pieces) {
      curvature = p.curvature;
      if (s < p.length) break;
      s -= p.length;
    }
    const double v = traj.speed;
    const double omega = v * curvature;
    const Pose2D truth = pose;
    log.truth.push_back({t, truth});
    const auto step = static_cast<std::uint64_t>(k);
    log.odometry.push_back(
        {detail::quantize9(v + noise.odo_bias_v + noise.odo_v_std * rng_v.normal(step, 0)),
         detail::quantize9(omega + noise.odo_bias_omega + noise.odo_omega_std * rng_w.normal(step, 0)),
         t});

    if (k % scan_every == 0) {
      ScanFrame frame_k{t, {}};
      frame_k.points.reserve(static_cast<std::size_t>(candidates));
      const auto scan_id = static_cast<std::uint64_t>(k / scan_every);
      for (std::uint64_t j = 0; j < candidates; ++j) {
        if (noise.dropout_rate > 0.0 && rng_drop.uniform(scan_id, j) < noise.dropout_rate) continue;
        const auto [u1, u2] = rng_geo.uniform2(scan_id, j);
        const float bx = static_cast<float>(traj.scan_radius * std::sqrt(u1) *
                                            std::cos(2.0 * std::numbers::pi * u2));
        const float by = static_cast<float>(traj.scan_radius * std::sqrt(u1) *
                                            std::sin(2.0 * std::numbers::pi * u2));
        const Eigen::Vector2d w = transform_point(truth, bx, by);
        bool occluded = false;
        for (const auto& o : noise.occlusion_patches) occluded = occluded || o.contains(w.x(), w.y());
        if (occluded) continue;
        double r = world.reflectivity(w.x(), w.y());
        if (noise.reflectivity_std > 0.0) r += noise.reflectivity_std * rng_refl.normal(scan_id, j);
        frame_k.points.push_back({bx, by, aerloc::sim::detail::to_u8(r)});
      }
      log.scans.push_back(std::move(frame_k));
    }
    pose = propagate(pose, v, omega, dt);
  }

  const Pose2D& p0 = log.truth.front().pose;
  const Geodetic g = global_to_geodetic(frame, p0.x + noise.gps_offset_x, p0.y + noise.gps_offset_y);
  log.gps = {detail::quantize9(g.lat), detail::quantize9(g.lon), p0.theta};
  return log;
}

// ---------------------------------------------------------------------------
// RunLog text format

inline void write_runlog(const RunLog& log, std::ostream& out) {
  char buf[128];
  std::snprintf(buf, sizeof buf, "GPS %.9g %.9g %.9g\n", log.gps.lat, log.gps.lon, log.gps.heading);
  out << buf;
  std::size_t scan = 0;
  for (std::size_t k = 0; k < log.truth.size(); ++k) {
    const auto& tr = log.truth[k];
    std::snprintf(buf, sizeof buf, "TRUTH %.9g %.9g %.9g %.9g\n", tr.t, tr.pose.x, tr.pose.y,
                  tr.pose.theta);
    out << buf;
    if (k < log.odometry.size()) {
      const auto& o = log.odometry[k];
      std::snprintf(buf, sizeof buf, "ODO %.9g %.9g %.9g\n", o.timestamp, o.v, o.omega);
      out << buf;
    }
    while (scan < log.scans.size() && log.scans[scan].t <= tr.t) {
      const auto& f = log.scans[scan++];
      std::snprintf(buf, sizeof buf, "SCAN %.9g %zu\n", f.t, f.points.size());
      out << buf;
      for (const auto& p : f.points) {
        std::snprintf(buf, sizeof buf, "%.9g %.9g %u\n", static_cast<double>(p.x),
                      static_cast<double>(p.y), static_cast<unsigned>(p.reflectivity));
        out << buf;
      }
    }
  }
}

inline void save_runlog(const RunLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  write_runlog(log, out);
}

namespace detail {

class LineCursor {
 public:
  explicit LineCursor(std::string_view text) : text_(text) {}

  bool next(std::string_view& line) {
    while (pos_ < text_.size()) {
      const auto end = text_.find('\n', pos_);
      const auto stop = end == std::string_view::npos ? text_.size() : end;
      line = text_.substr(pos_, stop - pos_);
      pos_ = stop + 1;
      ++line_no_;
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!line.empty()) return true;
    }
    return false;
  }
  std::size_t line_no() const { return line_no_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

template <typename T>
T take(std::string_view& fields, std::size_t line_no) {
  while (!fields.empty() && fields.front() == ' ') fields.remove_prefix(1);
  T value{};
  const auto [ptr, ec] = std::from_chars(fields.data(), fields.data() + fields.size(), value);
  if (ec != std::errc{}) {
    throw std::runtime_error("runlog line " + std::to_string(line_no) + ": bad numeric field");
  }
  fields.remove_prefix(static_cast<std::size_t>(ptr - fields.data()));
  return value;
}

}  // namespace detail

inline RunLog parse_runlog(std::string_view text) {
  RunLog log;
  detail::LineCursor cur(text);
  std::string_view line;
  bool have_gps = false;
  while (cur.next(line)) {
    const auto sp = line.find(' ');
    const std::string_view tag = line.substr(0, sp);
    std::string_view rest = sp == std::string_view::npos ? std::string_view{} : line.substr(sp + 1);
    const auto n = cur.line_no();
    if (tag == "GPS") {
      log.gps.lat = detail::take<double>(rest, n);
      log.gps.lon = detail::take<double>(rest, n);
      log.gps.heading = detail::take<double>(rest, n);
      have_gps = true;
    } else if (tag == "TRUTH") {
      TimedPose tp;
      tp.t = detail::take<double>(rest, n);
      tp.pose.x = detail::take<double>(rest, n);
      tp.pose.y = detail::take<double>(rest, n);
      tp.pose.theta = detail::take<double>(rest, n);
      log.truth.push_back(tp);
    } else if (tag == "ODO") {
      OdometryMeasurement o;
      o.timestamp = detail::take<double>(rest, n);
      o.v = detail::take<double>(rest, n);
      o.omega = detail::take<double>(rest, n);
      log.odometry.push_back(o);
    } else if (tag == "SCAN") {
      ScanFrame f;
      f.t = detail::take<double>(rest, n);
      const auto count = detail::take<std::size_t>(rest, n);
      f.points.reserve(count);
      for (std::size_t i = 0; i < count; ++i) {
        if (!cur.next(line)) throw std::runtime_error("runlog: truncated SCAN block");
        std::string_view fields = line;
        ScanPoint p;
        p.x = detail::take<float>(fields, cur.line_no());
        p.y = detail::take<float>(fields, cur.line_no());
        const auto r = detail::take<unsigned>(fields, cur.line_no());
        if (r > 255) throw std::runtime_error("runlog: reflectivity out of range");
        p.reflectivity = static_cast<std::uint8_t>(r);
        f.points.push_back(p);
      }
      log.scans.push_back(std::move(f));
    } else {
      throw std::runtime_error("runlog line " + std::to_string(n) + ": unknown record tag");
    }
  }
  if (!have_gps) throw std::runtime_error("runlog: missing GPS record");
  if (log.truth.empty() || log.odometry.size() != log.truth.size()) {
    throw std::runtime_error("runlog: TRUTH and ODO streams must be non-empty and equally long");
  }
  return log;
}

inline RunLog load_runlog(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_runlog(text);
}

// ---------------------------------------------------------------------------
// desk-mcity scenario

/// ~500 m drive: straight, 90 degree turn, straight into a roundabout, one
/// lap, exit, second 90 degree turn and a short run-out. Crosswalks and a
/// cross street give longitudinal structure.
struct Scenario {
  GlobalFrame frame;
  SimWorld world;
  TrajectorySpec trajectory;
  SensorNoiseSpec noise;
};

inline Scenario desk_mcity(std::uint64_t seed) {
  constexpr double kHalfPi = 0.5 * std::numbers::pi;
  std::vector<PathPiece> drive = {
      {{}, 170.0, 0.0},                             // east
      {{}, 20.0 * kHalfPi, 1.0 / 20.0},             // left turn
      {{}, 110.0, 0.0},                             // north
      {{}, 15.0 * 2.0 * std::numbers::pi, 1.0 / 15.0},  // roundabout lap
      {{}, 20.0, 0.0},                              // exit
      {{}, 20.0 * kHalfPi, 1.0 / 20.0},             // left turn
      {{}, 60.0, 0.0},                              // west run-out
  };
  Pose2D cursor{};
  for (auto& p : drive) {
    p.start = cursor;
    cursor = p.end();
  }
  std::vector<Road> roads;
  const std::vector<std::vector<double>> crossings = {{30.0, 83.0}, {}, {50.0, 100.0}, {}, {}, {}, {25.0}};
  for (std::size_t i = 0; i < drive.size(); ++i) roads.push_back({drive[i], 7.0, crossings[i]});
  roads.push_back({{{90.0, -40.0, kHalfPi}, 80.0, 0.0}, 7.0, {}});                // cross street
  roads.push_back({{{160.0, 130.0, std::numbers::pi}, 40.0, 0.0}, 7.0, {8.0}});  // roundabout west arm
  std::vector<Island> islands = {{175.0, 130.0, 11.2}};

  Scenario sc{GlobalFrame(42.2995, -83.6990), SimWorld(seed, std::move(roads), std::move(islands)),
              TrajectorySpec{}, SensorNoiseSpec{}};
  sc.trajectory.start = {0.0, 0.0, 0.0};
  sc.trajectory.pieces = drive;
  sc.noise.occlusion_patches = {{187.5, 60.0, 192.5, 72.0, 20}};
  return sc;
}

inline Scenario make_scenario(const std::string& name, std::uint64_t seed) {
  if (name == "desk-mcity") return desk_mcity(seed);
  throw std::invalid_argument("unknown scenario `" + name + "`");
}

}  // namespace aerloc::sim
