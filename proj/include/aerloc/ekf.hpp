#pragma once

// Planar-pose EKF: unicycle prediction from odometry, direct pose-fix
// updates from registration, 3-sigma search window scheduling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

#include "aerloc/grid_map.hpp"
#include "aerloc/pose.hpp"
#include "aerloc/registration.hpp"

namespace aerloc {

struct StateEstimate {
  Pose2D mu;
  Mat3 sigma = Mat3::Identity();
  double timestamp = 0.0;
};

struct OdometryMeasurement {
  double v = 0.0;      // body-forward speed, m/s
  double omega = 0.0;  // yaw rate, rad/s
  double timestamp = 0.0;
};

struct FilterConfig {
  Mat3 q_base = Vec3(0.002, 0.002, 1e-5).asDiagonal();  // per second
  double gating_threshold = 11.34;                    // chi-square, 3 dof, ~99%
  Mat3 init_sigma = Vec3(1.0, 1.0, 4e-4).asDiagonal();
  int min_updates_settled = 3;
};

inline Pose2D propagate(const Pose2D& p, double v, double omega, double dt) {
  return {p.x + v * dt * std::cos(p.theta), p.y + v * dt * std::sin(p.theta),
          wrap_angle(p.theta + omega * dt)};
}

/// Jacobian of propagate() with respect to the pose, at p.
inline Mat3 motion_jacobian(const Pose2D& p, double v, double dt) {
  Mat3 f = Mat3::Identity();
  f(0, 2) = -v * dt * std::sin(p.theta);
  f(1, 2) = v * dt * std::cos(p.theta);
  return f;
}

inline StateEstimate predict(const StateEstimate& s, const OdometryMeasurement& odo, double dt,
                             const FilterConfig& cfg) {
  if (!(dt >= 0.0)) throw std::invalid_argument("predict: dt must be non-negative");
  if (!std::isfinite(odo.v) || !std::isfinite(odo.omega)) {
    throw std::invalid_argument("predict: non-finite odometry");
  }
  const Mat3 f = motion_jacobian(s.mu, odo.v, dt);
  StateEstimate out;
  out.mu = propagate(s.mu, odo.v, odo.omega, dt);
  out.sigma = f * s.sigma * f.transpose() + cfg.q_base * dt;
  out.sigma = 0.5 * (out.sigma + out.sigma.transpose()).eval();
  out.timestamp = s.timestamp + dt;
  return out;
}

enum class UpdateStatus { kAccepted, kGated, kSingular };

struct UpdateOutcome {
  StateEstimate state;
  UpdateStatus status = UpdateStatus::kAccepted;
  Vec3 innovation = Vec3::Zero();
  double mahalanobis2 = 0.0;
};

/// Innovation z - mu with the heading component wrapped.
inline Vec3 pose_innovation(const Pose2D& z, const Pose2D& mu) {
  return {z.x - mu.x, z.y - mu.y, wrap_angle(z.theta - mu.theta)};
}

/// Update with a direct pose measurement (H = I) using the Joseph-form
/// covariance. Gated and singular cases return the prior state unchanged.
inline UpdateOutcome update(const StateEstimate& prior, const Pose2D& z, const Mat3& r,
                            const FilterConfig& cfg) {
  UpdateOutcome out{prior, UpdateStatus::kAccepted, pose_innovation(z, prior.mu), 0.0};
  const Mat3 s = prior.sigma + r;
  Eigen::FullPivLU<Mat3> lu(s);
  if (!lu.isInvertible() || !std::isfinite(s.norm())) {
    out.status = UpdateStatus::kSingular;
    return out;
  }
  const Mat3 s_inv = lu.inverse();
  out.mahalanobis2 = out.innovation.dot(s_inv * out.innovation);
  if (!(out.mahalanobis2 < cfg.gating_threshold)) {
    out.status = UpdateStatus::kGated;
    return out;
  }
  const Mat3 k = prior.sigma * s_inv;
  const Vec3 mu = prior.mu.vec() + k * out.innovation;
  const Mat3 ikh = Mat3::Identity() - k;
  Mat3 sigma = ikh * prior.sigma * ikh.transpose() + k * r * k.transpose();
  out.state.mu = {mu(0), mu(1), wrap_angle(mu(2))};
  out.state.sigma = 0.5 * (sigma + sigma.transpose());
  return out;
}

struct WindowLimits {
  double x_step = 0.08;
  double y_step = 0.08;
  double theta_step = 0.5 * std::numbers::pi / 180.0;
  double min_xy = 0.08;  // one cell
  double max_xy = 3.0;
  double max_theta = 3.0 * std::numbers::pi / 180.0;
  // When > 0, wide windows use a step that is a multiple of the base step so
  // each axis has at most this many nodes.
  int max_nodes_per_axis = 0;
};

namespace detail {
inline double coarsened_step(double range, double step, int max_nodes) {
  if (max_nodes < 3) return step;
  const double half_nodes = (max_nodes - 1) / 2;
  if (std::floor(range / step + 1e-9) <= half_nodes) return step;
  return step * std::ceil(range / (step * half_nodes) - 1e-9);
}
}  // namespace detail

/// 3-sigma window around the posterior, clamped per axis.
inline SearchSpec search_window(const StateEstimate& s, const WindowLimits& lim) {
  SearchSpec spec;
  spec.x_range = std::clamp(3.0 * std::sqrt(std::max(0.0, s.sigma(0, 0))), lim.min_xy, lim.max_xy);
  spec.y_range = std::clamp(3.0 * std::sqrt(std::max(0.0, s.sigma(1, 1))), lim.min_xy, lim.max_xy);
  spec.theta_range =
      std::clamp(3.0 * std::sqrt(std::max(0.0, s.sigma(2, 2))), lim.theta_step, lim.max_theta);
  spec.x_step = detail::coarsened_step(spec.x_range, lim.x_step, lim.max_nodes_per_axis);
  spec.y_step = detail::coarsened_step(spec.y_range, lim.y_step, lim.max_nodes_per_axis);
  spec.theta_step = detail::coarsened_step(spec.theta_range, lim.theta_step, lim.max_nodes_per_axis);
  return spec;
}

struct GpsFix {
  double lat = 0.0;
  double lon = 0.0;
  double heading = 0.0;  // radians, counter-clockwise from east
};

inline StateEstimate initialize(const GpsFix& fix, const GlobalFrame& frame,
                                const FilterConfig& cfg, double timestamp = 0.0) {
  if (!valid_geodetic(fix.lat, fix.lon) || !std::isfinite(fix.heading)) {
    throw std::invalid_argument("initialize: invalid GPS fix");
  }
  const GlobalXY xy = geodetic_to_global(frame, fix.lat, fix.lon);
  return {{xy.x, xy.y, wrap_angle(fix.heading)}, cfg.init_sigma, timestamp};
}

/// Single-owner filter state machine: tracks the estimate, rejects fixes older
/// than the last applied update and counts every outcome.
class PoseFilter {
 public:
  PoseFilter(StateEstimate initial, FilterConfig cfg)
      : state_(std::move(initial)), cfg_(std::move(cfg)), last_update_time_(state_.timestamp) {}

  const StateEstimate& state() const { return state_; }
  const FilterConfig& config() const { return cfg_; }

  void predict_to(const OdometryMeasurement& odo, double t) {
    state_ = predict(state_, odo, t - state_.timestamp, cfg_);
    state_.timestamp = t;
  }

  enum class FixStatus { kAccepted, kGated, kSingular, kStale };

  struct FixOutcome {
    FixStatus status;
    Vec3 innovation = Vec3::Zero();
  };

  FixOutcome apply_fix(const Pose2D& z, const Mat3& r, double measured_at) {
    if (measured_at < last_update_time_) {
      ++stale_;
      return {FixStatus::kStale};
    }
    const UpdateOutcome u = update(state_, z, r, cfg_);
    switch (u.status) {
      case UpdateStatus::kAccepted:
        state_ = u.state;
        last_update_time_ = measured_at;
        ++accepted_;
        return {FixStatus::kAccepted, u.innovation};
      case UpdateStatus::kGated:
        ++gated_;
        return {FixStatus::kGated, u.innovation};
      case UpdateStatus::kSingular:
        break;
    }
    ++singular_;
    return {FixStatus::kSingular, u.innovation};
  }

  bool settled() const { return accepted_ >= static_cast<std::size_t>(cfg_.min_updates_settled); }
  std::size_t accepted() const { return accepted_; }
  std::size_t gated() const { return gated_; }
  std::size_t singular() const { return singular_; }
  std::size_t stale() const { return stale_; }

 private:
  StateEstimate state_;
  FilterConfig cfg_;
  double last_update_time_;
  std::size_t accepted_ = 0;
  std::size_t gated_ = 0;
  std::size_t singular_ = 0;
  std::size_t stale_ = 0;
};

}  // namespace aerloc
