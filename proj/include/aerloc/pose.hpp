#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Core>

namespace aerloc {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, kTwoPi);
  if (w <= -std::numbers::pi) {
    w += kTwoPi;
  } else if (w > std::numbers::pi) {
    w -= kTwoPi;
  }
  return w;
}

/// Planar pose in the linearized global frame: x east, y north, theta
/// counter-clockwise from +x.
struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec3 vec() const { return {x, y, theta}; }
  static Pose2D from_vec(const Vec3& v) { return {v(0), v(1), v(2)}; }

  friend bool operator==(const Pose2D&, const Pose2D&) = default;
};

// SE(2) composition: a ⊕ b, with b expressed in a's frame.
inline Pose2D compose(const Pose2D& a, const Pose2D& b) {
  const double c = std::cos(a.theta);
  const double s = std::sin(a.theta);
  return {a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y,
          wrap_angle(a.theta + b.theta)};
}

inline Pose2D inverse(const Pose2D& p) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return {-c * p.x - s * p.y, s * p.x - c * p.y, wrap_angle(-p.theta)};
}

/// Maps a body-frame point through the pose into the parent frame.
inline Eigen::Vector2d transform_point(const Pose2D& p, double bx, double by) {
  const double c = std::cos(p.theta);
  const double s = std::sin(p.theta);
  return {p.x + c * bx - s * by, p.y + s * bx + c * by};
}

}  // namespace aerloc
