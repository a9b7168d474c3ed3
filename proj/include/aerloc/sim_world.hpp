#pragma once

// Synthetic ground-reflectivity world built from parametric road features,
// and rendering of aerial-style / lidar-style prior maps from it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "aerloc/counter_rng.hpp"
#include "aerloc/grid_map.hpp"
#include "aerloc/pose.hpp"

namespace aerloc::sim {

enum class SurfaceClass : std::uint8_t { kGrass, kAsphalt, kMarking, kCrosswalk, kIsland, kLot };
inline constexpr std::size_t kSurfaceClassCount = 6;

enum class Modality { kAerial, kLidar };

inline std::string to_string(Modality m) { return m == Modality::kAerial ? "aerial" : "lidar"; }

inline Modality parse_modality(const std::string& s) {
  if (s == "aerial") return Modality::kAerial;
  if (s == "lidar") return Modality::kLidar;
  throw std::invalid_argument("unknown modality `" + s + "` (expected aerial|lidar)");
}

/// Constant-curvature path piece: a straight when curvature == 0, otherwise
/// a circular arc (positive curvature turns left).
struct PathPiece {
  Pose2D start;
  double length = 0.0;
  double curvature = 0.0;

  Pose2D pose_at(double s) const {
    if (curvature == 0.0) {
      return {start.x + s * std::cos(start.theta), start.y + s * std::sin(start.theta), start.theta};
    }
    const double th = start.theta + curvature * s;
    return {start.x + (std::sin(th) - std::sin(start.theta)) / curvature,
            start.y - (std::cos(th) - std::cos(start.theta)) / curvature, wrap_angle(th)};
  }
  Pose2D end() const { return pose_at(length); }

  /// Along-track s and left-positive lateral offset d of a point, when the
  /// point projects onto the piece.
  bool project(double px, double py, double& s, double& d) const {
    if (curvature == 0.0) {
      const double c = std::cos(start.theta), sn = std::sin(start.theta);
      const double rx = px - start.x, ry = py - start.y;
      s = rx * c + ry * sn;
      d = -rx * sn + ry * c;
      return s >= 0.0 && s <= length;
    }
    const double radius = 1.0 / std::abs(curvature);
    const double cx = start.x - std::sin(start.theta) / curvature;
    const double cy = start.y + std::cos(start.theta) / curvature;
    const double rho = std::hypot(px - cx, py - cy);
    const double a = std::atan2(py - cy, px - cx);
    const double a0 = std::atan2(start.y - cy, start.x - cx);
    constexpr double kTwoPi = 2.0 * std::numbers::pi;
    double da = curvature > 0.0 ? a - a0 : a0 - a;
    da = std::fmod(da, kTwoPi);
    if (da < 0.0) da += kTwoPi;
    s = radius * da;
    d = curvature > 0.0 ? radius - rho : rho - radius;
    return s <= length;
  }
};

struct Road {
  PathPiece piece;
  double width = 7.0;
  std::vector<double> crosswalks;  // along-track start of each 3 m crosswalk
};

struct Island {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 0.0;
};

struct Lot {
  double x0, y0, x1, y1;
  double base;
};

/// Per-class affine appearance remap plus additive texture; applied to the
/// aerial rendering only.
struct ModalityGap {
  struct Affine {
    double gain = 1.0;
    double offset = 0.0;
  };
  std::array<Affine, kSurfaceClassCount> per_class{};
  double texture_amplitude = 0.0;

  static ModalityGap identity() { return {}; }

  bool is_identity() const {
    return texture_amplitude == 0.0 &&
           std::all_of(per_class.begin(), per_class.end(),
                       [](const Affine& a) { return a.gain == 1.0 && a.offset == 0.0; });
  }

  /// Aerial imagery shows grass and lots as mid-gray, roughly preserves paint,
  /// and inverts the roundabout island.
  static ModalityGap desk_default() {
    ModalityGap g;
    g.per_class[static_cast<int>(SurfaceClass::kGrass)] = {0.5, 70.0};
    g.per_class[static_cast<int>(SurfaceClass::kAsphalt)] = {0.8, 30.0};
    g.per_class[static_cast<int>(SurfaceClass::kMarking)] = {0.9, 25.0};
    g.per_class[static_cast<int>(SurfaceClass::kCrosswalk)] = {0.9, 20.0};
    g.per_class[static_cast<int>(SurfaceClass::kIsland)] = {-0.6, 190.0};
    g.per_class[static_cast<int>(SurfaceClass::kLot)] = {0.7, 40.0};
    g.texture_amplitude = 12.0;
    return g;
  }
};

struct OcclusionPatch {
  double x0, y0, x1, y1;
  std::uint8_t fill = 0;

  bool contains(double x, double y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct SurfaceSample {
  SurfaceClass cls = SurfaceClass::kGrass;
  double value = 0.0;  // ground-truth reflectivity before rounding
};

namespace detail {

inline double lattice_value(std::uint64_t seed, std::uint64_t layer, std::int64_t ix,
                            std::int64_t iy) {
  std::uint64_t h = splitmix64(seed ^ (layer * 0x9E3779B97F4A7C15ull));
  h = splitmix64(h ^ static_cast<std::uint64_t>(ix) * 0xD1B54A32D192ED03ull);
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy) * 0x8CB92BA72F3D8DD7ull);
  return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;  // [-1, 1)
}

/// Smooth value noise in [-1, 1] with feature size `scale` metres.
inline double value_noise(std::uint64_t seed, std::uint64_t layer, double x, double y,
                          double scale) {
  const double gx = x / scale, gy = y / scale;
  const double fx0 = std::floor(gx), fy0 = std::floor(gy);
  const auto ix = static_cast<std::int64_t>(fx0), iy = static_cast<std::int64_t>(fy0);
  double tx = gx - fx0, ty = gy - fy0;
  tx = tx * tx * (3.0 - 2.0 * tx);
  ty = ty * ty * (3.0 - 2.0 * ty);
  const double v00 = lattice_value(seed, layer, ix, iy);
  const double v10 = lattice_value(seed, layer, ix + 1, iy);
  const double v01 = lattice_value(seed, layer, ix, iy + 1);
  const double v11 = lattice_value(seed, layer, ix + 1, iy + 1);
  return (v00 * (1 - tx) + v10 * tx) * (1 - ty) + (v01 * (1 - tx) + v11 * tx) * ty;
}

inline std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

}  // namespace detail

/// Deterministic world. Reflectivity is defined on a native lattice: every
/// point takes the value sampled at the centre of its native cell, so a grid
/// at native resolution sees piecewise-constant cells.
class SimWorld {
 public:
  SimWorld(std::uint64_t seed, std::vector<Road> roads, std::vector<Island> islands,
           double native_resolution = 0.08, double margin = 30.0)
      : seed_(seed), roads_(std::move(roads)), islands_(std::move(islands)),
        native_(native_resolution) {
    if (!(native_resolution > 0.0)) throw std::invalid_argument("native resolution must be > 0");
    xmin_ = ymin_ = std::numeric_limits<double>::infinity();
    xmax_ = ymax_ = -std::numeric_limits<double>::infinity();
    for (const auto& r : roads_) {
      for (int k = 0; k <= 64; ++k) {
        const Pose2D p = r.piece.pose_at(r.piece.length * k / 64.0);
        xmin_ = std::min(xmin_, p.x);
        xmax_ = std::max(xmax_, p.x);
        ymin_ = std::min(ymin_, p.y);
        ymax_ = std::max(ymax_, p.y);
      }
    }
    xmin_ -= margin;
    ymin_ -= margin;
    xmax_ += margin;
    ymax_ += margin;
    // Parking lots / gravel pads scattered over the background.
    const CounterRng rng(seed_, 101);
    const int n_lots = static_cast<int>((xmax_ - xmin_) * (ymax_ - ymin_) / 900.0);
    for (int k = 0; k < n_lots; ++k) {
      const auto [u0, u1] = rng.uniform2(static_cast<std::uint64_t>(k), 0);
      const auto [u2, u3] = rng.uniform2(static_cast<std::uint64_t>(k), 1);
      const auto [u4, u5] = rng.uniform2(static_cast<std::uint64_t>(k), 2);
      (void)u5;
      const double w = 3.0 + 9.0 * u2, h = 3.0 + 9.0 * u3;
      const double x0 = xmin_ + u0 * (xmax_ - xmin_ - w), y0 = ymin_ + u1 * (ymax_ - ymin_ - h);
      lots_.push_back({x0, y0, x0 + w, y0 + h, 80.0 + 80.0 * u4});
    }
  }

  std::uint64_t seed() const { return seed_; }
  double native_resolution() const { return native_; }
  const std::vector<Road>& roads() const { return roads_; }
  double xmin() const { return xmin_; }
  double xmax() const { return xmax_; }
  double ymin() const { return ymin_; }
  double ymax() const { return ymax_; }

  /// Surface class and continuous ground-truth reflectivity at an exact point.
  SurfaceSample sample_exact(double x, double y) const {
    using detail::value_noise;
    for (const auto& is : islands_) {
      if (std::hypot(x - is.cx, y - is.cy) < is.radius) {
        return {SurfaceClass::kIsland, 120.0 + 35.0 * value_noise(seed_, 5, x, y, 1.2) +
                                           10.0 * value_noise(seed_, 6, x, y, 0.3)};
      }
    }
    const Road* best = nullptr;
    double best_s = 0.0, best_d = std::numeric_limits<double>::infinity();
    for (const auto& r : roads_) {
      double s, d;
      if (r.piece.project(x, y, s, d) && std::abs(d) <= 0.5 * r.width &&
          std::abs(d) < std::abs(best_d)) {
        best = &r;
        best_s = s;
        best_d = d;
      }
    }
    if (best != nullptr) {
      const double half = 0.5 * best->width;
      const double ad = std::abs(best_d);
      for (double c : best->crosswalks) {
        if (best_s >= c && best_s < c + 3.0 && ad < half - 0.5) {
          if (static_cast<int>(std::floor((best_d + half) / 0.5)) % 2 == 0) {
            return {SurfaceClass::kCrosswalk, 225.0 + 10.0 * value_noise(seed_, 7, x, y, 0.4)};
          }
          break;
        }
      }
      const bool edge_line = ad >= half - 0.45 && ad < half - 0.3;
      const bool centre_dash = ad < 0.075 && std::fmod(best_s, 9.0) < 3.0;
      if (edge_line || centre_dash) {
        return {SurfaceClass::kMarking, 210.0 + 12.0 * value_noise(seed_, 8, x, y, 0.5)};
      }
      return {SurfaceClass::kAsphalt, 62.0 + 14.0 * value_noise(seed_, 9, x, y, 1.5) +
                                          7.0 * value_noise(seed_, 10, x, y, 0.25)};
    }
    for (const auto& l : lots_) {
      if (x >= l.x0 && x < l.x1 && y >= l.y0 && y < l.y1) {
        return {SurfaceClass::kLot, l.base + 12.0 * value_noise(seed_, 11, x, y, 0.6)};
      }
    }
    return {SurfaceClass::kGrass, 38.0 + 22.0 * value_noise(seed_, 12, x, y, 0.8) +
                                      10.0 * value_noise(seed_, 13, x, y, 0.2)};
  }

  std::int64_t native_cell(double w) const { return static_cast<std::int64_t>(std::floor(w / native_)); }

  /// Sample at the centre of a native cell.
  SurfaceSample sample_native(std::int64_t gx, std::int64_t gy) const {
    return sample_exact((gx + 0.5) * native_, (gy + 0.5) * native_);
  }

  /// Ground-truth reflectivity field: value of the native cell holding (x, y).
  double reflectivity(double x, double y) const {
    return sample_native(native_cell(x), native_cell(y)).value;
  }

  /// Aerial-modality value of a native cell before rounding.
  double aerial_value(std::int64_t gx, std::int64_t gy, const ModalityGap& gap) const {
    const SurfaceSample s = sample_native(gx, gy);
    const auto& a = gap.per_class[static_cast<std::size_t>(s.cls)];
    double v = a.gain * s.value + a.offset;
    if (gap.texture_amplitude != 0.0) {
      const double x = (gx + 0.5) * native_, y = (gy + 0.5) * native_;
      v += gap.texture_amplitude * (0.7 * detail::value_noise(seed_ ^ 0xAE81A1ull, 20, x, y, 1.0) +
                                    0.3 * detail::value_noise(seed_ ^ 0xAE81A1ull, 21, x, y, 0.25));
    }
    return v;
  }

 private:
  std::uint64_t seed_;
  std::vector<Road> roads_;
  std::vector<Island> islands_;
  std::vector<Lot> lots_;
  double native_;
  double xmin_, xmax_, ymin_, ymax_;
};

/// Renders the world into 64 m tiles at `resolution`, which must be an
/// integer multiple of the native resolution; coarse cells are the rounded
/// mean of their native cells.
inline PriorMap render_prior(const SimWorld& world, Modality modality, double resolution,
                             const ModalityGap& gap, const std::vector<OcclusionPatch>& occlusions,
                             const GlobalFrame& frame, double tile_side_m = 64.0) {
  if (!(resolution > 0.0)) throw std::invalid_argument("render_prior: resolution must be > 0");
  const double native = world.native_resolution();
  const int k = static_cast<int>(std::lround(resolution / native));
  if (k < 1 || std::abs(k * native - resolution) > 1e-9) {
    throw std::invalid_argument("render_prior: resolution must be a multiple of the native resolution");
  }
  const int side = static_cast<int>(std::lround(tile_side_m / resolution));
  if (std::abs(side * resolution - tile_side_m) > 1e-6) {
    throw std::invalid_argument("render_prior: tile edge is not a whole number of cells");
  }
  PriorMap map(frame.origin_lat, frame.origin_lon, resolution, side);
  const auto ti0 = static_cast<int>(std::floor(world.xmin() / tile_side_m));
  const auto ti1 = static_cast<int>(std::floor(world.xmax() / tile_side_m));
  const auto tj0 = static_cast<int>(std::floor(world.ymin() / tile_side_m));
  const auto tj1 = static_cast<int>(std::floor(world.ymax() / tile_side_m));
  std::vector<double> native_row;
  for (int tj = tj0; tj <= tj1; ++tj) {
    for (int ti = ti0; ti <= ti1; ++ti) {
      Tile t{ti, tj, side, side, resolution,
             std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side, 0),
             std::vector<std::uint8_t>(static_cast<std::size_t>(side) * side, 1)};
      for (int row = 0; row < side; ++row) {
        const std::int64_t gy = static_cast<std::int64_t>(tj) * side + (side - 1 - row);
        for (int col = 0; col < side; ++col) {
          const std::int64_t gx = static_cast<std::int64_t>(ti) * side + col;
          std::uint32_t sum = 0;
          for (int a = 0; a < k; ++a) {
            for (int b = 0; b < k; ++b) {
              const std::int64_t nx = gx * k + b, ny = gy * k + a;
              double v;
              if (modality == Modality::kLidar) {
                v = world.sample_native(nx, ny).value;
              } else {
                v = world.aerial_value(nx, ny, gap);
                const double cx = (nx + 0.5) * native, cy = (ny + 0.5) * native;
                for (const auto& o : occlusions) {
                  if (o.contains(cx, cy)) v = o.fill;
                }
              }
              sum += detail::to_u8(v);
            }
          }
          const std::uint32_t n = static_cast<std::uint32_t>(k * k);
          t.cells[static_cast<std::size_t>(row) * side + col] =
              static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
        }
      }
      map.add_tile(std::move(t));
    }
  }
  return map;
}

}  // namespace aerloc::sim
