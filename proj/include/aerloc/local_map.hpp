#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <tuple>
#include <utility>
#include <vector>

#include "aerloc/patch.hpp"
#include "aerloc/pose.hpp"

namespace aerloc {

struct ReflectivityPoint {
  double x = 0.0;
  double y = 0.0;
  std::uint8_t reflectivity = 0;
  double timestamp = 0.0;
};

/// Rolling square reflectivity grid, axis-aligned to the frame its points are
/// expressed in. Cells live on the global lattice floor(x / res), so content
/// stays bound to world coordinates when the window scrolls.
class LocalGridMap {
 public:
  struct Cell {
    std::uint32_t sum = 0;
    std::uint32_t count = 0;
    friend bool operator==(const Cell&, const Cell&) = default;
  };

  LocalGridMap(double center_x, double center_y, double side_m, double cell_resolution)
      : res_(cell_resolution) {
    if (!(cell_resolution > 0.0) || !(side_m > 0.0)) {
      throw std::invalid_argument("local map side and resolution must be positive");
    }
    const double cells = side_m / cell_resolution;
    n_ = static_cast<int>(std::lround(cells));
    if (n_ <= 0 || std::abs(cells - n_) > 1e-6) {
      throw std::invalid_argument("local map side must be a whole number of cells");
    }
    cells_.assign(static_cast<std::size_t>(n_) * n_, Cell{});
    std::tie(ox_, oy_) = origin_for(center_x, center_y);
  }

  int cells_per_side() const { return n_; }
  double cell_resolution() const { return res_; }
  double side_m() const { return n_ * res_; }
  std::int64_t origin_gx() const { return ox_; }
  std::int64_t origin_gy() const { return oy_; }

  /// Geometric centre of the window.
  Pose2D center() const { return {(ox_ + n_ / 2.0) * res_, (oy_ + n_ / 2.0) * res_, 0.0}; }

  /// Cell by grid index; ix grows east, iy grows north.
  const Cell& at(int ix, int iy) const { return cells_[static_cast<std::size_t>(iy) * n_ + ix]; }

  void insert(const ReflectivityPoint& p) {
    const auto ix = static_cast<std::int64_t>(std::floor(p.x / res_)) - ox_;
    const auto iy = static_cast<std::int64_t>(std::floor(p.y / res_)) - oy_;
    if (ix < 0 || iy < 0 || ix >= n_ || iy >= n_) return;
    Cell& c = cells_[static_cast<std::size_t>(iy) * n_ + ix];
    c.sum += p.reflectivity;
    ++c.count;
  }

  void insert_points(std::span<const ReflectivityPoint> points) {
    for (const auto& p : points) insert(p);
  }

  /// Scrolls the window so it is centred (to the nearest cell) on the new
  /// position. Retained cells keep their world binding; exposed cells are empty.
  void recenter(double center_x, double center_y) {
    const auto [nx, ny] = origin_for(center_x, center_y);
    const auto dx = nx - ox_;
    const auto dy = ny - oy_;
    if (dx == 0 && dy == 0) return;
    std::vector<Cell> moved(cells_.size());
    for (int iy = 0; iy < n_; ++iy) {
      const auto src_y = iy + dy;
      if (src_y < 0 || src_y >= n_) continue;
      for (int ix = 0; ix < n_; ++ix) {
        const auto src_x = ix + dx;
        if (src_x < 0 || src_x >= n_) continue;
        moved[static_cast<std::size_t>(iy) * n_ + ix] =
            cells_[static_cast<std::size_t>(src_y) * n_ + src_x];
      }
    }
    cells_.swap(moved);
    ox_ = nx;
    oy_ = ny;
  }

  /// Rounded per-cell means, row 0 = north edge; cells without returns invalid.
  Patch as_match_image() const {
    Patch p(n_, n_);
    for (int iy = 0; iy < n_; ++iy) {
      const int row = n_ - 1 - iy;
      for (int ix = 0; ix < n_; ++ix) {
        const Cell& c = at(ix, iy);
        if (c.count == 0) continue;
        const auto k = p.index(row, ix);
        const std::uint64_t sum = c.sum;
        p.values[k] = static_cast<std::uint8_t>((2 * sum + c.count) / (2ull * c.count));
        p.valid[k] = 1;
      }
    }
    return p;
  }

  std::size_t observed_cells() const {
    std::size_t n = 0;
    for (const auto& c : cells_) n += c.count > 0;
    return n;
  }

  friend bool operator==(const LocalGridMap&, const LocalGridMap&) = default;

 private:
  std::pair<std::int64_t, std::int64_t> origin_for(double cx, double cy) const {
    return {static_cast<std::int64_t>(std::floor(cx / res_)) - n_ / 2,
            static_cast<std::int64_t>(std::floor(cy / res_)) - n_ / 2};
  }

  double res_ = 0.0;
  int n_ = 0;
  std::int64_t ox_ = 0;
  std::int64_t oy_ = 0;
  std::vector<Cell> cells_;
};

}  // namespace aerloc
