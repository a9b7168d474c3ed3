#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "aerloc/counter_rng.hpp"
#include "aerloc/local_map.hpp"

using namespace aerloc;

namespace {

std::vector<ReflectivityPoint> random_points(std::uint64_t seed, std::size_t n, double half_extent) {
  const CounterRng rng(seed, 21);
  std::vector<ReflectivityPoint> pts;
  for (std::size_t i = 0; i < n; ++i) {
    const auto [u, v] = rng.uniform2(i, 0);
    const auto [w, t] = rng.uniform2(i, 1);
    pts.push_back({(u - 0.5) * 2.0 * half_extent, (v - 0.5) * 2.0 * half_extent,
                   static_cast<std::uint8_t>(w * 256.0), t});
  }
  return pts;
}

// Membership of a point in a window with the given lattice origin and size.
bool inside(const ReflectivityPoint& p, std::int64_t ox, std::int64_t oy, int n, double res) {
  const auto ix = static_cast<std::int64_t>(std::floor(p.x / res)) - ox;
  const auto iy = static_cast<std::int64_t>(std::floor(p.y / res)) - oy;
  return ix >= 0 && iy >= 0 && ix < n && iy < n;
}

}  // namespace

TEST(LocalGridMap, GeometryFromSideAndResolution) {
  const LocalGridMap m(0.0, 0.0, 40.0, 0.08);
  EXPECT_EQ(m.cells_per_side(), 500);
  EXPECT_DOUBLE_EQ(m.side_m(), 40.0);
  EXPECT_EQ(m.origin_gx(), -250);
  EXPECT_THROW(LocalGridMap(0.0, 0.0, 1.0, 0.3), std::invalid_argument);
  EXPECT_THROW(LocalGridMap(0.0, 0.0, 1.0, 0.0), std::invalid_argument);
}

TEST(LocalGridMap, SinglePoint) {
  LocalGridMap m(0.0, 0.0, 4.0, 0.25);
  m.insert({0.3, -0.6, 200, 0.0});
  const auto& c = m.at(1 + 8, -3 + 8);
  EXPECT_EQ(c.sum, 200u);
  EXPECT_EQ(c.count, 1u);
  EXPECT_EQ(m.observed_cells(), 1u);
  const Patch img = m.as_match_image();
  EXPECT_EQ(img.valid_count(), 1u);
  const auto k = img.index(15 - 5, 9);
  EXPECT_EQ(img.valid[k], 1);
  EXPECT_EQ(img.values[k], 200);
}

TEST(LocalGridMap, TwoPointsAverage) {
  LocalGridMap m(0.0, 0.0, 4.0, 0.25);
  m.insert({0.01, 0.01, 100, 0.0});
  m.insert({0.24, 0.24, 200, 0.0});
  EXPECT_EQ(m.observed_cells(), 1u);
  const Patch img = m.as_match_image();
  EXPECT_EQ(img.values[img.index(7, 8)], 150);
}

TEST(LocalGridMap, MeanRoundsHalfUp) {
  LocalGridMap m(0.0, 0.0, 4.0, 0.25);
  m.insert({0.1, 0.1, 150, 0.0});
  m.insert({0.1, 0.1, 151, 0.0});
  const Patch img = m.as_match_image();
  EXPECT_EQ(img.values[img.index(7, 8)], 151);  // 301 / 2 = 150.5
}

TEST(LocalGridMap, MaxEdgeIsExclusive) {
  LocalGridMap m(0.0, 0.0, 4.0, 0.25);
  m.insert({2.0, 0.0, 9, 0.0});
  m.insert({0.0, 2.0, 9, 0.0});
  EXPECT_EQ(m.observed_cells(), 0u);
  m.insert({-2.0, -2.0, 9, 0.0});
  EXPECT_EQ(m.at(0, 0).count, 1u);
}

TEST(LocalGridMap, EmptyImageIsAllInvalid) {
  const LocalGridMap m(3.0, 4.0, 4.0, 0.25);
  const Patch img = m.as_match_image();
  EXPECT_EQ(img.rows, 16);
  EXPECT_EQ(img.valid_count(), 0u);
}

TEST(LocalGridMap, ConstantDiskRasterizesToItsCells) {
  const double res = 0.1;
  LocalGridMap m(0.0, 0.0, 6.0, res);
  std::map<std::pair<std::int64_t, std::int64_t>, int> expected;
  const CounterRng rng(2, 2);
  for (std::uint64_t i = 0; i < 20000; ++i) {
    const auto [u, v] = rng.uniform2(i, 0);
    const double r = 2.0 * std::sqrt(u), a = 2.0 * std::numbers::pi * v;
    const ReflectivityPoint p{r * std::cos(a), r * std::sin(a), 100, 0.0};
    m.insert(p);
    ++expected[{static_cast<std::int64_t>(std::floor(p.x / res)),
                static_cast<std::int64_t>(std::floor(p.y / res))}];
  }
  const Patch img = m.as_match_image();
  const int n = m.cells_per_side();
  std::size_t seen = 0;
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      const auto key = std::make_pair(m.origin_gx() + ix, m.origin_gy() + iy);
      const auto k = img.index(n - 1 - iy, ix);
      const bool hit = expected.contains(key);
      ASSERT_EQ(img.valid[k] != 0, hit);
      if (hit) {
        ASSERT_EQ(img.values[k], 100);
        ASSERT_EQ(m.at(ix, iy).count, static_cast<std::uint32_t>(expected[key]));
        ++seen;
      }
    }
  }
  EXPECT_EQ(seen, expected.size());
}

TEST(LocalGridMap, InsertionOrderDoesNotMatter) {
  auto pts = random_points(3, 5000, 3.0);
  LocalGridMap a(0.0, 0.0, 5.0, 0.25), b(0.0, 0.0, 5.0, 0.25);
  a.insert_points(pts);
  std::reverse(pts.begin(), pts.end());
  std::rotate(pts.begin(), pts.begin() + 1234, pts.end());
  b.insert_points(pts);
  EXPECT_EQ(a, b);
}

TEST(LocalGridMap, CellMeanWithinInsertedRange) {
  const auto pts = random_points(4, 20000, 2.0);
  LocalGridMap m(0.0, 0.0, 4.0, 0.5);
  m.insert_points(pts);
  const Patch img = m.as_match_image();
  const int n = m.cells_per_side();
  for (int iy = 0; iy < n; ++iy) {
    for (int ix = 0; ix < n; ++ix) {
      int lo = 256, hi = -1;
      for (const auto& p : pts) {
        if (static_cast<std::int64_t>(std::floor(p.x / 0.5)) == m.origin_gx() + ix &&
            static_cast<std::int64_t>(std::floor(p.y / 0.5)) == m.origin_gy() + iy) {
          lo = std::min<int>(lo, p.reflectivity);
          hi = std::max<int>(hi, p.reflectivity);
        }
      }
      const auto k = img.index(n - 1 - iy, ix);
      ASSERT_EQ(img.valid[k] != 0, hi >= 0);
      if (hi >= 0) {
        ASSERT_GE(img.values[k], lo);
        ASSERT_LE(img.values[k], hi);
      }
    }
  }
}

TEST(LocalGridMap, RecenterByZeroIsNoOp) {
  LocalGridMap m(1.0, 1.0, 4.0, 0.25);
  m.insert_points(random_points(5, 500, 3.0));
  const LocalGridMap before = m;
  m.recenter(1.05, 1.1);  // same cell
  EXPECT_EQ(m, before);
}

TEST(LocalGridMap, RecenterByFullSideClears) {
  LocalGridMap m(0.0, 0.0, 4.0, 0.25);
  m.insert_points(random_points(6, 500, 2.0));
  ASSERT_GT(m.observed_cells(), 0u);
  m.recenter(4.0, 0.0);
  EXPECT_EQ(m.observed_cells(), 0u);
}

TEST(LocalGridMap, RecenterMatchesRebuildFromRetainedPoints) {
  const double res = 0.25;
  const auto pts = random_points(7, 8000, 5.0);
  const CounterRng rng(7, 8);
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    const auto [u, v] = rng.uniform2(trial, 0);
    const double cx = (u - 0.5) * 6.0, cy = (v - 0.5) * 6.0;
    LocalGridMap m(0.0, 0.0, 4.0, res);
    m.insert_points(pts);
    const auto ox = m.origin_gx(), oy = m.origin_gy();
    m.recenter(cx, cy);

    LocalGridMap rebuilt(cx, cy, 4.0, res);
    for (const auto& p : pts) {
      if (inside(p, ox, oy, 16, res)) rebuilt.insert(p);
    }
    ASSERT_EQ(m, rebuilt) << trial;
  }
}

TEST(LocalGridMap, RecenterCommutesWithInsertInOverlap) {
  const double res = 0.25;
  const auto pts = random_points(8, 3000, 4.0);
  LocalGridMap a(0.0, 0.0, 4.0, res), b(0.0, 0.0, 4.0, res);
  const auto ox = a.origin_gx(), oy = a.origin_gy();
  a.recenter(0.75, -0.5);
  const auto nx = a.origin_gx(), ny = a.origin_gy();
  for (const auto& p : pts) {
    if (!inside(p, ox, oy, 16, res) || !inside(p, nx, ny, 16, res)) continue;
    a.insert(p);
    b.insert(p);
  }
  b.recenter(0.75, -0.5);
  EXPECT_EQ(a, b);
}
