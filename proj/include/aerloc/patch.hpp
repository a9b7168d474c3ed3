#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace aerloc {

/// Row-major 8-bit raster with a per-cell validity flag. Row 0 is the top
/// (north when unrotated) edge.
struct Patch {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> values;
  std::vector<std::uint8_t> valid;  // 1 = observed, 0 = no data

  Patch() = default;
  Patch(int r, int c)
      : rows(r), cols(c), values(static_cast<std::size_t>(r) * c, 0),
        valid(static_cast<std::size_t>(r) * c, 0) {}

  std::size_t size() const { return values.size(); }
  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * cols + c;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid) n += v;
    return n;
  }

  friend bool operator==(const Patch&, const Patch&) = default;
};

}  // namespace aerloc
