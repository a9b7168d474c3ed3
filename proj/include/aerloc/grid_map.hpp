#pragma once

// Tiled grayscale prior map: storage, on-disk format, geodetic anchoring,
// patch sampling and block downsampling.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "aerloc/patch.hpp"
#include "aerloc/pose.hpp"

namespace aerloc {

class MapError : public std::runtime_error {
 public:
  enum class Kind { kMissingFile, kMalformedHeader, kSizeMismatch, kDuplicateTile, kBadArgument };

  MapError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// ---------------------------------------------------------------------------
// Linearized global frame

/// Equirectangular linearization about a fixed geodetic origin. Adequate for
/// extents of a few kilometres.
struct GlobalFrame {
  static constexpr double kEarthRadius = 6378137.0;

  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double meters_per_degree_lat = 0.0;
  double meters_per_degree_lon = 0.0;

  GlobalFrame() = default;
  GlobalFrame(double lat, double lon)
      : origin_lat(lat), origin_lon(lon),
        meters_per_degree_lat(kEarthRadius * std::numbers::pi / 180.0),
        meters_per_degree_lon(kEarthRadius * std::numbers::pi / 180.0 *
                              std::cos(lat * std::numbers::pi / 180.0)) {}
};

struct GlobalXY {
  double x = 0.0;
  double y = 0.0;
};

struct Geodetic {
  double lat = 0.0;
  double lon = 0.0;
};

inline bool valid_geodetic(double lat, double lon) {
  return std::isfinite(lat) && std::isfinite(lon) && std::abs(lat) <= 90.0 &&
         std::abs(lon) <= 180.0;
}

inline GlobalXY geodetic_to_global(const GlobalFrame& frame, double lat, double lon) {
  return {(lon - frame.origin_lon) * frame.meters_per_degree_lon,
          (lat - frame.origin_lat) * frame.meters_per_degree_lat};
}

inline Geodetic global_to_geodetic(const GlobalFrame& frame, double x, double y) {
  return {frame.origin_lat + y / frame.meters_per_degree_lat,
          frame.origin_lon + x / frame.meters_per_degree_lon};
}

// ---------------------------------------------------------------------------
// Tiles and manifest

struct TileEntry {
  int tile_i = 0;
  int tile_j = 0;
  std::string file_name;
};

struct MapManifest {
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  double cell_resolution = 0.0;
  int tile_side_cells = 0;
  std::vector<TileEntry> tile_index;
};

/// One square tile. Tile (i, j) covers x in [i*T, (i+1)*T) and y in
/// [j*T, (j+1)*T) with T the tile edge in metres; row 0 is the north edge.
struct Tile {
  int tile_i = 0;
  int tile_j = 0;
  int width = 0;
  int height = 0;
  double cell_resolution = 0.0;
  std::vector<std::uint8_t> cells;
  std::vector<std::uint8_t> valid;

  friend bool operator==(const Tile&, const Tile&) = default;
};

inline constexpr std::array<char, 4> kTileMagic = {'G', 'M', 'T', '1'};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  out.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  std::array<unsigned char, sizeof(T)> bytes{};
  if (pos + sizeof(T) > in.size()) {
    throw MapError(MapError::Kind::kMalformedHeader, "tile file truncated in header");
  }
  std::memcpy(bytes.data(), in.data() + pos, sizeof(T));
  pos += sizeof(T);
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  return std::bit_cast<T>(bytes);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MapError(MapError::Kind::kMissingFile, "cannot open " + path.string());
  }
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

}  // namespace detail

inline std::string encode_tile(const Tile& tile) {
  const std::size_t n = static_cast<std::size_t>(tile.width) * tile.height;
  if (tile.cells.size() != n || tile.valid.size() != n) {
    throw MapError(MapError::Kind::kBadArgument, "tile buffers do not match dimensions");
  }
  std::string out(kTileMagic.begin(), kTileMagic.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tile.width));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(tile.height));
  detail::put_le<double>(out, tile.cell_resolution);
  detail::put_le<std::int32_t>(out, tile.tile_i);
  detail::put_le<std::int32_t>(out, tile.tile_j);
  out.append(reinterpret_cast<const char*>(tile.cells.data()), n);
  // Validity bitmask: cell k lives in byte k/8, bit k%8 (LSB first).
  std::string mask((n + 7) / 8, '\0');
  for (std::size_t k = 0; k < n; ++k) {
    if (tile.valid[k]) mask[k / 8] = static_cast<char>(mask[k / 8] | (1u << (k % 8)));
  }
  out += mask;
  return out;
}

inline Tile decode_tile(const std::string& bytes) {
  if (bytes.size() < 4 || !std::equal(kTileMagic.begin(), kTileMagic.end(), bytes.begin())) {
    throw MapError(MapError::Kind::kMalformedHeader, "bad tile magic");
  }
  std::size_t pos = 4;
  Tile t;
  const auto w = detail::get_le<std::uint32_t>(bytes, pos);
  const auto h = detail::get_le<std::uint32_t>(bytes, pos);
  t.cell_resolution = detail::get_le<double>(bytes, pos);
  t.tile_i = detail::get_le<std::int32_t>(bytes, pos);
  t.tile_j = detail::get_le<std::int32_t>(bytes, pos);
  if (w == 0 || h == 0 || w > 65536 || h > 65536 || !(t.cell_resolution > 0.0)) {
    throw MapError(MapError::Kind::kMalformedHeader, "implausible tile header");
  }
  t.width = static_cast<int>(w);
  t.height = static_cast<int>(h);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (bytes.size() != pos + n + (n + 7) / 8) {
    throw MapError(MapError::Kind::kMalformedHeader, "tile payload length does not match header");
  }
  t.cells.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                 bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  pos += n;
  t.valid.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    t.valid[k] = (static_cast<unsigned char>(bytes[pos + k / 8]) >> (k % 8)) & 1u;
  }
  return t;
}

inline MapManifest parse_manifest(const std::string& text) {
  MapManifest m;
  bool have_lat = false, have_lon = false, have_res = false, have_side = false;
  std::istringstream lines(text);
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw MapError(MapError::Kind::kMalformedHeader,
                   "manifest line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(lines, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.rfind("tile", 0) == 0 && line.find('=') == std::string::npos) {
      std::istringstream fields(line.substr(4));
      TileEntry e;
      if (!(fields >> e.tile_i >> e.tile_j >> e.file_name)) fail("expected `tile i j filename`");
      std::string extra;
      if (fields >> extra) fail("trailing fields on tile line");
      m.tile_index.push_back(std::move(e));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected `key = value`");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    try {
      std::size_t used = 0;
      if (key == "origin_lat") {
        m.origin_lat = std::stod(value, &used);
        have_lat = true;
      } else if (key == "origin_lon") {
        m.origin_lon = std::stod(value, &used);
        have_lon = true;
      } else if (key == "cell_resolution") {
        m.cell_resolution = std::stod(value, &used);
        have_res = true;
      } else if (key == "tile_side_cells") {
        m.tile_side_cells = std::stoi(value, &used);
        have_side = true;
      } else {
        fail("unknown key `" + key + "`");
      }
      if (used != value.size()) fail("trailing characters in value of `" + key + "`");
    } catch (const std::logic_error&) {
      fail("unparsable value for `" + key + "`");
    }
  }
  if (!(have_lat && have_lon && have_res && have_side)) {
    throw MapError(MapError::Kind::kMalformedHeader, "manifest missing required header keys");
  }
  if (!(m.cell_resolution > 0.0) || m.tile_side_cells <= 0) {
    throw MapError(MapError::Kind::kMalformedHeader, "non-positive resolution or tile size");
  }
  if (!valid_geodetic(m.origin_lat, m.origin_lon)) {
    throw MapError(MapError::Kind::kMalformedHeader, "origin out of geodetic range");
  }
  return m;
}

inline std::string format_manifest(const MapManifest& m) {
  std::ostringstream out;
  out.precision(17);
  out << "# aerloc prior map manifest\n"
      << "origin_lat = " << m.origin_lat << "\n"
      << "origin_lon = " << m.origin_lon << "\n"
      << "cell_resolution = " << m.cell_resolution << "\n"
      << "tile_side_cells = " << m.tile_side_cells << "\n";
  for (const auto& e : m.tile_index) {
    out << "tile " << e.tile_i << " " << e.tile_j << " " << e.file_name << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// PriorMap

/// Dense raster cut out of a prior map in global cell coordinates; row index
/// grows northward (gy), column index eastward (gx).
struct MapWindow {
  std::int64_t gx0 = 0;
  std::int64_t gy0 = 0;
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;
  std::vector<std::uint8_t> valid;
};

/// Immutable tiled prior map. Global cell (gx, gy) covers
/// [gx*res, (gx+1)*res) x [gy*res, (gy+1)*res).
class PriorMap {
 public:
  PriorMap() = default;

  PriorMap(double origin_lat, double origin_lon, double cell_resolution, int tile_side_cells)
      : frame_(origin_lat, origin_lon), resolution_(cell_resolution), side_(tile_side_cells) {
    if (!(cell_resolution > 0.0) || tile_side_cells <= 0) {
      throw MapError(MapError::Kind::kBadArgument, "resolution and tile size must be positive");
    }
  }

  const GlobalFrame& frame() const { return frame_; }
  double cell_resolution() const { return resolution_; }
  int tile_side_cells() const { return side_; }
  double tile_side_m() const { return resolution_ * side_; }
  std::size_t tile_count() const { return tiles_.size(); }
  const std::map<std::pair<int, int>, Tile>& tiles() const { return tiles_; }

  void add_tile(Tile tile) {
    if (tile.width != side_ || tile.height != side_) {
      throw MapError(MapError::Kind::kSizeMismatch,
                     "tile (" + std::to_string(tile.tile_i) + "," + std::to_string(tile.tile_j) +
                         ") is " + std::to_string(tile.width) + "x" + std::to_string(tile.height) +
                         ", manifest declares " + std::to_string(side_));
    }
    if (std::abs(tile.cell_resolution - resolution_) > 1e-9 * resolution_) {
      throw MapError(MapError::Kind::kSizeMismatch, "tile resolution differs from manifest");
    }
    const auto key = std::make_pair(tile.tile_i, tile.tile_j);
    if (tiles_.contains(key)) {
      throw MapError(MapError::Kind::kDuplicateTile, "duplicate tile index");
    }
    tiles_.emplace(key, std::move(tile));
  }

  const Tile* find_tile(int i, int j) const {
    auto it = tiles_.find({i, j});
    return it == tiles_.end() ? nullptr : &it->second;
  }

  std::int64_t cell_of(double w) const {
    return static_cast<std::int64_t>(std::floor(w / resolution_));
  }

  /// Reflectivity of a global cell, or nullopt when not covered / no data.
  std::optional<std::uint8_t> cell(std::int64_t gx, std::int64_t gy) const {
    const auto ti = detail::floor_div(gx, side_);
    const auto tj = detail::floor_div(gy, side_);
    const Tile* t = find_tile(static_cast<int>(ti), static_cast<int>(tj));
    if (t == nullptr) return std::nullopt;
    const auto col = gx - ti * side_;
    const auto row = side_ - 1 - (gy - tj * side_);
    const auto k = static_cast<std::size_t>(row * side_ + col);
    if (!t->valid[k]) return std::nullopt;
    return t->cells[k];
  }

  std::optional<std::uint8_t> value_at(double x, double y) const {
    return cell(cell_of(x), cell_of(y));
  }

  MapWindow window(std::int64_t gx0, std::int64_t gy0, int width, int height) const {
    MapWindow w{gx0, gy0, width, height,
                std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0),
                std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
    const auto ti0 = detail::floor_div(gx0, side_);
    const auto ti1 = detail::floor_div(gx0 + width - 1, side_);
    const auto tj0 = detail::floor_div(gy0, side_);
    const auto tj1 = detail::floor_div(gy0 + height - 1, side_);
    for (auto tj = tj0; tj <= tj1; ++tj) {
      for (auto ti = ti0; ti <= ti1; ++ti) {
        const Tile* t = find_tile(static_cast<int>(ti), static_cast<int>(tj));
        if (t == nullptr) continue;
        const auto x_lo = std::max(gx0, ti * side_);
        const auto x_hi = std::min(gx0 + width, (ti + 1) * side_);
        const auto y_lo = std::max(gy0, tj * side_);
        const auto y_hi = std::min(gy0 + height, (tj + 1) * side_);
        for (auto gy = y_lo; gy < y_hi; ++gy) {
          const auto row = side_ - 1 - (gy - tj * side_);
          const auto src = static_cast<std::size_t>(row * side_ + (x_lo - ti * side_));
          const auto dst = static_cast<std::size_t>((gy - gy0) * width + (x_lo - gx0));
          const auto n = static_cast<std::size_t>(x_hi - x_lo);
          std::copy_n(t->cells.begin() + src, n, w.values.begin() + dst);
          std::copy_n(t->valid.begin() + src, n, w.valid.begin() + dst);
        }
      }
    }
    return w;
  }

  MapManifest manifest() const {
    MapManifest m{frame_.origin_lat, frame_.origin_lon, resolution_, side_, {}};
    for (const auto& [key, tile] : tiles_) {
      m.tile_index.push_back({key.first, key.second, tile_file_name(key.first, key.second)});
    }
    return m;
  }

  static std::string tile_file_name(int i, int j) {
    return "tile_" + std::to_string(i) + "_" + std::to_string(j) + ".gmt";
  }

 private:
  GlobalFrame frame_;
  double resolution_ = 0.0;
  int side_ = 0;
  std::map<std::pair<int, int>, Tile> tiles_;
};

inline PriorMap load_map(const std::filesystem::path& manifest_path) {
  const MapManifest m = parse_manifest(detail::read_file(manifest_path));
  PriorMap map(m.origin_lat, m.origin_lon, m.cell_resolution, m.tile_side_cells);
  const auto dir = manifest_path.parent_path();
  for (const auto& e : m.tile_index) {
    Tile t = decode_tile(detail::read_file(dir / e.file_name));
    if (t.tile_i != e.tile_i || t.tile_j != e.tile_j) {
      throw MapError(MapError::Kind::kMalformedHeader,
                     e.file_name + " header index differs from manifest entry");
    }
    map.add_tile(std::move(t));
  }
  return map;
}

/// Writes `<dir>/map.manifest` plus one file per tile; returns the manifest path.
inline std::filesystem::path save_map(const PriorMap& map, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const MapManifest m = map.manifest();
  for (const auto& e : m.tile_index) {
    std::ofstream out(dir / e.file_name, std::ios::binary);
    const std::string bytes = encode_tile(*map.find_tile(e.tile_i, e.tile_j));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw MapError(MapError::Kind::kMissingFile, "cannot write " + e.file_name);
  }
  const auto path = dir / "map.manifest";
  std::ofstream out(path);
  out << format_manifest(m);
  if (!out) throw MapError(MapError::Kind::kMissingFile, "cannot write manifest");
  return path;
}

// ---------------------------------------------------------------------------
// Patch sampling

/// Sampling lattice of a rotated patch: cell (r, c) sits at body offset
/// (u_c, v_r) from the patch centre, u along the heading, v to its left.
struct PatchGeometry {
  int rows = 0;
  int cols = 0;
  std::vector<double> u;  // per column
  std::vector<double> v;  // per row

  PatchGeometry(int r, int c, double res) : rows(r), cols(c), u(c), v(r) {
    for (int k = 0; k < c; ++k) u[k] = (k + 0.5 - c / 2.0) * res;
    for (int k = 0; k < r; ++k) v[k] = (r / 2.0 - k - 0.5) * res;
  }
};

/// World sample position of body offset (u, v). Shared by every sampler so the
/// search kernel and query_patch agree bit for bit.
struct SamplePoint {
  double x;
  double y;
};

inline SamplePoint sample_point(double cx, double cy, double cos_h, double sin_h, double u,
                                double v) {
  return {cx + (u * cos_h - v * sin_h), cy + (u * sin_h + v * cos_h)};
}

inline int patch_cells(double extent_m, double res) {
  return static_cast<int>(std::lround(extent_m / res));
}

/// Nearest-neighbour patch of the prior, axis-aligned in the frame of
/// `center` rotated by `rotation`. Cells outside coverage come back invalid.
inline Patch query_patch(const PriorMap& map, const Pose2D& center, double width_m,
                         double height_m, double rotation) {
  if (!(width_m > 0.0) || !(height_m > 0.0)) {
    throw MapError(MapError::Kind::kBadArgument, "patch extent must be positive");
  }
  const double res = map.cell_resolution();
  const PatchGeometry geo(patch_cells(height_m, res), patch_cells(width_m, res), res);
  const double heading = wrap_angle(center.theta + rotation);
  const double ch = std::cos(heading);
  const double sh = std::sin(heading);
  Patch p(geo.rows, geo.cols);
  for (int r = 0; r < geo.rows; ++r) {
    for (int c = 0; c < geo.cols; ++c) {
      const SamplePoint s = sample_point(center.x, center.y, ch, sh, geo.u[c], geo.v[r]);
      if (auto value = map.value_at(s.x, s.y)) {
        const auto k = p.index(r, c);
        p.values[k] = *value;
        p.valid[k] = 1;
      }
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Downsampling

/// Block-mean downsampling by an integer factor. Invalid cells are excluded
/// from each mean; an all-invalid block stays invalid.
inline PriorMap downsample_map(const PriorMap& map, int factor) {
  const int side = map.tile_side_cells();
  if (factor < 1 || side % factor != 0) {
    throw MapError(MapError::Kind::kBadArgument,
                   "downsample factor " + std::to_string(factor) + " does not divide tile side " +
                       std::to_string(side));
  }
  const int out_side = side / factor;
  PriorMap out(map.frame().origin_lat, map.frame().origin_lon, map.cell_resolution() * factor,
               out_side);
  for (const auto& [key, tile] : map.tiles()) {
    Tile t{tile.tile_i, tile.tile_j, out_side, out_side, out.cell_resolution(),
           std::vector<std::uint8_t>(static_cast<std::size_t>(out_side) * out_side, 0),
           std::vector<std::uint8_t>(static_cast<std::size_t>(out_side) * out_side, 0)};
    for (int br = 0; br < out_side; ++br) {
      for (int bc = 0; bc < out_side; ++bc) {
        std::uint64_t sum = 0;
        std::uint64_t n = 0;
        for (int r = br * factor; r < (br + 1) * factor; ++r) {
          for (int c = bc * factor; c < (bc + 1) * factor; ++c) {
            const auto k = static_cast<std::size_t>(r) * side + c;
            if (tile.valid[k]) {
              sum += tile.cells[k];
              ++n;
            }
          }
        }
        if (n == 0) continue;
        const auto k = static_cast<std::size_t>(br) * out_side + bc;
        // round half away from zero on a non-negative mean
        t.cells[k] = static_cast<std::uint8_t>((2 * sum + n) / (2 * n));
        t.valid[k] = 1;
      }
    }
    out.add_tile(std::move(t));
  }
  return out;
}

}  // namespace aerloc
