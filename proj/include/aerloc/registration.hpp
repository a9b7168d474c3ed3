#pragma once

// Bounded exhaustive 3-DOF NMI registration of a local reflectivity image
// against the prior map, plus a covariance fitted to the score surface.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <array>
#include <numbers>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "aerloc/grid_map.hpp"
#include "aerloc/local_map.hpp"
#include "aerloc/nmi.hpp"
#include "aerloc/pose.hpp"

namespace aerloc {

/// Half-widths and steps of the search lattice around a centre pose.
struct SearchSpec {
  double x_range = 0.0;
  double y_range = 0.0;
  double theta_range = 0.0;
  double x_step = 0.08;
  double y_step = 0.08;
  double theta_step = 0.5 * std::numbers::pi / 180.0;

  bool valid() const {
    return x_range >= 0.0 && y_range >= 0.0 && theta_range >= 0.0 && x_step > 0.0 &&
           y_step > 0.0 && theta_step > 0.0;
  }
};

/// Node offsets along each axis: k * step for |k| <= floor(range / step).
struct SearchGrid {
  std::vector<double> xs;
  std::vector<double> ys;
  std::vector<double> thetas;

  std::size_t size() const { return xs.size() * ys.size() * thetas.size(); }
  std::size_t index(std::size_t ix, std::size_t iy, std::size_t it) const {
    return (it * ys.size() + iy) * xs.size() + ix;
  }
};

namespace detail {
inline std::vector<double> axis_nodes(double range, double step) {
  const int k = static_cast<int>(std::floor(range / step + 1e-9));
  std::vector<double> nodes;
  nodes.reserve(2 * k + 1);
  for (int i = -k; i <= k; ++i) nodes.push_back(i * step);
  return nodes;
}
}  // namespace detail

inline SearchGrid make_grid(const SearchSpec& spec) {
  if (!spec.valid()) throw std::invalid_argument("search spec: negative range or non-positive step");
  return {detail::axis_nodes(spec.x_range, spec.x_step),
          detail::axis_nodes(spec.y_range, spec.y_step),
          detail::axis_nodes(spec.theta_range, spec.theta_step)};
}

struct RegistrationConfig {
  NmiConfig nmi;
  double lambda = 50.0;           // covariance-fit sharpness, per unit NMI
  double boundary_penalty = 4.0;  // covariance inflation when the peak is on the edge
};

struct RegistrationResult {
  bool has_fix = false;
  Pose2D offset;  // relative to the search centre
  double score = std::numeric_limits<double>::quiet_NaN();
  SearchGrid grid;
  std::vector<double> score_field;  // NaN where the candidate lacked overlap
  std::size_t best_index = 0;
  Mat3 fitted_covariance = Mat3::Zero();
  std::size_t valid_overlap = 0;
  bool on_boundary = false;
};

/// Lexicographic preference among equal scores: smaller |x|, then |y|, then
/// |theta| (in node units), then lower node index.
inline bool preferred_node(const SearchGrid& g, std::size_t a, std::size_t b) {
  const auto nx = g.xs.size();
  const auto ny = g.ys.size();
  auto key = [&](std::size_t i) {
    const auto ix = i % nx;
    const auto iy = (i / nx) % ny;
    const auto it = i / (nx * ny);
    const auto cx = static_cast<long>(g.xs.size() / 2);
    const auto cy = static_cast<long>(g.ys.size() / 2);
    const auto ct = static_cast<long>(g.thetas.size() / 2);
    return std::array<long, 4>{std::labs(static_cast<long>(ix) - cx),
                               std::labs(static_cast<long>(iy) - cy),
                               std::labs(static_cast<long>(it) - ct), static_cast<long>(i)};
  };
  return key(a) < key(b);
}

/// Argmax over a score field honoring the tie rule; returns size() if every
/// node is NaN.
inline std::size_t argmax_node(const SearchGrid& g, std::span<const double> field) {
  std::size_t best = field.size();
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (std::isnan(field[i])) continue;
    if (best == field.size() || field[i] > field[best] ||
        (field[i] == field[best] && preferred_node(g, i, best))) {
      best = i;
    }
  }
  return best;
}

/// Per-axis variance floors used by the fit.
struct VarianceFloor {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  static VarianceFloor from_spec(const SearchSpec& s) {
    return {0.25 * s.x_step * s.x_step, 0.25 * s.y_step * s.y_step,
            0.25 * s.theta_step * s.theta_step};
  }
};

/// Weighted second moment of node offsets with weights exp(lambda (s - s_max)),
/// diagonal floored, inflated when the peak touches the lattice edge.
inline Mat3 fit_covariance(std::span<const double> field, const SearchGrid& grid,
                           const VarianceFloor& floor, const RegistrationConfig& cfg,
                           bool* on_boundary = nullptr) {
  if (field.size() != grid.size()) throw std::invalid_argument("score field / grid size mismatch");
  const std::size_t best = argmax_node(grid, field);
  if (best == field.size()) throw std::invalid_argument("score field has no finite node");
  const double s_max = field[best];
  const auto nx = grid.xs.size();
  const auto ny = grid.ys.size();

  double wsum = 0.0;
  Vec3 mean = Vec3::Zero();
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (std::isnan(field[i])) continue;
    const double w = std::exp(cfg.lambda * (field[i] - s_max));
    const Vec3 p(grid.xs[i % nx], grid.ys[(i / nx) % ny], grid.thetas[i / (nx * ny)]);
    wsum += w;
    mean += w * p;
  }
  mean /= wsum;
  Mat3 cov = Mat3::Zero();
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (std::isnan(field[i])) continue;
    const double w = std::exp(cfg.lambda * (field[i] - s_max));
    const Vec3 d = Vec3(grid.xs[i % nx], grid.ys[(i / nx) % ny], grid.thetas[i / (nx * ny)]) - mean;
    cov += (w / wsum) * (d * d.transpose());
  }
  cov = 0.5 * (cov + cov.transpose()).eval();
  cov(0, 0) = std::max(cov(0, 0), floor.x);
  cov(1, 1) = std::max(cov(1, 1), floor.y);
  cov(2, 2) = std::max(cov(2, 2), floor.theta);

  const auto ix = best % nx;
  const auto iy = (best / nx) % ny;
  const auto it = best / (nx * ny);
  auto edge = [](std::size_t i, std::size_t n) { return n > 1 && (i == 0 || i + 1 == n); };
  const bool boundary = edge(ix, nx) || edge(iy, ny) || edge(it, grid.thetas.size());
  if (on_boundary != nullptr) *on_boundary = boundary;
  if (boundary) cov *= cfg.boundary_penalty;
  return cov;
}

/// Exhaustive search: the local image is compared with the prior patch at
/// centre + (dx, dy, dtheta) for every lattice node. The local image must be
/// sampled at the prior's resolution.
inline RegistrationResult search(const PriorMap& prior, const Patch& local, const Pose2D& center,
                                 const SearchSpec& spec, const RegistrationConfig& cfg = {}) {
  const SearchGrid grid = make_grid(spec);
  const int bins = cfg.nmi.bins;
  if (bins < 1 || bins > 256) throw std::invalid_argument("search: bin count must be in [1, 256]");
  const double res = prior.cell_resolution();
  const PatchGeometry geo(local.rows, local.cols, res);

  struct LocalCell {
    double u, v;
    std::uint16_t bin;
  };
  std::vector<LocalCell> cells;
  for (int r = 0; r < local.rows; ++r) {
    for (int c = 0; c < local.cols; ++c) {
      const auto k = local.index(r, c);
      if (local.valid[k]) {
        cells.push_back({geo.u[c], geo.v[r], static_cast<std::uint16_t>(bin_of(local.values[k], bins))});
      }
    }
  }
  if (cells.empty()) throw std::invalid_argument("search: local map has no observed cells");

  // Dense window covering every sample the lattice can touch, holding
  // bin * bins so a lookup lands directly on a joint-histogram row.
  constexpr std::uint16_t kNoData = 0xFFFF;
  const double reach = 0.5 * std::hypot(local.rows * res, local.cols * res) + 2.0 * res;
  const auto gx0 = prior.cell_of(center.x - spec.x_range - reach);
  const auto gy0 = prior.cell_of(center.y - spec.y_range - reach);
  const auto gx1 = prior.cell_of(center.x + spec.x_range + reach);
  const auto gy1 = prior.cell_of(center.y + spec.y_range + reach);
  const int ww = static_cast<int>(gx1 - gx0 + 1);
  const int wh = static_cast<int>(gy1 - gy0 + 1);
  const MapWindow win = prior.window(gx0, gy0, ww, wh);
  std::vector<std::uint16_t> wrow(win.values.size(), kNoData);
  for (std::size_t k = 0; k < wrow.size(); ++k) {
    if (win.valid[k]) wrow[k] = static_cast<std::uint16_t>(bin_of(win.values[k], bins) * bins);
  }

  RegistrationResult out;
  out.grid = grid;
  out.score_field.assign(grid.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<std::size_t> overlap(grid.size(), 0);

  const std::size_t n_cells = cells.size();
  const std::size_t nx = grid.xs.size();
  const std::size_t ny = grid.ys.size();
  std::vector<double> off_x(n_cells);
  std::vector<double> off_y(n_cells);
  // Per slice: window column of every cell for each x node, and row offset
  // for each y node. Same floor(w / res) as PriorMap::cell_of.
  std::vector<std::int32_t> col(nx * n_cells);
  std::vector<std::int32_t> row(ny * n_cells);
  std::vector<std::uint16_t> local_bin(n_cells);
  for (std::size_t k = 0; k < n_cells; ++k) local_bin[k] = cells[k].bin;
  std::vector<std::uint32_t> joint(static_cast<std::size_t>(bins) * bins);
  JointHistogram hist(bins);

  for (std::size_t it = 0; it < grid.thetas.size(); ++it) {
    const double heading = wrap_angle(center.theta + grid.thetas[it]);
    const double ch = std::cos(heading);
    const double sh = std::sin(heading);
    // (u c - v s) is exactly the rotated term inside sample_point
    for (std::size_t k = 0; k < n_cells; ++k) {
      off_x[k] = cells[k].u * ch - cells[k].v * sh;
      off_y[k] = cells[k].u * sh + cells[k].v * ch;
    }
    bool inside = true;
    for (std::size_t ix = 0; ix < nx; ++ix) {
      const double cx = center.x + grid.xs[ix];
      std::int32_t* c = col.data() + ix * n_cells;
      for (std::size_t k = 0; k < n_cells; ++k) {
        const auto gx = static_cast<std::int64_t>(std::floor((cx + off_x[k]) / res)) - gx0;
        inside = inside && gx >= 0 && gx < ww;
        c[k] = static_cast<std::int32_t>(gx);
      }
    }
    for (std::size_t iy = 0; iy < ny; ++iy) {
      const double cy = center.y + grid.ys[iy];
      std::int32_t* r = row.data() + iy * n_cells;
      for (std::size_t k = 0; k < n_cells; ++k) {
        const auto gy = static_cast<std::int64_t>(std::floor((cy + off_y[k]) / res)) - gy0;
        inside = inside && gy >= 0 && gy < wh;
        r[k] = static_cast<std::int32_t>(gy * ww);
      }
    }
    if (!inside) throw std::logic_error("search: sample escaped the prefetched window");

    for (std::size_t iy = 0; iy < ny; ++iy) {
      const std::int32_t* r = row.data() + iy * n_cells;
      for (std::size_t ix = 0; ix < nx; ++ix) {
        const std::int32_t* c = col.data() + ix * n_cells;
        std::fill(joint.begin(), joint.end(), 0u);
        std::size_t n = 0;
        for (std::size_t k = 0; k < n_cells; ++k) {
          const std::uint16_t pb = wrow[static_cast<std::size_t>(r[k] + c[k])];
          if (pb == kNoData) continue;
          ++joint[pb + local_bin[k]];
          ++n;
        }
        const auto node = grid.index(ix, iy, it);
        overlap[node] = n;
        if (n == 0 || n < cfg.nmi.min_overlap) continue;
        std::fill(hist.marginal_a.begin(), hist.marginal_a.end(), 0);
        std::fill(hist.marginal_b.begin(), hist.marginal_b.end(), 0);
        for (int a = 0; a < bins; ++a) {
          for (int b = 0; b < bins; ++b) {
            const std::uint64_t cnt = joint[static_cast<std::size_t>(a) * bins + b];
            hist.joint[static_cast<std::size_t>(a) * bins + b] = cnt;
            hist.marginal_a[a] += cnt;
            hist.marginal_b[b] += cnt;
          }
        }
        hist.total = n;
        out.score_field[node] = nmi_from_histogram(hist);
      }
    }
  }

  const std::size_t best = argmax_node(grid, out.score_field);
  if (best == grid.size()) return out;  // no fix
  out.has_fix = true;
  out.best_index = best;
  out.score = out.score_field[best];
  out.offset = {grid.xs[best % nx], grid.ys[(best / nx) % ny], grid.thetas[best / (nx * ny)]};
  out.valid_overlap = overlap[best];
  out.fitted_covariance =
      fit_covariance(out.score_field, grid, VarianceFloor::from_spec(spec), cfg, &out.on_boundary);
  return out;
}

inline RegistrationResult search(const PriorMap& prior, const LocalGridMap& local,
                                 const Pose2D& center, const SearchSpec& spec,
                                 const RegistrationConfig& cfg = {}) {
  if (std::abs(local.cell_resolution() - prior.cell_resolution()) >
      1e-9 * prior.cell_resolution()) {
    throw std::invalid_argument("search: local and prior resolutions differ");
  }
  return search(prior, local.as_match_image(), center, spec, cfg);
}

/// Debug dump of the score field: one block per theta slice, rows = y nodes
/// (ascending), columns = x nodes, '%.6f', NaN for rejected candidates.
inline std::string format_score_field(const RegistrationResult& r) {
  std::string out;
  char buf[64];
  const auto& g = r.grid;
  for (std::size_t it = 0; it < g.thetas.size(); ++it) {
    std::snprintf(buf, sizeof buf, "# theta %.6f\n", g.thetas[it]);
    out += buf;
    for (std::size_t iy = 0; iy < g.ys.size(); ++iy) {
      for (std::size_t ix = 0; ix < g.xs.size(); ++ix) {
        std::snprintf(buf, sizeof buf, ix == 0 ? "%.6f" : " %.6f",
                      r.score_field[g.index(ix, iy, it)]);
        out += buf;
      }
      out += '\n';
    }
  }
  return out;
}

}  // namespace aerloc
