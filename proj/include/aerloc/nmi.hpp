#pragma once

// Entropy and normalized mutual information over jointly-valid cells.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "aerloc/patch.hpp"

namespace aerloc {

struct NmiConfig {
  int bins = 32;
  std::size_t min_overlap = 1000;
};

/// Bucket index of an 8-bit value: value * bins / 256.
inline int bin_of(std::uint8_t value, int bins) { return value * bins / 256; }

struct JointHistogram {
  int bins = 0;
  std::vector<std::uint64_t> joint;  // bins x bins, row = bin of a
  std::vector<std::uint64_t> marginal_a;
  std::vector<std::uint64_t> marginal_b;
  std::uint64_t total = 0;

  explicit JointHistogram(int b)
      : bins(b), joint(static_cast<std::size_t>(b) * b, 0), marginal_a(b, 0), marginal_b(b, 0) {}

  void add(int bin_a, int bin_b) {
    ++joint[static_cast<std::size_t>(bin_a) * bins + bin_b];
    ++marginal_a[bin_a];
    ++marginal_b[bin_b];
    ++total;
  }
};

inline JointHistogram joint_histogram(const Patch& a, const Patch& b, int bins) {
  if (a.rows != b.rows || a.cols != b.cols) {
    throw std::invalid_argument("nmi: patch dimensions differ");
  }
  if (bins < 1 || bins > 256) throw std::invalid_argument("nmi: bin count must be in [1, 256]");
  JointHistogram h(bins);
  for (std::size_t k = 0; k < a.size(); ++k) {
    if (a.valid[k] && b.valid[k]) h.add(bin_of(a.values[k], bins), bin_of(b.values[k], bins));
  }
  return h;
}

/// Shannon entropy in nats of a count vector. The nonzero counts are summed
/// in sorted order, so the result depends only on the multiset of counts.
inline double entropy(std::span<const std::uint64_t> counts) {
  std::vector<std::uint64_t> nz;
  nz.reserve(counts.size());
  std::uint64_t total = 0;
  for (auto c : counts) {
    if (c > 0) {
      nz.push_back(c);
      total += c;
    }
  }
  if (total == 0) throw std::domain_error("entropy of an empty histogram");
  std::sort(nz.begin(), nz.end());
  double acc = 0.0;
  for (auto c : nz) {
    const double cd = static_cast<double>(c);
    acc += cd * std::log(cd);
  }
  const double n = static_cast<double>(total);
  return std::max(0.0, std::log(n) - acc / n);
}

/// (H(A) + H(B)) / H(A,B), in [1, 2]. A single occupied joint bin counts as
/// perfect dependence.
inline double nmi_from_histogram(const JointHistogram& h) {
  const double hab = entropy(h.joint);
  if (hab == 0.0) return 2.0;
  const double ha = entropy(h.marginal_a);
  const double hb = entropy(h.marginal_b);
  // clamp only absorbs last-bit rounding at the analytic bounds
  return std::clamp((ha + hb) / hab, 1.0, 2.0);
}

/// NMI over jointly-valid cells; nullopt when the overlap is below
/// cfg.min_overlap (or empty).
inline std::optional<double> nmi(const Patch& a, const Patch& b, const NmiConfig& cfg = {}) {
  const JointHistogram h = joint_histogram(a, b, cfg.bins);
  if (h.total == 0 || h.total < cfg.min_overlap) return std::nullopt;
  return nmi_from_histogram(h);
}

}  // namespace aerloc
