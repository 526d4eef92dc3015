#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

/// 2|A n B| / (|A| + |B|); 1 when both masks are empty.
inline double dice_score(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims(), b.dims(), "dice_score");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    na += a[i];
    nb += b[i];
    inter += a[i] && b[i];
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

/// Foreground voxels with a background 6-neighbour or lying on the volume border.
inline BinaryMask boundary(const BinaryMask& m) {
  const Dims& d = m.dims();
  BinaryMask out(d);
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        if (!m[i]) continue;
        const bool edge = x == 0 || y == 0 || z == 0 || x + 1 == d.x || y + 1 == d.y || z + 1 == d.z;
        out.set(i, edge || !m[i - 1] || !m[i + 1] || !m[i - d.x] || !m[i + d.x] ||
                       !m[i - d.x * d.y] || !m[i + d.x * d.y]);
      }
  return out;
}

namespace detail {

inline constexpr std::int64_t kFar = std::numeric_limits<std::int64_t>::max() / 4;

// Lower envelope of parabolas, exact on
// integers: f[q] becomes min_p f[p] + (q - p)^2.
inline void edt_1d(std::vector<std::int64_t>& f, std::vector<std::size_t>& v,
                   std::vector<double>& zb, std::vector<std::int64_t>& out) {
  const std::size_t n = f.size();
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < kFar) {
      first = q;
      break;
    }
  if (first == n) return;  // no sites on this line
  v[0] = first;
  zb[0] = -std::numeric_limits<double>::infinity();
  zb[1] = std::numeric_limits<double>::infinity();
  auto meet = [&](std::size_t q, std::size_t p) {
    const double fq = static_cast<double>(f[q]) + static_cast<double>(q) * static_cast<double>(q);
    const double fp = static_cast<double>(f[p]) + static_cast<double>(p) * static_cast<double>(p);
    return (fq - fp) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
  };
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] >= kFar) continue;
    double s = meet(q, v[k]);
    while (s <= zb[k]) {
      --k;
      s = meet(q, v[k]);
    }
    ++k;
    v[k] = q;
    zb[k] = s;
    zb[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (zb[k + 1] < static_cast<double>(q)) ++k;
    const auto dq = static_cast<std::int64_t>(q) - static_cast<std::int64_t>(v[k]);
    out[q] = dq * dq + f[v[k]];
  }
  for (std::size_t q = 0; q < n; ++q) f[q] = out[q];
}

}  // namespace detail

/// Exact squared Euclidean distance (voxel units) from every voxel to the
/// nearest true voxel of `sites`.
inline std::vector<std::int64_t> squared_distance_transform(const BinaryMask& sites) {
  const Dims& d = sites.dims();
  std::vector<std::int64_t> dist(d.count());
  for (std::size_t i = 0; i < dist.size(); ++i) dist[i] = sites[i] ? 0 : detail::kFar;
  const std::size_t extents[3] = {d.x, d.y, d.z};
  const std::size_t strides[3] = {1, d.x, d.x * d.y};
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = extents[axis], stride = strides[axis];
    std::vector<std::int64_t> f(n), out(n);
    std::vector<std::size_t> v(n);
    std::vector<double> zb(n + 1);
    for (std::size_t base = 0; base < dist.size(); ++base) {
      if ((base / stride) % n != 0) continue;
      for (std::size_t q = 0; q < n; ++q) f[q] = dist[base + q * stride];
      detail::edt_1d(f, v, zb, out);
      for (std::size_t q = 0; q < n; ++q) dist[base + q * stride] = f[q];
    }
  }
  return dist;
}

/// Percentile of `values` with linear interpolation between order statistics
/// (position q * (n - 1) in the sorted list).
inline double percentile(std::vector<double> values, double q) {
  require(!values.empty(), ErrorKind::metric, "percentile of an empty list");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

/// Pooled surface distances: nearest boundary-to-boundary distance from every
/// boundary voxel of A to B, followed by every boundary voxel of B to A.
inline std::vector<double> surface_distances(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims(), b.dims(), "surface_distances");
  require(a.count() > 0 && b.count() > 0, ErrorKind::metric, "surface distance of an empty mask");
  const BinaryMask ba = boundary(a), bb = boundary(b);
  const auto to_b = squared_distance_transform(bb);
  const auto to_a = squared_distance_transform(ba);
  std::vector<double> out;
  for (std::size_t i = 0; i < ba.size(); ++i)
    if (ba[i]) out.push_back(std::sqrt(static_cast<double>(to_b[i])));
  for (std::size_t i = 0; i < bb.size(); ++i)
    if (bb[i]) out.push_back(std::sqrt(static_cast<double>(to_a[i])));
  return out;
}

/// 95th percentile of the pooled symmetric surface distances, voxel units.
inline double hd95(const BinaryMask& a, const BinaryMask& b) {
  return percentile(surface_distances(a, b), 0.95);
}

/// Classic Hausdorff distance (maximum of the pooled list).
inline double hausdorff(const BinaryMask& a, const BinaryMask& b) {
  const auto d = surface_distances(a, b);
  return *std::max_element(d.begin(), d.end());
}

struct MetricRow {
  std::string organ;
  double dice = 0;
  double hd95 = 0;
};

inline MetricRow evaluate(const std::string& organ, const BinaryMask& pred, const BinaryMask& truth) {
  return {organ, dice_score(pred, truth), hd95(pred, truth)};
}

/// `organ,dice,hd95` with a header row; values in shortest round-trip form.
inline std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = "organ,dice,hd95\n";
  char buf[64];
  for (const auto& r : rows) {
    out += r.organ;
    for (double v : {r.dice, r.hd95}) {
      const auto res = std::to_chars(buf, buf + sizeof buf, v);
      out += ',';
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

}  // namespace pwseg
