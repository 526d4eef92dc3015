#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/points.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

/// Dense confidence map synthesised from sparse points, values in [0, 1].
struct PseudoLabel {
  VolumeGrid confidence;
  double kernel_variance;
};

/// exp(-|query - point|^2 / (2 sigma2))
inline double gaussian_kernel(const Point& point, const Point& query, double sigma2) {
  require(sigma2 > 0.0, ErrorKind::parameter, "kernel variance must be > 0");
  return std::exp(-static_cast<double>(squared_distance(point, query)) / (2.0 * sigma2));
}

/// Sum of one Gaussian per point over the whole grid, then min-max
/// normalised to [0, 1]. A constant field (only possible on tiny grids)
/// normalises to all ones.
///
/// The kernel factorises over axes, so each point costs three 1D tables and
/// an outer product rather than X*Y*Z exponentials.
inline PseudoLabel generate_pseudo_label(const PointSet& points, Dims dims, double sigma2) {
  require(!points.empty(), ErrorKind::annotation, "pseudo label needs at least one point");
  require(sigma2 > 0.0, ErrorKind::parameter, "kernel variance must be > 0");
  dims = checked_dims(dims.x, dims.y, dims.z);
  points.require_within(dims);

  std::vector<double> acc(dims.count(), 0.0);
  std::vector<double> gx(dims.x), gy(dims.y), gz(dims.z);
  auto table = [sigma2](std::vector<double>& g, std::int64_t centre) {
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = static_cast<double>(static_cast<std::int64_t>(i) - centre);
      g[i] = std::exp(-d * d / (2.0 * sigma2));
    }
  };
  for (const auto& p : points) {
    table(gx, p.x);
    table(gy, p.y);
    table(gz, p.z);
    std::size_t i = 0;
    for (std::size_t z = 0; z < dims.z; ++z)
      for (std::size_t y = 0; y < dims.y; ++y) {
        const double yz = gy[y] * gz[z];
        for (std::size_t x = 0; x < dims.x; ++x, ++i) acc[i] += gx[x] * yz;
      }
  }

  const auto [lo_it, hi_it] = std::minmax_element(acc.begin(), acc.end());
  const double lo = *lo_it, hi = *hi_it;
  const double range = hi - lo;
  for (auto& v : acc) v = range > 0.0 ? (v - lo) / range : 1.0;
  return {VolumeGrid(dims, std::move(acc), ValueKind::probability), sigma2};
}

/// Foreground iff confidence >= T.
inline BinaryMask threshold_label(const VolumeGrid& confidence, double T) {
  require(T > 0.0 && T < 1.0, ErrorKind::parameter, "threshold must lie in (0,1)");
  BinaryMask out(confidence.dims());
  for (std::size_t i = 0; i < confidence.size(); ++i) out.set(i, confidence[i] >= T);
  return out;
}

inline BinaryMask threshold_label(const PseudoLabel& label, double T) {
  return threshold_label(label.confidence, T);
}

/// Squared mean nearest-neighbour distance among the points.
inline double default_kernel_variance(const PointSet& points) {
  require(points.size() >= 2, ErrorKind::parameter,
          "automatic kernel variance needs at least two points");
  double sum = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::int64_t best = std::numeric_limits<std::int64_t>::max();
    for (std::size_t j = 0; j < points.size(); ++j)
      if (i != j) best = std::min(best, squared_distance(points[i], points[j]));
    sum += std::sqrt(static_cast<double>(best));
  }
  const double sigma = sum / static_cast<double>(points.size());
  return sigma * sigma;
}

}  // namespace pwseg
