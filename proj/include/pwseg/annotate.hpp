#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/points.hpp"
#include "pwseg/rng.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

/// Structuring-element radius used when simulating annotations: a 5x5x5 cube.
inline constexpr std::size_t kAnnotationErosionRadius = 2;

namespace detail {

// Running AND over a window of 2r+1 along one axis; samples outside the
// volume count as background.
inline void erode_axis(std::vector<std::uint8_t>& data, const Dims& d, std::size_t stride,
                       std::size_t extent, std::size_t r) {
  std::vector<std::uint8_t> line(extent);
  std::vector<std::uint8_t> out(extent);
  std::vector<std::size_t> run_end(extent);
  const std::size_t total = d.count();
  for (std::size_t base = 0; base < total; ++base) {
    // Only visit the first voxel of each line along this axis.
    if ((base / stride) % extent != 0) continue;
    for (std::size_t k = 0; k < extent; ++k) line[k] = data[base + k * stride];
    // Length of the run of foreground ending at each k.
    std::size_t run = 0;
    for (std::size_t k = 0; k < extent; ++k) {
      run = line[k] ? run + 1 : 0;
      run_end[k] = run;
    }
    for (std::size_t k = 0; k < extent; ++k) {
      const bool inside = k >= r && k + r < extent;
      out[k] = inside && run_end[k + r] >= 2 * r + 1;
    }
    for (std::size_t k = 0; k < extent; ++k) data[base + k * stride] = out[k];
  }
}

}  // namespace detail

/// Binary erosion by a (2r+1)^3 cube. A voxel survives iff its whole cube lies
/// inside the volume and is foreground. The cube is separable, so this runs
/// as three 1D passes.
inline BinaryMask erode(const BinaryMask& mask, std::size_t radius) {
  require(radius >= 1, ErrorKind::parameter, "erosion radius must be >= 1");
  const Dims& d = mask.dims();
  std::vector<std::uint8_t> data = mask.data();
  detail::erode_axis(data, d, 1, d.x, radius);
  detail::erode_axis(data, d, d.x, d.y, radius);
  detail::erode_axis(data, d, d.x * d.y, d.z, radius);
  return BinaryMask(d, std::move(data));
}

/// Greedy farthest point sampling starting from candidates[first].
///
/// Each step picks the candidate with the largest squared distance to the
/// chosen set; ties go to the smallest linear voxel index. Output is in
/// selection order.
inline PointSet farthest_point_sample_from(const PointSet& candidates, std::size_t k,
                                           std::size_t first) {
  const std::size_t n = candidates.size();
  require(n > 0, ErrorKind::annotation, "farthest point sampling over an empty candidate set");
  require(k >= 1, ErrorKind::annotation, "farthest point sampling needs k >= 1");
  require(k <= n, ErrorKind::annotation,
          "requested " + std::to_string(k) + " points from " + std::to_string(n) + " candidates");
  require(first < n, ErrorKind::annotation, "seed index out of range");

  std::vector<std::int64_t> min_d2(n, std::numeric_limits<std::int64_t>::max());
  std::vector<std::uint8_t> taken(n, 0);
  std::vector<Point> out;
  out.reserve(k);
  std::size_t current = first;
  for (std::size_t step = 0; step < k; ++step) {
    const Point& p = candidates[current];
    out.push_back(p);
    taken[current] = 1;
    if (step + 1 == k) break;
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      min_d2[i] = std::min(min_d2[i], squared_distance(candidates[i], p));
      if (best == n || min_d2[i] > min_d2[best] ||
          (min_d2[i] == min_d2[best] && linear_order_less(candidates[i], candidates[best])))
        best = i;
    }
    current = best;
  }
  return PointSet(std::move(out));
}

/// Farthest point sampling with a uniformly random seed point.
inline PointSet farthest_point_sample(const PointSet& candidates, std::size_t k, Rng& rng) {
  require(!candidates.empty(), ErrorKind::annotation,
          "farthest point sampling over an empty candidate set");
  const auto first = static_cast<std::size_t>(rng.uniform_index(candidates.size()));
  return farthest_point_sample_from(candidates, k, first);
}

/// Simulated sparse annotation: FPS over the voxels that survive erosion of
/// the organ by the 5x5x5 cube.
inline PointSet sample_annotation(const BinaryMask& truth, std::size_t n, Rng& rng) {
  require(n >= 1, ErrorKind::annotation, "annotation needs n >= 1");
  const PointSet region = mask_points(erode(truth, kAnnotationErosionRadius));
  require(region.size() >= n, ErrorKind::annotation,
          "eroded region has " + std::to_string(region.size()) + " voxels, " + std::to_string(n) +
              " points requested");
  return farthest_point_sample(region, n, rng);
}

}  // namespace pwseg
