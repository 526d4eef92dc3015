#pragma once

#include <compare>
#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

struct Point {
  std::int64_t x = 0, y = 0, z = 0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Orders points the way x-fastest linear indices do: by z, then y, then x.
/// The order does not depend on the volume dims.
inline bool linear_order_less(const Point& a, const Point& b) {
  return std::tie(a.z, a.y, a.x) < std::tie(b.z, b.y, b.x);
}

inline std::int64_t squared_distance(const Point& a, const Point& b) {
  const std::int64_t dx = a.x - b.x, dy = a.y - b.y, dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

/// Ordered, duplicate-free list of integer voxel coordinates.
class PointSet {
 public:
  PointSet() = default;
  explicit PointSet(std::vector<Point> points) : points_(std::move(points)) {
    std::set<std::tuple<std::int64_t, std::int64_t, std::int64_t>> seen;
    for (const auto& p : points_)
      require(seen.emplace(p.x, p.y, p.z).second, ErrorKind::parameter,
              "duplicate point (" + std::to_string(p.x) + "," + std::to_string(p.y) + "," +
                  std::to_string(p.z) + ")");
  }

  const std::vector<Point>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Point& operator[](std::size_t i) const { return points_[i]; }
  auto begin() const { return points_.begin(); }
  auto end() const { return points_.end(); }

  void require_within(const Dims& dims) const {
    for (const auto& p : points_)
      require(dims.contains(p.x, p.y, p.z), ErrorKind::shape,
              "point (" + std::to_string(p.x) + "," + std::to_string(p.y) + "," +
                  std::to_string(p.z) + ") outside " + dims.str());
  }

  friend bool operator==(const PointSet&, const PointSet&) = default;

 private:
  std::vector<Point> points_;
};

/// All true voxels of a mask in linear-index order.
inline PointSet mask_points(const BinaryMask& mask) {
  std::vector<Point> out;
  const Dims& d = mask.dims();
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x)
        if (mask[x + d.x * (y + d.y * z)])
          out.push_back({static_cast<std::int64_t>(x), static_cast<std::int64_t>(y),
                         static_cast<std::int64_t>(z)});
  return PointSet(std::move(out));
}

}  // namespace pwseg
