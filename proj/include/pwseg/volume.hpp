#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pwseg/error.hpp"

namespace pwseg {

/// Voxel counts along x, y, z. Storage is always x-fastest.
struct Dims {
  std::size_t x = 1, y = 1, z = 1;

  std::size_t count() const { return x * y * z; }
  bool contains(std::int64_t px, std::int64_t py, std::int64_t pz) const {
    return px >= 0 && py >= 0 && pz >= 0 && static_cast<std::size_t>(px) < x &&
           static_cast<std::size_t>(py) < y && static_cast<std::size_t>(pz) < z;
  }
  std::string str() const {
    return std::to_string(x) + "x" + std::to_string(y) + "x" + std::to_string(z);
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

/// Rejects zero extents and voxel counts that overflow size_t or exceed the
/// 32-bit range of the on-disk header.
inline Dims checked_dims(std::size_t x, std::size_t y, std::size_t z) {
  require(x >= 1 && y >= 1 && z >= 1, ErrorKind::shape, "volume dims must be >= 1");
  constexpr std::size_t kMaxExtent = std::numeric_limits<std::uint32_t>::max();
  require(x <= kMaxExtent && y <= kMaxExtent && z <= kMaxExtent, ErrorKind::shape,
          "volume extent exceeds 32 bits");
  constexpr std::size_t kMax = std::numeric_limits<std::size_t>::max() / sizeof(double);
  require(y <= kMax / x && z <= kMax / (x * y), ErrorKind::shape, "volume dims overflow");
  return {x, y, z};
}

inline std::size_t voxel_index(const Dims& d, std::size_t x, std::size_t y, std::size_t z) {
  require(x < d.x && y < d.y && z < d.z, ErrorKind::shape,
          "voxel (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(z) +
              ") outside " + d.str());
  return x + d.x * (y + d.y * z);
}

/// Inverse of voxel_index.
inline std::array<std::size_t, 3> voxel_coords(const Dims& d, std::size_t index) {
  require(index < d.count(), ErrorKind::shape, "linear index out of range");
  return {index % d.x, (index / d.x) % d.y, index / (d.x * d.y)};
}

enum class ValueKind : std::uint8_t { intensity, probability, logit };

/// Dense 3D scalar field.
class VolumeGrid {
 public:
  VolumeGrid(Dims dims, double fill, ValueKind kind = ValueKind::intensity)
      : dims_(checked_dims(dims.x, dims.y, dims.z)), kind_(kind), data_(dims_.count(), fill) {
    validate();
  }

  VolumeGrid(Dims dims, std::vector<double> data, ValueKind kind = ValueKind::intensity)
      : dims_(checked_dims(dims.x, dims.y, dims.z)), kind_(kind), data_(std::move(data)) {
    require(data_.size() == dims_.count(), ErrorKind::shape,
            "volume data length " + std::to_string(data_.size()) + " != " + dims_.str());
    validate();
  }

  const Dims& dims() const { return dims_; }
  ValueKind kind() const { return kind_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[voxel_index(dims_, x, y, z)];
  }

  friend bool operator==(const VolumeGrid&, const VolumeGrid&) = default;

 private:
  void validate() const {
    if (kind_ != ValueKind::probability) return;
    for (double v : data_)
      require(v >= 0.0 && v <= 1.0, ErrorKind::numeric, "probability volume value outside [0,1]");
  }

  Dims dims_;
  ValueKind kind_;
  std::vector<double> data_;
};

inline VolumeGrid new_volume(Dims dims, double fill) { return VolumeGrid(dims, fill); }

/// Dense 3D boolean field. Stored one byte per voxel.
class BinaryMask {
 public:
  explicit BinaryMask(Dims dims)
      : dims_(checked_dims(dims.x, dims.y, dims.z)), data_(dims_.count(), 0) {}

  BinaryMask(Dims dims, std::vector<std::uint8_t> data)
      : dims_(checked_dims(dims.x, dims.y, dims.z)), data_(std::move(data)) {
    require(data_.size() == dims_.count(), ErrorKind::shape,
            "mask data length " + std::to_string(data_.size()) + " != " + dims_.str());
    for (auto& v : data_) v = v ? 1 : 0;
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::uint8_t>& data() const { return data_; }

  bool operator[](std::size_t i) const { return data_[i] != 0; }
  bool at(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[voxel_index(dims_, x, y, z)] != 0;
  }
  void set(std::size_t i, bool v) { data_[i] = v ? 1 : 0; }
  void set(std::size_t x, std::size_t y, std::size_t z, bool v) {
    data_[voxel_index(dims_, x, y, z)] = v ? 1 : 0;
  }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  Dims dims_;
  std::vector<std::uint8_t> data_;
};

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  require(a == b, ErrorKind::shape, std::string(what) + ": dims " + a.str() + " vs " + b.str());
}

}  // namespace pwseg
