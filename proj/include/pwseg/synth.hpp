#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/rng.hpp"
#include "pwseg/volio.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

struct Ellipsoid {
  double cx = 0, cy = 0, cz = 0;  // voxel-centre coordinates
  double a = 1, b = 1, c = 1;     // semi-axes in voxels
  double intensity = 1.0;

  bool contains(double x, double y, double z) const {
    const double u = (x - cx) / a, v = (y - cy) / b, w = (z - cz) / c;
    return u * u + v * v + w * w <= 1.0;
  }
};

struct PhantomSpec {
  Dims dims{32, 32, 32};
  std::vector<Ellipsoid> shapes;
  double background = 0.0;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  /// Voxel centres sit at integer coordinates, so the volume spans
  /// [-0.5, extent - 0.5] on each axis.
  void validate() const {
    checked_dims(dims.x, dims.y, dims.z);
    require(noise_std >= 0.0, ErrorKind::config, "noise_std must be >= 0");
    auto fits = [](double c, double r, std::size_t n) {
      return c - r >= -0.5 && c + r <= static_cast<double>(n) - 0.5;
    };
    for (std::size_t i = 0; i < shapes.size(); ++i) {
      const auto& s = shapes[i];
      const std::string tag = "shape " + std::to_string(i);
      require(s.a > 0 && s.b > 0 && s.c > 0, ErrorKind::config, tag + ": semi-axes must be > 0");
      require(fits(s.cx, s.a, dims.x) && fits(s.cy, s.b, dims.y) && fits(s.cz, s.c, dims.z),
              ErrorKind::config, tag + ": ellipsoid extends outside " + dims.str());
    }
  }
};

struct Phantom {
  VolumeGrid intensity;
  BinaryMask truth;
};

/// Truth is the union of the ellipsoids; intensity is the foreground value of
/// the first containing shape (background otherwise) plus N(0, noise_std^2)
/// noise drawn in linear-index order from Rng(seed). A normal is drawn for
/// every voxel regardless of noise_std.
inline Phantom render_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Dims d = spec.dims;
  BinaryMask truth(d);
  std::vector<double> values(d.count());
  Rng rng(spec.seed);
  std::size_t i = 0;
  for (std::size_t z = 0; z < d.z; ++z)
    for (std::size_t y = 0; y < d.y; ++y)
      for (std::size_t x = 0; x < d.x; ++x, ++i) {
        double base = spec.background;
        for (const auto& s : spec.shapes) {
          if (s.contains(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z))) {
            truth.set(i, true);
            base = s.intensity;
            break;
          }
        }
        values[i] = base + spec.noise_std * rng.normal();
      }
  return {VolumeGrid(d, std::move(values)), std::move(truth)};
}

/// Sphere of the given radius centred in the volume.
inline PhantomSpec sphere_phantom(Dims dims, double radius, double noise_std, std::uint64_t seed) {
  PhantomSpec spec;
  spec.dims = dims;
  spec.noise_std = noise_std;
  spec.seed = seed;
  spec.shapes.push_back({(static_cast<double>(dims.x) - 1) / 2, (static_cast<double>(dims.y) - 1) / 2,
                         (static_cast<double>(dims.z) - 1) / 2, radius, radius, radius, 1.0});
  return spec;
}

/// Phantom spec text:
///
///     dims = 32,32,32
///     background = 0
///     noise_std = 0.05
///     ellipsoid = cx,cy,cz,a,b,c,intensity   # repeatable
///
/// The seed comes from the caller.
inline PhantomSpec parse_phantom_spec(std::string_view text, std::uint64_t seed) {
  PhantomSpec spec;
  spec.seed = seed;
  for (const auto& kv : parse_key_values(text)) {
    if (kv.key == "dims") {
      spec.dims = parse_dims(kv.value);
    } else if (kv.key == "background") {
      spec.background = parse_real(kv.value, kv.key);
    } else if (kv.key == "noise_std") {
      spec.noise_std = parse_real(kv.value, kv.key);
    } else if (kv.key == "ellipsoid") {
      const auto v = parse_real_list(kv.value, kv.key);
      require(v.size() == 7, ErrorKind::config, "ellipsoid: expected cx,cy,cz,a,b,c,intensity");
      spec.shapes.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6]});
    } else {
      fail(ErrorKind::config, "line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
    }
  }
  spec.validate();
  return spec;
}

}  // namespace pwseg
