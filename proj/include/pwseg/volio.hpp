#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pwseg/config.hpp"
#include "pwseg/error.hpp"
#include "pwseg/points.hpp"
#include "pwseg/volume.hpp"

namespace pwseg {

// ---------------------------------------------------------------------------
// .pvol container
//
//   offset  size  field
//        0     4  magic "PVOL"
//        4     4  version, u32 LE, = 1
//        8     1  dtype: 0 mask (one byte per voxel, 0/1), 1 f32 LE, 2 f64 LE
//        9    12  X, Y, Z as u32 LE
//       21     -  payload, x-fastest, no padding
// ---------------------------------------------------------------------------

enum class PvolDtype : std::uint8_t { mask = 0, f32 = 1, f64 = 2 };

inline constexpr std::size_t kPvolHeaderSize = 21;
inline constexpr std::uint32_t kPvolVersion = 1;

constexpr std::size_t dtype_size(PvolDtype t) {
  switch (t) {
    case PvolDtype::mask: return 1;
    case PvolDtype::f32: return 4;
    case PvolDtype::f64: return 8;
  }
  return 0;
}

struct PvolHeader {
  PvolDtype dtype = PvolDtype::f64;
  Dims dims;
};

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path + "' for reading");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(static_cast<bool>(out), ErrorKind::io, "write to '" + path + "' failed");
}

inline std::vector<std::uint8_t> encode_header(const PvolHeader& h) {
  std::vector<std::uint8_t> out{'P', 'V', 'O', 'L'};
  put_le<std::uint32_t>(out, kPvolVersion);
  out.push_back(static_cast<std::uint8_t>(h.dtype));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.dims.x));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.dims.y));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(h.dims.z));
  return out;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_pvol(const BinaryMask& mask) {
  auto out = detail::encode_header({PvolDtype::mask, mask.dims()});
  out.insert(out.end(), mask.data().begin(), mask.data().end());
  return out;
}

inline std::vector<std::uint8_t> encode_pvol(const VolumeGrid& vol, PvolDtype dtype = PvolDtype::f64) {
  require(dtype != PvolDtype::mask, ErrorKind::parameter, "use a BinaryMask for dtype 0");
  auto out = detail::encode_header({dtype, vol.dims()});
  out.reserve(out.size() + vol.size() * dtype_size(dtype));
  for (double v : vol.data()) {
    if (dtype == PvolDtype::f32)
      detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      detail::put_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

using PvolContent = std::variant<VolumeGrid, BinaryMask>;

inline PvolHeader decode_pvol_header(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= kPvolHeaderSize, ErrorKind::format, "file shorter than pvol header");
  require(std::memcmp(bytes.data(), "PVOL", 4) == 0, ErrorKind::format, "bad magic");
  require(detail::get_le<std::uint32_t>(bytes.data() + 4) == kPvolVersion, ErrorKind::format,
          "unsupported version");
  const std::uint8_t dt = bytes[8];
  require(dt <= 2, ErrorKind::format, "unknown dtype " + std::to_string(dt));
  const auto x = detail::get_le<std::uint32_t>(bytes.data() + 9);
  const auto y = detail::get_le<std::uint32_t>(bytes.data() + 13);
  const auto z = detail::get_le<std::uint32_t>(bytes.data() + 17);
  require(x && y && z, ErrorKind::format, "zero extent in header");
  PvolHeader h{static_cast<PvolDtype>(dt), {x, y, z}};
  const std::size_t payload = h.dims.count() * dtype_size(h.dtype);
  require(bytes.size() == kPvolHeaderSize + payload, ErrorKind::format,
          "payload length " + std::to_string(bytes.size() - kPvolHeaderSize) + " != expected " +
              std::to_string(payload));
  return h;
}

inline PvolContent decode_pvol(const std::vector<std::uint8_t>& bytes) {
  const PvolHeader h = decode_pvol_header(bytes);
  const std::uint8_t* p = bytes.data() + kPvolHeaderSize;
  const std::size_t n = h.dims.count();
  if (h.dtype == PvolDtype::mask) {
    std::vector<std::uint8_t> data(p, p + n);
    for (auto v : data) require(v <= 1, ErrorKind::format, "mask byte not 0/1");
    return BinaryMask(h.dims, std::move(data));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (h.dtype == PvolDtype::f32)
      data[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i));
    else
      data[i] = std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 8 * i));
  }
  return VolumeGrid(h.dims, std::move(data));
}

inline void write_pvol(const std::string& path, const BinaryMask& mask) {
  detail::write_file(path, encode_pvol(mask));
}

inline void write_pvol(const std::string& path, const VolumeGrid& vol,
                       PvolDtype dtype = PvolDtype::f64) {
  detail::write_file(path, encode_pvol(vol, dtype));
}

inline PvolContent read_pvol(const std::string& path) { return decode_pvol(detail::read_file(path)); }

/// Reads a scalar volume; a mask file is promoted to 0/1 values.
inline VolumeGrid read_pvol_volume(const std::string& path) {
  auto content = read_pvol(path);
  if (auto* v = std::get_if<VolumeGrid>(&content)) return std::move(*v);
  const auto& m = std::get<BinaryMask>(content);
  std::vector<double> data(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) data[i] = m[i] ? 1.0 : 0.0;
  return VolumeGrid(m.dims(), std::move(data));
}

/// Reads a mask; a scalar volume is thresholded at 0.5.
inline BinaryMask read_pvol_mask(const std::string& path) {
  auto content = read_pvol(path);
  if (auto* m = std::get_if<BinaryMask>(&content)) return std::move(*m);
  const auto& v = std::get<VolumeGrid>(content);
  BinaryMask m(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) m.set(i, v[i] >= 0.5);
  return m;
}

// ---------------------------------------------------------------------------
// key = value text files
// ---------------------------------------------------------------------------

struct KeyValue {
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

/// Splits `key = value` lines. `#` starts a comment; blank lines are skipped.
inline std::vector<KeyValue> parse_key_values(std::string_view text) {
  std::vector<KeyValue> out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    require(eq != std::string_view::npos, ErrorKind::config,
            "line " + std::to_string(line_no) + ": expected 'key = value'");
    KeyValue kv{std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))), line_no};
    require(!kv.key.empty(), ErrorKind::config, "line " + std::to_string(line_no) + ": empty key");
    out.push_back(std::move(kv));
  }
  return out;
}

inline std::string read_text(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return {bytes.begin(), bytes.end()};
}

inline double parse_real(std::string_view s, const std::string& key) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  require(ec == std::errc() && ptr == end && std::isfinite(v), ErrorKind::config,
          key + ": cannot parse '" + std::string(s) + "' as a real number");
  return v;
}

inline std::uint64_t parse_unsigned(std::string_view s, const std::string& key) {
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  require(ec == std::errc() && ptr == end, ErrorKind::config,
          key + ": cannot parse '" + std::string(s) + "' as a nonnegative integer");
  return v;
}

/// Comma-separated reals, e.g. "16.5, 16, 16".
inline std::vector<double> parse_real_list(std::string_view s, const std::string& key) {
  std::vector<double> out;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(parse_real(trim(s.substr(0, comma)), key));
    if (comma == std::string_view::npos) break;
    s = s.substr(comma + 1);
  }
  return out;
}

inline Dims parse_dims(std::string_view s, const std::string& key = "dims") {
  std::vector<std::uint64_t> v;
  while (true) {
    const auto comma = s.find(',');
    v.push_back(parse_unsigned(trim(s.substr(0, comma)), key));
    if (comma == std::string_view::npos) break;
    s = s.substr(comma + 1);
  }
  require(v.size() == 3, ErrorKind::config, key + ": expected X,Y,Z");
  try {
    return checked_dims(v[0], v[1], v[2]);
  } catch (const Error& e) {
    fail(ErrorKind::config, key + ": " + e.what());
  }
}

namespace detail {

struct ConfigField {
  std::function<void(PipelineConfig&, const std::string&, const std::string&)> parse;
  std::function<std::string(const PipelineConfig&)> format;
};

inline std::string fmt_real(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

template <class T>
ConfigField real_field(T PipelineConfig::*m) {
  return {[m](PipelineConfig& c, const std::string& k, const std::string& v) { c.*m = parse_real(v, k); },
          [m](const PipelineConfig& c) { return fmt_real(c.*m); }};
}

template <class T>
ConfigField size_field(T PipelineConfig::*m) {
  return {[m](PipelineConfig& c, const std::string& k, const std::string& v) {
            c.*m = static_cast<T>(parse_unsigned(v, k));
          },
          [m](const PipelineConfig& c) { return std::to_string(c.*m); }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"kernel_variance",
       {[](PipelineConfig& c, const std::string& k, const std::string& v) {
          if (v == "auto")
            c.kernel_variance.reset();
          else
            c.kernel_variance = parse_real(v, k);
        },
        [](const PipelineConfig& c) {
          return c.kernel_variance ? fmt_real(*c.kernel_variance) : std::string("auto");
        }}},
      {"threshold_T", real_field(&PipelineConfig::threshold_T)},
      {"point_count_n", size_field(&PipelineConfig::point_count_n)},
      {"kl_prior_variance", real_field(&PipelineConfig::kl_prior_variance)},
      {"kl_weight_w", real_field(&PipelineConfig::kl_weight_w)},
      {"mc_samples_M", size_field(&PipelineConfig::mc_samples_M)},
      {"window_overlap", real_field(&PipelineConfig::window_overlap)},
      {"layers_L", size_field(&PipelineConfig::layers_L)},
      {"embed_dim_K", size_field(&PipelineConfig::embed_dim_K)},
      {"patch_size_P", size_field(&PipelineConfig::patch_size_P)},
      {"heads_H", size_field(&PipelineConfig::heads_H)},
      {"score_hidden", size_field(&PipelineConfig::score_hidden)},
      {"mlp_hidden", size_field(&PipelineConfig::mlp_hidden)},
      {"learning_rate", real_field(&PipelineConfig::learning_rate)},
      {"iterations", size_field(&PipelineConfig::iterations)},
      {"batch_size", size_field(&PipelineConfig::batch_size)},
      {"weight_decay", real_field(&PipelineConfig::weight_decay)},
      {"adam_beta1", real_field(&PipelineConfig::adam_beta1)},
      {"adam_beta2", real_field(&PipelineConfig::adam_beta2)},
      {"adam_eps", real_field(&PipelineConfig::adam_eps)},
  };
  return fields;
}

}  // namespace detail

/// Applies `key = value` lines on top of `base`. Unknown keys are rejected and
/// the result is validated.
inline PipelineConfig parse_config(std::string_view text, PipelineConfig base = {}) {
  const auto& fields = detail::config_fields();
  for (const auto& kv : parse_key_values(text)) {
    const auto it = fields.find(kv.key);
    require(it != fields.end(), ErrorKind::config,
            "line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
    it->second.parse(base, kv.key, kv.value);
  }
  base.validate();
  return base;
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = {}) {
  return parse_config(read_text(path), std::move(base));
}

/// Every key in canonical order; parse_config(format_config(c)) == c.
inline std::string format_config(const PipelineConfig& c) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.format(c) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// points text: one "x y z" triple per line
// ---------------------------------------------------------------------------

inline std::string format_points(const PointSet& points) {
  std::string out;
  for (const auto& p : points)
    out += std::to_string(p.x) + " " + std::to_string(p.y) + " " + std::to_string(p.z) + "\n";
  return out;
}

inline PointSet parse_points(std::string_view text) {
  std::vector<Point> pts;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::istringstream ls(line);
    Point p;
    std::string extra;
    require(static_cast<bool>(ls >> p.x >> p.y >> p.z) && !(ls >> extra), ErrorKind::format,
            "points line " + std::to_string(line_no) + ": expected 'x y z'");
    pts.push_back(p);
  }
  return PointSet(std::move(pts));
}

inline void write_points(const std::string& path, const PointSet& points) {
  const auto text = format_points(points);
  detail::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline PointSet read_points(const std::string& path) { return parse_points(read_text(path)); }

inline void write_text(const std::string& path, const std::string& text) {
  detail::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace pwseg
