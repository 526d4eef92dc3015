#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "pwseg/error.hpp"
#include "pwseg/network.hpp"
#include "pwseg/volio.hpp"

namespace pwseg {

// Checkpoint layout (little-endian):
//   "PCKP"  u32 version=1  u32 manifest_bytes  manifest (UTF-8 text)  f64 payload
// The manifest is key = value lines: the architecture keys followed by one
// `tensor = <name> <rows> <cols> <offset>` line per parameter array, offsets
// counted in doubles from the start of the payload.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string checkpoint_manifest(const ModelParams& p) {
  std::ostringstream os;
  const Architecture& a = p.arch;
  os << "grid = " << a.grid.x << ',' << a.grid.y << ',' << a.grid.z << '\n'
     << "patch_size_P = " << a.patch << '\n'
     << "embed_dim_K = " << a.embed << '\n'
     << "heads_H = " << a.heads << '\n'
     << "layers_L = " << a.layers << '\n'
     << "score_hidden = " << a.score_hidden << '\n'
     << "mlp_hidden = " << a.mlp_hidden << '\n';
  std::size_t offset = 0;
  p.for_each([&](const std::string& name, const Matrix& m) {
    os << "tensor = " << name << ' ' << m.rows << ' ' << m.cols << ' ' << offset << '\n';
    offset += m.size();
  });
  return os.str();
}

inline std::vector<std::uint8_t> encode_checkpoint(const ModelParams& p) {
  const std::string manifest = checkpoint_manifest(p);
  std::vector<std::uint8_t> out{'P', 'C', 'K', 'P'};
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint32_t>(manifest.size()));
  out.insert(out.end(), manifest.begin(), manifest.end());
  p.for_each([&](const std::string&, const Matrix& m) {
    for (double v : m.data) detail::put_le(out, std::bit_cast<std::uint64_t>(v));
  });
  return out;
}

inline ModelParams decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "PCKP", 4) == 0, ErrorKind::format,
          "not a checkpoint (bad magic)");
  const auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  require(version == kCheckpointVersion, ErrorKind::format,
          "unsupported checkpoint version " + std::to_string(version));
  const auto mlen = detail::get_le<std::uint32_t>(bytes.data() + 8);
  require(bytes.size() >= 12 + static_cast<std::size_t>(mlen), ErrorKind::format, "truncated checkpoint manifest");
  const std::string manifest(reinterpret_cast<const char*>(bytes.data() + 12), mlen);

  Architecture a;
  struct Entry {
    std::string name;
    std::size_t rows, cols, offset;
  };
  std::vector<Entry> entries;
  try {
    for (const auto& kv : parse_key_values(manifest)) {
      const std::string& k = kv.key;
      if (k == "grid") {
        a.grid = parse_dims(kv.value, k);
      } else if (k == "tensor") {
        std::istringstream is{std::string(kv.value)};
        Entry e;
        require(static_cast<bool>(is >> e.name >> e.rows >> e.cols >> e.offset), ErrorKind::format,
                "bad tensor line in checkpoint manifest");
        entries.push_back(e);
      } else {
        std::size_t* slot = k == "patch_size_P"   ? &a.patch
                            : k == "embed_dim_K"  ? &a.embed
                            : k == "heads_H"      ? &a.heads
                            : k == "layers_L"     ? &a.layers
                            : k == "score_hidden" ? &a.score_hidden
                            : k == "mlp_hidden"   ? &a.mlp_hidden
                                                  : nullptr;
        require(slot != nullptr, ErrorKind::format, "unknown checkpoint manifest key '" + k + "'");
        *slot = static_cast<std::size_t>(parse_unsigned(kv.value, k));
      }
    }
    a.validate();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::format) throw;
    fail(ErrorKind::format, std::string("checkpoint manifest: ") + e.what());
  }

  ModelParams p = zero_params(a);
  const std::size_t payload = 12 + static_cast<std::size_t>(mlen);
  std::size_t i = 0, expected = 0;
  p.for_each([&](const std::string& name, Matrix& m) {
    require(i < entries.size(), ErrorKind::format, "checkpoint is missing tensor " + name);
    const Entry& e = entries[i++];
    require(e.name == name && e.rows == m.rows && e.cols == m.cols && e.offset == expected, ErrorKind::format,
            "checkpoint tensor mismatch at " + name);
    require(bytes.size() >= payload + 8 * (e.offset + m.size()), ErrorKind::format, "truncated checkpoint payload");
    const std::uint8_t* src = bytes.data() + payload + 8 * e.offset;
    for (std::size_t j = 0; j < m.size(); ++j)
      m.data[j] = std::bit_cast<double>(detail::get_le<std::uint64_t>(src + 8 * j));
    expected += m.size();
  });
  require(i == entries.size(), ErrorKind::format, "checkpoint has extra tensors");
  require(bytes.size() == payload + 8 * expected, ErrorKind::format, "checkpoint length mismatch");
  return p;
}

inline void write_checkpoint(const std::string& path, const ModelParams& p) {
  detail::write_file(path, encode_checkpoint(p));
}

inline ModelParams read_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file(path)); }

}  // namespace pwseg
