// Versioned binary container for model weights and optional optimizer state.
//
// Layout (all integers little-endian, written byte-by-byte so the format is
// identical on every host):
//
//   magic "TTCKPT"
//   u32  format version (currently 1)
//   u32  config length, then the serialized config text
//   u64  parameter count
//   per parameter, in enumeration order:
//     u32 name length, name bytes
//     u8  dtype code (0 = f64, 1 = f32)
//     u32 rank, then u32 extents
//     raw element data
//   u8   optimizer-state flag
//   if set: u64 step count, then per parameter the first- and second-moment
//   arrays (same dtype and element count as the parameter)
//
// Loading parses the embedded config, rebuilds the model skeleton, and then
// overwrites every tensor, validating name order, dtype, and shape along the
// way.  Each failure mode carries its own CheckpointError code so callers can
// distinguish a truncated file from a config or shape mismatch.
// save -> load -> save reproduces the original file byte for byte.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tt/config.hpp"
#include "tt/errors.hpp"
#include "tt/model.hpp"
#include "tt/optimizer.hpp"

namespace tt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
constexpr std::uint8_t dtype_code() {
  static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>,
                "checkpoints store f64 or f32 tensors");
  return std::is_same_v<T, double> ? 0 : 1;
}

inline void wr_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out) throw IoError("checkpoint: short write");
}

inline void wr_u8(std::ostream& out, std::uint8_t v) { wr_bytes(out, &v, 1); }

inline void wr_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  wr_bytes(out, b, 4);
}

inline void wr_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  wr_bytes(out, b, 8);
}

template <typename T>
void wr_reals(std::ostream& out, const std::vector<T>& vals) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  for (T v : vals) {
    const Bits raw = std::bit_cast<Bits>(v);
    unsigned char b[sizeof(Bits)];
    for (size_t i = 0; i < sizeof(Bits); ++i)
      b[i] = static_cast<unsigned char>(raw >> (8 * i));
    wr_bytes(out, b, sizeof(Bits));
  }
}

inline void rd_exact(std::istream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in.gcount()) != n)
    throw CheckpointError(CheckpointError::Code::truncated,
                          "checkpoint ends mid-record");
}

inline std::uint32_t rd_u32(std::istream& in) {
  unsigned char b[4];
  rd_exact(in, b, 4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint64_t rd_u64(std::istream& in) {
  unsigned char b[8];
  rd_exact(in, b, 8);
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

inline std::uint8_t rd_u8(std::istream& in) {
  unsigned char b = 0;
  rd_exact(in, &b, 1);
  return b;
}

inline std::string rd_string(std::istream& in, std::uint32_t len) {
  if (len > (1u << 24))
    throw CheckpointError(CheckpointError::Code::truncated,
                          "implausible string length " + std::to_string(len) +
                              " (corrupt file?)");
  std::string s(len, '\0');
  if (len) rd_exact(in, s.data(), len);
  return s;
}

template <typename T>
void rd_reals(std::istream& in, std::vector<T>& vals) {
  using Bits = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  for (auto& v : vals) {
    unsigned char b[sizeof(Bits)];
    rd_exact(in, b, sizeof(Bits));
    Bits raw = 0;
    for (size_t i = sizeof(Bits); i-- > 0;) raw = (raw << 8) | b[i];
    v = std::bit_cast<T>(raw);
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(const TtModel<T>& m, const std::string& path,
                     const AdamW<T>* opt = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint '" + path + "'");
  out.write("TTCKPT", 6);
  detail::wr_u32(out, kCheckpointVersion);
  const std::string cfg_text = serialize_config(m.cfg);
  detail::wr_u32(out, static_cast<std::uint32_t>(cfg_text.size()));
  detail::wr_bytes(out, cfg_text.data(), cfg_text.size());
  detail::wr_u64(out, static_cast<std::uint64_t>(m.named.size()));
  for (const auto& [name, t] : m.named) {
    detail::wr_u32(out, static_cast<std::uint32_t>(name.size()));
    detail::wr_bytes(out, name.data(), name.size());
    detail::wr_u8(out, detail::dtype_code<T>());
    detail::wr_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i)
      detail::wr_u32(out, static_cast<std::uint32_t>(t.dim(i)));
    detail::wr_reals(out, t.data());
  }
  if (opt) {
    detail::wr_u8(out, 1);
    detail::wr_u64(out, static_cast<std::uint64_t>(opt->step_count()));
    const auto& mm = opt->first_moments();
    const auto& vv = opt->second_moments();
    if (mm.size() != m.named.size())
      throw ContractError("save_checkpoint: optimizer tracks " +
                          std::to_string(mm.size()) + " slots for " +
                          std::to_string(m.named.size()) + " parameters");
    for (size_t p = 0; p < mm.size(); ++p) {
      detail::wr_reals(out, mm[p]);
      detail::wr_reals(out, vv[p]);
    }
  } else {
    detail::wr_u8(out, 0);
  }
  out.flush();
  if (!out) throw IoError("short write to checkpoint '" + path + "'");
}

// Everything a checkpoint holds; the optimizer arrays are in parameter
// enumeration order and feed AdamW::restore.
template <typename T>
struct LoadedCheckpoint {
  TtModel<T> model;
  bool has_optimizer = false;
  long long opt_step = 0;
  std::vector<std::vector<T>> opt_m;
  std::vector<std::vector<T>> opt_v;
};

template <typename T = double>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  using Code = CheckpointError::Code;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");

  char magic[6];
  detail::rd_exact(in, magic, 6);
  if (std::string(magic, 6) != "TTCKPT")
    throw CheckpointError(Code::bad_magic, "'" + path + "' is not a checkpoint");
  const std::uint32_t version = detail::rd_u32(in);
  if (version != kCheckpointVersion)
    throw CheckpointError(Code::bad_version,
                          "checkpoint version " + std::to_string(version) +
                              ", reader supports " +
                              std::to_string(kCheckpointVersion));

  const std::uint32_t cfg_len = detail::rd_u32(in);
  const std::string cfg_text = detail::rd_string(in, cfg_len);
  ModelConfig cfg;
  try {
    cfg = parse_config(cfg_text);
    validate(cfg);
  } catch (const ConfigError& e) {
    throw CheckpointError(Code::config_mismatch,
                          std::string("embedded config is invalid: ") + e.what());
  }

  LoadedCheckpoint<T> lc;
  lc.model = build<T>(cfg, 0);
  const std::uint64_t n = detail::rd_u64(in);
  if (n != lc.model.named.size())
    throw CheckpointError(Code::config_mismatch,
                          "checkpoint stores " + std::to_string(n) +
                              " tensors, config implies " +
                              std::to_string(lc.model.named.size()));
  for (auto& [name, t] : lc.model.named) {
    const std::string stored = detail::rd_string(in, detail::rd_u32(in));
    if (stored != name)
      throw CheckpointError(Code::name_mismatch, "expected tensor '" + name +
                                                     "', found '" + stored + "'");
    const std::uint8_t dtype = detail::rd_u8(in);
    if (dtype != detail::dtype_code<T>())
      throw CheckpointError(Code::dtype_mismatch,
                            "tensor '" + name + "' has dtype code " +
                                std::to_string(dtype) + ", expected " +
                                std::to_string(detail::dtype_code<T>()));
    const std::uint32_t rank = detail::rd_u32(in);
    Shape dims(rank);
    for (auto& d : dims) d = static_cast<int>(detail::rd_u32(in));
    if (dims != t.shape())
      throw CheckpointError(Code::shape_mismatch,
                            "tensor '" + name + "' stored as " +
                                format_shape(dims) + ", config implies " +
                                format_shape(t.shape()));
    detail::rd_reals(in, t.data_mut());
  }

  if (detail::rd_u8(in) != 0) {
    lc.has_optimizer = true;
    lc.opt_step = static_cast<long long>(detail::rd_u64(in));
    lc.opt_m.resize(lc.model.named.size());
    lc.opt_v.resize(lc.model.named.size());
    for (size_t p = 0; p < lc.model.named.size(); ++p) {
      const size_t count =
          static_cast<size_t>(lc.model.named[p].second.size());
      lc.opt_m[p].resize(count);
      lc.opt_v[p].resize(count);
      detail::rd_reals(in, lc.opt_m[p]);
      detail::rd_reals(in, lc.opt_v[p]);
    }
  }
  return lc;
}

}  // namespace tt
