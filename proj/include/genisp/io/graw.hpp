#pragma once

// GRAW1 container for a Bayer frame.
//
//   "GRAW1\n"                 6 bytes
//   u32 width, u32 height     little-endian
//   char[4] CFA               "RGGB" | "BGGR" | "GRBG" | "GBRG"
//   u16 black_level, u16 white_level
//   u8 cst_present
//   f32[9] CST, row-major     zeros when absent
//   u16[width*height]         samples, row-major

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "genisp/raw_pipeline.hpp"

namespace genisp::io {

inline constexpr char kGrawMagic[] = "GRAW1\n";
inline constexpr std::size_t kGrawMagicSize = 6;
inline constexpr std::size_t kGrawHeaderSize = kGrawMagicSize + 4 + 4 + 4 + 2 + 2 + 1 + 36;

enum class GrawErrc {
  bad_magic,
  truncated,
  unknown_cfa,
  invalid_dimensions,
  invalid_levels,
  invalid_header,
  trailing_data,
  io_error,
};

inline const char* to_string(GrawErrc e) {
  switch (e) {
    case GrawErrc::bad_magic: return "bad_magic";
    case GrawErrc::truncated: return "truncated";
    case GrawErrc::unknown_cfa: return "unknown_cfa";
    case GrawErrc::invalid_dimensions: return "invalid_dimensions";
    case GrawErrc::invalid_levels: return "invalid_levels";
    case GrawErrc::invalid_header: return "invalid_header";
    case GrawErrc::trailing_data: return "trailing_data";
    case GrawErrc::io_error: return "io_error";
  }
  return "unknown";
}

class GrawError : public std::runtime_error {
 public:
  GrawError(GrawErrc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}
  GrawErrc code() const { return code_; }

 private:
  GrawErrc code_;
};

namespace detail {

struct ByteWriter {
  std::vector<std::uint8_t>& out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
};

struct ByteReader {
  std::span<const std::uint8_t> in;
  std::size_t pos = 0;

  void need(std::size_t n, const char* what) const {
    if (in.size() - pos < n) {
      throw GrawError(GrawErrc::truncated, std::string("unexpected end of data reading ") + what);
    }
  }
  std::uint8_t u8(const char* what) {
    need(1, what);
    return in[pos++];
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(in[pos] | (in[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_graw(const BayerFrame& frame) {
  try {
    frame.validate();
  } catch (const FrameError& e) {
    throw GrawError(GrawErrc::invalid_dimensions, e.what());
  }
  if (!frame.uniform_black_level()) {
    throw GrawError(GrawErrc::invalid_levels, "GRAW stores a single black level");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kGrawHeaderSize + frame.samples.size() * 2);
  out.insert(out.end(), kGrawMagic, kGrawMagic + kGrawMagicSize);
  detail::ByteWriter w{out};
  w.u32(frame.width);
  w.u32(frame.height);
  const auto cfa = cfa_name(frame.cfa);
  out.insert(out.end(), cfa.begin(), cfa.end());
  w.u16(frame.black_level[0]);
  w.u16(frame.white_level);
  w.u8(frame.cst ? 1 : 0);
  for (std::size_t i = 0; i < 9; ++i) w.f32(frame.cst ? frame.cst->m[i] : 0.0f);
  for (std::uint16_t s : frame.samples) w.u16(s);
  return out;
}

inline BayerFrame decode_graw(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r{bytes};
  if (bytes.size() < kGrawMagicSize ||
      std::memcmp(bytes.data(), kGrawMagic, kGrawMagicSize) != 0) {
    throw GrawError(GrawErrc::bad_magic, "not a GRAW1 file");
  }
  r.pos = kGrawMagicSize;
  BayerFrame f;
  f.width = r.u32("width");
  f.height = r.u32("height");
  r.need(4, "CFA");
  const std::string cfa(reinterpret_cast<const char*>(bytes.data() + r.pos), 4);
  r.pos += 4;
  const auto parsed = parse_cfa(cfa);
  if (!parsed) throw GrawError(GrawErrc::unknown_cfa, "unknown CFA pattern '" + cfa + "'");
  f.cfa = *parsed;
  f.set_black_level(r.u16("black_level"));
  f.white_level = r.u16("white_level");
  const std::uint8_t cst_present = r.u8("cst_present");
  CstMatrix cst;
  for (std::size_t i = 0; i < 9; ++i) cst.m[i] = r.f32("CST");
  if (cst_present > 1) {
    throw GrawError(GrawErrc::invalid_header, "cst_present must be 0 or 1");
  }
  if (cst_present) f.cst = cst;
  if (f.width == 0 || f.height == 0 || f.width % 2 || f.height % 2) {
    throw GrawError(GrawErrc::invalid_dimensions, "dimensions must be positive and even, got " +
                                                      std::to_string(f.width) + "x" +
                                                      std::to_string(f.height));
  }
  if (f.white_level <= f.black_level[0]) {
    throw GrawError(GrawErrc::invalid_levels, "white level must exceed black level");
  }
  if (f.cst && !f.cst->finite()) {
    throw GrawError(GrawErrc::invalid_header, "CST matrix has non-finite entries");
  }
  const std::uint64_t count = static_cast<std::uint64_t>(f.width) * f.height;
  const std::size_t remaining = bytes.size() - r.pos;
  if (remaining < count * 2) {
    throw GrawError(GrawErrc::truncated, "payload has " + std::to_string(remaining) +
                                             " bytes, expected " + std::to_string(count * 2));
  }
  if (remaining > count * 2) {
    throw GrawError(GrawErrc::trailing_data, std::to_string(remaining - count * 2) +
                                                 " bytes after payload");
  }
  f.samples.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) f.samples[i] = r.u16("samples");
  return f;
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw GrawError(GrawErrc::io_error, "cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing '" + path + "'");
}

inline BayerFrame read_graw(const std::string& path) { return decode_graw(read_file(path)); }

inline void write_graw(const std::string& path, const BayerFrame& frame) {
  write_file(path, encode_graw(frame));
}

}  // namespace genisp::io
