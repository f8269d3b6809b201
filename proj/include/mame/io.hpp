#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mame {

// "MAME" binary container. Header: magic, format version, kind. All
// integers little-endian; parameter/sample payloads are f32.
inline constexpr std::uint32_t kFormatVersion = 1;
inline constexpr std::uint32_t kCheckpointKind = 1;
inline constexpr std::uint32_t kDatasetKind = 2;

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot open for write: " + path);
  }
  void magic(std::uint32_t kind) {
    out_.write("MAME", 4);
    u32(kFormatVersion);
    u32(kind);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = std::uint8_t(v >> (8 * i));
    out_.write(reinterpret_cast<const char*>(b), 4);
  }
  void u16(std::uint16_t v) {
    std::uint8_t b[2] = {std::uint8_t(v), std::uint8_t(v >> 8)};
    out_.write(reinterpret_cast<const char*>(b), 2);
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void f32_block(const float* data, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) f32(data[i]);
  }
  void close() {
    out_.close();
    if (!out_) throw std::runtime_error("write failed");
  }

 private:
  std::ofstream out_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw std::runtime_error("cannot open: " + path);
  }
  void expect_magic(std::uint32_t kind) {
    char m[4];
    read(m, 4);
    if (std::memcmp(m, "MAME", 4) != 0) throw std::runtime_error("bad magic");
    if (u32() != kFormatVersion) throw std::runtime_error("unsupported version");
    if (u32() != kind) throw std::runtime_error("wrong container kind");
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    read(reinterpret_cast<char*>(b), 4);
    return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    read(reinterpret_cast<char*>(b), 2);
    return std::uint16_t(b[0] | b[1] << 8);
  }
  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, std::streamsize(n));
    if (std::size_t(in_.gcount()) != n) throw std::runtime_error("short read");
  }
  std::ifstream in_;
};

}  // namespace mame
