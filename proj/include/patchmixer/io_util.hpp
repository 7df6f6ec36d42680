// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "patchmixer/error.hpp"

namespace pm {

/// Keep large freed blocks on the heap instead of returning them to the OS;
/// tensor ops recycle multi-megabyte buffers every step and the page-fault
/// cost of fresh mmaps dominates otherwise. Call once at process start.
void tune_allocator();

/// CRC-32 (IEEE reflected polynomial, zlib-compatible).
uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed = 0);
inline uint32_t crc32(const std::vector<uint8_t>& v, uint32_t seed = 0) {
  return crc32(v.data(), v.size(), seed);
}

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

/// Little-endian append-only byte sink.
class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(v); }
  void u16(uint16_t v) {
    for (int i = 0; i < 2; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    u32(bits);
  }
  void bytes(const void* p, size_t n) {
    const uint8_t* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<uint8_t>& data() const { return buf_; }
  std::vector<uint8_t>& data() { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws DataError on truncation.
class ByteReader {
 public:
  ByteReader(const uint8_t* data, size_t len) : p_(data), len_(len) {}
  explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), len_(v.size()) {}

  uint8_t u8() { return take(1)[0]; }
  uint16_t u16() {
    const uint8_t* b = take(2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }
  uint32_t u32() {
    const uint8_t* b = take(4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }
  uint64_t u64() {
    uint64_t lo = u32();
    uint64_t hi = u32();
    return lo | (hi << 32);
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    const uint8_t* b = take(n);
    return std::string(reinterpret_cast<const char*>(b), n);
  }
  const uint8_t* take(size_t n) {
    if (pos_ + n > len_) throw DataError("unexpected end of data");
    const uint8_t* b = p_ + pos_;
    pos_ += n;
    return b;
  }
  size_t pos() const { return pos_; }
  size_t remaining() const { return len_ - pos_; }

 private:
  const uint8_t* p_;
  size_t len_;
  size_t pos_ = 0;
};

}  // namespace pm
