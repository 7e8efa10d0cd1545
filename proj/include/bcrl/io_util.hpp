#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace bcrl::io {

// All binary containers are little-endian. We assume a little-endian host
// and memcpy through fixed-width integers.

uint32_t crc32(const void* data, size_t len, uint32_t seed = 0);

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path);
  void u8(uint8_t v) { raw(&v, 1); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f32(float v) { raw(&v, 4); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s);
  void f32_array(const float* p, size_t n) { raw(p, n * 4); }
  void f64_array(const double* p, size_t n) { raw(p, n * 8); }
  void raw(const void* p, size_t n);
  // CRC of everything written since the last crc_begin().
  void crc_begin() { crc_ = 0; crc_active_ = true; }
  void crc_end() { crc_active_ = false; u32(crc_); }
  void close();

 private:
  std::ofstream out_;
  uint32_t crc_ = 0;
  bool crc_active_ = false;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path);
  uint8_t u8() { uint8_t v; raw(&v, 1); return v; }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  float f32() { float v; raw(&v, 4); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  std::string str();
  void f32_array(float* p, size_t n) { raw(p, n * 4); }
  void f64_array(double* p, size_t n) { raw(p, n * 8); }
  void raw(void* p, size_t n);
  void crc_begin() { crc_ = 0; crc_active_ = true; }
  // Reads the stored CRC and throws on mismatch.
  void crc_check(const std::string& what);
  bool eof();

 private:
  std::ifstream in_;
  uint32_t crc_ = 0;
  bool crc_active_ = false;
};

void expect_magic(BinaryReader& r, const char magic[4], const std::string& what);
void write_magic(BinaryWriter& w, const char magic[4]);

uint32_t file_crc32(const std::string& path);

// Minimal CSV writer: caller supplies pre-formatted cells.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header);
  void row(const std::vector<std::string>& cells);

 private:
  std::ofstream out_;
};

}  // namespace bcrl::io
