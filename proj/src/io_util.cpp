#include "bcrl/io_util.hpp"

#include <array>

namespace bcrl::io {

namespace {
std::array<uint32_t, 256> make_crc_table() {
  std::array<uint32_t, 256> t{};
  for (uint32_t i = 0; i < 256; ++i) {
    uint32_t c = i;
    for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
    t[i] = c;
  }
  return t;
}
const std::array<uint32_t, 256>& crc_table() {
  static const auto t = make_crc_table();
  return t;
}
}  // namespace

uint32_t crc32(const void* data, size_t len, uint32_t seed) {
  const auto* p = static_cast<const uint8_t*>(data);
  uint32_t c = seed ^ 0xFFFFFFFFu;
  const auto& t = crc_table();
  for (size_t i = 0; i < len; ++i) c = t[(c ^ p[i]) & 0xFF] ^ (c >> 8);
  return c ^ 0xFFFFFFFFu;
}

BinaryWriter::BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open for writing: " + path);
}

void BinaryWriter::raw(const void* p, size_t n) {
  if (crc_active_) crc_ = crc32(p, n, crc_);
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) throw std::runtime_error("write failure");
}

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) throw std::runtime_error("close failure");
}

BinaryReader::BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
  if (!in_) throw std::runtime_error("cannot open for reading: " + path);
}

void BinaryReader::raw(void* p, size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(in_.gcount()) != n) throw std::runtime_error("truncated file");
  if (crc_active_) crc_ = crc32(p, n, crc_);
}

std::string BinaryReader::str() {
  uint32_t n = u32();
  if (n > (1u << 24)) throw std::runtime_error("unreasonable string length");
  std::string s(n, '\0');
  raw(s.data(), n);
  return s;
}

void BinaryReader::crc_check(const std::string& what) {
  crc_active_ = false;
  uint32_t stored = u32();
  if (stored != crc_) throw std::runtime_error("checksum mismatch in " + what);
}

bool BinaryReader::eof() {
  return in_.peek() == std::char_traits<char>::eof();
}

void expect_magic(BinaryReader& r, const char magic[4], const std::string& what) {
  char m[4];
  r.raw(m, 4);
  if (std::memcmp(m, magic, 4) != 0) throw std::runtime_error("bad magic for " + what);
}

void write_magic(BinaryWriter& w, const char magic[4]) { w.raw(magic, 4); }

uint32_t file_crc32(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path);
  char buf[65536];
  uint32_t c = 0;
  while (in) {
    in.read(buf, sizeof(buf));
    c = crc32(buf, static_cast<size_t>(in.gcount()), c);
  }
  return c;
}

CsvWriter::CsvWriter(const std::string& path, const std::vector<std::string>& header)
    : out_(path) {
  if (!out_) throw std::runtime_error("cannot open for writing: " + path);
  row(header);
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (size_t i = 0; i < cells.size(); ++i) {
    if (i) out_ << ',';
    out_ << cells[i];
  }
  out_ << '\n';
}

}  // namespace bcrl::io
