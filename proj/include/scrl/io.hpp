#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scrl::io {

// Little-endian byte buffer with a trailing CRC32, shared with checkpoints.
class ByteWriter {
 public:
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void f32s(std::span<const float> v);
  void str(const std::string& s);
  void raw(const void* p, size_t n);
  // Appends the CRC32 of everything written so far and writes the file.
  void finish(const std::filesystem::path& path);
  const std::vector<unsigned char>& bytes() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  // Reads the file and verifies the trailing CRC32.
  explicit ByteReader(const std::filesystem::path& path);
  uint32_t u32();
  uint64_t u64();
  float f32();
  void f32s(std::span<float> out);
  std::string str();
  void expect_bytes(const char* magic, size_t n);
  bool at_end() const { return pos_ == end_; }

 private:
  void need(size_t n) const;
  std::vector<unsigned char> buf_;
  size_t pos_ = 0, end_ = 0;
};

}  // namespace scrl::io
