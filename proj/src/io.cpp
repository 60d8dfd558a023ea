#include "scrl/io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "scrl/errors.hpp"

namespace scrl::io {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

void ByteWriter::raw(const void* p, size_t n) {
  const auto* c = static_cast<const unsigned char*>(p);
  buf_.insert(buf_.end(), c, c + n);
}
void ByteWriter::u32(uint32_t v) { raw(&v, 4); }
void ByteWriter::u64(uint64_t v) { raw(&v, 8); }
void ByteWriter::f32(float v) { raw(&v, 4); }
void ByteWriter::f32s(std::span<const float> v) { raw(v.data(), v.size() * sizeof(float)); }
void ByteWriter::str(const std::string& s) {
  u32(static_cast<uint32_t>(s.size()));
  raw(s.data(), s.size());
}

void ByteWriter::finish(const std::filesystem::path& path) {
  const auto crc = static_cast<uint32_t>(
      crc32(0L, buf_.data(), static_cast<uInt>(buf_.size())));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
  out.write(reinterpret_cast<const char*>(&crc), 4);
  if (!out) throw IoError("write failed: " + path.string());
}

ByteReader::ByteReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  if (buf_.size() < 4) throw CorruptFile(path.string() + ": file too short");
  end_ = buf_.size() - 4;
  uint32_t stored = 0;
  std::memcpy(&stored, buf_.data() + end_, 4);
  const auto actual = static_cast<uint32_t>(crc32(0L, buf_.data(), static_cast<uInt>(end_)));
  if (stored != actual) throw CorruptFile(path.string() + ": checksum mismatch");
}

void ByteReader::need(size_t n) const {
  if (pos_ + n > end_) throw CorruptFile("unexpected end of data");
}
uint32_t ByteReader::u32() {
  need(4);
  uint32_t v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}
uint64_t ByteReader::u64() {
  need(8);
  uint64_t v;
  std::memcpy(&v, buf_.data() + pos_, 8);
  pos_ += 8;
  return v;
}
float ByteReader::f32() {
  need(4);
  float v;
  std::memcpy(&v, buf_.data() + pos_, 4);
  pos_ += 4;
  return v;
}
void ByteReader::f32s(std::span<float> out) {
  need(out.size() * sizeof(float));
  std::memcpy(out.data(), buf_.data() + pos_, out.size() * sizeof(float));
  pos_ += out.size() * sizeof(float);
}
std::string ByteReader::str() {
  const uint32_t n = u32();
  need(n);
  std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
  pos_ += n;
  return s;
}
void ByteReader::expect_bytes(const char* magic, size_t n) {
  need(n);
  if (std::memcmp(buf_.data() + pos_, magic, n) != 0) throw CorruptFile("bad magic");
  pos_ += n;
}

}  // namespace scrl::io
