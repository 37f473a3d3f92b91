// SPDX-License-Identifier: Apache-2.0
#include "chunkflow/binary_io.hpp"

#include <bit>
#include <cstring>

#include "chunkflow/error.hpp"

namespace chunkflow {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

BinaryWriter::BinaryWriter(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary) {
  if (!out_) fail(ErrorKind::kIo, "cannot open '" + path.string() + "' for writing");
}

void BinaryWriter::bytes(const void* p, std::size_t n) {
  out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!out_) fail(ErrorKind::kIo, "write failed on '" + path_.string() + "'");
}

void BinaryWriter::u32(std::uint32_t v) { bytes(&v, sizeof v); }
void BinaryWriter::u64(std::uint64_t v) { bytes(&v, sizeof v); }
void BinaryWriter::f64(double v) { bytes(&v, sizeof v); }
void BinaryWriter::f64s(std::span<const double> v) { bytes(v.data(), v.size_bytes()); }

void BinaryWriter::str(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes(s.data(), s.size());
}

void BinaryWriter::close() {
  out_.close();
  if (!out_) fail(ErrorKind::kIo, "closing '" + path_.string() + "' failed");
}

BinaryReader::BinaryReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
}

void BinaryReader::bytes(void* p, std::size_t n) {
  in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!in_) fail(ErrorKind::kFormat, "'" + path_.string() + "' is truncated");
}

void BinaryReader::expect_magic(const char (&m)[4], const std::string& what) {
  char got[4];
  bytes(got, 4);
  if (std::memcmp(got, m, 4) != 0) fail(ErrorKind::kFormat, "'" + path_.string() + "' is not a " + what + " file");
}

std::uint32_t BinaryReader::u32() {
  std::uint32_t v;
  bytes(&v, sizeof v);
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::uint64_t v;
  bytes(&v, sizeof v);
  return v;
}

double BinaryReader::f64() {
  double v;
  bytes(&v, sizeof v);
  return v;
}

std::vector<double> BinaryReader::f64s(std::size_t n) {
  std::vector<double> v(n);
  bytes(v.data(), n * sizeof(double));
  return v;
}

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  if (n > (1u << 20)) fail(ErrorKind::kFormat, "'" + path_.string() + "' has an implausible string length");
  std::string s(n, '\0');
  bytes(s.data(), n);
  return s;
}

void BinaryReader::expect_end() {
  if (in_.peek() != std::char_traits<char>::eof())
    fail(ErrorKind::kFormat, "'" + path_.string() + "' has trailing bytes");
}

}  // namespace chunkflow
