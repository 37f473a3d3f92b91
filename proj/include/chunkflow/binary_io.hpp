// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace chunkflow {

// Little-endian primitive streams for the versioned file formats.
class BinaryWriter {
 public:
  explicit BinaryWriter(const std::filesystem::path& path);
  void magic(const char (&m)[4]) { bytes(m, 4); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void f64s(std::span<const double> v);
  void str(const std::string& s);
  void close();

 private:
  void bytes(const void* p, std::size_t n);
  std::filesystem::path path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::filesystem::path& path);
  void expect_magic(const char (&m)[4], const std::string& what);
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::vector<double> f64s(std::size_t n);
  std::string str();
  void expect_end();

 private:
  void bytes(void* p, std::size_t n);
  std::filesystem::path path_;
  std::ifstream in_;
};

}  // namespace chunkflow
