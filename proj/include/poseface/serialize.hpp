#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "poseface/errors.hpp"

namespace poseface {

// Little-endian binary readers/writers for the checkpoint and dataset
// formats.  The reader tracks its byte offset so format errors can point at
// the exact position of the problem.

static_assert(sizeof(double) == 8, "64-bit IEEE doubles required");

class BinaryWriter {
 public:
  explicit BinaryWriter(const std::string& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw MissingArtifactError("cannot open '" + path + "' for writing");
  }

  void magic(const char* tag) { out_.write(tag, static_cast<std::streamsize>(std::strlen(tag))); }

  void u32(std::uint32_t v) { put_le(&v, 4); }
  void u64(std::uint64_t v) { put_le(&v, 8); }

  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(&bits, 8);
  }

  void f64_array(const std::vector<double>& v) {
    for (double x : v) f64(x);
  }

  void close() {
    out_.close();
    if (!out_) throw Error("failed writing '" + path_ + "'");
  }

 private:
  template <typename T>
  void put_le(const T* v, int bytes) {
    unsigned char buf[8];
    std::uint64_t bits = 0;
    std::memcpy(&bits, v, static_cast<std::size_t>(bytes));
    for (int i = 0; i < bytes; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
    out_.write(reinterpret_cast<const char*>(buf), bytes);
  }

  std::string path_;
  std::ofstream out_;
};

class BinaryReader {
 public:
  explicit BinaryReader(const std::string& path)
      : path_(path), in_(path, std::ios::binary) {
    if (!in_) throw MissingArtifactError("cannot open '" + path + "' for reading");
  }

  void expect_magic(const char* tag) {
    std::size_t n = std::strlen(tag);
    std::vector<char> buf(n);
    read_raw(buf.data(), n);
    if (std::memcmp(buf.data(), tag, n) != 0) {
      throw FormatError("'" + path_ + "': bad magic at byte 0, expected \"" + tag + "\"");
    }
  }

  std::uint32_t u32() {
    unsigned char b[4];
    read_raw(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  std::uint64_t u64() {
    std::uint64_t lo = u32();
    std::uint64_t hi = u32();
    return lo | (hi << 32);
  }

  double f64() {
    std::uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }

  std::vector<double> f64_array(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
  }

  std::size_t offset() const { return offset_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("'" + path_ + "': " + what + " at byte " + std::to_string(offset_));
  }

  bool at_eof() {
    return in_.peek() == std::char_traits<char>::eof();
  }

 private:
  void read_raw(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file");
    offset_ += n;
  }

  std::string path_;
  std::ifstream in_;
  std::size_t offset_ = 0;
};

}  // namespace poseface
