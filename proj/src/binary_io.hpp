#pragma once

// Little-endian primitives shared by the checkpoint and segment formats.
// Readers track the byte offset so truncation errors can say where.

#include "spdbci/error.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

namespace spdbci::io {

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) { out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n)); }

  template <typename U>
  void le(U v) {
    unsigned char buf[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    bytes(buf, sizeof(U));
  }

  void u32(std::uint32_t v) { le(v); }
  void u64(std::uint64_t v) { le(v); }
  void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v)); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  bool ok() const { return static_cast<bool>(out_); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  Reader(std::istream& in, std::string source) : in_(in), source_(std::move(source)) {}

  void bytes(void* data, std::size_t n, const char* what) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    const auto got = static_cast<std::size_t>(in_.gcount());
    if (got != n) {
      fail(ErrorKind::Format, source_ + ": truncated " + what + " at byte offset " + std::to_string(offset_) +
                                  " (expected " + std::to_string(n) + " bytes, got " + std::to_string(got) + ")");
    }
    offset_ += n;
  }

  template <typename U>
  U le(const char* what) {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }

  std::uint32_t u32(const char* what) { return le<std::uint32_t>(what); }
  std::uint64_t u64(const char* what) { return le<std::uint64_t>(what); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(le<std::uint64_t>(what)); }
  double f64(const char* what) { return std::bit_cast<double>(le<std::uint64_t>(what)); }
  std::string str(const char* what, std::size_t limit = 1u << 24) {
    const std::uint32_t n = u32(what);
    if (n > limit) fail(ErrorKind::Format, source_ + ": implausible " + what + " length " + std::to_string(n));
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }

  /// Throws unless the stream is exhausted.
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) {
      fail(ErrorKind::Format, source_ + ": trailing bytes after offset " + std::to_string(offset_));
    }
  }

  std::size_t offset() const { return offset_; }
  const std::string& source() const { return source_; }

 private:
  std::istream& in_;
  std::string source_;
  std::size_t offset_ = 0;
};

}  // namespace spdbci::io
