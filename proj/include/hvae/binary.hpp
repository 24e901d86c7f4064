#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "hvae/error.hpp"

namespace hvae::io {

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

/// Appends little-endian fields to a byte string.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { raw(&v, sizeof v); }
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void f32(float v) { raw(&v, sizeof v); }
  void bytes(std::string_view s) { out_.append(s); }
  void f32s(const float* p, std::size_t n) { raw(p, n * sizeof(float)); }

  const std::string& str() const noexcept { return out_; }
  std::string take() { return std::move(out_); }

 private:
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string out_;
};

/// Bounds-checked reader; every failure reports the offending offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return read<std::uint16_t>(); }
  std::uint32_t u32() { return read<std::uint32_t>(); }
  std::string_view bytes(std::size_t n) { return take(n); }
  void f32s(float* out, std::size_t n) {
    const auto s = take(n * sizeof(float));
    std::memcpy(out, s.data(), s.size());
  }

  std::size_t offset() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(what, pos_); }
  void expect_end() const {
    if (remaining() != 0) fail(std::to_string(remaining()) + " trailing bytes");
  }

 private:
  template <typename U>
  U read() {
    U v;
    std::memcpy(&v, take(sizeof v).data(), sizeof v);
    return v;
  }
  std::string_view take(std::size_t n) {
    if (n > remaining()) {
      fail("truncated: need " + std::to_string(n) + " bytes, " + std::to_string(remaining()) + " left");
    }
    const auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::string& path);
/// Writes through a temporary sibling and renames it into place.
void write_file(const std::string& path, std::string_view data);

}  // namespace hvae::io
