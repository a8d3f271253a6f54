#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrmt/format_error.hpp"

namespace lrmt::detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t crc32_of(const void* data, std::size_t n);

class Writer {
public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void f64s(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
  void str(std::string_view s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  /// Appends the CRC32 of everything written so far.
  void seal() { u32(crc32_of(buf_.data(), buf_.size())); }
  const std::vector<char>& buffer() const { return buf_; }

private:
  std::vector<char> buf_;
};

/// Bounds-checked reader; every overrun is a truncation error.
class Reader {
public:
  Reader(const char* data, std::size_t size, std::string what) : p_(data), end_(data + size), what_(std::move(what)) {}

  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, p_, n);
    p_ += n;
  }
  std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
  std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
  std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
  void f64s(double* out, std::size_t n) {
    if (n > remaining() / sizeof(double)) need(remaining() + 1);
    bytes(out, n * sizeof(double));
  }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

private:
  void need(std::size_t n) const {
    if (n > remaining()) throw FormatError(FormatError::Kind::truncated, what_ + ": unexpected end of data");
  }
  const char* p_;
  const char* end_;
  std::string what_;
};

std::vector<char> read_file(const std::filesystem::path& path);
/// Writes via a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& data);

/// Best-effort total file size implied by a file's own framing; used only to
/// tell a truncated file from a corrupted one when the checksum fails.
using SizeProbe = std::function<std::optional<std::size_t>(const std::vector<char>&)>;

/// Checks magic, version and trailing CRC; returns a reader over the body
/// (after magic + version, before the CRC).
Reader open_sealed(const std::vector<char>& data, std::string_view magic, std::uint32_t version,
                   const std::string& what, const SizeProbe& probe);

}  // namespace lrmt::detail
