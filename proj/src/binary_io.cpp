#include "binary_io.hpp"

#include <cstdio>
#include <fstream>

#include "lrmt/checksum.hpp"

#include <zlib.h>

namespace lrmt {

std::string_view format_error_name(FormatError::Kind kind) {
  switch (kind) {
    case FormatError::Kind::io: return "io";
    case FormatError::Kind::bad_magic: return "bad_magic";
    case FormatError::Kind::version: return "version";
    case FormatError::Kind::truncated: return "truncated";
    case FormatError::Kind::checksum: return "checksum";
    case FormatError::Kind::malformed: return "malformed";
  }
  return "?";
}

namespace detail {

std::uint32_t crc32_of(const void* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  const auto* p = static_cast<const Bytef*>(data);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_atomic(const std::filesystem::path& path, const std::vector<char>& data) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError(FormatError::Kind::io, "cannot write " + tmp.string());
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw FormatError(FormatError::Kind::io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw FormatError(FormatError::Kind::io, "cannot rename " + tmp.string() + ": " + ec.message());
}

Reader open_sealed(const std::vector<char>& data, std::string_view magic, std::uint32_t version,
                   const std::string& what, const SizeProbe& probe) {
  const std::size_t head = magic.size() + 4;
  if (data.size() < magic.size()) throw FormatError(FormatError::Kind::truncated, what + ": file too short");
  if (std::string_view(data.data(), magic.size()) != magic) {
    throw FormatError(FormatError::Kind::bad_magic, what + ": not a " + std::string(magic) + " file");
  }
  if (data.size() < head + 4) throw FormatError(FormatError::Kind::truncated, what + ": file too short");
  std::uint32_t v;
  std::memcpy(&v, data.data() + magic.size(), 4);
  if (v != version) {
    throw FormatError(FormatError::Kind::version, what + ": format version " + std::to_string(v) +
                                                      ", expected " + std::to_string(version));
  }
  std::uint32_t stored;
  std::memcpy(&stored, data.data() + data.size() - 4, 4);
  if (crc32_of(data.data(), data.size() - 4) != stored) {
    std::optional<std::size_t> expected;
    try {
      expected = probe(data);
    } catch (const std::exception&) {
      expected.reset();
    }
    if (expected && data.size() < *expected) {
      throw FormatError(FormatError::Kind::truncated, what + ": file is " + std::to_string(data.size()) +
                                                          " bytes, framing expects " + std::to_string(*expected));
    }
    throw FormatError(FormatError::Kind::checksum, what + ": checksum mismatch");
  }
  return Reader(data.data() + head, data.size() - head - 4, what);
}

}  // namespace detail
}  // namespace lrmt

namespace lrmt {

std::uint32_t crc32(std::string_view bytes) { return detail::crc32_of(bytes.data(), bytes.size()); }

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto data = detail::read_file(path);
  return detail::crc32_of(data.data(), data.size());
}

std::string crc32_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08x", crc);
  return buf;
}

}  // namespace lrmt
