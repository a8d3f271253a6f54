#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace lrmt {

/// zlib CRC-32 of a byte string.
std::uint32_t crc32(std::string_view bytes);
/// CRC-32 of a file's contents; throws FormatError(io) if unreadable.
std::uint32_t file_crc32(const std::filesystem::path& path);
/// Eight lowercase hex digits.
std::string crc32_hex(std::uint32_t crc);

}  // namespace lrmt
