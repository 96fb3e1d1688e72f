#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rsgen/raster.hpp"

namespace rsgen {

// Lowercase hex SHA-256.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

std::vector<std::uint8_t> read_binary(const std::filesystem::path& path);
std::string read_text(const std::filesystem::path& path);

// Writes to a sibling temp file and renames over the target, so readers never
// observe a half-written file.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

// Appends one line and flushes. Used by every append-only *.jsonl log.
void append_line(const std::filesystem::path& path, std::string_view line);

// Lossless 8-bit PNG. Supports 1..4 channels.
std::vector<std::uint8_t> encode_png(const Raster& image, int compression_level = 6);
// Decodes to 8-bit RGB (palette/gray/alpha are converted). Throws ArgumentError.
Raster decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const Raster& image);
Raster read_png(const std::filesystem::path& path);

}  // namespace rsgen
