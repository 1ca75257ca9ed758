#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "camid/image.hpp"

namespace camid {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written output.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// PNG or JPEG, detected by signature. Gray and gray+alpha inputs are expanded
/// to three identical channels; alpha is dropped.
ImageU8 decode_image(std::span<const std::uint8_t> bytes);
ImageU8 read_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const ImageU8& img);
void write_png(const std::filesystem::path& path, const ImageU8& img);

}  // namespace camid
