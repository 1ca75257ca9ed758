#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "camid/image.hpp"

namespace camid::jpeg {

/// Quantization divisors in natural (row-major) order, not zigzag.
using QuantTable = std::array<std::uint16_t, 64>;

/// ITU-T T.81 Annex K reference tables.
const QuantTable& annex_k_luma();
const QuantTable& annex_k_chroma();

/// The customary quality mapping: 5000/q below 50, 200 - 2q from 50 up.
/// Throws InvalidParam unless 1 <= quality <= 100.
int quality_scale(int quality);
/// entry = clamp((base * scale + 50) / 100, 1, 255) with integer division.
QuantTable scaled_table(const QuantTable& base, int quality);

struct EncodeOptions {
  int quality = 90;
  /// 4:2:0 when true, 4:4:4 otherwise.
  bool subsample_chroma = true;
  /// Written as the TIFF Software tag (0x0131) in an APP1 Exif segment.
  std::optional<std::string> exif_software;
};

/// Baseline sequential-DCT encoder with the Annex K Huffman tables.
std::vector<std::uint8_t> encode(const ImageU8& img, const EncodeOptions& options = {});

/// Decodes baseline (SOF0/SOF1) Huffman JPEGs with any sampling factors.
/// Grayscale files are expanded to three identical channels.
ImageU8 decode(std::span<const std::uint8_t> bytes);

struct Info {
  int width = 0;
  int height = 0;
  int components = 0;
  bool progressive = false;
  /// Tables by destination id as defined in DQT segments.
  std::array<std::optional<QuantTable>, 4> tables{};
  /// Table id referenced by the first frame component (luminance).
  int luma_table_id = 0;
  std::optional<std::string> exif_software;
};

bool is_jpeg(std::span<const std::uint8_t> bytes) noexcept;

/// Walks the marker segments up to the first scan. Throws NotAJpeg when the
/// SOI marker is missing and CorruptJpeg on truncated segments.
Info read_info(std::span<const std::uint8_t> bytes);

/// Quality in [1, 100] whose scaled Annex K luminance table has the smallest
/// L1 distance to the file's luminance table; ties go to the higher quality.
/// Throws NotAJpeg or MissingTables.
int estimate_quality(std::span<const std::uint8_t> bytes);
int estimate_quality(const QuantTable& luma);

/// The EXIF Software string, if the file carries one.
std::optional<std::string> read_exif_software(std::span<const std::uint8_t> bytes);

/// APP1 payload ("Exif\0\0" + little-endian TIFF with a single IFD0 Software
/// entry). Used to build test fixtures.
std::vector<std::uint8_t> make_exif_payload(const std::string& software);

}  // namespace camid::jpeg
