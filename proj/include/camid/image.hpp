#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "camid/rng.hpp"

namespace camid {

/// Interleaved 8-bit RGB raster, row-major.
class ImageU8 {
 public:
  static constexpr int kChannels = 3;

  /// Zero-filled image. Throws InvalidParam unless height, width >= 1.
  ImageU8(int height, int width);
  /// Takes ownership of `data`, which must hold exactly height*width*3 samples.
  ImageU8(int height, int width, std::vector<std::uint8_t> data);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }

  std::uint8_t& at(int row, int col, int ch) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + ch];
  }
  std::uint8_t at(int row, int col, int ch) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * kChannels + ch];
  }

  std::span<std::uint8_t> data() noexcept { return data_; }
  std::span<const std::uint8_t> data() const noexcept { return data_; }

  friend bool operator==(const ImageU8&, const ImageU8&) = default;

 private:
  int height_;
  int width_;
  std::vector<std::uint8_t> data_;
};

/// The 8 symmetries of the square. R90 is a 90 degree clockwise rotation,
/// FH mirrors left-right, FV mirrors top-bottom, D1 transposes across the main
/// diagonal and D2 across the anti-diagonal.
enum class D4 : std::uint8_t { E, R90, R180, R270, FH, FV, D1, D2 };

inline constexpr std::array<D4, 8> kAllD4 = {D4::E,  D4::R90, D4::R180, D4::R270,
                                             D4::FH, D4::FV,  D4::D1,   D4::D2};

std::string_view to_string(D4 g) noexcept;
/// Parses the names produced by to_string; throws InvalidParam otherwise.
D4 parse_d4(std::string_view name);

/// compose(a, b) is "apply b first, then a".
D4 d4_compose(D4 a, D4 b) noexcept;
D4 d4_inverse(D4 g) noexcept;
/// True for the elements that exchange height and width.
bool d4_swaps_axes(D4 g) noexcept;

ImageU8 d4_apply(const ImageU8& img, D4 g);

struct PatchSpec {
  int origin_row = 0;
  int origin_col = 0;
  int size = 0;

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// Copies a size x size window. Throws OutOfBounds if it leaves the image.
ImageU8 crop(const ImageU8& img, const PatchSpec& spec);

PatchSpec center_spec(int height, int width, int size);
/// Center window with floor-divided offsets. Throws TooSmall.
ImageU8 center_crop(const ImageU8& img, int size);

/// Origins of the five test-time crops in the fixed order TL, TR, BL, BR, C.
std::array<PatchSpec, 5> tta_specs(int height, int width, int size);
std::vector<ImageU8> tta_crops(const ImageU8& img, int size);

/// Origin drawn uniformly from every valid position.
PatchSpec random_spec(int height, int width, int size, Rng& rng);
ImageU8 random_crop(const ImageU8& img, int size, Rng& rng);

}  // namespace camid
