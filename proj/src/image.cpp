#include "camid/image.hpp"

#include <algorithm>
#include <string>

#include "camid/error.hpp"

namespace camid {

ImageU8::ImageU8(int height, int width) : height_(height), width_(width) {
  if (height < 1 || width < 1) {
    throw Error(Errc::InvalidParam,
                "image dimensions must be positive, got " + std::to_string(height) + "x" +
                    std::to_string(width));
  }
  data_.assign(static_cast<std::size_t>(height) * width * kChannels, 0);
}

ImageU8::ImageU8(int height, int width, std::vector<std::uint8_t> data)
    : ImageU8(height, width) {
  if (data.size() != data_.size()) {
    throw Error(Errc::InvalidParam, "image buffer holds " + std::to_string(data.size()) +
                                        " samples, expected " + std::to_string(data_.size()));
  }
  data_ = std::move(data);
}

namespace {

// Each element acts on centered (row, col) coordinates as a signed
// permutation matrix {{a, b}, {c, d}} mapping input position to output
// position.
struct Mat2 {
  int a, b, c, d;
  friend bool operator==(const Mat2&, const Mat2&) = default;
};

constexpr std::array<Mat2, 8> kMatrices = {{
    {1, 0, 0, 1},    // E
    {0, 1, -1, 0},   // R90: (r, c) -> (c, -r)
    {-1, 0, 0, -1},  // R180
    {0, -1, 1, 0},   // R270
    {1, 0, 0, -1},   // FH
    {-1, 0, 0, 1},   // FV
    {0, 1, 1, 0},    // D1
    {0, -1, -1, 0},  // D2
}};

constexpr Mat2 mul(const Mat2& x, const Mat2& y) {
  return {x.a * y.a + x.b * y.c, x.a * y.b + x.b * y.d, x.c * y.a + x.d * y.c,
          x.c * y.b + x.d * y.d};
}

D4 from_matrix(const Mat2& m) {
  for (std::size_t i = 0; i < kMatrices.size(); ++i) {
    if (kMatrices[i] == m) return static_cast<D4>(i);
  }
  return D4::E;  // unreachable: the group is closed
}

const Mat2& matrix(D4 g) { return kMatrices[static_cast<std::size_t>(g)]; }

}  // namespace

std::string_view to_string(D4 g) noexcept {
  switch (g) {
    case D4::E: return "E";
    case D4::R90: return "R90";
    case D4::R180: return "R180";
    case D4::R270: return "R270";
    case D4::FH: return "FH";
    case D4::FV: return "FV";
    case D4::D1: return "D1";
    case D4::D2: return "D2";
  }
  return "E";
}

D4 parse_d4(std::string_view name) {
  for (D4 g : kAllD4) {
    if (to_string(g) == name) return g;
  }
  throw Error(Errc::InvalidParam, "unknown D4 element '" + std::string(name) + "'");
}

D4 d4_compose(D4 a, D4 b) noexcept { return from_matrix(mul(matrix(a), matrix(b))); }

D4 d4_inverse(D4 g) noexcept {
  // Signed permutation matrices are orthogonal: the inverse is the transpose.
  const Mat2& m = matrix(g);
  return from_matrix({m.a, m.c, m.b, m.d});
}

bool d4_swaps_axes(D4 g) noexcept { return matrix(g).a == 0; }

ImageU8 d4_apply(const ImageU8& img, D4 g) {
  const int in_h = img.height();
  const int in_w = img.width();
  const bool swap = d4_swaps_axes(g);
  const int out_h = swap ? in_w : in_h;
  const int out_w = swap ? in_h : in_w;
  ImageU8 out(out_h, out_w);

  // Inverse map, in doubled centered coordinates so half-integer centers of
  // even-sized images stay integral.
  const Mat2 inv = matrix(d4_inverse(g));
  for (int r = 0; r < out_h; ++r) {
    const int yo = 2 * r - (out_h - 1);
    for (int c = 0; c < out_w; ++c) {
      const int xo = 2 * c - (out_w - 1);
      const int yi = inv.a * yo + inv.b * xo;
      const int xi = inv.c * yo + inv.d * xo;
      const int src_r = (yi + in_h - 1) / 2;
      const int src_c = (xi + in_w - 1) / 2;
      for (int ch = 0; ch < ImageU8::kChannels; ++ch) out.at(r, c, ch) = img.at(src_r, src_c, ch);
    }
  }
  return out;
}

ImageU8 crop(const ImageU8& img, const PatchSpec& spec) {
  if (spec.size < 1 || spec.origin_row < 0 || spec.origin_col < 0 ||
      spec.origin_row + spec.size > img.height() || spec.origin_col + spec.size > img.width()) {
    throw Error(Errc::OutOfBounds, "patch (" + std::to_string(spec.origin_row) + "," +
                                       std::to_string(spec.origin_col) + ") size " +
                                       std::to_string(spec.size) + " exceeds " +
                                       std::to_string(img.height()) + "x" +
                                       std::to_string(img.width()) + " image");
  }
  ImageU8 out(spec.size, spec.size);
  const std::size_t row_bytes = static_cast<std::size_t>(spec.size) * ImageU8::kChannels;
  auto src = img.data();
  auto dst = out.data();
  for (int r = 0; r < spec.size; ++r) {
    const std::size_t offset =
        (static_cast<std::size_t>(spec.origin_row + r) * img.width() + spec.origin_col) *
        ImageU8::kChannels;
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(offset), row_bytes,
                dst.begin() + static_cast<std::ptrdiff_t>(r * row_bytes));
  }
  return out;
}

namespace {

void require_fits(int height, int width, int size) {
  if (size < 1 || height < size || width < size) {
    throw Error(Errc::TooSmall, std::to_string(height) + "x" + std::to_string(width) +
                                    " image cannot hold a " + std::to_string(size) + "x" +
                                    std::to_string(size) + " crop");
  }
}

}  // namespace

PatchSpec center_spec(int height, int width, int size) {
  require_fits(height, width, size);
  return {(height - size) / 2, (width - size) / 2, size};
}

ImageU8 center_crop(const ImageU8& img, int size) {
  return crop(img, center_spec(img.height(), img.width(), size));
}

std::array<PatchSpec, 5> tta_specs(int height, int width, int size) {
  require_fits(height, width, size);
  const int bottom = height - size;
  const int right = width - size;
  return {{{0, 0, size},
           {0, right, size},
           {bottom, 0, size},
           {bottom, right, size},
           center_spec(height, width, size)}};
}

std::vector<ImageU8> tta_crops(const ImageU8& img, int size) {
  std::vector<ImageU8> out;
  out.reserve(5);
  for (const auto& spec : tta_specs(img.height(), img.width(), size)) out.push_back(crop(img, spec));
  return out;
}

PatchSpec random_spec(int height, int width, int size, Rng& rng) {
  require_fits(height, width, size);
  const auto row = static_cast<int>(rng.uniform_int(0, height - size));
  const auto col = static_cast<int>(rng.uniform_int(0, width - size));
  return {row, col, size};
}

ImageU8 random_crop(const ImageU8& img, int size, Rng& rng) {
  return crop(img, random_spec(img.height(), img.width(), size, rng));
}

}  // namespace camid
