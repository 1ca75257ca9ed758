#include <gtest/gtest.h>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/jpeg.hpp"
#include "test_support.hpp"

using namespace camid;
using namespace camid::testing;

namespace {

// Table K.1 in natural order.
constexpr std::array<int, 64> kLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

Errc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no exception";
  return Errc::InvalidParam;
}

}  // namespace

TEST(JpegTables, QualityScaleMapping) {
  EXPECT_EQ(jpeg::quality_scale(90), 20);
  EXPECT_EQ(jpeg::quality_scale(50), 100);
  EXPECT_EQ(jpeg::quality_scale(25), 200);
  EXPECT_EQ(jpeg::quality_scale(1), 5000);
  EXPECT_EQ(jpeg::quality_scale(100), 0);
  EXPECT_THROW(jpeg::quality_scale(0), Error);
}

TEST(JpegTables, ScaledTablesMatchFormula) {
  for (int i = 0; i < 64; ++i) EXPECT_EQ(jpeg::annex_k_luma()[i], kLuma[i]);
  for (int q = 1; q <= 100; ++q) {
    const int scale = q < 50 ? 5000 / q : 200 - 2 * q;
    const auto t = jpeg::scaled_table(jpeg::annex_k_luma(), q);
    for (int i = 0; i < 64; ++i) {
      EXPECT_EQ(t[i], std::clamp((kLuma[i] * scale + 50) / 100, 1, 255)) << q << " " << i;
    }
  }
  for (auto v : jpeg::scaled_table(jpeg::annex_k_chroma(), 100)) EXPECT_EQ(v, 1);
  EXPECT_EQ(jpeg::scaled_table(jpeg::annex_k_luma(), 50), jpeg::annex_k_luma());
}

TEST(JpegQuality, EstimatorRoundTripsOwnCodec) {
  Rng rng(1);
  const auto img = smooth_image(24, 32, rng);
  for (int q = 1; q <= 100; ++q) {
    jpeg::EncodeOptions o;
    o.quality = q;
    const auto bytes = jpeg::encode(img, o);
    const int est = jpeg::estimate_quality(bytes);
    // Distinct qualities can share a table at the low end (scale saturates
    // entries at 255); the estimator then picks the higher one.
    EXPECT_EQ(jpeg::scaled_table(jpeg::annex_k_luma(), est), jpeg::scaled_table(jpeg::annex_k_luma(), q));
    if (q >= 50) EXPECT_EQ(est, q);
  }
}

TEST(JpegQuality, Errors) {
  Rng rng(2);
  const auto png = encode_png(random_image(4, 4, rng));
  EXPECT_EQ(code_of([&] { jpeg::estimate_quality(png); }), Errc::NotAJpeg);
  // SOI then EOI: parses, but no DQT segment.
  const std::vector<std::uint8_t> bare{0xFF, 0xD8, 0xFF, 0xD9};
  EXPECT_EQ(code_of([&] { jpeg::estimate_quality(bare); }), Errc::MissingTables);
}

TEST(JpegCodec, DecodeOfEncodeIsCloseAndSized) {
  Rng rng(3);
  for (auto [h, w] : {std::pair{1, 1}, {7, 13}, {16, 16}, {33, 17}}) {
    const auto img = smooth_image(h, w, rng);
    jpeg::EncodeOptions o;
    o.quality = 100;
    o.subsample_chroma = false;
    const auto back = jpeg::decode(jpeg::encode(img, o));
    EXPECT_EQ(back.height(), h);
    EXPECT_EQ(back.width(), w);
    EXPECT_GT(psnr(back, img), 40.0);
  }
}

TEST(JpegCodec, InfoReportsFrame) {
  Rng rng(4);
  jpeg::EncodeOptions o;
  o.quality = 80;
  const auto bytes = jpeg::encode(smooth_image(20, 30, rng), o);
  EXPECT_TRUE(jpeg::is_jpeg(bytes));
  const auto info = jpeg::read_info(bytes);
  EXPECT_EQ(info.width, 30);
  EXPECT_EQ(info.height, 20);
  EXPECT_EQ(info.components, 3);
  EXPECT_FALSE(info.progressive);
  ASSERT_TRUE(info.tables[static_cast<std::size_t>(info.luma_table_id)].has_value());
  EXPECT_EQ(*info.tables[static_cast<std::size_t>(info.luma_table_id)],
            jpeg::scaled_table(jpeg::annex_k_luma(), 80));
}

TEST(JpegCodec, CorruptInputsThrow) {
  Rng rng(5);
  const auto bytes = jpeg::encode(smooth_image(16, 16, rng));
  EXPECT_EQ(code_of([&] { jpeg::decode(std::vector<std::uint8_t>{1, 2, 3}); }), Errc::NotAJpeg);
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + 30);
  EXPECT_THROW(jpeg::decode(cut), Error);
}

TEST(JpegExif, SoftwareTagRoundTrip) {
  Rng rng(6);
  const auto img = smooth_image(8, 8, rng);
  jpeg::EncodeOptions o;
  o.exif_software = "Adobe Photoshop CC 2017 (Windows)";
  const auto bytes = jpeg::encode(img, o);
  EXPECT_EQ(jpeg::read_exif_software(bytes), o.exif_software);
  EXPECT_EQ(jpeg::read_info(bytes).exif_software, o.exif_software);
  EXPECT_EQ(jpeg::read_exif_software(jpeg::encode(img)), std::nullopt);
  // The EXIF segment must not disturb decoding.
  EXPECT_EQ(jpeg::decode(bytes), jpeg::decode(jpeg::encode(img)));
}

TEST(Io, PngRoundTripIsLossless) {
  TempDir dir;
  Rng rng(7);
  const auto img = random_image(17, 23, rng);
  write_png(dir / "a.png", img);
  EXPECT_EQ(read_image(dir / "a.png"), img);
  EXPECT_EQ(decode_image(encode_png(img)), img);
}

TEST(Io, ReadImageDetectsFormat) {
  TempDir dir;
  Rng rng(8);
  const auto img = smooth_image(12, 12, rng);
  const auto bytes = jpeg::encode(img);
  write_file_atomic(dir / "x.bin", bytes);
  EXPECT_EQ(read_image(dir / "x.bin"), jpeg::decode(bytes));
  write_file_atomic(dir / "junk.png", std::string_view("not an image"));
  EXPECT_THROW(read_image(dir / "junk.png"), Error);
  EXPECT_EQ(code_of([&] { read_image(dir / "missing.png"); }), Errc::IoError);
}

TEST(Io, AtomicWriteReplacesContentAndLeavesNoTemp) {
  TempDir dir;
  write_file_atomic(dir / "f.txt", std::string_view("one"));
  write_file_atomic(dir / "f.txt", std::string_view("two"));
  const auto bytes = read_file(dir / "f.txt");
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), "two");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(dir.path())) ++entries;
  EXPECT_EQ(entries, 1);
}
