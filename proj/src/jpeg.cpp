#include "camid/jpeg.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numbers>

#include "camid/error.hpp"

namespace camid::jpeg {
namespace {

constexpr std::array<int, 64> kZigzag = {
    0,  1,  8,  16, 9,  2,  3,  10, 17, 24, 32, 25, 18, 11, 4,  5,  12, 19, 26, 33, 40, 48,
    41, 34, 27, 20, 13, 6,  7,  14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23,
    30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63};

constexpr QuantTable kLuma = {16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19,  26,
                              58, 60, 55, 14, 13,  16,  24,  40,  57, 69, 56, 14,  17,
                              22, 29, 51, 87, 80,  62,  18,  22,  37, 56, 68, 109, 103,
                              77, 24, 35, 55, 64,  81,  104, 113, 92, 49, 64, 78,  87,
                              103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

constexpr QuantTable kChroma = {17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99,
                                99, 99, 99, 24, 26, 56, 99, 99, 99, 99, 99, 47, 66,
                                99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
                                99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

struct HuffmanSpec {
  std::array<std::uint8_t, 16> bits;
  std::vector<std::uint8_t> values;
};

const HuffmanSpec kDcLuma = {{0, 1, 5, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0},
                             {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffmanSpec kDcChroma = {{0, 3, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0},
                               {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
const HuffmanSpec kAcLuma = {
    {0, 2, 1, 3, 3, 2, 4, 3, 5, 5, 4, 4, 0, 0, 1, 0x7d},
    {0x01, 0x02, 0x03, 0x00, 0x04, 0x11, 0x05, 0x12, 0x21, 0x31, 0x41, 0x06, 0x13, 0x51, 0x61,
     0x07, 0x22, 0x71, 0x14, 0x32, 0x81, 0x91, 0xa1, 0x08, 0x23, 0x42, 0xb1, 0xc1, 0x15, 0x52,
     0xd1, 0xf0, 0x24, 0x33, 0x62, 0x72, 0x82, 0x09, 0x0a, 0x16, 0x17, 0x18, 0x19, 0x1a, 0x25,
     0x26, 0x27, 0x28, 0x29, 0x2a, 0x34, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44, 0x45,
     0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63, 0x64,
     0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a, 0x83,
     0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97, 0x98, 0x99,
     0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4, 0xb5, 0xb6,
     0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca, 0xd2, 0xd3,
     0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe1, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7, 0xe8,
     0xe9, 0xea, 0xf1, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};
const HuffmanSpec kAcChroma = {
    {0, 2, 1, 2, 4, 4, 3, 4, 7, 5, 4, 4, 0, 1, 2, 0x77},
    {0x00, 0x01, 0x02, 0x03, 0x11, 0x04, 0x05, 0x21, 0x31, 0x06, 0x12, 0x41, 0x51, 0x07, 0x61,
     0x71, 0x13, 0x22, 0x32, 0x81, 0x08, 0x14, 0x42, 0x91, 0xa1, 0xb1, 0xc1, 0x09, 0x23, 0x33,
     0x52, 0xf0, 0x15, 0x62, 0x72, 0xd1, 0x0a, 0x16, 0x24, 0x34, 0xe1, 0x25, 0xf1, 0x17, 0x18,
     0x19, 0x1a, 0x26, 0x27, 0x28, 0x29, 0x2a, 0x35, 0x36, 0x37, 0x38, 0x39, 0x3a, 0x43, 0x44,
     0x45, 0x46, 0x47, 0x48, 0x49, 0x4a, 0x53, 0x54, 0x55, 0x56, 0x57, 0x58, 0x59, 0x5a, 0x63,
     0x64, 0x65, 0x66, 0x67, 0x68, 0x69, 0x6a, 0x73, 0x74, 0x75, 0x76, 0x77, 0x78, 0x79, 0x7a,
     0x82, 0x83, 0x84, 0x85, 0x86, 0x87, 0x88, 0x89, 0x8a, 0x92, 0x93, 0x94, 0x95, 0x96, 0x97,
     0x98, 0x99, 0x9a, 0xa2, 0xa3, 0xa4, 0xa5, 0xa6, 0xa7, 0xa8, 0xa9, 0xaa, 0xb2, 0xb3, 0xb4,
     0xb5, 0xb6, 0xb7, 0xb8, 0xb9, 0xba, 0xc2, 0xc3, 0xc4, 0xc5, 0xc6, 0xc7, 0xc8, 0xc9, 0xca,
     0xd2, 0xd3, 0xd4, 0xd5, 0xd6, 0xd7, 0xd8, 0xd9, 0xda, 0xe2, 0xe3, 0xe4, 0xe5, 0xe6, 0xe7,
     0xe8, 0xe9, 0xea, 0xf2, 0xf3, 0xf4, 0xf5, 0xf6, 0xf7, 0xf8, 0xf9, 0xfa}};

// Orthonormal 8-point DCT-II basis: kBasis[u][x] = C(u)/2 * cos((2x+1)u*pi/16).
// F = B f B^T and f = B^T F B give the T.81 FDCT/IDCT pair.
const std::array<std::array<double, 8>, 8>& basis() {
  static const auto table = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u) {
      const double cu = u == 0 ? std::numbers::sqrt2 / 2.0 : 1.0;
      for (int x = 0; x < 8; ++x) {
        b[u][x] = cu / 2.0 * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return table;
}

using Block = std::array<double, 64>;

void fdct(const Block& in, Block& out) {
  const auto& b = basis();
  Block tmp{};
  for (int u = 0; u < 8; ++u) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += b[u][y] * in[y * 8 + x];
      tmp[u * 8 + x] = s;
    }
  }
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += tmp[u * 8 + x] * b[v][x];
      out[u * 8 + v] = s;
    }
  }
}

void idct(const Block& in, Block& out) {
  const auto& b = basis();
  Block tmp{};
  for (int y = 0; y < 8; ++y) {
    for (int v = 0; v < 8; ++v) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += b[u][y] * in[u * 8 + v];
      tmp[y * 8 + v] = s;
    }
  }
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += tmp[y * 8 + v] * b[v][x];
      out[y * 8 + x] = s;
    }
  }
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

// ---------------------------------------------------------------- encoder --

struct HuffmanCode {
  std::array<std::uint16_t, 256> code{};
  std::array<std::uint8_t, 256> length{};
};

HuffmanCode build_codes(const HuffmanSpec& spec) {
  HuffmanCode out;
  std::uint16_t code = 0;
  std::size_t k = 0;
  for (int len = 1; len <= 16; ++len) {
    for (int i = 0; i < spec.bits[len - 1]; ++i) {
      const auto symbol = spec.values[k++];
      out.code[symbol] = code;
      out.length[symbol] = static_cast<std::uint8_t>(len);
      ++code;
    }
    code = static_cast<std::uint16_t>(code << 1);
  }
  return out;
}

class BitWriter {
 public:
  explicit BitWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void put(std::uint32_t bits, int count) {
    for (int i = count - 1; i >= 0; --i) {
      acc_ = static_cast<std::uint8_t>((acc_ << 1) | ((bits >> i) & 1U));
      if (++filled_ == 8) emit();
    }
  }

  void flush() {
    while (filled_ != 0) put(1, 1);
  }

 private:
  void emit() {
    out_.push_back(acc_);
    if (acc_ == 0xFF) out_.push_back(0x00);
    acc_ = 0;
    filled_ = 0;
  }

  std::vector<std::uint8_t>& out_;
  std::uint8_t acc_ = 0;
  int filled_ = 0;
};

int magnitude_category(int v) {
  int a = std::abs(v);
  int n = 0;
  while (a != 0) {
    ++n;
    a >>= 1;
  }
  return n;
}

void put_value(BitWriter& w, int v, int category) {
  if (category == 0) return;
  const int bits = v >= 0 ? v : v + (1 << category) - 1;
  w.put(static_cast<std::uint32_t>(bits), category);
}

void encode_block(BitWriter& w, const Block& samples, const QuantTable& q, int& dc_pred,
                  const HuffmanCode& dc, const HuffmanCode& ac) {
  Block coef{};
  fdct(samples, coef);
  std::array<int, 64> zz{};
  for (int k = 0; k < 64; ++k) {
    const int n = kZigzag[k];
    zz[k] = static_cast<int>(std::nearbyint(coef[n] / q[n]));
  }
  const int diff = zz[0] - dc_pred;
  dc_pred = zz[0];
  const int dc_cat = magnitude_category(diff);
  w.put(dc.code[dc_cat], dc.length[dc_cat]);
  put_value(w, diff, dc_cat);

  int run = 0;
  for (int k = 1; k < 64; ++k) {
    if (zz[k] == 0) {
      ++run;
      continue;
    }
    while (run > 15) {
      w.put(ac.code[0xF0], ac.length[0xF0]);
      run -= 16;
    }
    const int cat = magnitude_category(zz[k]);
    const int symbol = (run << 4) | cat;
    w.put(ac.code[symbol], ac.length[symbol]);
    put_value(w, zz[k], cat);
    run = 0;
  }
  if (run > 0) w.put(ac.code[0x00], ac.length[0x00]);
}

void put_u16(std::vector<std::uint8_t>& out, int v) {
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
}

void put_marker(std::vector<std::uint8_t>& out, std::uint8_t marker) {
  out.push_back(0xFF);
  out.push_back(marker);
}

void put_dht(std::vector<std::uint8_t>& out, int cls_id, const HuffmanSpec& spec) {
  put_marker(out, 0xC4);
  put_u16(out, 2 + 1 + 16 + static_cast<int>(spec.values.size()));
  out.push_back(static_cast<std::uint8_t>(cls_id));
  out.insert(out.end(), spec.bits.begin(), spec.bits.end());
  out.insert(out.end(), spec.values.begin(), spec.values.end());
}

// Component plane with edge replication out to padded dimensions.
struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> v;
  double at(int x, int y) const { return v[static_cast<std::size_t>(y) * width + x]; }
};

}  // namespace

const QuantTable& annex_k_luma() { return kLuma; }
const QuantTable& annex_k_chroma() { return kChroma; }

int quality_scale(int quality) {
  if (quality < 1 || quality > 100) {
    throw Error(Errc::InvalidParam, "JPEG quality must be in [1, 100], got " +
                                        std::to_string(quality));
  }
  return quality < 50 ? 5000 / quality : 200 - 2 * quality;
}

QuantTable scaled_table(const QuantTable& base, int quality) {
  const int scale = quality_scale(quality);
  QuantTable out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const long entry = (static_cast<long>(base[i]) * scale + 50) / 100;
    out[i] = static_cast<std::uint16_t>(std::clamp(entry, 1L, 255L));
  }
  return out;
}

std::vector<std::uint8_t> make_exif_payload(const std::string& software) {
  std::vector<std::uint8_t> p = {'E', 'x', 'i', 'f', 0, 0};
  auto u16 = [&](std::uint16_t v) {
    p.push_back(static_cast<std::uint8_t>(v & 0xFF));
    p.push_back(static_cast<std::uint8_t>(v >> 8));
  };
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
  };
  p.push_back('I');
  p.push_back('I');
  u16(42);
  u32(8);  // IFD0 offset
  u16(1);  // entry count
  const auto count = static_cast<std::uint32_t>(software.size() + 1);
  u16(0x0131);
  u16(2);  // ASCII
  u32(count);
  if (count <= 4) {
    std::array<std::uint8_t, 4> inline_value{};
    std::memcpy(inline_value.data(), software.data(), software.size());
    p.insert(p.end(), inline_value.begin(), inline_value.end());
    u32(0);
  } else {
    u32(8 + 2 + 12 + 4);
    u32(0);  // no next IFD
    p.insert(p.end(), software.begin(), software.end());
    p.push_back(0);
  }
  return p;
}

std::vector<std::uint8_t> encode(const ImageU8& img, const EncodeOptions& options) {
  const QuantTable luma_q = scaled_table(kLuma, options.quality);
  const QuantTable chroma_q = scaled_table(kChroma, options.quality);
  const int w = img.width();
  const int h = img.height();
  const int factor = options.subsample_chroma ? 2 : 1;
  const int mcu = 8 * factor;
  const int pw = (w + mcu - 1) / mcu * mcu;
  const int ph = (h + mcu - 1) / mcu * mcu;

  Plane y{pw, ph, std::vector<double>(static_cast<std::size_t>(pw) * ph)};
  Plane cb = y;
  Plane cr = y;
  for (int r = 0; r < ph; ++r) {
    const int sr = std::min(r, h - 1);
    for (int c = 0; c < pw; ++c) {
      const int sc = std::min(c, w - 1);
      const double R = img.at(sr, sc, 0);
      const double G = img.at(sr, sc, 1);
      const double B = img.at(sr, sc, 2);
      const auto i = static_cast<std::size_t>(r) * pw + c;
      y.v[i] = 0.299 * R + 0.587 * G + 0.114 * B;
      cb.v[i] = -0.168736 * R - 0.331264 * G + 0.5 * B + 128.0;
      cr.v[i] = 0.5 * R - 0.418688 * G - 0.081312 * B + 128.0;
    }
  }
  if (factor == 2) {
    auto down = [&](const Plane& full) {
      Plane half{pw / 2, ph / 2, std::vector<double>(static_cast<std::size_t>(pw / 2) * (ph / 2))};
      for (int r = 0; r < half.height; ++r) {
        for (int c = 0; c < half.width; ++c) {
          half.v[static_cast<std::size_t>(r) * half.width + c] =
              0.25 * (full.at(2 * c, 2 * r) + full.at(2 * c + 1, 2 * r) +
                      full.at(2 * c, 2 * r + 1) + full.at(2 * c + 1, 2 * r + 1));
        }
      }
      return half;
    };
    cb = down(cb);
    cr = down(cr);
  }

  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(w) * h / 2 + 1024);
  put_marker(out, 0xD8);

  // APP0 JFIF 1.01, no thumbnail.
  put_marker(out, 0xE0);
  put_u16(out, 16);
  for (char ch : std::string("JFIF")) out.push_back(static_cast<std::uint8_t>(ch));
  out.insert(out.end(), {0, 1, 1, 0, 0, 1, 0, 1, 0, 0});

  if (options.exif_software) {
    const auto payload = make_exif_payload(*options.exif_software);
    put_marker(out, 0xE1);
    put_u16(out, static_cast<int>(payload.size()) + 2);
    out.insert(out.end(), payload.begin(), payload.end());
  }

  for (int id = 0; id < 2; ++id) {
    const QuantTable& t = id == 0 ? luma_q : chroma_q;
    put_marker(out, 0xDB);
    put_u16(out, 2 + 1 + 64);
    out.push_back(static_cast<std::uint8_t>(id));
    for (int k = 0; k < 64; ++k) out.push_back(static_cast<std::uint8_t>(t[kZigzag[k]]));
  }

  put_marker(out, 0xC0);
  put_u16(out, 8 + 3 * 3);
  out.push_back(8);
  put_u16(out, h);
  put_u16(out, w);
  out.push_back(3);
  const auto luma_sampling = static_cast<std::uint8_t>((factor << 4) | factor);
  out.insert(out.end(), {1, luma_sampling, 0, 2, 0x11, 1, 3, 0x11, 1});

  put_dht(out, 0x00, kDcLuma);
  put_dht(out, 0x10, kAcLuma);
  put_dht(out, 0x01, kDcChroma);
  put_dht(out, 0x11, kAcChroma);

  put_marker(out, 0xDA);
  put_u16(out, 6 + 2 * 3);
  out.insert(out.end(), {3, 1, 0x00, 2, 0x11, 3, 0x11, 0, 63, 0});

  static const HuffmanCode dc_l = build_codes(kDcLuma);
  static const HuffmanCode ac_l = build_codes(kAcLuma);
  static const HuffmanCode dc_c = build_codes(kDcChroma);
  static const HuffmanCode ac_c = build_codes(kAcChroma);

  BitWriter bw(out);
  int pred_y = 0;
  int pred_cb = 0;
  int pred_cr = 0;
  auto load = [](const Plane& p, int x0, int y0) {
    Block b{};
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) b[r * 8 + c] = p.at(x0 + c, y0 + r) - 128.0;
    }
    return b;
  };
  for (int my = 0; my < ph / mcu; ++my) {
    for (int mx = 0; mx < pw / mcu; ++mx) {
      for (int by = 0; by < factor; ++by) {
        for (int bx = 0; bx < factor; ++bx) {
          encode_block(bw, load(y, mx * mcu + bx * 8, my * mcu + by * 8), luma_q, pred_y, dc_l,
                       ac_l);
        }
      }
      encode_block(bw, load(cb, mx * 8, my * 8), chroma_q, pred_cb, dc_c, ac_c);
      encode_block(bw, load(cr, mx * 8, my * 8), chroma_q, pred_cr, dc_c, ac_c);
    }
  }
  bw.flush();
  put_marker(out, 0xD9);
  return out;
}

// ---------------------------------------------------------------- decoder --

namespace {

[[noreturn]] void corrupt(const std::string& what) { throw Error(Errc::CorruptJpeg, what); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }
  bool done() const { return pos_ >= bytes_.size(); }
  std::span<const std::uint8_t> bytes() const { return bytes_; }

  std::uint8_t u8() {
    if (pos_ >= bytes_.size()) corrupt("unexpected end of data");
    return bytes_[pos_++];
  }
  int u16() {
    const int hi = u8();
    return (hi << 8) | u8();
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct HuffmanTable {
  std::array<int, 18> maxcode{};
  std::array<int, 17> valptr{};
  std::array<int, 17> mincode{};
  std::vector<std::uint8_t> values;
  bool defined = false;
};

HuffmanTable build_decoder(const std::array<std::uint8_t, 16>& bits,
                           std::vector<std::uint8_t> values) {
  HuffmanTable t;
  t.values = std::move(values);
  int code = 0;
  int k = 0;
  for (int len = 1; len <= 16; ++len) {
    const int n = bits[len - 1];
    if (n == 0) {
      t.maxcode[len] = -1;
    } else {
      t.valptr[len] = k;
      t.mincode[len] = code;
      code += n;
      k += n;
      t.maxcode[len] = code - 1;
    }
    code <<= 1;
  }
  t.maxcode[17] = std::numeric_limits<int>::max();
  t.defined = true;
  return t;
}

struct FrameComponent {
  int id = 0;
  int h = 1;
  int v = 1;
  int tq = 0;
  int td = 0;
  int ta = 0;
  int blocks_w = 0;
  int blocks_h = 0;
  int dc_pred = 0;
  std::vector<std::int32_t> coef;  // natural order, blocks_w * blocks_h * 64
};

class BitReader {
 public:
  explicit BitReader(Reader& r) : r_(r) {}

  int bit() {
    if (count_ == 0) fill();
    --count_;
    return (acc_ >> count_) & 1;
  }

  int bits(int n) {
    int v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | bit();
    return v;
  }

  void reset() {
    count_ = 0;
    acc_ = 0;
  }

  // Consumes an RSTn marker at the current byte position.
  void restart() {
    reset();
    const auto p = r_.pos();
    if (p + 1 < r_.bytes().size() && r_.bytes()[p] == 0xFF && r_.bytes()[p + 1] >= 0xD0 &&
        r_.bytes()[p + 1] <= 0xD7) {
      r_.seek(p + 2);
      hit_marker_ = false;
    } else {
      corrupt("missing restart marker");
    }
  }

 private:
  void fill() {
    int byte = 0;
    if (!hit_marker_) {
      const auto p = r_.pos();
      const auto data = r_.bytes();
      if (p >= data.size()) corrupt("entropy-coded data truncated");
      if (data[p] == 0xFF) {
        if (p + 1 >= data.size()) corrupt("entropy-coded data truncated");
        if (data[p + 1] == 0x00) {
          byte = 0xFF;
          r_.seek(p + 2);
        } else {
          // A marker ends the segment; feed zeros without consuming it.
          hit_marker_ = true;
        }
      } else {
        byte = data[p];
        r_.seek(p + 1);
      }
    }
    acc_ = byte;
    count_ = 8;
  }

  Reader& r_;
  int acc_ = 0;
  int count_ = 0;
  bool hit_marker_ = false;
};

int decode_symbol(BitReader& br, const HuffmanTable& t) {
  if (!t.defined) corrupt("scan references an undefined Huffman table");
  int code = br.bit();
  int len = 1;
  while (code > t.maxcode[len]) {
    code = (code << 1) | br.bit();
    if (++len > 16) corrupt("invalid Huffman code");
  }
  const int idx = t.valptr[len] + code - t.mincode[len];
  if (idx < 0 || idx >= static_cast<int>(t.values.size())) corrupt("invalid Huffman code");
  return t.values[static_cast<std::size_t>(idx)];
}

int extend(int v, int category) {
  return v < (1 << (category - 1)) ? v - (1 << category) + 1 : v;
}

void decode_block(BitReader& br, FrameComponent& comp, const HuffmanTable& dc,
                  const HuffmanTable& ac, std::int32_t* out) {
  const int t = decode_symbol(br, dc);
  if (t > 16) corrupt("DC magnitude out of range");
  const int diff = t == 0 ? 0 : extend(br.bits(t), t);
  comp.dc_pred += diff;
  out[0] = comp.dc_pred;
  for (int k = 1; k < 64;) {
    const int rs = decode_symbol(br, ac);
    const int run = rs >> 4;
    const int size = rs & 15;
    if (size == 0) {
      if (run == 15) {
        k += 16;
        continue;
      }
      break;
    }
    k += run;
    if (k > 63) corrupt("AC coefficient index out of range");
    out[kZigzag[k]] = extend(br.bits(size), size);
    ++k;
  }
}

struct DecoderState {
  Info info;
  int precision = 8;
  bool frame_seen = false;
  std::vector<FrameComponent> components;
  std::array<HuffmanTable, 4> dc_tables{};
  std::array<HuffmanTable, 4> ac_tables{};
  int restart_interval = 0;
  int hmax = 1;
  int vmax = 1;
  int mcus_x = 0;
  int mcus_y = 0;
};

std::optional<std::string> parse_exif_software(std::span<const std::uint8_t> seg) {
  static constexpr std::array<std::uint8_t, 6> kHeader = {'E', 'x', 'i', 'f', 0, 0};
  if (seg.size() < 6 + 8 || !std::equal(kHeader.begin(), kHeader.end(), seg.begin())) {
    return std::nullopt;
  }
  const auto tiff = seg.subspan(6);
  bool little;
  if (tiff[0] == 'I' && tiff[1] == 'I') {
    little = true;
  } else if (tiff[0] == 'M' && tiff[1] == 'M') {
    little = false;
  } else {
    return std::nullopt;
  }
  auto rd16 = [&](std::size_t o) -> std::optional<std::uint32_t> {
    if (o + 2 > tiff.size()) return std::nullopt;
    return little ? static_cast<std::uint32_t>(tiff[o] | (tiff[o + 1] << 8))
                  : static_cast<std::uint32_t>((tiff[o] << 8) | tiff[o + 1]);
  };
  auto rd32 = [&](std::size_t o) -> std::optional<std::uint32_t> {
    if (o + 4 > tiff.size()) return std::nullopt;
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t b = tiff[o + static_cast<std::size_t>(i)];
      v |= little ? b << (8 * i) : b << (8 * (3 - i));
    }
    return v;
  };
  const auto magic = rd16(2);
  const auto ifd = rd32(4);
  if (!magic || *magic != 42 || !ifd) return std::nullopt;
  const auto entries = rd16(*ifd);
  if (!entries) return std::nullopt;
  for (std::uint32_t i = 0; i < *entries; ++i) {
    const std::size_t e = *ifd + 2 + 12 * static_cast<std::size_t>(i);
    const auto tag = rd16(e);
    const auto type = rd16(e + 2);
    const auto count = rd32(e + 4);
    if (!tag || !type || !count) return std::nullopt;
    if (*tag != 0x0131 || *type != 2) continue;
    std::size_t offset = e + 8;
    if (*count > 4) {
      const auto o = rd32(e + 8);
      if (!o) return std::nullopt;
      offset = *o;
    }
    if (offset + *count > tiff.size()) return std::nullopt;
    std::string s(reinterpret_cast<const char*>(tiff.data() + offset), *count);
    while (!s.empty() && s.back() == '\0') s.pop_back();
    return s;
  }
  return std::nullopt;
}

void parse_sof(Reader& r, int length, DecoderState& st, bool progressive) {
  const auto end = r.pos() + static_cast<std::size_t>(length) - 2;
  st.precision = r.u8();
  st.info.height = r.u16();
  st.info.width = r.u16();
  const int n = r.u8();
  st.info.components = n;
  st.info.progressive = progressive;
  st.frame_seen = true;
  if (n < 1 || n > 4) corrupt("invalid component count");
  st.components.clear();
  for (int i = 0; i < n; ++i) {
    FrameComponent c;
    c.id = r.u8();
    const int hv = r.u8();
    c.h = hv >> 4;
    c.v = hv & 15;
    c.tq = r.u8();
    if (c.h < 1 || c.h > 4 || c.v < 1 || c.v > 4 || c.tq > 3) corrupt("invalid frame component");
    st.components.push_back(std::move(c));
  }
  st.info.luma_table_id = st.components.front().tq;
  r.seek(end);
}

void parse_dqt(Reader& r, int length, DecoderState& st) {
  const auto end = r.pos() + static_cast<std::size_t>(length) - 2;
  while (r.pos() < end) {
    const int pq_tq = r.u8();
    const int pq = pq_tq >> 4;
    const int tq = pq_tq & 15;
    if (tq > 3 || pq > 1) corrupt("invalid DQT segment");
    QuantTable t{};
    for (int k = 0; k < 64; ++k) {
      t[kZigzag[k]] = static_cast<std::uint16_t>(pq == 0 ? r.u8() : r.u16());
    }
    st.info.tables[static_cast<std::size_t>(tq)] = t;
  }
  r.seek(end);
}

void parse_dht(Reader& r, int length, DecoderState& st) {
  const auto end = r.pos() + static_cast<std::size_t>(length) - 2;
  while (r.pos() < end) {
    const int tc_th = r.u8();
    const int tc = tc_th >> 4;
    const int th = tc_th & 15;
    if (tc > 1 || th > 3) corrupt("invalid DHT segment");
    std::array<std::uint8_t, 16> bits{};
    int total = 0;
    for (auto& b : bits) {
      b = r.u8();
      total += b;
    }
    if (total > 256) corrupt("invalid DHT segment");
    std::vector<std::uint8_t> values(static_cast<std::size_t>(total));
    for (auto& v : values) v = r.u8();
    auto& slot = tc == 0 ? st.dc_tables[static_cast<std::size_t>(th)]
                         : st.ac_tables[static_cast<std::size_t>(th)];
    slot = build_decoder(bits, std::move(values));
  }
  r.seek(end);
}

void prepare_frame(DecoderState& st) {
  if (st.info.width < 1 || st.info.height < 1) corrupt("frame has zero dimension");
  for (const auto& c : st.components) {
    st.hmax = std::max(st.hmax, c.h);
    st.vmax = std::max(st.vmax, c.v);
  }
  st.mcus_x = (st.info.width + 8 * st.hmax - 1) / (8 * st.hmax);
  st.mcus_y = (st.info.height + 8 * st.vmax - 1) / (8 * st.vmax);
  for (auto& c : st.components) {
    c.blocks_w = st.mcus_x * c.h;
    c.blocks_h = st.mcus_y * c.v;
    c.coef.assign(static_cast<std::size_t>(c.blocks_w) * c.blocks_h * 64, 0);
  }
}

void decode_scan(Reader& r, int length, DecoderState& st) {
  const int ns = r.u8();
  if (ns < 1 || ns > 4 || 6 + 2 * ns != length) corrupt("invalid SOS segment");
  std::vector<FrameComponent*> scan;
  for (int i = 0; i < ns; ++i) {
    const int id = r.u8();
    const int tables = r.u8();
    auto it = std::find_if(st.components.begin(), st.components.end(),
                           [&](const FrameComponent& c) { return c.id == id; });
    if (it == st.components.end()) corrupt("scan references an unknown component");
    it->td = tables >> 4;
    it->ta = tables & 15;
    if (it->td > 3 || it->ta > 3) corrupt("invalid table selector");
    scan.push_back(&*it);
  }
  r.u8();  // Ss
  r.u8();  // Se
  r.u8();  // Ah/Al

  for (auto* c : scan) c->dc_pred = 0;
  BitReader br(r);

  int units_x = st.mcus_x;
  int units_y = st.mcus_y;
  if (ns == 1) {
    const auto& c = *scan.front();
    const int comp_w = (st.info.width * c.h + st.hmax - 1) / st.hmax;
    const int comp_h = (st.info.height * c.v + st.vmax - 1) / st.vmax;
    units_x = (comp_w + 7) / 8;
    units_y = (comp_h + 7) / 8;
  }

  int restarts_left = st.restart_interval;
  for (int uy = 0; uy < units_y; ++uy) {
    for (int ux = 0; ux < units_x; ++ux) {
      if (st.restart_interval > 0) {
        if (restarts_left == 0) {
          br.restart();
          for (auto* c : scan) c->dc_pred = 0;
          restarts_left = st.restart_interval;
        }
        --restarts_left;
      }
      for (auto* c : scan) {
        const auto& dc = st.dc_tables[static_cast<std::size_t>(c->td)];
        const auto& ac = st.ac_tables[static_cast<std::size_t>(c->ta)];
        const int bh = ns == 1 ? 1 : c->v;
        const int bw = ns == 1 ? 1 : c->h;
        for (int by = 0; by < bh; ++by) {
          for (int bx = 0; bx < bw; ++bx) {
            const int row = uy * bh + by;
            const int col = ux * bw + bx;
            auto* dst = c->coef.data() +
                        (static_cast<std::size_t>(row) * c->blocks_w + col) * 64;
            decode_block(br, *c, dc, ac, dst);
          }
        }
      }
    }
  }

  // Skip to the next marker that is not a restart marker or stuffed byte.
  const auto data = r.bytes();
  std::size_t p = r.pos();
  while (p + 1 < data.size()) {
    if (data[p] == 0xFF && data[p + 1] != 0x00 && !(data[p + 1] >= 0xD0 && data[p + 1] <= 0xD7)) {
      break;
    }
    ++p;
  }
  r.seek(p);
}

ImageU8 reconstruct(const DecoderState& st) {
  const int w = st.info.width;
  const int h = st.info.height;
  std::vector<std::vector<std::uint8_t>> planes;
  for (const auto& c : st.components) {
    const auto& table = st.info.tables[static_cast<std::size_t>(c.tq)];
    if (!table) throw Error(Errc::MissingTables, "component references an undefined table");
    const int pw = c.blocks_w * 8;
    std::vector<std::uint8_t> plane(static_cast<std::size_t>(pw) * c.blocks_h * 8);
    Block in{};
    Block out{};
    for (int by = 0; by < c.blocks_h; ++by) {
      for (int bx = 0; bx < c.blocks_w; ++bx) {
        const auto* src = c.coef.data() + (static_cast<std::size_t>(by) * c.blocks_w + bx) * 64;
        for (int k = 0; k < 64; ++k) in[k] = static_cast<double>(src[k]) * (*table)[k];
        idct(in, out);
        for (int y = 0; y < 8; ++y) {
          for (int x = 0; x < 8; ++x) {
            plane[static_cast<std::size_t>(by * 8 + y) * pw + bx * 8 + x] =
                to_u8(out[y * 8 + x] + 128.0);
          }
        }
      }
    }
    planes.push_back(std::move(plane));
  }

  ImageU8 img(h, w);
  auto sample = [&](std::size_t ci, int x, int y) -> double {
    const auto& c = st.components[ci];
    const int sx = x * c.h / st.hmax;
    const int sy = y * c.v / st.vmax;
    return planes[ci][static_cast<std::size_t>(sy) * c.blocks_w * 8 + sx];
  };
  const bool color = st.components.size() >= 3;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double Y = sample(0, x, y);
      if (!color) {
        const auto g = to_u8(Y);
        img.at(y, x, 0) = img.at(y, x, 1) = img.at(y, x, 2) = g;
        continue;
      }
      const double Cb = sample(1, x, y) - 128.0;
      const double Cr = sample(2, x, y) - 128.0;
      img.at(y, x, 0) = to_u8(Y + 1.402 * Cr);
      img.at(y, x, 1) = to_u8(Y - 0.344136 * Cb - 0.714136 * Cr);
      img.at(y, x, 2) = to_u8(Y + 1.772 * Cb);
    }
  }
  return img;
}

// Walks segments; stops before the first scan unless `decode_scans`.
DecoderState parse(std::span<const std::uint8_t> bytes, bool decode_scans) {
  if (!is_jpeg(bytes)) throw Error(Errc::NotAJpeg, "missing SOI marker");
  Reader r(bytes);
  r.seek(2);
  DecoderState st;
  bool scanned = false;
  while (!r.done()) {
    std::uint8_t byte = r.u8();
    if (byte != 0xFF) {
      if (scanned) continue;  // trailing garbage after entropy data
      corrupt("expected a marker");
    }
    std::uint8_t marker = r.u8();
    while (marker == 0xFF) marker = r.u8();
    if (marker == 0xD9) break;                        // EOI
    if (marker >= 0xD0 && marker <= 0xD7) continue;  // stray RST
    if (marker == 0x01) continue;                     // TEM
    const int length = r.u16();
    if (length < 2) corrupt("invalid segment length");
    const auto start = r.pos();
    if (start + static_cast<std::size_t>(length) - 2 > bytes.size()) corrupt("segment truncated");
    switch (marker) {
      case 0xC0:
      case 0xC1:
        parse_sof(r, length, st, false);
        break;
      case 0xC2:
        parse_sof(r, length, st, true);
        break;
      case 0xC3:
      case 0xC5:
      case 0xC6:
      case 0xC7:
      case 0xC9:
      case 0xCA:
      case 0xCB:
      case 0xCD:
      case 0xCE:
      case 0xCF:
        throw Error(Errc::UnsupportedJpeg, "only baseline Huffman JPEG is supported");
      case 0xC4:
        parse_dht(r, length, st);
        break;
      case 0xDB:
        parse_dqt(r, length, st);
        break;
      case 0xDD:
        st.restart_interval = r.u16();
        r.seek(start + static_cast<std::size_t>(length) - 2);
        break;
      case 0xE1:
        if (!st.info.exif_software) {
          st.info.exif_software =
              parse_exif_software(bytes.subspan(start, static_cast<std::size_t>(length) - 2));
        }
        r.seek(start + static_cast<std::size_t>(length) - 2);
        break;
      case 0xDA:
        if (!decode_scans) {
          r.seek(start + static_cast<std::size_t>(length) - 2);
          return st;
        }
        if (!st.frame_seen) corrupt("scan before frame header");
        if (st.info.progressive) {
          throw Error(Errc::UnsupportedJpeg, "progressive JPEG is not supported");
        }
        if (st.precision != 8) throw Error(Errc::UnsupportedJpeg, "only 8-bit samples supported");
        if (st.mcus_x == 0) prepare_frame(st);
        decode_scan(r, length, st);
        scanned = true;
        break;
      default:
        r.seek(start + static_cast<std::size_t>(length) - 2);
        break;
    }
  }
  return st;
}

}  // namespace

bool is_jpeg(std::span<const std::uint8_t> bytes) noexcept {
  return bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF;
}

Info read_info(std::span<const std::uint8_t> bytes) { return parse(bytes, false).info; }

ImageU8 decode(std::span<const std::uint8_t> bytes) {
  const DecoderState st = parse(bytes, true);
  if (!st.frame_seen || st.mcus_x == 0) corrupt("no image data");
  return reconstruct(st);
}

int estimate_quality(const QuantTable& luma) {
  int best_q = 100;
  long best_dist = std::numeric_limits<long>::max();
  for (int q = 100; q >= 1; --q) {
    const QuantTable ref = scaled_table(kLuma, q);
    long dist = 0;
    for (std::size_t i = 0; i < 64; ++i) dist += std::abs(static_cast<long>(ref[i]) - luma[i]);
    if (dist < best_dist) {
      best_dist = dist;
      best_q = q;
    }
  }
  return best_q;
}

int estimate_quality(std::span<const std::uint8_t> bytes) {
  const Info info = read_info(bytes);
  const auto& table = info.tables[static_cast<std::size_t>(info.luma_table_id)];
  if (!table) throw Error(Errc::MissingTables, "no luminance quantization table");
  return estimate_quality(*table);
}

std::optional<std::string> read_exif_software(std::span<const std::uint8_t> bytes) {
  return read_info(bytes).exif_software;
}

}  // namespace camid::jpeg
