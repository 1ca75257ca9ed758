#include "camid/augment.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <string>

#include "camid/error.hpp"
#include "camid/jpeg.hpp"

namespace camid {

std::uint8_t round_to_u8(double v) noexcept {
  // nearbyint honors the default FE_TONEAREST mode: ties go to even.
  return static_cast<std::uint8_t>(std::clamp(std::nearbyint(v), 0.0, 255.0));
}

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

std::string format_double(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

double parse_double(std::string_view s, std::string_view text) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw Error(Errc::InvalidParam, "malformed augment op '" + std::string(text) + "'");
  }
  return v;
}

ImageU8 map_samples(const ImageU8& img, const std::array<std::uint8_t, 256>& lut) {
  ImageU8 out(img.height(), img.width());
  auto src = img.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = lut[src[i]];
  return out;
}

}  // namespace

std::string describe(const AugmentOp& op) {
  return std::visit(
      Overloaded{
          [](const DihedralOp& o) { return "d4:" + std::string(to_string(o.element)); },
          [](const GammaOp& o) { return "gamma:" + format_double(o.gamma); },
          [](const JpegOp& o) { return "jpeg:" + std::to_string(o.quality); },
          [](const ScaleOp& o) { return "scale:" + format_double(o.factor); },
          [](const ContrastOp& o) { return "contrast:" + format_double(o.factor); },
      },
      op);
}

AugmentOp parse_op(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw Error(Errc::InvalidParam, "malformed augment op '" + std::string(text) + "'");
  }
  const auto kind = text.substr(0, colon);
  const auto arg = text.substr(colon + 1);
  AugmentOp op;
  if (kind == "d4") {
    op = DihedralOp{parse_d4(arg)};
  } else if (kind == "gamma") {
    op = GammaOp{parse_double(arg, text)};
  } else if (kind == "jpeg") {
    int q = 0;
    const auto res = std::from_chars(arg.data(), arg.data() + arg.size(), q);
    if (res.ec != std::errc{} || res.ptr != arg.data() + arg.size()) {
      throw Error(Errc::InvalidParam, "malformed augment op '" + std::string(text) + "'");
    }
    op = JpegOp{q};
  } else if (kind == "scale") {
    op = ScaleOp{parse_double(arg, text)};
  } else if (kind == "contrast") {
    op = ContrastOp{parse_double(arg, text)};
  } else {
    throw Error(Errc::InvalidParam, "unknown augment op '" + std::string(text) + "'");
  }
  validate(op);
  return op;
}

void validate(const AugmentOp& op) {
  std::visit(Overloaded{
                 [](const DihedralOp&) {},
                 [](const GammaOp& o) {
                   if (!(o.gamma > 0.0) || !std::isfinite(o.gamma)) {
                     throw Error(Errc::InvalidParam, "gamma must be > 0");
                   }
                 },
                 [](const JpegOp& o) {
                   if (o.quality < 1 || o.quality > 100) {
                     throw Error(Errc::InvalidParam, "JPEG quality must be in [1, 100]");
                   }
                 },
                 [](const ScaleOp& o) {
                   if (!(o.factor > 0.0) || !std::isfinite(o.factor)) {
                     throw Error(Errc::InvalidParam, "scale factor must be > 0");
                   }
                 },
                 [](const ContrastOp& o) {
                   if (!(o.factor > 0.0) || !std::isfinite(o.factor)) {
                     throw Error(Errc::InvalidParam, "contrast factor must be > 0");
                   }
                 },
             },
             op);
}

ImageU8 apply_gamma(const ImageU8& img, double gamma) {
  validate(GammaOp{gamma});
  std::array<std::uint8_t, 256> lut{};
  for (int p = 0; p < 256; ++p) lut[p] = round_to_u8(255.0 * std::pow(p / 255.0, gamma));
  return map_samples(img, lut);
}

ImageU8 apply_contrast(const ImageU8& img, double factor) {
  validate(ContrastOp{factor});
  std::array<std::uint8_t, 256> lut{};
  for (int p = 0; p < 256; ++p) lut[p] = round_to_u8((p - 127.5) * factor + 127.5);
  return map_samples(img, lut);
}

ImageU8 apply_jpeg(const ImageU8& img, int quality) {
  validate(JpegOp{quality});
  jpeg::EncodeOptions options;
  options.quality = quality;
  return jpeg::decode(jpeg::encode(img, options));
}

ImageU8 apply_scale(const ImageU8& img, double factor) {
  validate(ScaleOp{factor});
  const double out_h_f = std::nearbyint(factor * img.height());
  const double out_w_f = std::nearbyint(factor * img.width());
  if (out_h_f < 1.0 || out_w_f < 1.0) {
    throw Error(Errc::InvalidParam, "scale " + format_double(factor) + " collapses a " +
                                        std::to_string(img.height()) + "x" +
                                        std::to_string(img.width()) + " image");
  }
  const int in_h = img.height();
  const int in_w = img.width();
  const int out_h = static_cast<int>(out_h_f);
  const int out_w = static_cast<int>(out_w_f);
  if (out_h == in_h && out_w == in_w) return img;

  struct Tap {
    int i0, i1;
    double w;
  };
  auto taps = [](int in, int out) {
    std::vector<Tap> t(static_cast<std::size_t>(out));
    const double ratio = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double s = std::clamp((o + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
      const int i0 = static_cast<int>(std::floor(s));
      t[static_cast<std::size_t>(o)] = {i0, std::min(i0 + 1, in - 1), s - i0};
    }
    return t;
  };
  const auto rows = taps(in_h, out_h);
  const auto cols = taps(in_w, out_w);

  ImageU8 out(out_h, out_w);
  for (int r = 0; r < out_h; ++r) {
    const Tap& ty = rows[static_cast<std::size_t>(r)];
    for (int c = 0; c < out_w; ++c) {
      const Tap& tx = cols[static_cast<std::size_t>(c)];
      for (int ch = 0; ch < ImageU8::kChannels; ++ch) {
        const double top = (1.0 - tx.w) * img.at(ty.i0, tx.i0, ch) + tx.w * img.at(ty.i0, tx.i1, ch);
        const double bot = (1.0 - tx.w) * img.at(ty.i1, tx.i0, ch) + tx.w * img.at(ty.i1, tx.i1, ch);
        out.at(r, c, ch) = round_to_u8((1.0 - ty.w) * top + ty.w * bot);
      }
    }
  }
  return out;
}

ImageU8 apply_op(const ImageU8& img, const AugmentOp& op) {
  return std::visit(Overloaded{
                        [&](const DihedralOp& o) { return d4_apply(img, o.element); },
                        [&](const GammaOp& o) { return apply_gamma(img, o.gamma); },
                        [&](const JpegOp& o) { return apply_jpeg(img, o.quality); },
                        [&](const ScaleOp& o) { return apply_scale(img, o.factor); },
                        [&](const ContrastOp& o) { return apply_contrast(img, o.factor); },
                    },
                    op);
}

ImageU8 apply_ops(const ImageU8& img, const std::vector<AugmentOp>& ops) {
  ImageU8 out = img;
  for (const auto& op : ops) out = apply_op(out, op);
  return out;
}

void AugmentPolicy::validate() const {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidParam, what); };
  if (!(gamma_range[0] > 0.0) || !(gamma_range[0] < gamma_range[1])) {
    fail("gamma_range must satisfy 0 < lo < hi");
  }
  if (jpeg_range[0] < 1 || jpeg_range[1] > 100 || jpeg_range[0] >= jpeg_range[1]) {
    fail("jpeg_range must satisfy 1 <= lo < hi <= 100");
  }
  if (!(scale_range[0] > 0.0) || !(scale_range[0] < scale_range[1])) {
    fail("scale_range must satisfy 0 < lo < hi");
  }
  if (!(probability >= 0.0 && probability <= 1.0)) fail("probability must be in [0, 1]");
}

std::vector<AugmentOp> sample_train_augs(const AugmentPolicy& policy, Rng& rng) {
  policy.validate();
  std::vector<AugmentOp> ops;
  ops.reserve(4);
  ops.emplace_back(DihedralOp{kAllD4[static_cast<std::size_t>(rng.uniform_int(0, 7))]});
  if (rng.bernoulli(policy.probability)) {
    ops.emplace_back(ScaleOp{rng.uniform(policy.scale_range[0], policy.scale_range[1])});
  }
  if (rng.bernoulli(policy.probability)) {
    ops.emplace_back(GammaOp{rng.uniform(policy.gamma_range[0], policy.gamma_range[1])});
  }
  if (rng.bernoulli(policy.probability)) {
    ops.emplace_back(
        JpegOp{static_cast<int>(rng.uniform_int(policy.jpeg_range[0], policy.jpeg_range[1]))});
  }
  return ops;
}

}  // namespace camid
