#pragma once

#include <array>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "camid/image.hpp"
#include "camid/rng.hpp"

namespace camid {

/// Every float-to-u8 conversion in the pipeline goes through this:
/// round half to even, then clamp to [0, 255].
std::uint8_t round_to_u8(double v) noexcept;

struct DihedralOp {
  D4 element = D4::E;
};
struct GammaOp {
  double gamma = 1.0;
};
struct JpegOp {
  int quality = 90;
};
struct ScaleOp {
  double factor = 1.0;
};
struct ContrastOp {
  double factor = 1.0;
};

using AugmentOp = std::variant<DihedralOp, GammaOp, JpegOp, ScaleOp, ContrastOp>;

/// Compact text form, e.g. "gamma:0.8", "jpeg:70", "d4:R90".
std::string describe(const AugmentOp& op);
/// Inverse of describe(); throws InvalidParam on malformed text.
AugmentOp parse_op(std::string_view text);

/// Throws InvalidParam when the op's parameter is outside its legal domain.
void validate(const AugmentOp& op);

/// out = round(255 * (p / 255)^gamma). Throws InvalidParam unless gamma > 0.
ImageU8 apply_gamma(const ImageU8& img, double gamma);
/// Baseline JPEG round trip (4:2:0, scaled Annex K tables).
ImageU8 apply_jpeg(const ImageU8& img, int quality);
/// Bilinear resize to round(f*h) x round(f*w), half-pixel-centered sampling.
ImageU8 apply_scale(const ImageU8& img, double factor);
/// out = clamp(round((p - 127.5) * c + 127.5), 0, 255).
ImageU8 apply_contrast(const ImageU8& img, double factor);

ImageU8 apply_op(const ImageU8& img, const AugmentOp& op);
/// Applies ops left to right.
ImageU8 apply_ops(const ImageU8& img, const std::vector<AugmentOp>& ops);

struct AugmentPolicy {
  std::array<double, 2> gamma_range{0.8, 1.2};
  std::array<int, 2> jpeg_range{70, 90};
  std::array<double, 2> scale_range{0.5, 2.0};
  /// Inclusion probability for each of Scale, Gamma and Jpeg. The dihedral
  /// op is always present.
  double probability = 0.5;

  /// Throws InvalidParam for degenerate or out-of-domain ranges.
  void validate() const;
};

/// Dihedral (uniform over the 8 elements) followed by optional Scale, Gamma
/// and Jpeg ops, each included independently with the policy probability and
/// with parameters uniform over the policy ranges.
std::vector<AugmentOp> sample_train_augs(const AugmentPolicy& policy, Rng& rng);

}  // namespace camid
