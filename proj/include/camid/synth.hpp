#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "camid/dataset.hpp"
#include "camid/image.hpp"
#include "camid/rng.hpp"

namespace camid {

/// Synthetic "camera trace" corpus: shared smooth scenes, each rendered once
/// per class through that class's fixed 3x3 filter plus a class-specific
/// oriented texture. Class c's texture uses the orientations
/// {a, 90 - a, 90 + a, 180 - a} with a = 45 c / (classes - 1) degrees, a set
/// closed under the dihedral group, so rotations and flips never turn one
/// class's trace into another's.
struct SynthOptions {
  int classes = 3;
  int train_per_class = 100;
  int val_per_class = 20;
  int train_size = 128;
  int val_size = 96;
  std::uint64_t seed = 0;
  /// Texture amplitude in 8-bit levels and its per-image period range.
  double texture_amplitude = 30.0;
  std::array<double, 2> texture_period{10.0, 16.0};
  double noise_sigma = 2.0;
  /// Write JPEG files at this quality instead of PNG (0: PNG).
  int jpeg_quality = 0;

  /// Throws InvalidParam.
  void validate() const;
};

/// Smooth class-independent content with values roughly in [40, 215].
ImageU8 synth_scene(int size, Rng& rng);

/// The class's 3x3 filter (row-major, sums to 1).
std::array<double, 9> class_filter(int class_id, int classes);

ImageU8 apply_camera_trace(const ImageU8& scene, int class_id, const SynthOptions& options,
                           Rng& rng);

/// Writes out_dir/<class_name>/<split>_<base>.{png,jpg} plus
/// out_dir/manifest.jsonl and returns the records (absolute paths). Train
/// and Val scenes are disjoint.
std::vector<ManifestRecord> make_synthetic_dataset(const SynthOptions& options,
                                                   const std::filesystem::path& out_dir,
                                                   int workers = 1);

}  // namespace camid
