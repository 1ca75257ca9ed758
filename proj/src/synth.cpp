#include "camid/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "camid/augment.hpp"
#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/jpeg.hpp"
#include "camid/parallel.hpp"

namespace camid {
namespace {

constexpr std::uint64_t kTraceTag = 0x7472616365000000ULL;
constexpr std::uint64_t kValTag = 0x76616c0000000000ULL;

void require(bool ok, const char* what) {
  if (!ok) throw Error(Errc::InvalidParam, what);
}

}  // namespace

void SynthOptions::validate() const {
  require(classes >= 2, "synthetic data needs at least 2 classes");
  require(train_per_class >= 0 && val_per_class >= 0, "per-class counts must be >= 0");
  require(train_size >= 8 && val_size >= 8, "image sizes must be >= 8");
  require(std::isfinite(texture_amplitude) && texture_amplitude >= 0.0,
          "texture_amplitude must be >= 0");
  require(texture_period[0] >= 2.0 && texture_period[0] <= texture_period[1],
          "texture_period must satisfy 2 <= lo <= hi");
  require(std::isfinite(noise_sigma) && noise_sigma >= 0.0, "noise_sigma must be >= 0");
  require(jpeg_quality >= 0 && jpeg_quality <= 100, "jpeg_quality must be in [0, 100]");
}

ImageU8 synth_scene(int size, Rng& rng) {
  const double s = size;
  std::array<double, 3> base{};
  for (auto& b : base) b = rng.uniform(80.0, 175.0);
  const double grad_angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double grad_amp = rng.uniform(0.0, 30.0);

  struct Blob {
    double cy, cx, c, sn, sa, sb;
    std::array<double, 3> color;
  };
  std::vector<Blob> blobs(6);
  for (auto& b : blobs) {
    b.cy = rng.uniform(0.0, s);
    b.cx = rng.uniform(0.0, s);
    const double angle = rng.uniform(0.0, std::numbers::pi);
    b.c = std::cos(angle);
    b.sn = std::sin(angle);
    b.sa = rng.uniform(0.08, 0.3) * s;
    b.sb = rng.uniform(0.08, 0.3) * s;
    for (auto& c : b.color) c = rng.uniform(-50.0, 50.0);
  }

  ImageU8 img(size, size);
  const double gc = std::cos(grad_angle), gs = std::sin(grad_angle);
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x - s / 2) / s, v = (y - s / 2) / s;
      std::array<double, 3> px = base;
      const double g = grad_amp * 2.0 * (u * gc + v * gs);
      for (auto& p : px) p += g;
      for (const auto& b : blobs) {
        const double dx = x - b.cx, dy = y - b.cy;
        const double a = (dx * b.c + dy * b.sn) / b.sa;
        const double bb = (-dx * b.sn + dy * b.c) / b.sb;
        const double w = std::exp(-0.5 * (a * a + bb * bb));
        for (int c = 0; c < 3; ++c) px[c] += w * b.color[c];
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = round_to_u8(std::clamp(px[c], 40.0, 215.0));
    }
  }
  return img;
}

std::array<double, 9> class_filter(int class_id, int classes) {
  // A blur of class-dependent strength: center 1 - s, 4-neighbours s / 4.
  const double s = 0.6 * class_id / std::max(1, classes - 1);
  return {0.0, s / 4, 0.0, s / 4, 1.0 - s, s / 4, 0.0, s / 4, 0.0};
}

ImageU8 apply_camera_trace(const ImageU8& scene, int class_id, const SynthOptions& options,
                           Rng& rng) {
  options.validate();
  require(class_id >= 0 && class_id < options.classes, "class_id out of range");
  const int h = scene.height(), w = scene.width();
  const auto k = class_filter(class_id, options.classes);

  const double a = std::numbers::pi / 4 * class_id / (options.classes - 1);
  const std::array<double, 4> angles{a, std::numbers::pi / 2 - a, std::numbers::pi / 2 + a,
                                     std::numbers::pi - a};
  // Distinct orientations only (a = 0 and a = 45 degrees give two).
  std::vector<double> dirs;
  for (double t : angles) {
    const double m = std::fmod(t, std::numbers::pi);
    if (std::none_of(dirs.begin(), dirs.end(),
                     [&](double d) { return std::abs(d - m) < 1e-9; })) {
      dirs.push_back(m);
    }
  }
  const double period = rng.uniform(options.texture_period[0], options.texture_period[1]);
  const double amp =
      options.texture_amplitude * rng.uniform(0.8, 1.2) / std::sqrt(static_cast<double>(dirs.size()));
  std::vector<std::array<double, 3>> waves;  // (fx, fy, phase)
  for (double d : dirs) {
    const double f = 2.0 * std::numbers::pi / period;
    waves.push_back({f * std::cos(d), f * std::sin(d), rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }

  ImageU8 out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double tex = 0.0;
      for (const auto& wv : waves) tex += std::cos(wv[0] * x + wv[1] * y + wv[2]);
      tex *= amp;
      for (int c = 0; c < 3; ++c) {
        double v = 0.0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = std::clamp(y + dy, 0, h - 1);
            const int xx = std::clamp(x + dx, 0, w - 1);
            v += k[static_cast<std::size_t>((dy + 1) * 3 + dx + 1)] * scene.at(yy, xx, c);
          }
        }
        v += tex + options.noise_sigma * rng.normal();
        out.at(y, x, c) = round_to_u8(v);
      }
    }
  }
  return out;
}

std::vector<ManifestRecord> make_synthetic_dataset(const SynthOptions& options,
                                                   const std::filesystem::path& out_dir,
                                                   int workers) {
  options.validate();
  namespace fs = std::filesystem;
  const fs::path root = fs::absolute(out_dir);
  std::vector<std::string> names;
  for (int c = 0; c < options.classes; ++c) {
    names.push_back("cam" + std::to_string(c));
    fs::create_directories(root / names.back());
  }

  struct Job {
    Split split;
    int base;
    int class_id;
  };
  std::vector<Job> jobs;
  for (int b = 0; b < options.train_per_class; ++b) {
    for (int c = 0; c < options.classes; ++c) jobs.push_back({Split::Train, b, c});
  }
  for (int b = 0; b < options.val_per_class; ++b) {
    for (int c = 0; c < options.classes; ++c) jobs.push_back({Split::Val, b, c});
  }

  const char* ext = options.jpeg_quality > 0 ? "jpg" : "png";
  std::vector<ManifestRecord> records(jobs.size());
  parallel_for(jobs.size(), workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const bool val = job.split == Split::Val;
    const int size = val ? options.val_size : options.train_size;
    const std::uint64_t scene_seed = val ? options.seed ^ kValTag : options.seed;
    Rng scene_rng = Rng::stream(scene_seed, static_cast<std::uint64_t>(job.base));
    const ImageU8 scene = synth_scene(size, scene_rng);
    Rng trace_rng = Rng::stream(scene_seed ^ kTraceTag,
                                static_cast<std::uint64_t>(job.base) * options.classes + job.class_id);
    const ImageU8 img = apply_camera_trace(scene, job.class_id, options, trace_rng);

    char file[64];
    std::snprintf(file, sizeof file, "%s_%04d.%s", val ? "val" : "train", job.base, ext);
    const fs::path path = root / names[static_cast<std::size_t>(job.class_id)] / file;
    if (options.jpeg_quality > 0) {
      jpeg::EncodeOptions enc;
      enc.quality = options.jpeg_quality;
      write_file_atomic(path, jpeg::encode(img, enc));
    } else {
      write_png(path, img);
    }
    ManifestRecord& r = records[i];
    r.path = path.string();
    r.class_id = job.class_id;
    r.class_name = names[static_cast<std::size_t>(job.class_id)];
    r.split = job.split;
    r.width = size;
    r.height = size;
    if (options.jpeg_quality > 0) r.jpeg_quality = options.jpeg_quality;
  });
  write_manifest(root / "manifest.jsonl", records);
  return records;
}

}  // namespace camid
