#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "camid/augment.hpp"

namespace camid {

enum class Split { Train, Val, Eval };

std::string_view to_string(Split s) noexcept;
/// Throws FormatError for anything but "train", "val", "eval".
Split parse_split(std::string_view s);

struct ManifestRecord {
  std::string path;
  int class_id = 0;
  std::string class_name;
  Split split = Split::Train;
  bool altered = false;
  /// describe() text of the applied op, e.g. "gamma:0.8".
  std::optional<std::string> manipulation;
  int width = 0;
  int height = 0;
  std::optional<std::string> exif_software;
  std::optional<int> jpeg_quality;

  friend bool operator==(const ManifestRecord&, const ManifestRecord&) = default;
};

inline constexpr int kManifestSchemaVersion = 1;

/// One JSON object per line, including "schema_version": 1.
std::string manifest_line(const ManifestRecord& record);
/// Unknown fields are ignored. Throws FormatError on a missing or wrong
/// schema_version, missing fields or wrong types.
ManifestRecord parse_manifest_line(std::string_view line);

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestRecord>& records);
/// Relative record paths are resolved against the manifest's directory.
/// Blank lines are skipped. Throws IoError or FormatError (with line number).
std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path);

/// Number of classes implied by the records (max class_id + 1).
int class_count(const std::vector<ManifestRecord>& records);
/// Class names indexed by class_id; throws FormatError on inconsistent names.
std::vector<std::string> class_names(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> filter_split(const std::vector<ManifestRecord>& records, Split split);

// ------------------------------------------------------------- curation

struct CurationRules {
  /// Case-insensitive substrings of the EXIF Software tag that reject a file.
  std::vector<std::string> software_blacklist{"Photoshop", "Lightroom"};
  int min_jpeg_quality = 95;
  /// Allowed (width, height) pairs per class name; either orientation
  /// matches. Filtering is off when the map is empty.
  std::map<std::string, std::vector<std::pair<int, int>>> dimension_whitelist;

  /// Throws InvalidParam.
  void validate() const;
};

enum class RejectReason { Unreadable, SoftwareBlacklist, LowQuality, Dimensions };

std::string_view to_string(RejectReason r) noexcept;

struct FileDecision {
  std::string path;
  std::optional<RejectReason> rejected;
};

struct FilterReport {
  std::vector<FileDecision> decisions;  // sorted by path
  std::size_t scanned = 0;
  std::size_t kept = 0;
  std::map<RejectReason, std::size_t> rejected;

  /// Multi-line human-readable summary.
  std::string summary() const;
};

struct CurationResult {
  std::vector<ManifestRecord> records;
  FilterReport report;
};

/// Scans root/<class>/* (regular files, non-recursive). Classes are
/// `class_table` in the given order, or the sorted subdirectory names when it
/// is empty. Rules apply in order software, quality, dimensions; unreadable
/// and non-JPEG files are rejected as Unreadable. Kept records get split
/// Train. Throws IoError if root or a listed class directory is missing, and
/// InvalidParam if the dimension whitelist names a class without entries.
CurationResult curate(const std::filesystem::path& root, const CurationRules& rules,
                      const std::vector<std::string>& class_table = {}, int workers = 1);

/// Assigns exactly val_per_class records of each class to Val (seeded
/// shuffle per class) and the rest to Train. Throws InsufficientData naming
/// the class that has too few records.
std::vector<ManifestRecord> split(std::vector<ManifestRecord> records, int val_per_class,
                                  std::uint64_t seed);

// -------------------------------------------------------- evaluation set

struct EvalSetOptions {
  int crop = 500;
  double altered_fraction = 0.5;
  std::vector<double> gamma_grid{0.8, 1.2};
  std::vector<int> jpeg_grid{70, 90};
  std::vector<double> scale_grid{0.5, 0.8, 1.5, 2.0};
  std::vector<double> contrast_grid{0.8, 1.2};

  void validate() const;
};

struct EvalSetResult {
  std::vector<ManifestRecord> records;
  /// (source path, reason) for records that could not be used.
  std::vector<std::pair<std::string, std::string>> skipped;
};

/// Center-crops every source image, alters a seeded half of them with one
/// manipulation drawn uniformly from {Gamma, Jpeg, Scale, Contrast} and a
/// uniform grid value, and writes PNGs to out_dir. Record i depends only on
/// (seed, i).
EvalSetResult build_eval_set(const std::vector<ManifestRecord>& sources, std::uint64_t seed,
                             const std::filesystem::path& out_dir,
                             const EvalSetOptions& options = {}, int workers = 1);

}  // namespace camid
