#include "camid/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "camid/error.hpp"
#include "camid/io.hpp"
#include "camid/jpeg.hpp"
#include "camid/parallel.hpp"

namespace camid {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Split s) noexcept {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Eval: return "eval";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  if (s == "eval") return Split::Eval;
  throw Error(Errc::FormatError, "unknown split '" + std::string(s) + "'");
}

namespace {

template <typename V>
json optional_json(const std::optional<V>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename V>
std::optional<V> optional_field(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<V>();
}

}  // namespace

std::string manifest_line(const ManifestRecord& r) {
  const json j = {{"schema_version", kManifestSchemaVersion},
                  {"path", r.path},
                  {"class_id", r.class_id},
                  {"class_name", r.class_name},
                  {"split", to_string(r.split)},
                  {"altered", r.altered},
                  {"manipulation", optional_json(r.manipulation)},
                  {"width", r.width},
                  {"height", r.height},
                  {"exif_software", optional_json(r.exif_software)},
                  {"jpeg_quality", optional_json(r.jpeg_quality)}};
  return j.dump();
}

ManifestRecord parse_manifest_line(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("manifest line is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(Errc::FormatError, "manifest line is not an object");
  if (!j.contains("schema_version")) throw Error(Errc::FormatError, "manifest line lacks schema_version");
  try {
    const int version = j.at("schema_version").get<int>();
    if (version != kManifestSchemaVersion) {
      throw Error(Errc::FormatError, "unsupported manifest schema_version " + std::to_string(version));
    }
    ManifestRecord r;
    r.path = j.at("path").get<std::string>();
    r.class_id = j.at("class_id").get<int>();
    r.class_name = j.at("class_name").get<std::string>();
    r.split = parse_split(j.at("split").get<std::string>());
    r.altered = j.at("altered").get<bool>();
    r.manipulation = optional_field<std::string>(j, "manipulation");
    r.width = j.at("width").get<int>();
    r.height = j.at("height").get<int>();
    r.exif_software = optional_field<std::string>(j, "exif_software");
    r.jpeg_quality = optional_field<int>(j, "jpeg_quality");
    if (r.class_id < 0) throw Error(Errc::FormatError, "negative class_id");
    if (r.altered && !r.manipulation) {
      throw Error(Errc::FormatError, "altered record without a manipulation");
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(Errc::FormatError, std::string("bad manifest field: ") + e.what());
  }
}

void write_manifest(const fs::path& path, const std::vector<ManifestRecord>& records) {
  std::string text;
  for (const auto& r : records) {
    text += manifest_line(r);
    text += '\n';
  }
  write_file_atomic(path, text);
}

std::vector<ManifestRecord> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  std::vector<ManifestRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto r = parse_manifest_line(line);
      if (fs::path(r.path).is_relative() && !base.empty()) r.path = (base / r.path).string();
      out.push_back(std::move(r));
    } catch (const Error& e) {
      throw Error(Errc::FormatError, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

int class_count(const std::vector<ManifestRecord>& records) {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.class_id + 1);
  return n;
}

std::vector<std::string> class_names(const std::vector<ManifestRecord>& records) {
  std::vector<std::string> names(static_cast<std::size_t>(class_count(records)));
  for (const auto& r : records) {
    auto& slot = names[static_cast<std::size_t>(r.class_id)];
    if (slot.empty()) {
      slot = r.class_name;
    } else if (slot != r.class_name) {
      throw Error(Errc::FormatError, "class " + std::to_string(r.class_id) + " is named both '" +
                                         slot + "' and '" + r.class_name + "'");
    }
  }
  return names;
}

std::vector<ManifestRecord> filter_split(const std::vector<ManifestRecord>& records, Split s) {
  std::vector<ManifestRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out),
               [s](const ManifestRecord& r) { return r.split == s; });
  return out;
}

// ------------------------------------------------------------- curation

void CurationRules::validate() const {
  if (min_jpeg_quality < 1 || min_jpeg_quality > 100) {
    throw Error(Errc::InvalidParam, "min_jpeg_quality must be in [1, 100]");
  }
  for (const auto& [name, sizes] : dimension_whitelist) {
    if (sizes.empty()) {
      throw Error(Errc::InvalidParam, "dimension whitelist for class '" + name + "' is empty");
    }
  }
}

std::string_view to_string(RejectReason r) noexcept {
  switch (r) {
    case RejectReason::Unreadable: return "unreadable";
    case RejectReason::SoftwareBlacklist: return "software_blacklist";
    case RejectReason::LowQuality: return "low_quality";
    case RejectReason::Dimensions: return "dimensions";
  }
  return "?";
}

std::string FilterReport::summary() const {
  std::ostringstream os;
  os << "scanned=" << scanned << "\nkept=" << kept << "\n";
  for (const auto reason : {RejectReason::Unreadable, RejectReason::SoftwareBlacklist,
                            RejectReason::LowQuality, RejectReason::Dimensions}) {
    const auto it = rejected.find(reason);
    os << "rejected." << to_string(reason) << "=" << (it == rejected.end() ? 0 : it->second) << "\n";
  }
  return os.str();
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool blacklisted(const std::string& software, const std::vector<std::string>& blacklist) {
  const std::string hay = lower(software);
  return std::any_of(blacklist.begin(), blacklist.end(), [&](const std::string& needle) {
    return !needle.empty() && hay.find(lower(needle)) != std::string::npos;
  });
}

struct Candidate {
  fs::path path;
  int class_id;
};

struct Outcome {
  std::optional<RejectReason> rejected;
  ManifestRecord record;
};

Outcome inspect(const Candidate& c, const std::string& class_name, const CurationRules& rules) {
  Outcome out;
  jpeg::Info info;
  int quality = 0;
  try {
    const auto bytes = read_file(c.path);
    info = jpeg::read_info(bytes);
    quality = jpeg::estimate_quality(bytes);
    jpeg::decode(bytes);
  } catch (const Error&) {
    out.rejected = RejectReason::Unreadable;
    return out;
  }
  if (info.exif_software && blacklisted(*info.exif_software, rules.software_blacklist)) {
    out.rejected = RejectReason::SoftwareBlacklist;
    return out;
  }
  if (quality < rules.min_jpeg_quality) {
    out.rejected = RejectReason::LowQuality;
    return out;
  }
  if (!rules.dimension_whitelist.empty()) {
    const auto it = rules.dimension_whitelist.find(class_name);
    const bool ok = it != rules.dimension_whitelist.end() &&
                    std::any_of(it->second.begin(), it->second.end(), [&](const auto& wh) {
                      return (wh.first == info.width && wh.second == info.height) ||
                             (wh.first == info.height && wh.second == info.width);
                    });
    if (!ok) {
      out.rejected = RejectReason::Dimensions;
      return out;
    }
  }
  out.record.path = c.path.string();
  out.record.class_id = c.class_id;
  out.record.class_name = class_name;
  out.record.split = Split::Train;
  out.record.width = info.width;
  out.record.height = info.height;
  out.record.exif_software = info.exif_software;
  out.record.jpeg_quality = quality;
  return out;
}

}  // namespace

CurationResult curate(const fs::path& root, const CurationRules& rules,
                      const std::vector<std::string>& class_table, int workers) {
  rules.validate();
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw Error(Errc::IoError, "not a directory: " + root.string());

  std::vector<std::string> classes = class_table;
  if (classes.empty()) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory()) classes.push_back(entry.path().filename().string());
    }
    std::sort(classes.begin(), classes.end());
  }
  if (std::set<std::string>(classes.begin(), classes.end()).size() != classes.size()) {
    throw Error(Errc::InvalidParam, "duplicate class names in class table");
  }
  if (!rules.dimension_whitelist.empty()) {
    for (const auto& name : classes) {
      if (!rules.dimension_whitelist.count(name)) {
        throw Error(Errc::InvalidParam, "dimension whitelist has no entry for class '" + name + "'");
      }
    }
  }

  std::vector<Candidate> files;
  for (std::size_t id = 0; id < classes.size(); ++id) {
    const fs::path dir = root / classes[id];
    if (!fs::is_directory(dir, ec)) throw Error(Errc::IoError, "missing class directory " + dir.string());
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file()) paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    for (auto& p : paths) files.push_back({std::move(p), static_cast<int>(id)});
  }

  std::vector<Outcome> outcomes(files.size());
  parallel_for(files.size(), workers, [&](std::size_t i) {
    outcomes[i] = inspect(files[i], classes[static_cast<std::size_t>(files[i].class_id)], rules);
  });

  CurationResult result;
  result.report.scanned = files.size();
  for (std::size_t i = 0; i < files.size(); ++i) {
    result.report.decisions.push_back({files[i].path.string(), outcomes[i].rejected});
    if (outcomes[i].rejected) {
      ++result.report.rejected[*outcomes[i].rejected];
    } else {
      ++result.report.kept;
      result.records.push_back(std::move(outcomes[i].record));
    }
  }
  std::sort(result.report.decisions.begin(), result.report.decisions.end(),
            [](const FileDecision& a, const FileDecision& b) { return a.path < b.path; });
  return result;
}

std::vector<ManifestRecord> split(std::vector<ManifestRecord> records, int val_per_class,
                                  std::uint64_t seed) {
  if (val_per_class < 0) throw Error(Errc::InvalidParam, "val_per_class must be >= 0");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < records.size(); ++i) by_class[records[i].class_id].push_back(i);
  for (auto& [cls, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(val_per_class)) {
      throw Error(Errc::InsufficientData,
                  "class '" + records[idx.front()].class_name + "' (id " + std::to_string(cls) +
                      ") has " + std::to_string(idx.size()) + " records, " +
                      std::to_string(val_per_class) + " needed for validation");
    }
  }
  for (auto& [cls, idx] : by_class) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(cls));
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      records[idx[k]].split = k < static_cast<std::size_t>(val_per_class) ? Split::Val : Split::Train;
    }
  }
  return records;
}

// -------------------------------------------------------- evaluation set

void EvalSetOptions::validate() const {
  if (crop < 1) throw Error(Errc::InvalidParam, "eval crop must be >= 1");
  if (!(altered_fraction >= 0.0 && altered_fraction <= 1.0)) {
    throw Error(Errc::InvalidParam, "altered_fraction must be in [0, 1]");
  }
  if (gamma_grid.empty() || jpeg_grid.empty() || scale_grid.empty() || contrast_grid.empty()) {
    throw Error(Errc::InvalidParam, "eval manipulation grids must be non-empty");
  }
  for (double g : gamma_grid) camid::validate(GammaOp{g});
  for (int q : jpeg_grid) camid::validate(JpegOp{q});
  for (double f : scale_grid) camid::validate(ScaleOp{f});
  for (double c : contrast_grid) camid::validate(ContrastOp{c});
}

namespace {

template <typename V>
V pick(const std::vector<V>& grid, Rng& rng) {
  return grid[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(grid.size()) - 1))];
}

AugmentOp draw_manipulation(const EvalSetOptions& o, Rng& rng) {
  switch (rng.uniform_int(0, 3)) {
    case 0: return GammaOp{pick(o.gamma_grid, rng)};
    case 1: return JpegOp{pick(o.jpeg_grid, rng)};
    case 2: return ScaleOp{pick(o.scale_grid, rng)};
    default: return ContrastOp{pick(o.contrast_grid, rng)};
  }
}

}  // namespace

EvalSetResult build_eval_set(const std::vector<ManifestRecord>& sources, std::uint64_t seed,
                             const fs::path& out_dir, const EvalSetOptions& options, int workers) {
  options.validate();
  fs::create_directories(out_dir);
  struct Slot {
    std::optional<ManifestRecord> record;
    std::string error;
  };
  std::vector<Slot> slots(sources.size());
  parallel_for(sources.size(), workers, [&](std::size_t i) {
    const auto& src = sources[i];
    Rng rng = Rng::stream(seed, i);
    try {
      ImageU8 img = center_crop(read_image(src.path), options.crop);
      ManifestRecord r = src;
      r.split = Split::Eval;
      r.altered = rng.bernoulli(options.altered_fraction);
      r.manipulation.reset();
      r.exif_software.reset();
      r.jpeg_quality.reset();
      if (r.altered) {
        const AugmentOp op = draw_manipulation(options, rng);
        img = apply_op(img, op);
        r.manipulation = describe(op);
      }
      char name[32];
      std::snprintf(name, sizeof name, "eval_%06zu.png", i);
      const fs::path out = out_dir / name;
      write_png(out, img);
      r.path = fs::absolute(out).string();
      r.width = img.width();
      r.height = img.height();
      slots[i].record = std::move(r);
    } catch (const Error& e) {
      slots[i].error = e.what();
    }
  });
  EvalSetResult result;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].record) {
      result.records.push_back(std::move(*slots[i].record));
    } else {
      result.skipped.emplace_back(sources[i].path, slots[i].error);
    }
  }
  return result;
}

}  // namespace camid
