#include "camid/nn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "camid/io.hpp"

namespace camid::nn {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written in host byte order");

namespace {

constexpr char kMagic[4] = {'C', 'M', 'I', 'D'};

template <typename T>
constexpr const char* precision_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

void require_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                  const std::string& where) {
  if (!j.is_object()) throw Error(Errc::ConfigError, where + " must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || item.key() == a;
    if (!known) throw Error(Errc::ConfigError, "unknown key '" + item.key() + "' in " + where);
  }
}

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(U));
}

template <typename U>
U get(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U v;
  std::memcpy(&v, bytes.data() + offset, sizeof(U));
  return v;
}

struct Parsed {
  nlohmann::json header;
  std::size_t payload_offset = 0;
};

Parsed parse(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t fixed = 4 + 4 + 8;
  if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::FormatError, "not a checkpoint (bad magic)");
  }
  const auto version = get<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw Error(Errc::FormatError, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - fixed) throw Error(Errc::FormatError, "truncated checkpoint header");
  Parsed p;
  try {
    p.header = nlohmann::json::parse(bytes.begin() + fixed, bytes.begin() + fixed + header_len);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("malformed checkpoint header: ") + e.what());
  }
  p.payload_offset = fixed + header_len;
  return p;
}

}  // namespace

void to_json(nlohmann::json& j, const DenseBlockConfig& c) {
  j = {{"num_layers", c.num_layers}, {"growth_rate", c.growth_rate}};
}

void from_json(const nlohmann::json& j, DenseBlockConfig& c) {
  require_keys(j, {"num_layers", "growth_rate"}, "dense block config");
  if (j.contains("num_layers")) j.at("num_layers").get_to(c.num_layers);
  if (j.contains("growth_rate")) j.at("growth_rate").get_to(c.growth_rate);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"in_channels", c.in_channels},
       {"stem_channels", c.stem_channels},
       {"blocks", c.blocks},
       {"num_classes", c.num_classes}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  require_keys(j, {"in_channels", "stem_channels", "blocks", "num_classes"}, "model config");
  if (j.contains("in_channels")) j.at("in_channels").get_to(c.in_channels);
  if (j.contains("stem_channels")) j.at("stem_channels").get_to(c.stem_channels);
  if (j.contains("blocks")) j.at("blocks").get_to(c.blocks);
  if (j.contains("num_classes")) j.at("num_classes").get_to(c.num_classes);
}

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model) {
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    tensors.push_back({{"name", model.names()[i]}, {"shape", model.parameters()[i].shape()}});
  }
  const nlohmann::json header = {{"format", "camid-checkpoint"},
                                 {"precision", precision_name<T>()},
                                 {"model", model.config()},
                                 {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put(out, kCheckpointVersion);
  put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& p : model.parameters()) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(p.data());
    out.insert(out.end(), raw, raw + p.numel() * sizeof(T));
  }
  return out;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(model));
}

CheckpointInfo read_checkpoint_info(std::span<const std::uint8_t> bytes) {
  const auto parsed = parse(bytes);
  try {
    CheckpointInfo info;
    info.config = parsed.header.at("model").get<ModelConfig>();
    info.config.validate();
    info.precision = parsed.header.at("precision").get<std::string>();
    if (info.precision != "f32" && info.precision != "f64") {
      throw Error(Errc::FormatError, "unknown checkpoint precision '" + info.precision + "'");
    }
    return info;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::FormatError, std::string("malformed checkpoint header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::FormatError) throw;
    throw Error(Errc::FormatError, std::string("checkpoint model config: ") + e.what());
  }
}

template <typename T>
Model<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                const std::optional<ModelConfig>& expected) {
  const auto parsed = parse(bytes);
  const auto info = read_checkpoint_info(bytes);
  const auto& tensors = parsed.header.at("tensors");
  Model<T> model(info.config);
  if (!tensors.is_array() || tensors.size() != model.parameters().size()) {
    throw Error(Errc::FormatError, "checkpoint tensor list does not match its model config");
  }
  if (expected) {
    const auto want = expected->parameter_shapes();
    for (std::size_t i = 0; i < std::max(want.size(), model.parameters().size()); ++i) {
      if (i >= want.size() || i >= model.parameters().size() || want[i].first != model.names()[i] ||
          want[i].second != model.parameters()[i].shape()) {
        const std::string name =
            i < model.names().size() ? model.names()[i] : want[i].first;
        const std::string have =
            i < model.parameters().size() ? shape_string(model.parameters()[i].shape()) : "missing";
        const std::string need = i < want.size() ? shape_string(want[i].second) : "absent";
        throw Error(Errc::FormatError, "checkpoint layer '" + name + "' has shape " + have +
                                           ", expected " + need);
      }
    }
  }
  const bool f32 = info.precision == "f32";
  const std::size_t elem = f32 ? 4 : 8;
  std::size_t offset = parsed.payload_offset;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    auto& p = model.parameters()[i];
    if (tensors[i].at("name").get<std::string>() != model.names()[i] ||
        tensors[i].at("shape").get<Shape>() != p.shape()) {
      throw Error(Errc::FormatError, "checkpoint tensor " + std::to_string(i) +
                                         " does not match layer '" + model.names()[i] + "'");
    }
    if (bytes.size() - offset < p.numel() * elem) {
      throw Error(Errc::FormatError, "truncated checkpoint payload at '" + model.names()[i] + "'");
    }
    for (std::size_t k = 0; k < p.numel(); ++k, offset += elem) {
      p[k] = f32 ? static_cast<T>(get<float>(bytes, offset)) : static_cast<T>(get<double>(bytes, offset));
    }
  }
  if (offset != bytes.size()) throw Error(Errc::FormatError, "trailing bytes after checkpoint payload");
  return model;
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, const std::optional<ModelConfig>& expected) {
  const auto bytes = read_file(path);
  return deserialize_checkpoint<T>(bytes, expected);
}

template std::vector<std::uint8_t> serialize_checkpoint<float>(const Model<float>&);
template std::vector<std::uint8_t> serialize_checkpoint<double>(const Model<double>&);
template void save_checkpoint<float>(const Model<float>&, const std::filesystem::path&);
template void save_checkpoint<double>(const Model<double>&, const std::filesystem::path&);
template Model<float> deserialize_checkpoint<float>(std::span<const std::uint8_t>,
                                                    const std::optional<ModelConfig>&);
template Model<double> deserialize_checkpoint<double>(std::span<const std::uint8_t>,
                                                      const std::optional<ModelConfig>&);
template Model<float> load_checkpoint<float>(const std::filesystem::path&,
                                             const std::optional<ModelConfig>&);
template Model<double> load_checkpoint<double>(const std::filesystem::path&,
                                               const std::optional<ModelConfig>&);

}  // namespace camid::nn
