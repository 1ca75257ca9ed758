#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "camid/nn/model.hpp"

namespace camid::nn {

void to_json(nlohmann::json& j, const DenseBlockConfig& c);
void from_json(const nlohmann::json& j, DenseBlockConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
/// Rejects unknown keys (ConfigError naming the key).
void from_json(const nlohmann::json& j, ModelConfig& c);

// File layout: "CMID", u32 version, u64 header length, JSON header
// {format, precision, model, tensors: [{name, shape}]}, then every tensor's
// elements as little-endian f32 or f64, in header order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
std::vector<std::uint8_t> serialize_checkpoint(const Model<T>& model);
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);

struct CheckpointInfo {
  ModelConfig config;
  std::string precision;  // "f32" or "f64"
};
CheckpointInfo read_checkpoint_info(std::span<const std::uint8_t> bytes);

/// Parameters are converted when the stored precision differs from T; a
/// same-precision load is bit-exact. When `expected` is given, every tensor
/// shape must match it or FormatError names the first offending layer.
template <typename T>
Model<T> deserialize_checkpoint(std::span<const std::uint8_t> bytes,
                                const std::optional<ModelConfig>& expected = std::nullopt);
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path,
                         const std::optional<ModelConfig>& expected = std::nullopt);

}  // namespace camid::nn
