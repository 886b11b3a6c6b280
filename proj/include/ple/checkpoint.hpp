#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ple/model.hpp"

namespace ple {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "PLE1" | u32 version | u32 len + config JSON | u32 len + manifest
// JSON | f64 little-endian payload in manifest order. Integers are
// little-endian. The manifest lists {name, shape, offset, label} per segment,
// offsets in bytes from the start of the payload.
std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_checkpoint(const std::filesystem::path& path);

// Vocabulary stored next to a checkpoint: "<checkpoint>.vocab".
std::filesystem::path vocab_path_for(const std::filesystem::path& checkpoint);

}  // namespace ple
