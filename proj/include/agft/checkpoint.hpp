#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "agft/model.hpp"

namespace agft {

// Checkpoint layout, little-endian:
//   "AGFT" | u32 version | u64 seed | u32 record count |
//   records: u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data
// Records: encoder.<i>.weight, encoder.<i>.bias, text_prototypes, tau ([]).
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const DualEncoder& model);
DualEncoder deserialize_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const DualEncoder& model, const std::filesystem::path& path);
DualEncoder load_checkpoint(const std::filesystem::path& path);

}  // namespace agft
