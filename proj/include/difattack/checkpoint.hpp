#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "difattack/params.hpp"

namespace difattack {

// Checkpoint layout, little-endian throughout:
//   "DIFW" | version u32 | records...
//   record = name_len u32 | name bytes | dtype u8 (0 = f32) | rank u32 | dims u32 x rank | f32 payload
// Records follow ParameterSet order; the file ends after the last record.
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

std::vector<std::uint8_t> encode_checkpoint(const ParameterSet& params);
/// Throws FormatError carrying the failing byte offset.
ParameterSet decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::string& path, const ParameterSet& params);
ParameterSet load_checkpoint(const std::string& path);

}  // namespace difattack
