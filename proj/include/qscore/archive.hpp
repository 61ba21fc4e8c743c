#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "qscore/model.hpp"

namespace qscore {

// Weight archive layout (all integers little-endian):
//
//   offset 0   magic "QSW1"
//          4   u32 format version (1)
//          8   u64 header length in bytes
//         16   JSON header {"format_version", "config", "payload_bytes", "tensors": [
//                {"name", "dtype": "f32", "shape", "offset", "length"}, ...]}
//              zero padding up to the next multiple of 64
//          P   payload; tensor offsets are relative to P and 64-byte aligned
//   P+payload  u32 CRC-32 (IEEE) of the payload bytes
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::size_t kArchiveAlignment = 64;

std::string serialize_weights(const ModelWeights<float>& weights);
ModelWeights<float> deserialize_weights(std::string_view bytes);

void save_weights(const ModelWeights<float>& weights, const std::filesystem::path& path);
/// Throws Error with kCorruptArchive, kShapeMismatch or kUnsupportedVersion.
ModelWeights<float> load_weights(const std::filesystem::path& path);

/// 16 hex digits identifying archive contents.
std::string bytes_fingerprint(std::string_view bytes);
std::string archive_fingerprint(const std::filesystem::path& path);

}  // namespace qscore
