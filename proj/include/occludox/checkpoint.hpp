#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "occludox/model.hpp"

namespace occludox {

// Checkpoint layout, all integers little-endian:
//   "DOAC" | version u32 | entry count u32 |
//   per entry: name length u32 | name bytes | rank u32 | dims u32 x rank |
//              dtype u8 (0 = f32, 1 = f64) | payload

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointDtype : std::uint8_t { kF32 = 0, kF64 = 1 };

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> tensors,
                                            CheckpointDtype dtype = CheckpointDtype::kF64);
/// FormatError carrying the byte offset of the first violation.
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
/// Decodes and checks every tensor against `spec` (ShapeError on mismatch).
ModelParams load_checkpoint(const std::filesystem::path& path, const ConvNetSpec& spec);

}  // namespace occludox
