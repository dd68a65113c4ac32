#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "mmfusion/model.hpp"

namespace mmfusion {

inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (little-endian): "MMCK", u32 version, u32 spec length + spec text
// (key = value lines), u32 block count, then per block: u32 name length +
// name, u32 rows, u32 cols, rows*cols f64.
std::vector<std::uint8_t> encode_checkpoint(VideoModel& model);
VideoModel decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, VideoModel& model);
VideoModel load_checkpoint(const std::filesystem::path& path);

}  // namespace mmfusion
