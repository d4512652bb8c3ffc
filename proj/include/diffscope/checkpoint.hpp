#pragma once

#include "diffscope/config.hpp"
#include "diffscope/io.hpp"
#include "diffscope/param_store.hpp"

#include <filesystem>

namespace diffscope {

inline constexpr char kCheckpointMagic[8] = {'D', 'D', 'P', 'M', 'S', 'C', 'P', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    UnetConfig unet;
    ScheduleSpec schedule;
    ToySpec data;
    std::uint64_t train_seed = 0;
    std::int64_t step = 0;
    ParamStore<float> params;

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

/// Layout: magic, u32 version, u64 config length + JSON config text, one record per tensor
/// (u32 name length, name, u32 rank, u64 dims, f32 payload), u64 FNV-1a of everything before it.
/// All integers and floats are little-endian.
std::vector<unsigned char> encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
/// Throws IoError for missing, truncated or corrupt files and ConfigError for bad contents.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffscope
