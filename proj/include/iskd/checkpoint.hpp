#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "iskd/network.hpp"

namespace iskd {

struct CheckpointMeta {
  std::size_t iteration = 0;  // KD iteration k (0 for the shared init)
  std::size_t epochs = 0;     // epochs trained, e_s
  std::uint64_t seed = 0;
  std::optional<double> test_accuracy;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  Network network;
  CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary layout, little-endian:
///   "ISKD" | u32 version | u32 n + n bytes of JSON descriptor
///   then per parameter: u16 n + name | u8 ndim | u32 dims[ndim] | f32 data[]
std::string encode_checkpoint(const Network& network, const CheckpointMeta& meta);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const Network& network, const CheckpointMeta& meta,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads parameters into an existing network; the stored architecture must
/// match exactly.
CheckpointMeta load_checkpoint_into(Network& network, const std::filesystem::path& path);

}  // namespace iskd
