#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>

#include "network.hpp"

namespace kafshot {

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

struct Checkpoint {
  Network network;
  std::uint64_t seed = 0;
  nlohmann::json config;  // training configuration echo, may be null
};

/// Binary container: magic "KAFSHOT\0", format version, seed, a JSON header
/// holding the NetworkSpec and config, then every parameter tensor as
/// little-endian IEEE-754 doubles, closed by an FNV-1a checksum.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::filesystem::path& path, const Network& net,
                     std::uint64_t seed, const nlohmann::json& config = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace kafshot
