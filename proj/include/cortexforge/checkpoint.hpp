#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cortexforge/netcore.hpp"

namespace cortexforge {

// Binary network snapshot: magic "LSAE", u32 version, u64 seed, the stage
// configuration block, then a named tensor table. Everything little-endian.
struct Checkpoint {
  std::uint64_t seed = 0;
  std::vector<netcore::StageConfig> configs;
  std::vector<std::pair<std::string, Tensor>> tensors;  // insertion order preserved

  const Tensor* find(const std::string& name) const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ck);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

// Standard tensor naming: s{1..n}.w1 / .w2 / .h / .g.
Checkpoint checkpoint_from_network(const netcore::NetworkParams& net, std::uint64_t seed);
netcore::NetworkParams network_from_checkpoint(const Checkpoint& ck);

}  // namespace cortexforge
