#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "cortexforge/tensor.hpp"

namespace cortexforge::wire {

enum class Tag : std::uint8_t {
  FetchParams = 0x01,
  ParamsResponse = 0x02,
  PushGrads = 0x03,
  Ack = 0x04,
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool operator==(const NamedTensor&) const = default;
};

struct FetchParams {
  std::uint32_t shard_id = 0;
  std::vector<std::string> keys;
  bool operator==(const FetchParams&) const = default;
};

struct ParamsResponse {
  std::uint64_t version = 0;
  std::vector<NamedTensor> tensors;
  bool operator==(const ParamsResponse&) const = default;
};

struct PushGrads {
  std::uint32_t replica_id = 0;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;
  bool operator==(const PushGrads&) const = default;
};

struct Ack {
  std::uint64_t version = 0;
  bool operator==(const Ack&) const = default;
};

using WireMessage = std::variant<FetchParams, ParamsResponse, PushGrads, Ack>;

// Full frame: u32 little-endian payload length, u8 tag, payload.
std::vector<std::uint8_t> encode_message(const WireMessage& msg);

// Decodes one complete frame; rejects unknown tags and truncated frames
// with an error naming expected vs actual lengths.
WireMessage decode_message(std::span<const std::uint8_t> frame);

// Frame length helper for stream reassembly: returns total frame size
// (header + tag + payload) once the 4-byte prefix is available.
std::size_t frame_size_from_prefix(std::span<const std::uint8_t> prefix);

}  // namespace cortexforge::wire
