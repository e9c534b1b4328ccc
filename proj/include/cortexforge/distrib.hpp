#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cortexforge/netcore.hpp"
#include "cortexforge/optim.hpp"

namespace cortexforge::distrib {

// Locality-based split of the learnable parameters: contiguous vertical
// strips of receptive-field columns map to partitions left-to-right, and a
// weight lives with the partition owning its receptive field's column.
struct PartitionPlan {
  struct Range {
    std::string name;     // parameter key, e.g. "s1.w1"
    std::size_t begin;    // flat index range into that parameter
    std::size_t end;
    int partition;
  };

  int n_partitions = 1;
  std::vector<Range> ranges;

  std::vector<std::string> keys_for(int partition) const;
  std::size_t fragment_len(int partition, const std::string& name) const;
};

PartitionPlan partition_parameters(const std::vector<netcore::StageConfig>& configs,
                                   int n_partitions);

// Names of the learnable parameters, paired with mutable flat views.
std::vector<std::pair<std::string, Tensor*>> learnable_params(netcore::NetworkParams& net);
std::vector<std::pair<std::string, const Tensor*>> learnable_params(
    const netcore::NetworkParams& net);

// One parameter-server shard: a partition of the values plus a serial
// update counter. Updates are applied in arrival order, never concurrently.
struct ShardState {
  std::uint32_t shard_id = 0;
  std::map<std::string, Tensor> values;  // fragment per parameter key
  std::uint64_t version = 0;
};

using GradientUpdate = std::map<std::string, Tensor>;

// value <- value - lr * gradient per key; version += 1. An unknown key or
// shape mismatch rejects the whole update and leaves version unchanged.
void shard_apply(ShardState& shard, const GradientUpdate& update, float lr);

std::vector<ShardState> make_shards(const netcore::NetworkParams& net, const PartitionPlan& plan);

// Gather this shard's fragment of one full parameter tensor / scatter it back.
Tensor gather_fragment(const PartitionPlan& plan, int partition, const std::string& name,
                       const Tensor& full);
void scatter_fragment(const PartitionPlan& plan, int partition, const std::string& name,
                      const Tensor& fragment, Tensor& full);

struct AsyncConfig {
  int n_replicas = 1;
  int n_shards = 1;
  int fetch_period = 1;  // P: steps between parameter fetches
  int push_period = 1;   // G: steps between gradient pushes
  optim::SgdConfig sgd;
};

// Deterministic in-process scheduler faults, for asynchrony tests.
struct SimFaults {
  int kill_replica = -1;   // replica id to kill, or -1
  int kill_at_step = -1;   // local step at which it dies
  int delay_shard = -1;    // shard id that stops responding, or -1
  int delay_from_event = -1;
  int delay_until_event = -1;  // exclusive; inbox drains when the delay lifts
};

struct AsyncResult {
  netcore::NetworkParams params;
  std::vector<optim::TrainTrace> replica_traces;
  std::vector<std::uint64_t> shard_versions;
  std::size_t push_messages = 0;
};

// Splits the dataset round-robin over replicas and runs the asynchronous
// protocol under a seeded deterministic interleaving. With one replica and
// P = G = 1 this reproduces train_local bit-for-bit.
AsyncResult run_async_sim(const std::vector<Tensor>& dataset, netcore::NetworkParams init,
                          const AsyncConfig& cfg, std::uint64_t scheduler_seed = 0,
                          const SimFaults& faults = {});

// Round-robin data split; portion r gets items r, r+n, r+2n, ...
std::vector<std::vector<Tensor>> split_round_robin(const std::vector<Tensor>& dataset,
                                                   int n_portions);

}  // namespace cortexforge::distrib
