#pragma once

#include <memory>
#include <string>
#include <vector>

#include "cortexforge/distrib.hpp"
#include "cortexforge/wire.hpp"

namespace cortexforge::distrib {

struct Endpoint {
  std::string host;
  int port = 0;
};

// Parses "host:port"; rejects missing or non-numeric ports.
Endpoint parse_endpoint(const std::string& spec);

// One parameter-server shard behind a TCP listener. Connections are handled
// on their own threads; updates are applied strictly serially under a lock.
// A malformed frame closes that connection only; the server stays up.
class ShardServer {
 public:
  ShardServer(ShardState state, float learning_rate);
  ~ShardServer();

  ShardServer(const ShardServer&) = delete;
  ShardServer& operator=(const ShardServer&) = delete;

  // Binds and starts the accept loop. port 0 picks an ephemeral port.
  void start(int port);
  int port() const;
  void stop();  // idempotent; joins all threads

  std::uint64_t version() const;
  ShardState snapshot() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocking request/response to one shard. Retries with exponential backoff
// on connection loss or timeout; throws NetError once retries are exhausted.
wire::WireMessage shard_request(const Endpoint& ep, const wire::WireMessage& request,
                                int max_retries = 5);

// One model replica over real sockets. Aborts (NetError) if any shard is
// unreachable at startup; mid-run failures retry with backoff, and a fetch
// that still fails falls back to the last-known parameters.
optim::TrainTrace replica_run(int replica_id, const std::vector<Tensor>& portion,
                              netcore::NetworkParams init, const PartitionPlan& plan,
                              const AsyncConfig& cfg, const std::vector<Endpoint>& endpoints);

// Reads every shard's current fragments into a full parameter set.
netcore::NetworkParams fetch_full_params(netcore::NetworkParams templ, const PartitionPlan& plan,
                                         const std::vector<Endpoint>& endpoints);

}  // namespace cortexforge::distrib
