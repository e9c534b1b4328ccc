#include "cortexforge/distrib_net.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cstring>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

namespace cortexforge::distrib {

namespace {

bool write_all(int fd, const std::uint8_t* data, std::size_t len) {
  std::size_t sent = 0;
  while (sent < len) {
    const ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    sent += std::size_t(n);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* data, std::size_t len) {
  std::size_t got = 0;
  while (got < len) {
    const ssize_t n = ::recv(fd, data + got, len - got, 0);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      return false;
    }
    got += std::size_t(n);
  }
  return true;
}

// Reads one length-prefixed frame; nullopt means the peer closed cleanly
// before a new frame started.
std::optional<std::vector<std::uint8_t>> read_frame(int fd) {
  std::vector<std::uint8_t> frame(4);
  if (!read_all(fd, frame.data(), 4)) return std::nullopt;
  const std::size_t total = wire::frame_size_from_prefix(frame);
  frame.resize(total);
  if (!read_all(fd, frame.data() + 4, total - 4)) return std::nullopt;
  return frame;
}

bool write_frame(int fd, const wire::WireMessage& msg) {
  const auto bytes = wire::encode_message(msg);
  return write_all(fd, bytes.data(), bytes.size());
}

int connect_to(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(ep.port);
  if (::getaddrinfo(ep.host.c_str(), port.c_str(), &hints, &res) != 0) return -1;
  int fd = -1;
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd >= 0) {
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
  }
  return fd;
}

}  // namespace

Endpoint parse_endpoint(const std::string& spec) {
  const auto colon = spec.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == spec.size()) {
    throw ConfigError("endpoint must be host:port, got '" + spec + "'");
  }
  Endpoint ep;
  ep.host = spec.substr(0, colon);
  const std::string port = spec.substr(colon + 1);
  try {
    std::size_t used = 0;
    ep.port = std::stoi(port, &used);
    if (used != port.size()) throw std::invalid_argument(port);
  } catch (const std::exception&) {
    throw ConfigError("endpoint port must be numeric, got '" + port + "'");
  }
  if (ep.port < 1 || ep.port > 65535) {
    throw ConfigError("endpoint port out of range: " + port);
  }
  return ep;
}

struct ShardServer::Impl {
  ShardState state;
  float lr;
  mutable std::mutex mu;  // guards state

  int listen_fd = -1;
  int bound_port = 0;
  std::atomic<bool> stopping{false};
  std::thread acceptor;
  std::vector<std::thread> handlers;
  std::mutex handlers_mu;

  wire::WireMessage handle(const wire::WireMessage& req) {
    std::lock_guard<std::mutex> lock(mu);
    if (const auto* fetch = std::get_if<wire::FetchParams>(&req)) {
      wire::ParamsResponse resp;
      resp.version = state.version;
      for (const auto& key : fetch->keys) {
        auto it = state.values.find(key);
        if (it == state.values.end()) {
          throw ConfigError("shard " + std::to_string(state.shard_id) + ": unknown key '" + key +
                            "'");
        }
        resp.tensors.push_back({key, it->second});
      }
      return resp;
    }
    if (const auto* push = std::get_if<wire::PushGrads>(&req)) {
      GradientUpdate update;
      for (const auto& nt : push->tensors) update[nt.name] = nt.tensor;
      shard_apply(state, update, lr);
      return wire::Ack{state.version};
    }
    throw NetError("shard " + std::to_string(state.shard_id) + ": unexpected message type");
  }

  void serve_connection(int fd) {
    while (!stopping.load()) {
      std::optional<std::vector<std::uint8_t>> frame;
      try {
        frame = read_frame(fd);
      } catch (const NetError&) {
        break;  // malformed prefix: drop this connection, keep serving
      }
      if (!frame) break;
      try {
        const wire::WireMessage reply = handle(wire::decode_message(*frame));
        if (!write_frame(fd, reply)) break;
      } catch (const std::exception& e) {
        // Bad frame or bad update: this connection dies, the shard lives.
        std::cerr << "shard " << state.shard_id << ": dropping connection: " << e.what() << "\n";
        break;
      }
    }
    ::close(fd);
  }

  void accept_loop() {
    while (!stopping.load()) {
      const int fd = ::accept(listen_fd, nullptr, nullptr);
      if (fd < 0) {
        if (stopping.load()) break;
        if (errno == EINTR) continue;
        break;
      }
      std::lock_guard<std::mutex> lock(handlers_mu);
      handlers.emplace_back([this, fd] { serve_connection(fd); });
    }
  }
};

ShardServer::ShardServer(ShardState state, float learning_rate) : impl_(new Impl) {
  impl_->state = std::move(state);
  impl_->lr = learning_rate;
}

ShardServer::~ShardServer() { stop(); }

void ShardServer::start(int port) {
  Impl& im = *impl_;
  im.listen_fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (im.listen_fd < 0) throw NetError("shard server: socket() failed");
  const int one = 1;
  ::setsockopt(im.listen_fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(std::uint16_t(port));
  if (::bind(im.listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
    ::close(im.listen_fd);
    im.listen_fd = -1;
    throw NetError("shard server: cannot bind port " + std::to_string(port));
  }
  if (::listen(im.listen_fd, 16) != 0) {
    ::close(im.listen_fd);
    im.listen_fd = -1;
    throw NetError("shard server: listen() failed");
  }
  socklen_t len = sizeof(addr);
  ::getsockname(im.listen_fd, reinterpret_cast<sockaddr*>(&addr), &len);
  im.bound_port = int(ntohs(addr.sin_port));
  im.acceptor = std::thread([&im] { im.accept_loop(); });
}

int ShardServer::port() const { return impl_->bound_port; }

void ShardServer::stop() {
  Impl& im = *impl_;
  if (im.stopping.exchange(true)) return;
  if (im.listen_fd >= 0) {
    ::shutdown(im.listen_fd, SHUT_RDWR);
    ::close(im.listen_fd);
    im.listen_fd = -1;
  }
  if (im.acceptor.joinable()) im.acceptor.join();
  std::lock_guard<std::mutex> lock(im.handlers_mu);
  for (auto& t : im.handlers) {
    if (t.joinable()) t.join();
  }
  im.handlers.clear();
}

std::uint64_t ShardServer::version() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->state.version;
}

ShardState ShardServer::snapshot() const {
  std::lock_guard<std::mutex> lock(impl_->mu);
  return impl_->state;
}

wire::WireMessage shard_request(const Endpoint& ep, const wire::WireMessage& request,
                                int max_retries) {
  int backoff_ms = 10;
  for (int attempt = 0;; ++attempt) {
    const int fd = connect_to(ep);
    if (fd >= 0) {
      if (write_frame(fd, request)) {
        try {
          auto frame = read_frame(fd);
          if (frame) {
            wire::WireMessage reply = wire::decode_message(*frame);
            ::close(fd);
            return reply;
          }
        } catch (const NetError&) {
          // fall through to retry
        }
      }
      ::close(fd);
    }
    if (attempt >= max_retries) {
      throw NetError("shard " + ep.host + ":" + std::to_string(ep.port) + " unreachable after " +
                     std::to_string(attempt + 1) + " attempts");
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
    backoff_ms = std::min(backoff_ms * 2, 500);
  }
}

namespace {

// Fetch fragments from one shard into the full parameter set; returns false
// if the shard stayed unreachable (caller keeps last-known values).
bool fetch_shard(const Endpoint& ep, int partition, const PartitionPlan& plan,
                 netcore::NetworkParams& params, int max_retries) {
  wire::FetchParams req;
  req.shard_id = std::uint32_t(partition);
  req.keys = plan.keys_for(partition);
  wire::WireMessage reply;
  try {
    reply = shard_request(ep, req, max_retries);
  } catch (const NetError&) {
    return false;
  }
  const auto* resp = std::get_if<wire::ParamsResponse>(&reply);
  if (!resp) throw NetError("fetch from shard " + std::to_string(partition) + ": wrong reply type");
  auto full = learnable_params(params);
  for (const auto& nt : resp->tensors) {
    for (auto& [name, tensor] : full) {
      if (name == nt.name) scatter_fragment(plan, partition, name, nt.tensor, *tensor);
    }
  }
  return true;
}

}  // namespace

optim::TrainTrace replica_run(int replica_id, const std::vector<Tensor>& portion,
                              netcore::NetworkParams init, const PartitionPlan& plan,
                              const AsyncConfig& cfg, const std::vector<Endpoint>& endpoints) {
  init.validate();
  if (portion.empty()) throw ConfigError("replica_run: empty data portion");
  if (int(endpoints.size()) != plan.n_partitions) {
    throw ConfigError("replica_run: " + std::to_string(endpoints.size()) + " endpoints for " +
                      std::to_string(plan.n_partitions) + " partitions");
  }
  if (cfg.fetch_period < 1 || cfg.push_period < 1) {
    throw ConfigError("replica_run: fetch and push periods must be >= 1");
  }

  // Startup: every shard must answer once, or the replica aborts.
  for (int p = 0; p < plan.n_partitions; ++p) {
    if (!fetch_shard(endpoints[std::size_t(p)], p, plan, init, 2)) {
      throw NetError("replica " + std::to_string(replica_id) + ": shard " + std::to_string(p) +
                     " unreachable at startup");
    }
  }

  optim::MinibatchSampler sampler(portion.size(), cfg.sgd.minibatch_size, cfg.sgd.seed,
                                  replica_id);
  optim::TrainTrace trace;
  GradientUpdate accum;
  int accum_steps = 0;

  for (int step = 0; step < cfg.sgd.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    if (step % cfg.fetch_period == 0) {
      for (int p = 0; p < plan.n_partitions; ++p) {
        if (!fetch_shard(endpoints[std::size_t(p)], p, plan, init, 3)) {
          std::cerr << "replica " << replica_id << ": shard " << p
                    << " slow, continuing with last-known parameters\n";
        }
      }
    }

    const auto idx = sampler.next();
    std::vector<Tensor> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(portion[i]);
    auto [objective, grads] = netcore::joint_objective_and_gradient(batch, init);

    for (std::size_t s = 0; s < init.n_stages(); ++s) {
      const std::string prefix = "s" + std::to_string(s + 1);
      if (accum_steps == 0) {
        accum[prefix + ".w1"] = grads[s].w1;
        accum[prefix + ".w2"] = grads[s].w2;
      } else {
        axpy(accum[prefix + ".w1"], 1.0f, grads[s].w1);
        axpy(accum[prefix + ".w2"], 1.0f, grads[s].w2);
      }
    }
    accum_steps += 1;

    const bool last_step = step + 1 == cfg.sgd.max_steps;
    if ((step + 1) % cfg.push_period == 0 || last_step) {
      for (int p = 0; p < plan.n_partitions; ++p) {
        wire::PushGrads push;
        push.replica_id = std::uint32_t(replica_id);
        push.step = std::uint64_t(step);
        for (const auto& [name, grad] : accum) {
          if (plan.fragment_len(p, name) > 0) {
            push.tensors.push_back({name, gather_fragment(plan, p, name, grad)});
          }
        }
        try {
          shard_request(endpoints[std::size_t(p)], push, 3);
        } catch (const NetError& e) {
          // A lost push delays this copy of SGD; it never kills the replica.
          std::cerr << "replica " << replica_id << ": push to shard " << p
                    << " failed: " << e.what() << "\n";
        }
      }
      accum.clear();
      accum_steps = 0;
    }

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    trace.steps.push_back({step, objective, ms});
  }
  return trace;
}

netcore::NetworkParams fetch_full_params(netcore::NetworkParams templ, const PartitionPlan& plan,
                                         const std::vector<Endpoint>& endpoints) {
  if (int(endpoints.size()) != plan.n_partitions) {
    throw ConfigError("fetch_full_params: endpoint count does not match partitions");
  }
  for (int p = 0; p < plan.n_partitions; ++p) {
    if (!fetch_shard(endpoints[std::size_t(p)], p, plan, templ, 5)) {
      throw NetError("fetch_full_params: shard " + std::to_string(p) + " unreachable");
    }
  }
  return templ;
}

}  // namespace cortexforge::distrib
