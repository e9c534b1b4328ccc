#include "cortexforge/distrib.hpp"

#include <algorithm>
#include <chrono>
#include <deque>
#include <random>

#include "cortexforge/rng.hpp"

namespace cortexforge::distrib {

std::vector<std::string> PartitionPlan::keys_for(int partition) const {
  std::vector<std::string> out;
  for (const auto& r : ranges) {
    if (r.partition == partition && std::find(out.begin(), out.end(), r.name) == out.end()) {
      out.push_back(r.name);
    }
  }
  return out;
}

std::size_t PartitionPlan::fragment_len(int partition, const std::string& name) const {
  std::size_t n = 0;
  for (const auto& r : ranges) {
    if (r.partition == partition && r.name == name) n += r.end - r.begin;
  }
  return n;
}

PartitionPlan partition_parameters(const std::vector<netcore::StageConfig>& configs,
                                   int n_partitions) {
  if (configs.empty()) throw ConfigError("partition_parameters: no stages");
  if (n_partitions < 1) throw ConfigError("partition_parameters: need at least one partition");
  int min_cols = configs.front().simple_cols();
  for (const auto& c : configs) min_cols = std::min(min_cols, c.simple_cols());
  if (n_partitions > min_cols) {
    throw ConfigError("partition_parameters: " + std::to_string(n_partitions) +
                      " partitions exceed the " + std::to_string(min_cols) +
                      " receptive-field columns available");
  }

  PartitionPlan plan;
  plan.n_partitions = n_partitions;
  for (std::size_t s = 0; s < configs.size(); ++s) {
    const auto& cfg = configs[s];
    const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
    const std::size_t unit = std::size_t(cfg.num_maps) * std::size_t(cfg.patch_len());
    for (const char* suffix : {".w1", ".w2"}) {
      const std::string name = "s" + std::to_string(s + 1) + suffix;
      for (int r = 0; r < rows; ++r) {
        int c = 0;
        while (c < cols) {
          const int part = int(std::size_t(c) * std::size_t(n_partitions) / std::size_t(cols));
          int c_end = c + 1;
          while (c_end < cols &&
                 int(std::size_t(c_end) * std::size_t(n_partitions) / std::size_t(cols)) == part) {
            ++c_end;
          }
          plan.ranges.push_back({name, (std::size_t(r) * cols + std::size_t(c)) * unit,
                                 (std::size_t(r) * cols + std::size_t(c_end)) * unit, part});
          c = c_end;
        }
      }
    }
  }
  return plan;
}

std::vector<std::pair<std::string, Tensor*>> learnable_params(netcore::NetworkParams& net) {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    out.emplace_back("s" + std::to_string(s + 1) + ".w1", &net.stages[s].w1_encode);
    out.emplace_back("s" + std::to_string(s + 1) + ".w2", &net.stages[s].w2_decode);
  }
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> learnable_params(
    const netcore::NetworkParams& net) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    out.emplace_back("s" + std::to_string(s + 1) + ".w1", &net.stages[s].w1_encode);
    out.emplace_back("s" + std::to_string(s + 1) + ".w2", &net.stages[s].w2_decode);
  }
  return out;
}

void shard_apply(ShardState& shard, const GradientUpdate& update, float lr) {
  // Validate the whole update before touching anything.
  for (const auto& [key, grad] : update) {
    auto it = shard.values.find(key);
    if (it == shard.values.end()) {
      throw ConfigError("shard " + std::to_string(shard.shard_id) + ": unknown key '" + key +
                        "', update rejected");
    }
    if (it->second.numel() != grad.numel()) {
      throw GeometryError("shard " + std::to_string(shard.shard_id) + ": fragment size mismatch for '" +
                          key + "', update rejected");
    }
  }
  for (const auto& [key, grad] : update) {
    Tensor& value = shard.values[key];
    for (std::size_t i = 0; i < value.numel(); ++i) value[i] -= lr * grad[i];
  }
  shard.version += 1;
}

Tensor gather_fragment(const PartitionPlan& plan, int partition, const std::string& name,
                       const Tensor& full) {
  std::vector<float> data;
  for (const auto& r : plan.ranges) {
    if (r.partition != partition || r.name != name) continue;
    data.insert(data.end(), full.storage().begin() + std::ptrdiff_t(r.begin),
                full.storage().begin() + std::ptrdiff_t(r.end));
  }
  if (data.empty()) throw ConfigError("gather_fragment: no ranges for '" + name + "'");
  const std::size_t n = data.size();
  return Tensor({n}, std::move(data));
}

void scatter_fragment(const PartitionPlan& plan, int partition, const std::string& name,
                      const Tensor& fragment, Tensor& full) {
  std::size_t cursor = 0;
  for (const auto& r : plan.ranges) {
    if (r.partition != partition || r.name != name) continue;
    const std::size_t len = r.end - r.begin;
    if (cursor + len > fragment.numel()) {
      throw GeometryError("scatter_fragment: fragment too short for '" + name + "'");
    }
    std::copy(fragment.storage().begin() + std::ptrdiff_t(cursor),
              fragment.storage().begin() + std::ptrdiff_t(cursor + len),
              full.storage().begin() + std::ptrdiff_t(r.begin));
    cursor += len;
  }
  if (cursor != fragment.numel()) {
    throw GeometryError("scatter_fragment: fragment length mismatch for '" + name + "'");
  }
}

std::vector<ShardState> make_shards(const netcore::NetworkParams& net, const PartitionPlan& plan) {
  std::vector<ShardState> shards(std::size_t(plan.n_partitions));
  const auto params = learnable_params(net);
  for (int p = 0; p < plan.n_partitions; ++p) {
    shards[std::size_t(p)].shard_id = std::uint32_t(p);
    for (const auto& [name, tensor] : params) {
      if (plan.fragment_len(p, name) > 0) {
        shards[std::size_t(p)].values[name] = gather_fragment(plan, p, name, *tensor);
      }
    }
  }
  return shards;
}

std::vector<std::vector<Tensor>> split_round_robin(const std::vector<Tensor>& dataset,
                                                   int n_portions) {
  if (n_portions < 1) throw ConfigError("split_round_robin: need at least one portion");
  std::vector<std::vector<Tensor>> out;
  out.resize(std::size_t(n_portions));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    out[i % std::size_t(n_portions)].push_back(dataset[i]);
  }
  for (int r = 0; r < n_portions; ++r) {
    if (out[std::size_t(r)].empty()) {
      throw ConfigError("split_round_robin: portion " + std::to_string(r) + " is empty");
    }
  }
  return out;
}

namespace {

// One model replica inside the deterministic simulator.
struct SimReplica {
  int id = 0;
  netcore::NetworkParams params;  // last-known parameter copy
  std::vector<Tensor> portion;
  optim::MinibatchSampler sampler;
  int step = 0;
  int budget = 0;
  bool alive = true;
  GradientUpdate accum;  // gradients summed since the last push
  int accum_steps = 0;
  optim::TrainTrace trace;
};

struct SimShard {
  ShardState state;
  std::deque<GradientUpdate> inbox;
};

}  // namespace

AsyncResult run_async_sim(const std::vector<Tensor>& dataset, netcore::NetworkParams init,
                          const AsyncConfig& cfg, std::uint64_t scheduler_seed,
                          const SimFaults& faults) {
  init.validate();
  if (cfg.n_replicas < 1 || cfg.n_shards < 1) {
    throw ConfigError("run_async_sim: replica and shard counts must be positive");
  }
  if (cfg.fetch_period < 1 || cfg.push_period < 1) {
    throw ConfigError("run_async_sim: fetch and push periods must be >= 1");
  }

  const PartitionPlan plan = partition_parameters(init.configs, cfg.n_shards);
  std::vector<SimShard> shards(std::size_t(cfg.n_shards));
  {
    auto states = make_shards(init, plan);
    for (int p = 0; p < cfg.n_shards; ++p) shards[std::size_t(p)].state = std::move(states[std::size_t(p)]);
  }

  const auto portions = split_round_robin(dataset, cfg.n_replicas);
  std::vector<SimReplica> replicas;
  replicas.reserve(std::size_t(cfg.n_replicas));
  for (int r = 0; r < cfg.n_replicas; ++r) {
    replicas.push_back(SimReplica{
        r, init, portions[std::size_t(r)],
        optim::MinibatchSampler(portions[std::size_t(r)].size(), cfg.sgd.minibatch_size,
                                cfg.sgd.seed, r),
        0, cfg.sgd.max_steps, true, {}, 0, {}});
  }

  AsyncResult result;
  auto rng = substream(scheduler_seed, "sim.scheduler");
  int event = 0;

  auto shard_delayed = [&](int sid) {
    return sid == faults.delay_shard && event >= faults.delay_from_event &&
           event < faults.delay_until_event;
  };
  auto drain_inboxes = [&] {
    for (int p = 0; p < cfg.n_shards; ++p) {
      if (shard_delayed(p)) continue;
      auto& sh = shards[std::size_t(p)];
      while (!sh.inbox.empty()) {
        shard_apply(sh.state, sh.inbox.front(), cfg.sgd.learning_rate);
        sh.inbox.pop_front();
      }
    }
  };

  auto fetch_all = [&](SimReplica& rep) {
    for (int p = 0; p < cfg.n_shards; ++p) {
      if (shard_delayed(p)) continue;  // proceed with last-known parameters
      auto full = learnable_params(rep.params);
      for (auto& [name, tensor] : full) {
        auto it = shards[std::size_t(p)].state.values.find(name);
        if (it != shards[std::size_t(p)].state.values.end()) {
          scatter_fragment(plan, p, name, it->second, *tensor);
        }
      }
    }
  };

  auto push_accum = [&](SimReplica& rep) {
    if (rep.accum_steps == 0) return;
    for (int p = 0; p < cfg.n_shards; ++p) {
      GradientUpdate update;
      for (const auto& [name, grad] : rep.accum) {
        if (plan.fragment_len(p, name) > 0) {
          update[name] = gather_fragment(plan, p, name, grad);
        }
      }
      shards[std::size_t(p)].inbox.push_back(std::move(update));
      result.push_messages += 1;
    }
    rep.accum.clear();
    rep.accum_steps = 0;
  };

  while (true) {
    std::vector<int> runnable;
    for (const auto& rep : replicas) {
      if (rep.alive && rep.step < rep.budget) runnable.push_back(rep.id);
    }
    if (runnable.empty()) break;
    const int pick =
        runnable[std::uniform_int_distribution<std::size_t>(0, runnable.size() - 1)(rng)];
    SimReplica& rep = replicas[std::size_t(pick)];

    if (rep.id == faults.kill_replica && rep.step == faults.kill_at_step) {
      rep.alive = false;  // mid-run death is tolerated, not fatal
      ++event;
      continue;
    }

    const auto t0 = std::chrono::steady_clock::now();
    if (rep.step % cfg.fetch_period == 0) fetch_all(rep);

    const auto idx = rep.sampler.next();
    std::vector<Tensor> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(rep.portion[i]);
    auto [objective, grads] = netcore::joint_objective_and_gradient(batch, rep.params);

    if (rep.accum.empty()) {
      for (std::size_t s = 0; s < rep.params.n_stages(); ++s) {
        rep.accum["s" + std::to_string(s + 1) + ".w1"] = grads[s].w1;
        rep.accum["s" + std::to_string(s + 1) + ".w2"] = grads[s].w2;
      }
    } else {
      for (std::size_t s = 0; s < rep.params.n_stages(); ++s) {
        axpy(rep.accum["s" + std::to_string(s + 1) + ".w1"], 1.0f, grads[s].w1);
        axpy(rep.accum["s" + std::to_string(s + 1) + ".w2"], 1.0f, grads[s].w2);
      }
    }
    rep.accum_steps += 1;

    const bool last_step = rep.step + 1 == rep.budget;
    if ((rep.step + 1) % cfg.push_period == 0 || last_step) push_accum(rep);

    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    rep.trace.steps.push_back({rep.step, objective, ms});
    rep.step += 1;
    ++event;
    drain_inboxes();
  }

  // End of run: the delay window is over; apply anything still queued.
  event = std::max(event, faults.delay_until_event);
  drain_inboxes();

  // Assemble final parameters from the shards.
  result.params = std::move(init);
  auto full = learnable_params(result.params);
  for (int p = 0; p < cfg.n_shards; ++p) {
    for (auto& [name, tensor] : full) {
      auto it = shards[std::size_t(p)].state.values.find(name);
      if (it != shards[std::size_t(p)].state.values.end()) {
        scatter_fragment(plan, p, name, it->second, *tensor);
      }
    }
  }
  for (auto& rep : replicas) result.replica_traces.push_back(std::move(rep.trace));
  for (auto& sh : shards) result.shard_versions.push_back(sh.state.version);
  return result;
}

}  // namespace cortexforge::distrib
