#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>

#include "cortexforge/distrib.hpp"
#include "cortexforge/rng.hpp"
#include "oracles.hpp"

using namespace cortexforge;
using namespace cortexforge::netcore;
using namespace cortexforge::distrib;

namespace {

std::vector<StageConfig> toy_configs(int grid_cols = 4) {
  StageConfig cfg;
  cfg.rf_size = 2;
  cfg.stride = 2;
  cfg.input_height = cfg.rf_size + (grid_cols - 1) * cfg.stride;
  cfg.input_width = cfg.input_height;
  cfg.input_maps = 1;
  cfg.num_maps = 2;
  cfg.pool_size = 2;
  cfg.lcn_window = 3;
  return chain_configs({cfg});
}

std::vector<Tensor> toy_dataset(std::size_t n, const StageConfig& cfg, std::uint64_t seed) {
  auto rng = substream(seed, "toyset");
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(oracles::random_tensor(cfg.input_shape(), rng, 0.0f, 1.0f));
  }
  return out;
}

bool same_params(const NetworkParams& a, const NetworkParams& b) {
  for (std::size_t s = 0; s < a.n_stages(); ++s) {
    if (!(a.stages[s].w1_encode == b.stages[s].w1_encode)) return false;
    if (!(a.stages[s].w2_decode == b.stages[s].w2_decode)) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("partition: single partition owns everything") {
  auto configs = toy_configs();
  PartitionPlan plan = partition_parameters(configs, 1);
  for (const auto& r : plan.ranges) CHECK(r.partition == 0);
  CHECK(plan.fragment_len(0, "s1.w1") ==
        configs[0].w_shape()[0] * configs[0].w_shape()[1] * configs[0].w_shape()[2] *
            configs[0].w_shape()[3]);
}

TEST_CASE("partition: nine columns over three partitions split 3/3/3") {
  // Receptive-field grid with 9 columns.
  StageConfig cfg;
  cfg.rf_size = 2;
  cfg.stride = 1;
  cfg.input_height = 10;
  cfg.input_width = 10;
  cfg.input_maps = 1;
  cfg.num_maps = 1;
  cfg.pool_size = 2;
  cfg.lcn_window = 3;
  auto configs = chain_configs({cfg});
  REQUIRE(configs[0].simple_cols() == 9);

  PartitionPlan plan = partition_parameters(configs, 3);
  const std::size_t unit = std::size_t(cfg.num_maps) * std::size_t(cfg.patch_len());
  const std::size_t cols = 9;
  for (const auto& r : plan.ranges) {
    // Every flat index maps back to a column; check the column grouping.
    for (std::size_t i = r.begin; i < r.end; i += unit) {
      const std::size_t col = (i / unit) % cols;
      CHECK(int(col / 3) == r.partition);
    }
  }
}

TEST_CASE("partition: full coverage, no overlap") {
  auto rng = substream(5, "cfg");
  for (int trial = 0; trial < 5; ++trial) {
    const int grid = std::uniform_int_distribution<int>(2, 5)(rng);
    auto configs = toy_configs(grid);
    const int n = std::uniform_int_distribution<int>(1, grid)(rng);
    PartitionPlan plan = partition_parameters(configs, n);

    std::map<std::string, std::vector<int>> covered;
    covered["s1.w1"].assign(init_network(configs, 0).stages[0].w1_encode.numel(), 0);
    covered["s1.w2"].assign(covered["s1.w1"].size(), 0);
    for (const auto& r : plan.ranges) {
      for (std::size_t i = r.begin; i < r.end; ++i) covered[r.name][i] += 1;
    }
    for (const auto& [name, counts] : covered) {
      for (int c : counts) CHECK(c == 1);
    }
  }
}

TEST_CASE("partition: too many partitions rejected") {
  auto configs = toy_configs(3);
  CHECK_THROWS_AS(partition_parameters(configs, 4), ConfigError);
}

TEST_CASE("shard_apply: zero gradient bumps only the version") {
  auto configs = toy_configs();
  NetworkParams net = init_network(configs, 3);
  PartitionPlan plan = partition_parameters(configs, 2);
  auto shards = make_shards(net, plan);
  auto before = shards[0].values;

  GradientUpdate zero;
  for (const auto& [name, frag] : shards[0].values) zero[name] = Tensor(frag.shape());
  shard_apply(shards[0], zero, 0.1f);
  CHECK(shards[0].version == 1);
  CHECK(shards[0].values == before);
}

TEST_CASE("shard_apply: two pushes equal one summed push, and order cannot change the sum") {
  auto configs = toy_configs();
  NetworkParams net = init_network(configs, 3);
  PartitionPlan plan = partition_parameters(configs, 1);
  auto rng = substream(6, "g");

  auto fresh = [&] { return make_shards(net, plan)[0]; };
  auto random_update = [&](ShardState& s) {
    GradientUpdate u;
    for (const auto& [name, frag] : s.values) {
      u[name] = oracles::random_tensor(frag.shape(), rng);
    }
    return u;
  };

  ShardState a = fresh();
  GradientUpdate g1 = random_update(a), g2 = random_update(a);
  shard_apply(a, g1, 0.1f);
  shard_apply(a, g2, 0.1f);

  ShardState b = fresh();
  GradientUpdate gsum;
  for (const auto& [name, t] : g1) {
    gsum[name] = t;
    axpy(gsum[name], 1.0f, g2.at(name));
  }
  shard_apply(b, gsum, 0.1f);
  for (const auto& [name, va] : a.values) {
    const Tensor& vb = b.values.at(name);
    for (std::size_t i = 0; i < va.numel(); ++i) {
      CHECK(va[i] == doctest::Approx(vb[i]).epsilon(1e-6).scale(1.0));
    }
  }
  CHECK(a.version == 2);
  CHECK(b.version == 1);

  // Randomized interleavings all land on value0 - lr * sum(gradients).
  std::vector<GradientUpdate> updates;
  for (int i = 0; i < 6; ++i) {
    ShardState tmp = fresh();
    updates.push_back(random_update(tmp));
  }
  std::vector<std::map<std::string, Tensor>> finals;
  for (int perm = 0; perm < 4; ++perm) {
    std::vector<std::size_t> order(updates.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    std::shuffle(order.begin(), order.end(), rng);
    ShardState s = fresh();
    for (std::size_t i : order) shard_apply(s, updates[i], 0.01f);
    finals.push_back(s.values);
  }
  for (std::size_t p = 1; p < finals.size(); ++p) {
    for (const auto& [name, v0] : finals[0]) {
      const Tensor& vp = finals[p].at(name);
      for (std::size_t i = 0; i < v0.numel(); ++i) {
        CHECK(v0[i] == doctest::Approx(vp[i]).epsilon(1e-5).scale(1.0));
      }
    }
  }
}

TEST_CASE("shard_apply: unknown key rejects the whole update") {
  auto configs = toy_configs();
  NetworkParams net = init_network(configs, 3);
  auto shards = make_shards(net, partition_parameters(configs, 1));
  auto before = shards[0].values;

  GradientUpdate bad;
  bad["s1.w1"] = Tensor({shards[0].values.at("s1.w1").numel()});
  bad["nonsense"] = Tensor({4});
  CHECK_THROWS_AS(shard_apply(shards[0], bad, 0.1f), ConfigError);
  CHECK(shards[0].version == 0);
  CHECK(shards[0].values == before);
}

TEST_CASE("replay oracle: shard value equals a scalar ledger replayed in order") {
  auto configs = toy_configs();
  NetworkParams net = init_network(configs, 3);
  PartitionPlan plan = partition_parameters(configs, 2);
  auto shards = make_shards(net, plan);
  auto rng = substream(7, "replay");

  // Track one scalar entry through a randomized update sequence.
  const std::string key = "s1.w2";
  const std::size_t slot = 3;
  double ledger = shards[1].values.at(key)[slot];
  const float lr = 0.05f;
  for (int i = 0; i < 20; ++i) {
    GradientUpdate u;
    for (const auto& [name, frag] : shards[1].values) {
      u[name] = oracles::random_tensor(frag.shape(), rng);
    }
    float g = u.at(key)[slot];
    shard_apply(shards[1], u, lr);
    ledger = float(ledger - lr * g);
  }
  CHECK(shards[1].values.at(key)[slot] == doctest::Approx(ledger).epsilon(1e-6));
  CHECK(shards[1].version == 20);
}

TEST_CASE("degenerate equivalence: 1 replica, P=G=1 is bit-identical to train_local") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(24, configs[0], 11);
  NetworkParams init = init_network(configs, 44);

  AsyncConfig acfg;
  acfg.n_replicas = 1;
  acfg.n_shards = 2;
  acfg.fetch_period = 1;
  acfg.push_period = 1;
  acfg.sgd = {0.01f, 6, 30, 44};

  AsyncResult async = run_async_sim(dataset, init, acfg, 123);
  NetworkParams sync = optim::train_local(dataset, init, acfg.sgd);
  CHECK(same_params(async.params, sync));
}

TEST_CASE("push period G=4 emits ceil(steps/4) pushes per shard") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(16, configs[0], 12);
  NetworkParams init = init_network(configs, 9);

  AsyncConfig acfg;
  acfg.n_replicas = 1;
  acfg.n_shards = 2;
  acfg.fetch_period = 2;
  acfg.push_period = 4;
  acfg.sgd = {0.01f, 4, 10, 9};

  AsyncResult res = run_async_sim(dataset, init, acfg, 5);
  // ceil(10/4) = 3 pushes, each fanned out to 2 shards.
  CHECK(res.push_messages == 3 * 2);
  for (auto v : res.shard_versions) CHECK(v == 3);
}

TEST_CASE("async run: 2 replicas x 2 shards lands near the synchronous objective") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(40, configs[0], 13);
  NetworkParams init = init_network(configs, 14);

  AsyncConfig acfg;
  acfg.n_replicas = 2;
  acfg.n_shards = 2;
  acfg.fetch_period = 4;
  acfg.push_period = 4;
  acfg.sgd = {0.005f, 5, 50, 14};  // 2 x 50 = 100 total steps

  AsyncResult async = run_async_sim(dataset, init, acfg, 77);

  optim::SgdConfig sync_cfg{0.005f, 5, 100, 14};
  NetworkParams sync = optim::train_local(dataset, init, sync_cfg);

  const double async_obj = netcore::joint_objective(dataset, async.params);
  const double sync_obj = netcore::joint_objective(dataset, sync);
  CHECK(async_obj < netcore::joint_objective(dataset, init));
  CHECK(std::abs(async_obj - sync_obj) / sync_obj < 0.10);
}

TEST_CASE("replica kill mid-run: run completes, shards keep their updates") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(30, configs[0], 15);
  NetworkParams init = init_network(configs, 16);

  AsyncConfig acfg;
  acfg.n_replicas = 2;
  acfg.n_shards = 2;
  acfg.fetch_period = 2;
  acfg.push_period = 2;
  acfg.sgd = {0.005f, 5, 40, 16};

  SimFaults faults;
  faults.kill_replica = 1;
  faults.kill_at_step = 7;
  AsyncResult res = run_async_sim(dataset, init, acfg, 31, faults);
  CHECK(res.replica_traces[0].steps.size() == 40);
  CHECK(res.replica_traces[1].steps.size() <= 7);
  for (auto v : res.shard_versions) CHECK(v > 0);
}

TEST_CASE("slow shard: replicas still finish their budgets") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(30, configs[0], 17);
  NetworkParams init = init_network(configs, 18);

  AsyncConfig acfg;
  acfg.n_replicas = 2;
  acfg.n_shards = 2;
  acfg.fetch_period = 1;
  acfg.push_period = 1;
  acfg.sgd = {0.005f, 5, 25, 18};

  SimFaults faults;
  faults.delay_shard = 1;
  faults.delay_from_event = 5;
  faults.delay_until_event = 40;
  AsyncResult res = run_async_sim(dataset, init, acfg, 99, faults);
  for (const auto& t : res.replica_traces) CHECK(t.steps.size() == 25);
  // The delayed shard applied its queued updates once the delay lifted.
  CHECK(res.shard_versions[1] > 0);
}

TEST_CASE("version monotonicity: total applied updates equals final version") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(20, configs[0], 19);
  NetworkParams init = init_network(configs, 20);

  AsyncConfig acfg;
  acfg.n_replicas = 3;
  acfg.n_shards = 2;
  acfg.fetch_period = 2;
  acfg.push_period = 3;
  acfg.sgd = {0.002f, 4, 12, 21};

  AsyncResult res = run_async_sim(dataset, init, acfg, 7);
  // Each replica pushes ceil(12/3) = 4 times, one message per shard.
  CHECK(res.push_messages == 3 * 4 * 2);
  for (auto v : res.shard_versions) CHECK(v == 3 * 4);
}

TEST_CASE("round-robin split rejects empty portions") {
  auto configs = toy_configs();
  auto dataset = toy_dataset(2, configs[0], 22);
  CHECK_THROWS_AS(split_round_robin(dataset, 3), ConfigError);
  auto portions = split_round_robin(dataset, 2);
  CHECK(portions[0].size() == 1);
  CHECK(portions[1].size() == 1);
}
