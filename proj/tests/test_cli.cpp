// End-to-end tests driving the installed command-line binary as a subprocess.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "cortexforge/checkpoint.hpp"
#include "cortexforge/distrib_net.hpp"
#include "cortexforge/errors.hpp"
#include "cortexforge/netcore.hpp"
#include "cortexforge/runconfig.hpp"
#include "cortexforge/wire.hpp"

namespace fs = std::filesystem;
using namespace cortexforge;

namespace {

int run_cli(const std::string& args) {
  const std::string cmd = std::string(CORTEXFORGE_BIN) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("cf_cli_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

void write_pgm(const fs::path& file, int h, int w, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::ofstream out(file, std::ios::binary);
  out << "P5\n" << w << " " << h << "\n255\n";
  for (int i = 0; i < h * w; ++i) out.put(char(rng() % 256));
}

// A directory of random 8x8 grayscale images plus an index listing them.
void make_pool(const fs::path& dir, int count, std::uint32_t seed, bool labels = false) {
  fs::create_directories(dir);
  std::ofstream index(dir / "index.tsv");
  for (int i = 0; i < count; ++i) {
    const std::string name = "img" + std::to_string(i) + ".pgm";
    write_pgm(dir / name, 8, 8, seed + std::uint32_t(i));
    index << name;
    if (labels) index << "\t" << (i % 2);
    index << "\n";
  }
}

std::string base_config(const fs::path& root) {
  std::ostringstream cfg;
  cfg << "stage.input_height = 8\n"
      << "stage.input_width = 8\n"
      << "stage.rf_size = 4\n"
      << "stage.stride = 4\n"
      << "stage.num_maps = 2\n"
      << "stage.pool_size = 2\n"
      << "stage.lcn_window = 3\n"
      << "sgd.learning_rate = 0.01\n"
      << "sgd.minibatch_size = 4\n"
      << "sgd.max_steps = 10\n"
      << "async.n_replicas = 1\n"
      << "async.n_shards = 2\n"
      << "async.fetch_period = 1\n"
      << "async.push_period = 1\n"
      << "data.dir = " << (root / "pool").string() << "\n"
      << "data.index = " << (root / "pool" / "index.tsv").string() << "\n"
      << "data.pos_dir = " << (root / "pos").string() << "\n"
      << "data.pos_index = " << (root / "pos" / "index.tsv").string() << "\n"
      << "data.neg_dir = " << (root / "neg").string() << "\n"
      << "data.neg_index = " << (root / "neg" / "index.tsv").string() << "\n"
      << "data.ratio_pos = 0.4\n"
      << "data.eval_total = 16\n"
      << "eval.hist_bins = 8\n"
      << "run.seed = 11\n";
  return cfg.str();
}

fs::path write_config(const fs::path& root, const std::string& text) {
  const fs::path file = root / "run.conf";
  std::ofstream(file) << text;
  return file;
}

std::string slurp(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Metrics rows minus the wall-clock column, which legitimately varies.
std::string metrics_without_timing(const fs::path& file) {
  std::istringstream in(slurp(file));
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    out << line.substr(0, line.rfind(',')) << "\n";
  }
  return out.str();
}

std::string first_line(const fs::path& file) {
  std::ifstream in(file);
  std::string line;
  std::getline(in, line);
  return line;
}

struct Fixture {
  TempDir tmp;
  fs::path config;
  Fixture() {
    make_pool(tmp.path / "pool", 12, 100);
    make_pool(tmp.path / "pos", 10, 200);
    make_pool(tmp.path / "neg", 10, 300);
    config = write_config(tmp.path, base_config(tmp.path));
  }
};

}  // namespace

TEST_CASE("no subcommand is a usage error") { CHECK(run_cli("") == 1); }

TEST_CASE("a misspelled config key fails with exit code 1") {
  Fixture fx;
  const fs::path bad =
      fx.tmp.path / "bad.conf";
  std::ofstream(bad) << base_config(fx.tmp.path) << "stage.rf_sze = 4\n";
  CHECK(run_cli("train --config " + bad.string() + " --local --out " +
                (fx.tmp.path / "out").string()) == 1);
}

TEST_CASE("a missing data directory fails with the data exit code") {
  TempDir tmp;
  std::string cfg = base_config(tmp.path);  // pools never created
  const fs::path file = write_config(tmp.path, cfg);
  CHECK(run_cli("train --config " + file.string() + " --local --out " +
                (tmp.path / "out").string()) == 2);
}

TEST_CASE("local training is reproducible and writes its artifacts") {
  Fixture fx;
  const fs::path out_a = fx.tmp.path / "out_a";
  const fs::path out_b = fx.tmp.path / "out_b";
  REQUIRE(run_cli("train --config " + fx.config.string() + " --local --out " + out_a.string()) ==
          0);
  REQUIRE(run_cli("train --config " + fx.config.string() + " --local --out " + out_b.string()) ==
          0);

  CHECK(fs::exists(out_a / "metrics.csv"));
  CHECK(fs::exists(out_a / "resolved_config.txt"));
  CHECK(slurp(out_a / "checkpoint.lsae") == slurp(out_b / "checkpoint.lsae"));
  CHECK(metrics_without_timing(out_a / "metrics.csv") ==
        metrics_without_timing(out_b / "metrics.csv"));
}

TEST_CASE("train --steps 0 writes the seeded initialization") {
  Fixture fx;
  const fs::path out = fx.tmp.path / "out0";
  REQUIRE(run_cli("train --config " + fx.config.string() + " --local --steps 0 --out " +
                  out.string()) == 0);

  const auto cfg = cortexforge::runconfig::load_config(fx.config.string());
  const auto expected =
      netcore::init_network(netcore::chain_configs({cfg.stage}), cfg.seed);
  const auto ck = load_checkpoint((out / "checkpoint.lsae").string());
  const auto got = network_from_checkpoint(ck);
  REQUIRE(got.stages.size() == expected.stages.size());
  for (std::size_t s = 0; s < got.stages.size(); ++s) {
    CHECK(got.stages[s].w1_encode.storage() == expected.stages[s].w1_encode.storage());
    CHECK(got.stages[s].w2_decode.storage() == expected.stages[s].w2_decode.storage());
  }
}

TEST_CASE("degenerate distributed training matches local byte for byte") {
  Fixture fx;
  const fs::path out_local = fx.tmp.path / "out_local";
  const fs::path out_dist = fx.tmp.path / "out_dist";
  REQUIRE(run_cli("train --config " + fx.config.string() + " --local --out " +
                  out_local.string()) == 0);
  REQUIRE(run_cli("train --config " + fx.config.string() + " --distributed --out " +
                  out_dist.string()) == 0);
  CHECK(slurp(out_local / "checkpoint.lsae") == slurp(out_dist / "checkpoint.lsae"));
}

TEST_CASE("eval, visualize, and baseline run off a trained checkpoint") {
  Fixture fx;
  const fs::path out = fx.tmp.path / "out";
  REQUIRE(run_cli("train --config " + fx.config.string() + " --local --steps 5 --out " +
                  out.string()) == 0);
  const fs::path ck = out / "checkpoint.lsae";

  REQUIRE(run_cli("eval --config " + fx.config.string() + " --checkpoint " + ck.string() +
                  " --out " + out.string()) == 0);
  CHECK(first_line(out / "eval_report.csv") ==
        "neuron_index,accuracy,threshold,polarity,act_min,act_max");
  bool hist_found = false;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename().string().rfind("hist_", 0) == 0) hist_found = true;
  }
  CHECK(hist_found);

  REQUIRE(run_cli("visualize --config " + fx.config.string() + " --checkpoint " + ck.string() +
                  " --neuron 0 --mode top-stimuli --k 3 --out " + out.string()) == 0);
  int top_files = 0;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.path().filename().string().rfind("top_", 0) == 0) ++top_files;
  }
  CHECK(top_files == 3);

  REQUIRE(run_cli("visualize --config " + fx.config.string() + " --checkpoint " + ck.string() +
                  " --neuron 0 --mode optimal --out " + out.string()) == 0);
  CHECK(fs::exists(out / "optimal_neuron0.pgm"));

  REQUIRE(run_cli("baseline --config " + fx.config.string() + " --checkpoint " + ck.string() +
                  " --out " + out.string()) == 0);
  CHECK(first_line(out / "baseline.csv") == "n_filters,accuracy,best_filter_source");
}

TEST_CASE("the supervised head subcommand writes its report") {
  TempDir tmp;
  make_pool(tmp.path / "pool", 16, 500, /*labels=*/true);
  std::string cfg = base_config(tmp.path);
  cfg += "head.n_classes = 2\nhead.max_steps = 20\nfinetune.max_steps = 5\n";
  const fs::path file = write_config(tmp.path, cfg);
  const fs::path out = tmp.path / "out";
  REQUIRE(run_cli("suphead --config " + file.string() + " --out " + out.string()) == 0);
  CHECK(fs::exists(out / "supervised_report.csv"));
  CHECK(fs::exists(out / "resolved_config.txt"));
}

TEST_CASE("serve-params answers a parameter fetch over TCP") {
  Fixture fx;
  const int port = 47911;
  const std::string cmd = std::string(CORTEXFORGE_BIN) + " serve-params --config " +
                          fx.config.string() + " --shard-id 0 --listen " + std::to_string(port) +
                          " >/dev/null 2>&1 & echo $! > " + (fx.tmp.path / "pid").string();
  REQUIRE(std::system(cmd.c_str()) == 0);

  const distrib::Endpoint ep{"127.0.0.1", std::uint16_t(port)};
  bool answered = false;
  for (int attempt = 0; attempt < 50 && !answered; ++attempt) {
    try {
      const auto reply = distrib::shard_request(ep, wire::FetchParams{0, {"s1.w1"}}, 1);
      const auto& params = std::get<wire::ParamsResponse>(reply);
      CHECK(params.version == 0);
      CHECK(!params.tensors.empty());
      answered = true;
    } catch (const NetError&) {
      std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
  }
  CHECK(answered);

  const std::string kill_cmd = "kill $(cat " + (fx.tmp.path / "pid").string() + ")";
  CHECK(std::system(kill_cmd.c_str()) == 0);
}
