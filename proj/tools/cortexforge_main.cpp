// cortexforge: command-line front end tying the library modules together.

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "cortexforge/checkpoint.hpp"
#include "cortexforge/data.hpp"
#include "cortexforge/distrib.hpp"
#include "cortexforge/distrib_net.hpp"
#include "cortexforge/errors.hpp"
#include "cortexforge/eval.hpp"
#include "cortexforge/image_io.hpp"
#include "cortexforge/optim.hpp"
#include "cortexforge/runconfig.hpp"
#include "cortexforge/suphead.hpp"

namespace fs = std::filesystem;
using namespace cortexforge;
using runconfig::RunConfig;

namespace {

std::atomic<bool> g_terminate{false};
void handle_signal(int) { g_terminate.store(true); }

struct LoadedCheckpoint {
  netcore::NetworkParams net;
  bool has_whitening = false;
  data::WhiteningTransform whitening;
  std::uint64_t seed = 0;
};

LoadedCheckpoint read_network(const std::string& path) {
  const Checkpoint ck = load_checkpoint(path);
  LoadedCheckpoint out;
  out.net = network_from_checkpoint(ck);
  out.seed = ck.seed;
  const Tensor* mean = ck.find("whiten.mean");
  const Tensor* map = ck.find("whiten.map");
  if (mean && map) {
    out.has_whitening = true;
    out.whitening = {*mean, *map};
  }
  return out;
}

void save_network(const std::string& path, const netcore::NetworkParams& net, std::uint64_t seed,
                  const data::WhiteningTransform* whitening) {
  Checkpoint ck = checkpoint_from_network(net, seed);
  if (whitening) {
    ck.tensors.emplace_back("whiten.mean", whitening->mean);
    ck.tensors.emplace_back("whiten.map", whitening->map);
  }
  save_checkpoint(path, ck);
}

// Largest eval-set size the two pools can support at the requested ratio.
std::size_t max_eval_total(std::size_t n_pos, std::size_t n_neg, double ratio) {
  if (ratio <= 0.0) return n_neg;
  if (ratio >= 1.0) return n_pos;
  std::size_t total = n_pos + n_neg;
  while (total > 0) {
    const std::size_t want_pos = std::size_t(std::floor(ratio * double(total)));
    if (want_pos <= n_pos && total - want_pos <= n_neg) break;
    --total;
  }
  return total;
}

struct EvalData {
  std::vector<Tensor> images;          // network inputs (whitened when active)
  std::vector<Tensor> display_images;  // raw pixels for visualization
  std::vector<int> labels;
};

EvalData load_eval_set(const RunConfig& cfg, const LoadedCheckpoint& lc) {
  if (cfg.pos_dir.empty() || cfg.neg_dir.empty()) {
    throw ConfigError("eval needs data.pos_dir/data.pos_index and data.neg_dir/data.neg_index");
  }
  const auto& stage0 = lc.net.configs.front();
  data::Dataset pos = data::ingest(cfg.pos_dir, cfg.pos_index, stage0.input_height,
                                   stage0.input_width);
  data::Dataset neg = data::ingest(cfg.neg_dir, cfg.neg_index, stage0.input_height,
                                   stage0.input_width);
  std::size_t total = cfg.eval_total;
  if (total == 0) total = max_eval_total(pos.size(), neg.size(), cfg.ratio_pos);
  data::Dataset mix = data::assemble_eval_set(pos, neg, cfg.ratio_pos, total, cfg.seed);

  EvalData out;
  for (const auto& item : mix.items) {
    out.display_images.push_back(item.image);
    out.images.push_back(lc.has_whitening ? data::apply_whitening(item.image, lc.whitening)
                                          : item.image);
    out.labels.push_back(*item.label);
  }
  return out;
}

std::vector<std::vector<float>> per_neuron_activations(const netcore::NetworkParams& net,
                                                       const std::vector<Tensor>& images) {
  std::vector<std::vector<float>> acts;
  for (const auto& img : images) {
    const auto a = eval::top_layer_activations(net, img);
    if (acts.empty()) acts.resize(a.size());
    for (std::size_t n = 0; n < a.size(); ++n) acts[n].push_back(a[n]);
  }
  return acts;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

int cmd_train(const std::string& config_path, bool distributed, int steps_override,
              const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (steps_override >= 0) cfg.sgd.max_steps = steps_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.data_dir.empty() || cfg.data_index.empty()) {
    throw ConfigError("train needs data.dir and data.index");
  }

  data::Dataset raw =
      data::ingest(cfg.data_dir, cfg.data_index, cfg.stage.input_height, cfg.stage.input_width);
  std::vector<Tensor> images = raw.images();
  data::WhiteningTransform whitening;
  if (cfg.whiten) {
    whitening = data::fit_whitening(images);
    for (auto& img : images) img = data::apply_whitening(img, whitening);
  }

  const auto configs = netcore::chain_configs({cfg.stage});
  netcore::NetworkParams net = netcore::init_network(configs, cfg.seed);

  fs::create_directories(cfg.out_dir);
  optim::TrainTrace trace;
  if (!distributed) {
    net = optim::train_local(images, net, cfg.sgd, &trace);
  } else {
    distrib::AsyncResult result = distrib::run_async_sim(images, net, cfg.async_config(), cfg.seed);
    net = std::move(result.params);
    trace = std::move(result.replica_traces.front());
    std::cerr << "distributed(sim): " << result.push_messages << " push messages, shard versions:";
    for (auto v : result.shard_versions) std::cerr << " " << v;
    std::cerr << "\n";
  }

  auto metrics = open_out(fs::path(cfg.out_dir) / "metrics.csv");
  optim::write_trace_csv(metrics, trace);
  save_network((fs::path(cfg.out_dir) / "checkpoint.lsae").string(), net, cfg.seed,
               cfg.whiten ? &whitening : nullptr);
  runconfig::write_resolved_config(cfg, cfg.out_dir);
  std::cerr << "train: wrote checkpoint and metrics to " << cfg.out_dir << "\n";
  return 0;
}

int cmd_serve_params(const std::string& config_path, int shard_id, int port,
                     const std::string& checkpoint) {
  RunConfig cfg = runconfig::load_config(config_path);
  netcore::NetworkParams net = checkpoint.empty()
                                   ? netcore::init_network(netcore::chain_configs({cfg.stage}),
                                                           cfg.seed)
                                   : read_network(checkpoint).net;
  const auto plan = distrib::partition_parameters(net.configs, cfg.async_shards);
  if (shard_id < 0 || shard_id >= cfg.async_shards) {
    throw ConfigError("shard id must be in [0, " + std::to_string(cfg.async_shards) + ")");
  }
  auto shards = distrib::make_shards(net, plan);
  distrib::ShardServer server(shards[std::size_t(shard_id)], cfg.sgd.learning_rate);
  server.start(port);
  std::cerr << "shard " << shard_id << " listening on port " << server.port() << "\n";

  std::signal(SIGINT, handle_signal);
  std::signal(SIGTERM, handle_signal);
  while (!g_terminate.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  std::cerr << "shard " << shard_id << " stopped at version " << server.version() << "\n";
  return 0;
}

int cmd_worker(const std::string& config_path, int replica_id, const std::string& connect,
               const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  std::vector<std::string> specs = cfg.endpoints;
  if (!connect.empty()) {
    specs.clear();
    std::istringstream in(connect);
    std::string item;
    while (std::getline(in, item, ',')) specs.push_back(item);
  }
  std::vector<distrib::Endpoint> endpoints;
  for (const auto& s : specs) endpoints.push_back(distrib::parse_endpoint(s));

  if (cfg.data_dir.empty() || cfg.data_index.empty()) {
    throw ConfigError("worker needs data.dir and data.index");
  }
  data::Dataset raw =
      data::ingest(cfg.data_dir, cfg.data_index, cfg.stage.input_height, cfg.stage.input_width);
  std::vector<Tensor> images = raw.images();
  if (cfg.whiten) {
    auto whitening = data::fit_whitening(images);
    for (auto& img : images) img = data::apply_whitening(img, whitening);
  }
  const auto portions = distrib::split_round_robin(images, cfg.async_replicas);
  if (replica_id < 0 || replica_id >= cfg.async_replicas) {
    throw ConfigError("replica id must be in [0, " + std::to_string(cfg.async_replicas) + ")");
  }

  const auto configs = netcore::chain_configs({cfg.stage});
  netcore::NetworkParams init = netcore::init_network(configs, cfg.seed);
  const auto plan = distrib::partition_parameters(configs, cfg.async_shards);
  optim::TrainTrace trace = distrib::replica_run(replica_id, portions[std::size_t(replica_id)],
                                                 init, plan, cfg.async_config(), endpoints);

  fs::create_directories(cfg.out_dir);
  auto metrics =
      open_out(fs::path(cfg.out_dir) / ("replica_" + std::to_string(replica_id) + "_metrics.csv"));
  optim::write_trace_csv(metrics, trace);
  std::cerr << "worker " << replica_id << " finished " << trace.steps.size() << " steps\n";
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint,
             const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  LoadedCheckpoint lc = read_network(checkpoint);
  EvalData ev = load_eval_set(cfg, lc);

  const auto acts = per_neuron_activations(lc.net, ev.images);
  const eval::EvalReport report = eval::scan_all_neurons(acts, ev.labels);

  fs::create_directories(cfg.out_dir);
  auto report_csv = open_out(fs::path(cfg.out_dir) / "eval_report.csv");
  eval::write_eval_report_csv(report_csv, report);

  const std::size_t best = report.neurons.front().neuron_index;
  const eval::Histogram hist =
      eval::activation_histogram(acts[best], ev.labels, cfg.hist_bins);
  auto hist_csv = open_out(fs::path(cfg.out_dir) / ("hist_" + std::to_string(best) + ".csv"));
  eval::write_histogram_csv(hist_csv, hist);

  runconfig::write_resolved_config(cfg, cfg.out_dir);
  std::cerr << "eval: best neuron " << best << " accuracy " << report.neurons.front().accuracy
            << " (all-negative baseline " << report.all_negative_baseline << ")\n";
  return 0;
}

int cmd_visualize(const std::string& config_path, const std::string& checkpoint,
                  std::size_t neuron, const std::string& mode, std::size_t k,
                  const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  LoadedCheckpoint lc = read_network(checkpoint);
  fs::create_directories(cfg.out_dir);

  if (mode == "top-stimuli") {
    EvalData ev = load_eval_set(cfg, lc);
    const auto order = eval::top_stimuli(lc.net, neuron, ev.images, k);
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
      const fs::path path = fs::path(cfg.out_dir) / ("top_" + std::to_string(rank) + "_img" +
                                                     std::to_string(order[rank]) + ".pgm");
      imageio::write_pnm(path.string(), ev.display_images[order[rank]]);
    }
    std::cerr << "visualize: wrote " << order.size() << " top stimuli\n";
  } else if (mode == "optimal") {
    optim::LineSearchConfig ls;
    ls.max_iters = 100;
    Tensor x = eval::optimal_stimulus(lc.net, neuron, ls, cfg.seed);
    // Unit-norm input rescaled to [0,1] for display.
    float lo = x[0], hi = x[0];
    for (std::size_t i = 0; i < x.numel(); ++i) {
      lo = std::min(lo, x[i]);
      hi = std::max(hi, x[i]);
    }
    Tensor display(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      display[i] = hi > lo ? (x[i] - lo) / (hi - lo) : 0.5f;
    }
    const fs::path path =
        fs::path(cfg.out_dir) / ("optimal_neuron" + std::to_string(neuron) + ".pgm");
    imageio::write_pnm(path.string(), display);
    std::cerr << "visualize: wrote " << path << "\n";
  } else {
    throw ConfigError("visualize mode must be top-stimuli or optimal");
  }
  return 0;
}

int cmd_baseline(const std::string& config_path, const std::string& checkpoint,
                 const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  LoadedCheckpoint lc = read_network(checkpoint);
  EvalData ev = load_eval_set(cfg, lc);
  if (cfg.data_dir.empty() || cfg.data_index.empty()) {
    throw ConfigError("baseline needs data.dir and data.index for the filter pool");
  }
  data::Dataset pool_ds = data::ingest(cfg.data_dir, cfg.data_index,
                                       lc.net.configs.front().input_height,
                                       lc.net.configs.front().input_width);
  std::vector<Tensor> pool = pool_ds.images();
  if (lc.has_whitening) {
    for (auto& img : pool) img = data::apply_whitening(img, lc.whitening);
  }

  const eval::BaselineResult result = eval::linear_filter_baseline(
      pool, ev.images, ev.labels, cfg.baseline_filters, cfg.seed);

  fs::create_directories(cfg.out_dir);
  auto csv = open_out(fs::path(cfg.out_dir) / "baseline.csv");
  csv << "n_filters,accuracy,best_filter_source\n";
  csv << cfg.baseline_filters << "," << result.accuracy << "," << result.best_filter_source
      << "\n";
  std::cerr << "baseline: best linear filter accuracy " << result.accuracy << "\n";
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& axis, const std::string& values,
              const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.data_dir.empty() || cfg.pos_dir.empty()) {
    throw ConfigError("sweep needs data.dir (training pool) and the eval pools");
  }
  std::vector<int> vals;
  std::istringstream in(values);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) vals.push_back(std::stoi(item));
  }

  data::Dataset train_ds =
      data::ingest(cfg.data_dir, cfg.data_index, cfg.stage.input_height, cfg.stage.input_width);
  // A throwaway network built from the base config defines the eval geometry.
  LoadedCheckpoint lc;
  lc.net = netcore::init_network(netcore::chain_configs({cfg.stage}), cfg.seed);
  EvalData ev = load_eval_set(cfg, lc);

  const auto rows = eval::sensitivity_sweep(cfg.stage, axis, vals, train_ds.images(), ev.images,
                                            ev.labels, cfg.sgd);
  fs::create_directories(cfg.out_dir);
  auto csv = open_out(fs::path(cfg.out_dir) / "sweep.csv");
  eval::write_sweep_csv(csv, rows);
  std::cerr << "sweep: " << rows.size() << " rows written\n";
  return 0;
}

int cmd_suphead(const std::string& config_path, const std::string& out_override) {
  RunConfig cfg = runconfig::load_config(config_path);
  if (!out_override.empty()) cfg.out_dir = out_override;
  if (cfg.data_dir.empty() || cfg.data_index.empty()) {
    throw ConfigError("suphead needs a labeled data.dir/data.index");
  }
  data::Dataset ds =
      data::ingest(cfg.data_dir, cfg.data_index, cfg.stage.input_height, cfg.stage.input_width);
  std::vector<Tensor> images;
  std::vector<int> labels;
  for (const auto& item : ds.items) {
    if (!item.label) throw DataError("suphead: unlabeled item " + item.source_path);
    images.push_back(item.image);
    labels.push_back(*item.label);
  }

  const auto configs = netcore::chain_configs({cfg.stage});
  const suphead::CompareResult result =
      suphead::compare_init(images, labels, configs, cfg.sgd, cfg.head, cfg.finetune, cfg.seed);

  fs::create_directories(cfg.out_dir);
  auto csv = open_out(fs::path(cfg.out_dir) / "supervised_report.csv");
  suphead::write_supervised_report_csv(csv, result, cfg.finetune.max_steps, cfg.seed);
  runconfig::write_resolved_config(cfg, cfg.out_dir);
  std::cerr << "suphead: pretrained val " << result.pretrained_val_acc << " vs random val "
            << result.random_val_acc << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"locally connected sparse autoencoder toolkit"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir, mode = "top-stimuli", connect, axis = "rf_size";
  std::string sweep_values;
  int steps_override = -1, shard_id = 0, replica_id = 0, port = 0;
  std::size_t neuron = 0, k = 16;
  bool distributed = false, local = false;

  auto* train = app.add_subcommand("train", "unsupervised training");
  train->add_option("--config", config_path)->required();
  train->add_flag("--local", local);
  train->add_flag("--distributed", distributed);
  train->add_option("--steps", steps_override);
  train->add_option("--out", out_dir);

  auto* serve = app.add_subcommand("serve-params", "run one parameter-server shard");
  serve->add_option("--config", config_path)->required();
  serve->add_option("--shard-id", shard_id);
  serve->add_option("--listen", port)->required();
  serve->add_option("--checkpoint", checkpoint);

  auto* worker = app.add_subcommand("worker", "run one model replica");
  worker->add_option("--config", config_path)->required();
  worker->add_option("--replica-id", replica_id);
  worker->add_option("--connect", connect);
  worker->add_option("--out", out_dir);

  auto* evalc = app.add_subcommand("eval", "best-neuron evaluation report");
  evalc->add_option("--config", config_path)->required();
  evalc->add_option("--checkpoint", checkpoint)->required();
  evalc->add_option("--out", out_dir);

  auto* vis = app.add_subcommand("visualize", "top stimuli or optimal stimulus");
  vis->add_option("--config", config_path)->required();
  vis->add_option("--checkpoint", checkpoint)->required();
  vis->add_option("--neuron", neuron);
  vis->add_option("--mode", mode)->check(CLI::IsMember({"top-stimuli", "optimal"}));
  vis->add_option("--k", k);
  vis->add_option("--out", out_dir);

  auto* base = app.add_subcommand("baseline", "best-linear-filter control");
  base->add_option("--config", config_path)->required();
  base->add_option("--checkpoint", checkpoint)->required();
  base->add_option("--out", out_dir);

  auto* sweep = app.add_subcommand("sweep", "architecture sensitivity sweep");
  sweep->add_option("--config", config_path)->required();
  sweep->add_option("--axis", axis)->check(CLI::IsMember({"rf_size", "num_maps"}));
  sweep->add_option("--values", sweep_values)->required();
  sweep->add_option("--out", out_dir);

  auto* sup = app.add_subcommand("suphead", "supervised head comparison");
  sup->add_option("--config", config_path)->required();
  sup->add_option("--out", out_dir);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // usage errors map to exit code 1
  }

  try {
    if (*train) {
      if (distributed && local) throw ConfigError("choose one of --local or --distributed");
      return cmd_train(config_path, distributed, steps_override, out_dir);
    }
    if (*serve) return cmd_serve_params(config_path, shard_id, port, checkpoint);
    if (*worker) return cmd_worker(config_path, replica_id, connect, out_dir);
    if (*evalc) return cmd_eval(config_path, checkpoint, out_dir);
    if (*vis) return cmd_visualize(config_path, checkpoint, neuron, mode, k, out_dir);
    if (*base) return cmd_baseline(config_path, checkpoint, out_dir);
    if (*sweep) return cmd_sweep(config_path, axis, sweep_values, out_dir);
    if (*sup) return cmd_suphead(config_path, out_dir);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NetError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 1;
}
