#pragma once

#include <string>
#include <vector>

#include "cortexforge/distrib.hpp"
#include "cortexforge/netcore.hpp"
#include "cortexforge/optim.hpp"
#include "cortexforge/suphead.hpp"

namespace cortexforge::runconfig {

// Fully-resolved run settings. Every field has a default, so a config file
// only overrides what it names; unknown keys are rejected by the parser.
struct RunConfig {
  netcore::StageConfig stage;

  optim::SgdConfig sgd;

  int async_replicas = 1;
  int async_shards = 2;
  int fetch_period = 1;
  int push_period = 1;
  std::vector<std::string> endpoints;  // host:port per shard, socket mode

  std::string data_dir;
  std::string data_index;
  std::string pos_dir, pos_index;
  std::string neg_dir, neg_index;
  int target_height = 16;
  int target_width = 16;
  double ratio_pos = 0.352;
  std::size_t eval_total = 0;  // 0: as many as the pools allow at the ratio
  bool whiten = true;

  int hist_bins = 50;
  int baseline_filters = 1000;

  suphead::HeadConfig head;
  suphead::FineTuneConfig finetune;

  std::uint64_t seed = 0;
  std::string out_dir = ".";

  distrib::AsyncConfig async_config() const;
};

// Strict `section.key = value` parser: UTF-8 lines, full-line `#` comments,
// exactly one dot of nesting. Any unknown key fails with that key named.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Every known key with its current value, parseable by parse_config_text.
std::string render_config(const RunConfig& cfg);

// Writes render_config() to <dir>/resolved_config.txt.
void write_resolved_config(const RunConfig& cfg, const std::string& dir);

}  // namespace cortexforge::runconfig
