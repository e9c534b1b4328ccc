#include "cortexforge/runconfig.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace cortexforge::runconfig {

distrib::AsyncConfig RunConfig::async_config() const {
  distrib::AsyncConfig a;
  a.n_replicas = async_replicas;
  a.n_shards = async_shards;
  a.fetch_period = fetch_period;
  a.push_period = push_period;
  a.sgd = sgd;
  return a;
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream in(value);
  T out{};
  in >> out;
  if (in.fail() || !(in >> std::ws).eof()) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + value + "'");
}

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> out;
  std::istringstream in(value);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& registry() {
  static const std::map<std::string, Setter> table = {
      {"stage.input_height", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.input_height = parse_number<int>(k, v); }},
      {"stage.input_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.input_width = parse_number<int>(k, v); }},
      {"stage.input_maps", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.input_maps = parse_number<int>(k, v); }},
      {"stage.rf_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.rf_size = parse_number<int>(k, v); }},
      {"stage.stride", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.stride = parse_number<int>(k, v); }},
      {"stage.num_maps", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.num_maps = parse_number<int>(k, v); }},
      {"stage.pool_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.pool_size = parse_number<int>(k, v); }},
      {"stage.lcn_window", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.lcn_window = parse_number<int>(k, v); }},
      {"stage.lcn_floor_c", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.lcn_floor_c = parse_number<float>(k, v); }},
      {"stage.sparsity_lambda", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.sparsity_lambda = parse_number<float>(k, v); }},
      {"stage.sparsity_epsilon", [](RunConfig& c, const std::string& k, const std::string& v) { c.stage.sparsity_epsilon = parse_number<float>(k, v); }},
      {"sgd.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.sgd.learning_rate = parse_number<float>(k, v); }},
      {"sgd.minibatch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.sgd.minibatch_size = parse_number<int>(k, v); }},
      {"sgd.max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.sgd.max_steps = parse_number<int>(k, v); }},
      {"async.n_replicas", [](RunConfig& c, const std::string& k, const std::string& v) { c.async_replicas = parse_number<int>(k, v); }},
      {"async.n_shards", [](RunConfig& c, const std::string& k, const std::string& v) { c.async_shards = parse_number<int>(k, v); }},
      {"async.fetch_period", [](RunConfig& c, const std::string& k, const std::string& v) { c.fetch_period = parse_number<int>(k, v); }},
      {"async.push_period", [](RunConfig& c, const std::string& k, const std::string& v) { c.push_period = parse_number<int>(k, v); }},
      {"async.endpoints", [](RunConfig& c, const std::string&, const std::string& v) { c.endpoints = parse_list(v); }},
      {"data.dir", [](RunConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"data.index", [](RunConfig& c, const std::string&, const std::string& v) { c.data_index = v; }},
      {"data.pos_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.pos_dir = v; }},
      {"data.pos_index", [](RunConfig& c, const std::string&, const std::string& v) { c.pos_index = v; }},
      {"data.neg_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.neg_dir = v; }},
      {"data.neg_index", [](RunConfig& c, const std::string&, const std::string& v) { c.neg_index = v; }},
      {"data.target_height", [](RunConfig& c, const std::string& k, const std::string& v) { c.target_height = parse_number<int>(k, v); }},
      {"data.target_width", [](RunConfig& c, const std::string& k, const std::string& v) { c.target_width = parse_number<int>(k, v); }},
      {"data.ratio_pos", [](RunConfig& c, const std::string& k, const std::string& v) { c.ratio_pos = parse_number<double>(k, v); }},
      {"data.eval_total", [](RunConfig& c, const std::string& k, const std::string& v) { c.eval_total = parse_number<std::size_t>(k, v); }},
      {"data.whiten", [](RunConfig& c, const std::string& k, const std::string& v) { c.whiten = parse_bool(k, v); }},
      {"eval.hist_bins", [](RunConfig& c, const std::string& k, const std::string& v) { c.hist_bins = parse_number<int>(k, v); }},
      {"eval.baseline_filters", [](RunConfig& c, const std::string& k, const std::string& v) { c.baseline_filters = parse_number<int>(k, v); }},
      {"head.n_classes", [](RunConfig& c, const std::string& k, const std::string& v) { c.head.n_classes = parse_number<int>(k, v); }},
      {"head.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.head.learning_rate = parse_number<float>(k, v); }},
      {"head.minibatch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.head.minibatch_size = parse_number<int>(k, v); }},
      {"head.max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.head.max_steps = parse_number<int>(k, v); }},
      {"finetune.learning_rate", [](RunConfig& c, const std::string& k, const std::string& v) { c.finetune.learning_rate = parse_number<float>(k, v); }},
      {"finetune.minibatch_size", [](RunConfig& c, const std::string& k, const std::string& v) { c.finetune.minibatch_size = parse_number<int>(k, v); }},
      {"finetune.max_steps", [](RunConfig& c, const std::string& k, const std::string& v) { c.finetune.max_steps = parse_number<int>(k, v); }},
      {"run.seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_number<std::uint64_t>(k, v); }},
      {"run.out_dir", [](RunConfig& c, const std::string&, const std::string& v) { c.out_dir = v; }},
  };
  return table;
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;

    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    auto it = registry().find(key);
    if (it == registry().end()) {
      throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(line_no));
    }
    it->second(cfg, key, value);
  }
  // Seeds fan out from the single run seed.
  cfg.sgd.seed = cfg.seed;
  cfg.head.seed = cfg.seed;
  cfg.finetune.seed = cfg.seed;
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

std::string render_config(const RunConfig& c) {
  std::ostringstream out;
  out << "stage.input_height = " << c.stage.input_height << "\n";
  out << "stage.input_width = " << c.stage.input_width << "\n";
  out << "stage.input_maps = " << c.stage.input_maps << "\n";
  out << "stage.rf_size = " << c.stage.rf_size << "\n";
  out << "stage.stride = " << c.stage.stride << "\n";
  out << "stage.num_maps = " << c.stage.num_maps << "\n";
  out << "stage.pool_size = " << c.stage.pool_size << "\n";
  out << "stage.lcn_window = " << c.stage.lcn_window << "\n";
  out << "stage.lcn_floor_c = " << c.stage.lcn_floor_c << "\n";
  out << "stage.sparsity_lambda = " << c.stage.sparsity_lambda << "\n";
  out << "stage.sparsity_epsilon = " << c.stage.sparsity_epsilon << "\n";
  out << "sgd.learning_rate = " << c.sgd.learning_rate << "\n";
  out << "sgd.minibatch_size = " << c.sgd.minibatch_size << "\n";
  out << "sgd.max_steps = " << c.sgd.max_steps << "\n";
  out << "async.n_replicas = " << c.async_replicas << "\n";
  out << "async.n_shards = " << c.async_shards << "\n";
  out << "async.fetch_period = " << c.fetch_period << "\n";
  out << "async.push_period = " << c.push_period << "\n";
  out << "async.endpoints = ";
  for (std::size_t i = 0; i < c.endpoints.size(); ++i) {
    out << (i ? "," : "") << c.endpoints[i];
  }
  out << "\n";
  out << "data.dir = " << c.data_dir << "\n";
  out << "data.index = " << c.data_index << "\n";
  out << "data.pos_dir = " << c.pos_dir << "\n";
  out << "data.pos_index = " << c.pos_index << "\n";
  out << "data.neg_dir = " << c.neg_dir << "\n";
  out << "data.neg_index = " << c.neg_index << "\n";
  out << "data.target_height = " << c.target_height << "\n";
  out << "data.target_width = " << c.target_width << "\n";
  out << "data.ratio_pos = " << c.ratio_pos << "\n";
  out << "data.eval_total = " << c.eval_total << "\n";
  out << "data.whiten = " << (c.whiten ? "true" : "false") << "\n";
  out << "eval.hist_bins = " << c.hist_bins << "\n";
  out << "eval.baseline_filters = " << c.baseline_filters << "\n";
  out << "head.n_classes = " << c.head.n_classes << "\n";
  out << "head.learning_rate = " << c.head.learning_rate << "\n";
  out << "head.minibatch_size = " << c.head.minibatch_size << "\n";
  out << "head.max_steps = " << c.head.max_steps << "\n";
  out << "finetune.learning_rate = " << c.finetune.learning_rate << "\n";
  out << "finetune.minibatch_size = " << c.finetune.minibatch_size << "\n";
  out << "finetune.max_steps = " << c.finetune.max_steps << "\n";
  out << "run.seed = " << c.seed << "\n";
  out << "run.out_dir = " << c.out_dir << "\n";
  return out.str();
}

void write_resolved_config(const RunConfig& cfg, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const auto path = std::filesystem::path(dir) / "resolved_config.txt";
  std::ofstream out(path);
  if (!out) throw DataError("cannot write resolved config: " + path.string());
  out << render_config(cfg);
}

}  // namespace cortexforge::runconfig
