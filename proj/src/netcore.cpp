#include "cortexforge/netcore.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "cortexforge/parallel.hpp"
#include "cortexforge/rng.hpp"

namespace cortexforge::netcore {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

void require_shape(const Tensor& t, const std::vector<std::size_t>& want, const char* what) {
  if (t.shape() != want) {
    throw GeometryError(std::string(what) + ": expected shape " + shape_str(want) + ", got " +
                        shape_str(t.shape()));
  }
}

}  // namespace

void StageConfig::validate() const {
  if (input_height <= 0 || input_width <= 0 || input_maps <= 0) {
    throw GeometryError("stage input dimensions must be positive");
  }
  if (rf_size <= 0 || stride <= 0 || num_maps <= 0 || pool_size <= 0 || lcn_window <= 0) {
    throw GeometryError("stage geometry fields must be positive");
  }
  if (rf_size > input_height || rf_size > input_width) {
    throw GeometryError("rf_size " + std::to_string(rf_size) + " exceeds input extent " +
                        std::to_string(input_height) + "x" + std::to_string(input_width));
  }
  if ((input_height - rf_size) % stride != 0 || (input_width - rf_size) % stride != 0) {
    throw GeometryError("(input extent - rf_size) must be divisible by stride");
  }
  if (pool_size > simple_rows() || pool_size > simple_cols()) {
    throw GeometryError("pool_size " + std::to_string(pool_size) +
                        " exceeds simple-layer extent " + std::to_string(simple_rows()) + "x" +
                        std::to_string(simple_cols()));
  }
  if (lcn_window % 2 == 0) {
    throw ConfigError("lcn_window must be odd, got " + std::to_string(lcn_window));
  }
  if (lcn_floor_c <= 0.0f) throw ConfigError("lcn_floor_c must be positive");
  if (sparsity_lambda < 0.0f) throw ConfigError("sparsity_lambda must be nonnegative");
  // epsilon == 0 keeps the objective well-defined; only gradients reject it.
  if (sparsity_epsilon < 0.0f) throw ConfigError("sparsity_epsilon must be nonnegative");
}

void NetworkParams::validate() const {
  if (configs.empty() || configs.size() != stages.size()) {
    throw GeometryError("network must have at least one configured stage");
  }
  for (const auto& cfg : configs) cfg.validate();
  for (std::size_t s = 0; s + 1 < configs.size(); ++s) {
    const auto& cur = configs[s];
    const auto& nxt = configs[s + 1];
    if (nxt.input_height != cur.pooled_rows() || nxt.input_width != cur.pooled_cols() ||
        nxt.input_maps != cur.num_maps) {
      throw GeometryError("stage " + std::to_string(s + 2) + " input geometry does not match stage " +
                          std::to_string(s + 1) + " output");
    }
  }
}

std::vector<StageConfig> chain_configs(std::vector<StageConfig> per_stage) {
  if (per_stage.empty()) throw ConfigError("chain_configs: no stages");
  per_stage.front().validate();
  for (std::size_t s = 1; s < per_stage.size(); ++s) {
    const auto& prev = per_stage[s - 1];
    per_stage[s].input_height = prev.pooled_rows();
    per_stage[s].input_width = prev.pooled_cols();
    per_stage[s].input_maps = prev.num_maps;
    per_stage[s].validate();
  }
  return per_stage;
}

Tensor make_pool_weights(const StageConfig& cfg) {
  Tensor h({std::size_t(cfg.pool_size), std::size_t(cfg.pool_size)});
  h.fill(1.0f / float(cfg.pool_size * cfg.pool_size));
  return h;
}

Tensor make_lcn_window(const StageConfig& cfg) {
  const int win = cfg.lcn_window;
  const int maps = cfg.num_maps;
  Tensor g({std::size_t(win), std::size_t(win), std::size_t(maps)});
  const double sigma = double(win) / 4.0;
  const int hw = win / 2;
  double total = 0.0;
  for (int u = 0; u < win; ++u) {
    for (int v = 0; v < win; ++v) {
      double du = u - hw, dv = v - hw;
      double w = std::exp(-(du * du + dv * dv) / (2.0 * sigma * sigma));
      for (int c = 0; c < maps; ++c) {
        g(std::size_t(u), std::size_t(v), std::size_t(c)) = float(w);
        total += w;
      }
    }
  }
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] = float(double(g[i]) / total);
  return g;
}

StageParams init_stage_params(const StageConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  StageParams p;
  p.w1_encode = Tensor(cfg.w_shape());
  p.w2_decode = Tensor(cfg.w_shape());
  const float r = 1.0f / std::sqrt(float(cfg.patch_len()));
  auto rng1 = substream(seed, "init.w1");
  auto rng2 = substream(seed, "init.w2");
  std::uniform_real_distribution<float> dist(-r, r);
  for (std::size_t i = 0; i < p.w1_encode.numel(); ++i) p.w1_encode[i] = dist(rng1);
  for (std::size_t i = 0; i < p.w2_decode.numel(); ++i) p.w2_decode[i] = dist(rng2);
  p.h_pool = make_pool_weights(cfg);
  p.g_window = make_lcn_window(cfg);
  return p;
}

NetworkParams init_network(std::vector<StageConfig> configs, std::uint64_t seed) {
  NetworkParams net;
  net.configs = std::move(configs);
  net.stages.reserve(net.configs.size());
  for (std::size_t s = 0; s < net.configs.size(); ++s) {
    net.stages.push_back(
        init_stage_params(net.configs[s], derive_seed(seed, "stage." + std::to_string(s))));
  }
  net.validate();
  return net;
}

// --- Simple sublayer ------------------------------------------------------

Tensor lc_filter_forward(const Tensor& input, const StageConfig& cfg, const Tensor& w1) {
  cfg.validate();
  require_shape(input, cfg.input_shape(), "lc_filter_forward input");
  require_shape(w1, cfg.w_shape(), "lc_filter_forward weights");

  const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
  const int rf = cfg.rf_size, in_maps = cfg.input_maps, maps = cfg.num_maps;
  const int plen = cfg.patch_len();
  Tensor out(cfg.simple_shape());
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int r0 = r * cfg.stride, c0 = c * cfg.stride;
      for (int m = 0; m < maps; ++m) {
        const float* w = w1.data() +
                         (((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen));
        double acc = 0.0;
        int p = 0;
        for (int u = 0; u < rf; ++u) {
          const float* row = input.data() +
                             ((std::size_t(r0 + u) * cfg.input_width + c0) * in_maps);
          for (int v = 0; v < rf * in_maps; ++v) {
            acc += double(w[p++]) * double(row[v]);
          }
        }
        out(std::size_t(r), std::size_t(c), std::size_t(m)) = float(acc);
      }
    }
  }
  return out;
}

void lc_filter_backward(const Tensor& input, const StageConfig& cfg, const Tensor& w1,
                        const Tensor& d_simple, Tensor* d_w1, Tensor* d_input) {
  require_shape(input, cfg.input_shape(), "lc_filter_backward input");
  require_shape(d_simple, cfg.simple_shape(), "lc_filter_backward d_simple");
  const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
  const int rf = cfg.rf_size, in_maps = cfg.input_maps, maps = cfg.num_maps;
  const int plen = cfg.patch_len();
  if (d_w1) *d_w1 = Tensor(cfg.w_shape());
  if (d_input) *d_input = Tensor(cfg.input_shape());

  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int r0 = r * cfg.stride, c0 = c * cfg.stride;
      for (int m = 0; m < maps; ++m) {
        const float ds = d_simple(std::size_t(r), std::size_t(c), std::size_t(m));
        if (ds == 0.0f) continue;
        const std::size_t wbase = ((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen);
        int p = 0;
        for (int u = 0; u < rf; ++u) {
          const std::size_t ibase = (std::size_t(r0 + u) * cfg.input_width + c0) * in_maps;
          for (int v = 0; v < rf * in_maps; ++v, ++p) {
            if (d_w1) (*d_w1)[wbase + p] += ds * input[ibase + v];
            if (d_input) (*d_input)[ibase + v] += ds * w1[wbase + p];
          }
        }
      }
    }
  }
}

// --- L2 pooling -----------------------------------------------------------

Tensor l2_pool_forward(const Tensor& simple, const StageConfig& cfg, const Tensor& h_pool) {
  require_shape(simple, cfg.simple_shape(), "l2_pool_forward simple layer");
  const std::size_t pool = std::size_t(cfg.pool_size);
  require_shape(h_pool, {pool, pool}, "l2_pool_forward weights");
  if (cfg.pool_size > cfg.simple_rows() || cfg.pool_size > cfg.simple_cols()) {
    throw GeometryError("pool_size exceeds simple-layer extent");
  }
  const int prows = cfg.pooled_rows(), pcols = cfg.pooled_cols(), maps = cfg.num_maps;
  Tensor out(cfg.output_shape());
  for (int r = 0; r < prows; ++r) {
    for (int c = 0; c < pcols; ++c) {
      for (int m = 0; m < maps; ++m) {
        double acc = 0.0;
        for (int u = 0; u < cfg.pool_size; ++u) {
          for (int v = 0; v < cfg.pool_size; ++v) {
            double s = simple(std::size_t(r + u), std::size_t(c + v), std::size_t(m));
            acc += double(h_pool(std::size_t(u), std::size_t(v))) * s * s;
          }
        }
        out(std::size_t(r), std::size_t(c), std::size_t(m)) = float(std::sqrt(acc));
      }
    }
  }
  return out;
}

Tensor l2_pool_backward(const Tensor& simple, const Tensor& pooled, const StageConfig& cfg,
                        const Tensor& h_pool, const Tensor& d_pooled) {
  require_shape(d_pooled, cfg.output_shape(), "l2_pool_backward d_pooled");
  Tensor d_simple(cfg.simple_shape());
  const int prows = cfg.pooled_rows(), pcols = cfg.pooled_cols(), maps = cfg.num_maps;
  for (int r = 0; r < prows; ++r) {
    for (int c = 0; c < pcols; ++c) {
      for (int m = 0; m < maps; ++m) {
        const float p = pooled(std::size_t(r), std::size_t(c), std::size_t(m));
        if (p <= 0.0f) continue;  // subgradient 0 at the sqrt kink
        const float scale = d_pooled(std::size_t(r), std::size_t(c), std::size_t(m)) / p;
        if (scale == 0.0f) continue;
        for (int u = 0; u < cfg.pool_size; ++u) {
          for (int v = 0; v < cfg.pool_size; ++v) {
            d_simple(std::size_t(r + u), std::size_t(c + v), std::size_t(m)) +=
                scale * h_pool(std::size_t(u), std::size_t(v)) *
                simple(std::size_t(r + u), std::size_t(c + v), std::size_t(m));
          }
        }
      }
    }
  }
  return d_simple;
}

// --- Local contrast normalization ----------------------------------------

namespace {

struct LcnScratch {
  int rows, cols, maps, win, hw;
  const Tensor* g;

  // Window normalizer at center (i,j): sum of raw window weights over the
  // in-bounds offsets and all maps. Truncated windows renormalize to 1.
  double z(int i, int j) const {
    double acc = 0.0;
    for (int u = -hw; u <= hw; ++u) {
      if (i + u < 0 || i + u >= rows) continue;
      for (int v = -hw; v <= hw; ++v) {
        if (j + v < 0 || j + v >= cols) continue;
        for (int c = 0; c < maps; ++c) {
          acc += double((*g)(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c)));
        }
      }
    }
    return acc;
  }
};

}  // namespace

Tensor lcn_forward(const Tensor& pooled, const StageConfig& cfg, const Tensor& g_window) {
  require_shape(pooled, cfg.output_shape(), "lcn_forward input");
  if (cfg.lcn_window % 2 == 0) throw ConfigError("lcn_window must be odd");
  const std::size_t win = std::size_t(cfg.lcn_window);
  require_shape(g_window, {win, win, std::size_t(cfg.num_maps)}, "lcn_forward window");

  LcnScratch sc{cfg.pooled_rows(), cfg.pooled_cols(), cfg.num_maps, cfg.lcn_window,
                cfg.lcn_window / 2, &g_window};
  const int rows = sc.rows, cols = sc.cols, maps = sc.maps, hw = sc.hw;

  // Subtractive step, written as a weighted sum of differences so a constant
  // input yields exactly zero regardless of rounding in the window sum.
  Tensor sub(cfg.output_shape());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double z = sc.z(i, j);
      for (int k = 0; k < maps; ++k) {
        const double center = pooled(std::size_t(i), std::size_t(j), std::size_t(k));
        double acc = 0.0;
        for (int u = -hw; u <= hw; ++u) {
          if (i + u < 0 || i + u >= rows) continue;
          for (int v = -hw; v <= hw; ++v) {
            if (j + v < 0 || j + v >= cols) continue;
            for (int c = 0; c < maps; ++c) {
              const double w =
                  g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
              acc += w * (center - double(pooled(std::size_t(i + u), std::size_t(j + v),
                                                 std::size_t(c))));
            }
          }
        }
        sub(std::size_t(i), std::size_t(j), std::size_t(k)) = float(acc / z);
      }
    }
  }

  // Divisive step: same window, local energy floored at c.
  Tensor out(cfg.output_shape());
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double z = sc.z(i, j);
      double energy = 0.0;
      for (int u = -hw; u <= hw; ++u) {
        if (i + u < 0 || i + u >= rows) continue;
        for (int v = -hw; v <= hw; ++v) {
          if (j + v < 0 || j + v >= cols) continue;
          for (int c = 0; c < maps; ++c) {
            const double w = g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
            const double gv = sub(std::size_t(i + u), std::size_t(j + v), std::size_t(c));
            energy += (w / z) * gv * gv;
          }
        }
      }
      const double denom = std::max(double(cfg.lcn_floor_c), std::sqrt(energy));
      for (int k = 0; k < maps; ++k) {
        out(std::size_t(i), std::size_t(j), std::size_t(k)) =
            float(double(sub(std::size_t(i), std::size_t(j), std::size_t(k))) / denom);
      }
    }
  }
  return out;
}

Tensor lcn_backward(const Tensor& pooled, const StageConfig& cfg, const Tensor& g_window,
                    const Tensor& d_out) {
  require_shape(d_out, cfg.output_shape(), "lcn_backward d_out");
  LcnScratch sc{cfg.pooled_rows(), cfg.pooled_cols(), cfg.num_maps, cfg.lcn_window,
                cfg.lcn_window / 2, &g_window};
  const int rows = sc.rows, cols = sc.cols, maps = sc.maps, hw = sc.hw;

  // Recompute forward intermediates (sub, denominators, branch) in double.
  std::vector<double> sub(std::size_t(rows) * cols * maps, 0.0);
  std::vector<double> zc(std::size_t(rows) * cols, 0.0);
  auto sidx = [&](int i, int j, int k) { return (std::size_t(i) * cols + j) * maps + k; };
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double z = sc.z(i, j);
      zc[std::size_t(i) * cols + j] = z;
      for (int k = 0; k < maps; ++k) {
        const double center = pooled(std::size_t(i), std::size_t(j), std::size_t(k));
        double acc = 0.0;
        for (int u = -hw; u <= hw; ++u) {
          if (i + u < 0 || i + u >= rows) continue;
          for (int v = -hw; v <= hw; ++v) {
            if (j + v < 0 || j + v >= cols) continue;
            for (int c = 0; c < maps; ++c) {
              const double w = g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
              acc += w * (center -
                          double(pooled(std::size_t(i + u), std::size_t(j + v), std::size_t(c))));
            }
          }
        }
        sub[sidx(i, j, k)] = acc / z;
      }
    }
  }
  std::vector<double> denom(std::size_t(rows) * cols, 0.0);
  std::vector<bool> sqrt_branch(std::size_t(rows) * cols, false);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double z = zc[std::size_t(i) * cols + j];
      double energy = 0.0;
      for (int u = -hw; u <= hw; ++u) {
        if (i + u < 0 || i + u >= rows) continue;
        for (int v = -hw; v <= hw; ++v) {
          if (j + v < 0 || j + v >= cols) continue;
          for (int c = 0; c < maps; ++c) {
            const double w = g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
            const double gv = sub[sidx(i + u, j + v, c)];
            energy += (w / z) * gv * gv;
          }
        }
      }
      const double se = std::sqrt(energy);
      const bool on_sqrt = se > double(cfg.lcn_floor_c);
      denom[std::size_t(i) * cols + j] = on_sqrt ? se : double(cfg.lcn_floor_c);
      sqrt_branch[std::size_t(i) * cols + j] = on_sqrt;
    }
  }

  // dL/d(sub): direct term plus the divisive-denominator term.
  std::vector<double> d_sub(std::size_t(rows) * cols * maps, 0.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double d = denom[std::size_t(i) * cols + j];
      for (int k = 0; k < maps; ++k) {
        d_sub[sidx(i, j, k)] += double(d_out(std::size_t(i), std::size_t(j), std::size_t(k))) / d;
      }
    }
  }
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      if (!sqrt_branch[std::size_t(i) * cols + j]) continue;
      const double d = denom[std::size_t(i) * cols + j];
      const double z = zc[std::size_t(i) * cols + j];
      double s = 0.0;  // sum_k dL/dy_k * sub_k
      for (int k = 0; k < maps; ++k) {
        s += double(d_out(std::size_t(i), std::size_t(j), std::size_t(k))) * sub[sidx(i, j, k)];
      }
      const double d_energy = -s / (2.0 * d * d * d);
      for (int u = -hw; u <= hw; ++u) {
        if (i + u < 0 || i + u >= rows) continue;
        for (int v = -hw; v <= hw; ++v) {
          if (j + v < 0 || j + v >= cols) continue;
          for (int c = 0; c < maps; ++c) {
            const double w = g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
            d_sub[sidx(i + u, j + v, c)] += d_energy * (w / z) * 2.0 * sub[sidx(i + u, j + v, c)];
          }
        }
      }
    }
  }

  // Subtractive backward: sub_{ijk} = h_{ijk} - sum Gn_{ij}(u,v,c) h_{i+u,j+v,c}.
  Tensor d_pooled(cfg.output_shape());
  std::vector<double> d_h(std::size_t(rows) * cols * maps, 0.0);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double z = zc[std::size_t(i) * cols + j];
      double gsum = 0.0;
      for (int k = 0; k < maps; ++k) {
        d_h[sidx(i, j, k)] += d_sub[sidx(i, j, k)];
        gsum += d_sub[sidx(i, j, k)];
      }
      for (int u = -hw; u <= hw; ++u) {
        if (i + u < 0 || i + u >= rows) continue;
        for (int v = -hw; v <= hw; ++v) {
          if (j + v < 0 || j + v >= cols) continue;
          for (int c = 0; c < maps; ++c) {
            const double w = g_window(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c));
            d_h[sidx(i + u, j + v, c)] -= (w / z) * gsum;
          }
        }
      }
    }
  }
  for (std::size_t i = 0; i < d_pooled.numel(); ++i) d_pooled[i] = float(d_h[i]);
  return d_pooled;
}

// --- Stage / network forward ---------------------------------------------

StageActivations stage_forward(const Tensor& input, const StageConfig& cfg,
                               const StageParams& params) {
  StageActivations acts;
  acts.simple = lc_filter_forward(input, cfg, params.w1_encode);
  acts.pooled = l2_pool_forward(acts.simple, cfg, params.h_pool);
  acts.normalized = lcn_forward(acts.pooled, cfg, params.g_window);
  return acts;
}

std::vector<StageActivations> network_forward(const Tensor& input, const NetworkParams& net) {
  net.validate();
  std::vector<StageActivations> out;
  out.reserve(net.n_stages());
  const Tensor* cur = &input;
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    out.push_back(stage_forward(*cur, net.configs[s], net.stages[s]));
    cur = &out.back().normalized;
  }
  return out;
}

// --- Objective and gradients ---------------------------------------------

namespace {

struct ExampleTerms {
  double objective = 0.0;
  // Set when gradients requested. All 64-bit: the objective path stays
  // smooth in the parameters so finite-difference oracles converge.
  std::vector<double> simple;
  std::vector<double> residual;  // x_hat - x
  std::vector<double> d_simple;  // dJ/ds (reconstruction + sparsity paths)
};

ExampleTerms stage_example_terms(const Tensor& x, const StageConfig& cfg,
                                 const StageParams& params, bool want_grads) {
  ExampleTerms out;
  const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
  const int rf = cfg.rf_size, in_maps = cfg.input_maps, maps = cfg.num_maps;
  const int plen = cfg.patch_len();
  auto ssx = [&](int a, int b, int m) {
    return (std::size_t(a) * std::size_t(cols) + std::size_t(b)) * std::size_t(maps) +
           std::size_t(m);
  };

  // Simple responses in 64-bit.
  std::vector<double> simple(std::size_t(rows) * cols * maps, 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int r0 = r * cfg.stride, c0 = c * cfg.stride;
      for (int m = 0; m < maps; ++m) {
        const float* w =
            params.w1_encode.data() + (((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen));
        double acc = 0.0;
        int p = 0;
        for (int u = 0; u < rf; ++u) {
          const float* row = x.data() + ((std::size_t(r0 + u) * cfg.input_width + c0) * in_maps);
          for (int v = 0; v < rf * in_maps; ++v) acc += double(w[p++]) * double(row[v]);
        }
        simple[ssx(r, c, m)] = acc;
      }
    }
  }

  // Reconstruction x_hat = W2 (W1^T x): each simple response scatters its
  // decode filter back into the input frame; overlapping fields sum.
  std::vector<double> x_hat(x.numel(), 0.0);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const int r0 = r * cfg.stride, c0 = c * cfg.stride;
      for (int m = 0; m < maps; ++m) {
        const double s = simple[ssx(r, c, m)];
        if (s == 0.0) continue;
        const std::size_t wbase = ((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen);
        int p = 0;
        for (int u = 0; u < rf; ++u) {
          const std::size_t ibase = (std::size_t(r0 + u) * cfg.input_width + c0) * in_maps;
          for (int v = 0; v < rf * in_maps; ++v, ++p) {
            x_hat[ibase + v] += double(params.w2_decode[wbase + p]) * s;
          }
        }
      }
    }
  }

  double rec = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double r = x_hat[i] - double(x[i]);
    rec += r * r;
    x_hat[i] = r;  // reuse buffer as the residual
  }

  // Pooled sparsity: sum_j sqrt(eps + H_j s^2) over every pooling unit.
  const int prows = cfg.pooled_rows(), pcols = cfg.pooled_cols();
  const double eps = cfg.sparsity_epsilon;
  const double lambda = cfg.sparsity_lambda;
  double sparse = 0.0;
  std::vector<double> d_s;
  if (want_grads) d_s.assign(simple.size(), 0.0);
  for (int r = 0; r < prows; ++r) {
    for (int c = 0; c < pcols; ++c) {
      for (int m = 0; m < maps; ++m) {
        double acc = eps;
        for (int u = 0; u < cfg.pool_size; ++u) {
          for (int v = 0; v < cfg.pool_size; ++v) {
            const double s = simple[ssx(r + u, c + v, m)];
            acc += double(params.h_pool(std::size_t(u), std::size_t(v))) * s * s;
          }
        }
        const double t = std::sqrt(acc);
        sparse += t;
        if (want_grads) {
          const double inv_t = lambda / t;
          for (int u = 0; u < cfg.pool_size; ++u) {
            for (int v = 0; v < cfg.pool_size; ++v) {
              d_s[ssx(r + u, c + v, m)] +=
                  inv_t * double(params.h_pool(std::size_t(u), std::size_t(v))) *
                  simple[ssx(r + u, c + v, m)];
            }
          }
        }
      }
    }
  }
  out.objective = rec + lambda * sparse;

  if (want_grads) {
    // Reconstruction path into d_s: dJ/ds = 2 residual . w2 column.
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const int r0 = r * cfg.stride, c0 = c * cfg.stride;
        for (int m = 0; m < maps; ++m) {
          const std::size_t wbase = ((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen);
          double acc = 0.0;
          int p = 0;
          for (int u = 0; u < rf; ++u) {
            const std::size_t ibase = (std::size_t(r0 + u) * cfg.input_width + c0) * in_maps;
            for (int v = 0; v < rf * in_maps; ++v, ++p) {
              acc += 2.0 * x_hat[ibase + v] * double(params.w2_decode[wbase + p]);
            }
          }
          d_s[ssx(r, c, m)] += acc;
        }
      }
    }
    out.simple = std::move(simple);
    out.residual = std::move(x_hat);
    out.d_simple = std::move(d_s);
  }
  return out;
}

void check_batch(std::span<const Tensor> batch, const StageConfig& cfg) {
  if (batch.empty()) throw ConfigError("empty batch");
  for (const Tensor& x : batch) {
    if (x.shape() != cfg.input_shape()) {
      throw GeometryError("batch example shape does not match stage input geometry");
    }
  }
}

}  // namespace

double rica_stage_objective(std::span<const Tensor> batch, const StageConfig& cfg,
                            const StageParams& params) {
  cfg.validate();
  check_batch(batch, cfg);
  double total = 0.0;
  for (const Tensor& x : batch) {
    total += stage_example_terms(x, cfg, params, /*want_grads=*/false).objective;
  }
  return total;
}

StageGrad rica_stage_gradient(std::span<const Tensor> batch, const StageConfig& cfg,
                              const StageParams& params) {
  cfg.validate();
  check_batch(batch, cfg);
  if (cfg.sparsity_epsilon <= 0.0f) {
    throw ConfigError("sparsity_epsilon must be > 0 for gradients");
  }

  const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
  const int rf = cfg.rf_size, in_maps = cfg.input_maps, maps = cfg.num_maps;
  const int plen = cfg.patch_len();
  const std::size_t wsize = params.w1_encode.numel();

  const int lanes = std::min<int>(max_lanes(), int(batch.size()));
  std::vector<std::vector<double>> gw1, gw2;
  gw1.resize(std::size_t(lanes));
  gw2.resize(std::size_t(lanes));
  for (int l = 0; l < lanes; ++l) {
    gw1[std::size_t(l)].assign(wsize, 0.0);
    gw2[std::size_t(l)].assign(wsize, 0.0);
  }

  parallel_lanes(batch.size(), lanes, [&](int lane, std::size_t b0, std::size_t b1) {
    auto& g1 = gw1[std::size_t(lane)];
    auto& g2 = gw2[std::size_t(lane)];
    for (std::size_t bi = b0; bi < b1; ++bi) {
      const Tensor& x = batch[bi];
      ExampleTerms terms = stage_example_terms(x, cfg, params, /*want_grads=*/true);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
          const int r0 = r * cfg.stride, c0 = c * cfg.stride;
          for (int m = 0; m < maps; ++m) {
            const std::size_t sidx = (std::size_t(r) * cols + c) * std::size_t(maps) + std::size_t(m);
            const double ds = terms.d_simple[sidx];
            const double s = terms.simple[sidx];
            const std::size_t wbase =
                ((std::size_t(r) * cols + c) * maps + m) * std::size_t(plen);
            int p = 0;
            for (int u = 0; u < rf; ++u) {
              const std::size_t ibase = (std::size_t(r0 + u) * cfg.input_width + c0) * in_maps;
              for (int v = 0; v < rf * in_maps; ++v, ++p) {
                g1[wbase + p] += ds * double(x[ibase + v]);
                g2[wbase + p] += 2.0 * terms.residual[ibase + v] * s;
              }
            }
          }
        }
      }
    }
  });

  StageGrad grad;
  grad.w1 = Tensor(cfg.w_shape());
  grad.w2 = Tensor(cfg.w_shape());
  for (std::size_t i = 0; i < wsize; ++i) {
    double a1 = 0.0, a2 = 0.0;
    for (int l = 0; l < lanes; ++l) {
      a1 += gw1[std::size_t(l)][i];
      a2 += gw2[std::size_t(l)][i];
    }
    grad.w1[i] = float(a1);
    grad.w2[i] = float(a2);
  }
  return grad;
}

std::pair<double, std::vector<StageGrad>> joint_objective_and_gradient(
    std::span<const Tensor> batch, const NetworkParams& net) {
  net.validate();
  if (batch.empty()) throw ConfigError("empty batch");

  double total = 0.0;
  std::vector<StageGrad> grads;
  grads.reserve(net.n_stages());

  std::vector<Tensor> cur(batch.begin(), batch.end());
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    const auto& cfg = net.configs[s];
    const auto& params = net.stages[s];
    total += rica_stage_objective(cur, cfg, params);
    grads.push_back(rica_stage_gradient(cur, cfg, params));
    if (s + 1 < net.n_stages()) {
      for (Tensor& x : cur) x = stage_forward(x, cfg, params).normalized;
    }
  }
  return {total, std::move(grads)};
}

double joint_objective(std::span<const Tensor> batch, const NetworkParams& net) {
  net.validate();
  if (batch.empty()) throw ConfigError("empty batch");
  double total = 0.0;
  std::vector<Tensor> cur(batch.begin(), batch.end());
  for (std::size_t s = 0; s < net.n_stages(); ++s) {
    total += rica_stage_objective(cur, net.configs[s], net.stages[s]);
    if (s + 1 < net.n_stages()) {
      for (Tensor& x : cur) x = stage_forward(x, net.configs[s], net.stages[s]).normalized;
    }
  }
  return total;
}

std::vector<Tensor> network_backward_w1(const Tensor& input, const NetworkParams& net,
                                        const std::vector<StageActivations>& acts,
                                        const Tensor& d_top) {
  net.validate();
  if (acts.size() != net.n_stages()) {
    throw GeometryError("network_backward_w1: activation bundle count mismatch");
  }
  std::vector<Tensor> d_w1(net.n_stages());
  Tensor d_norm = d_top;
  for (std::size_t si = net.n_stages(); si-- > 0;) {
    const auto& cfg = net.configs[si];
    const auto& params = net.stages[si];
    const Tensor& stage_input = si == 0 ? input : acts[si - 1].normalized;
    Tensor d_pooled = lcn_backward(acts[si].pooled, cfg, params.g_window, d_norm);
    Tensor d_simple =
        l2_pool_backward(acts[si].simple, acts[si].pooled, cfg, params.h_pool, d_pooled);
    Tensor d_input;
    lc_filter_backward(stage_input, cfg, params.w1_encode, d_simple, &d_w1[si],
                       si > 0 ? &d_input : nullptr);
    if (si > 0) d_norm = std::move(d_input);
  }
  return d_w1;
}

}  // namespace cortexforge::netcore
