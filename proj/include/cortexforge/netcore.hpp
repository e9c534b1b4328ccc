#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "cortexforge/tensor.hpp"

namespace cortexforge::netcore {

// Geometry and hyperparameters of one filtering/pooling/normalization stage.
struct StageConfig {
  int input_height = 0;
  int input_width = 0;
  int input_maps = 1;
  int rf_size = 18;
  int stride = 9;
  int num_maps = 8;
  int pool_size = 5;
  int lcn_window = 5;
  float lcn_floor_c = 0.01f;
  float sparsity_lambda = 0.1f;
  float sparsity_epsilon = 1e-3f;

  void validate() const;

  int simple_rows() const { return (input_height - rf_size) / stride + 1; }
  int simple_cols() const { return (input_width - rf_size) / stride + 1; }
  int pooled_rows() const { return simple_rows() - pool_size + 1; }
  int pooled_cols() const { return simple_cols() - pool_size + 1; }
  int patch_len() const { return rf_size * rf_size * input_maps; }

  std::vector<std::size_t> input_shape() const {
    return {std::size_t(input_height), std::size_t(input_width), std::size_t(input_maps)};
  }
  std::vector<std::size_t> simple_shape() const {
    return {std::size_t(simple_rows()), std::size_t(simple_cols()), std::size_t(num_maps)};
  }
  std::vector<std::size_t> output_shape() const {
    return {std::size_t(pooled_rows()), std::size_t(pooled_cols()), std::size_t(num_maps)};
  }
  std::vector<std::size_t> w_shape() const {
    return {std::size_t(simple_rows()), std::size_t(simple_cols()), std::size_t(num_maps),
            std::size_t(patch_len())};
  }
};

// Learnable encode/decode filters plus the fixed pooling and LCN windows.
struct StageParams {
  Tensor w1_encode;  // {rows, cols, maps, rf*rf*in_maps}, unshared per location
  Tensor w2_decode;  // same shape, independent storage
  Tensor h_pool;     // {pool, pool}, uniform, never updated
  Tensor g_window;   // {win, win, maps}, Gaussian, sums to 1 over all entries
};

struct NetworkParams {
  std::vector<StageConfig> configs;  // geometrically chained
  std::vector<StageParams> stages;

  void validate() const;
  std::size_t n_stages() const { return configs.size(); }
};

// Chains `n_stages` copies of the stage geometry: each later stage consumes
// the previous stage's output shape. Per-stage map counts / rf sizes come
// from `per_stage` when given, else the first entry is replicated.
std::vector<StageConfig> chain_configs(std::vector<StageConfig> per_stage);

StageParams init_stage_params(const StageConfig& cfg, std::uint64_t seed);
NetworkParams init_network(std::vector<StageConfig> configs, std::uint64_t seed);

Tensor make_pool_weights(const StageConfig& cfg);
Tensor make_lcn_window(const StageConfig& cfg);

// --- Forward passes -------------------------------------------------------

// Simple sublayer: per-location unshared linear filters over rf patches.
Tensor lc_filter_forward(const Tensor& input, const StageConfig& cfg, const Tensor& w1);

// L2 pooling: sqrt of the H-weighted sum of squared simple responses over
// pool_size x pool_size neighborhoods within one map, stride 1.
Tensor l2_pool_forward(const Tensor& simple, const StageConfig& cfg, const Tensor& h_pool);

// Subtractive then divisive local contrast normalization. Window spans the
// spatial neighborhood and all maps; truncated windows are renormalized at
// borders so a constant input maps to exactly zero.
Tensor lcn_forward(const Tensor& pooled, const StageConfig& cfg, const Tensor& g_window);

struct StageActivations {
  Tensor simple;
  Tensor pooled;
  Tensor normalized;
};

StageActivations stage_forward(const Tensor& input, const StageConfig& cfg,
                               const StageParams& params);

std::vector<StageActivations> network_forward(const Tensor& input, const NetworkParams& net);

// --- Objective and gradients ---------------------------------------------

// Reconstruction-plus-pooled-sparsity objective for one stage:
//   sum_i ( ||W2 W1^T x_i - x_i||^2 + lambda * sum_j sqrt(eps + H_j (W1^T x_i)^2) )
double rica_stage_objective(std::span<const Tensor> batch, const StageConfig& cfg,
                            const StageParams& params);

struct StageGrad {
  Tensor w1;
  Tensor w2;
};

// Exact gradients of rica_stage_objective w.r.t. W1 and W2. H and G are
// fixed and receive no gradient. Requires eps > 0.
StageGrad rica_stage_gradient(std::span<const Tensor> batch, const StageConfig& cfg,
                              const StageParams& params);

// Sum of the three stage objectives, each stage consuming the previous
// stage's normalized output. Gradients are greedy-local: each stage's
// W1/W2 gradient is taken against its own objective with its input held
// fixed, while all stages update in the same SGD step.
std::pair<double, std::vector<StageGrad>> joint_objective_and_gradient(
    std::span<const Tensor> batch, const NetworkParams& net);

double joint_objective(std::span<const Tensor> batch, const NetworkParams& net);

// --- Supervised backward (fine-tuning path) ------------------------------

// Given dL/d(top normalized output) for one example, backpropagates through
// all stages and returns dL/dW1 per stage. W2 is not used by the supervised
// path; H and G are fixed.
std::vector<Tensor> network_backward_w1(const Tensor& input, const NetworkParams& net,
                                        const std::vector<StageActivations>& acts,
                                        const Tensor& d_top);

// Sublayer backward passes, exposed for tests.
Tensor lcn_backward(const Tensor& pooled, const StageConfig& cfg, const Tensor& g_window,
                    const Tensor& d_out);
Tensor l2_pool_backward(const Tensor& simple, const Tensor& pooled, const StageConfig& cfg,
                        const Tensor& h_pool, const Tensor& d_pooled);
void lc_filter_backward(const Tensor& input, const StageConfig& cfg, const Tensor& w1,
                        const Tensor& d_simple, Tensor* d_w1, Tensor* d_input);

}  // namespace cortexforge::netcore
