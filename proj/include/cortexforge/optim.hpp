#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <vector>

#include "cortexforge/netcore.hpp"

namespace cortexforge::optim {

struct SgdConfig {
  float learning_rate = 0.01f;
  int minibatch_size = 100;
  int max_steps = 100;
  std::uint64_t seed = 0;
};

struct StepMetric {
  int step = 0;
  double objective = 0.0;
  double wall_ms = 0.0;
};

struct TrainTrace {
  std::vector<StepMetric> steps;
};

void write_trace_csv(std::ostream& out, const TrainTrace& trace);

// W1 <- W1 - lr * gradW1, W2 likewise. H and G untouched.
void sgd_step(netcore::NetworkParams& params, const std::vector<netcore::StageGrad>& grads,
              float lr);

// Deterministic seeded minibatch order: shuffle per epoch, consume in
// contiguous batches. Shared between the local trainer and model replicas
// so the single-replica case degenerates to the same trajectory.
class MinibatchSampler {
 public:
  MinibatchSampler(std::size_t n, int batch_size, std::uint64_t seed, int replica_id = 0);
  std::vector<std::size_t> next();

 private:
  std::size_t n_;
  std::size_t batch_;
  std::vector<std::size_t> order_;
  std::size_t cursor_;
  std::mt19937_64 rng_;

  void reshuffle();
};

// Synchronous single-process reference trainer.
netcore::NetworkParams train_local(const std::vector<Tensor>& dataset,
                                   netcore::NetworkParams net, const SgdConfig& cfg,
                                   TrainTrace* trace = nullptr,
                                   std::ostream* csv_stream = nullptr);

struct LineSearchConfig {
  float initial_step = 1.0f;
  float shrink_factor = 0.5f;
  int max_iters = 200;
  float convergence_tol = 1e-7f;
};

struct SphereTrace {
  std::vector<double> f_values;  // monotonically nondecreasing
};

// Objective callback: returns f(x) and, when grad is non-null, fills dL/dx.
using SphereObjective = std::function<double(const Tensor& x, Tensor* grad)>;

// Projected gradient ascent on the unit sphere with backtracking line
// search; every accepted iterate has unit norm and nondecreasing f.
Tensor maximize_on_sphere(const SphereObjective& f, const Tensor& x0,
                          const LineSearchConfig& cfg, SphereTrace* trace = nullptr);

}  // namespace cortexforge::optim
