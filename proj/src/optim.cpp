#include "cortexforge/optim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include "cortexforge/rng.hpp"

namespace cortexforge::optim {

void write_trace_csv(std::ostream& out, const TrainTrace& trace) {
  out << "step,objective,wall_ms\n";
  for (const auto& m : trace.steps) {
    out << m.step << "," << m.objective << "," << m.wall_ms << "\n";
  }
}

void sgd_step(netcore::NetworkParams& params, const std::vector<netcore::StageGrad>& grads,
              float lr) {
  if (grads.size() != params.n_stages()) {
    throw GeometryError("sgd_step: gradient count does not match stage count");
  }
  for (std::size_t s = 0; s < params.n_stages(); ++s) {
    auto& stage = params.stages[s];
    if (!grads[s].w1.same_shape(stage.w1_encode) || !grads[s].w2.same_shape(stage.w2_decode)) {
      throw GeometryError("sgd_step: gradient shape mismatch at stage " + std::to_string(s + 1));
    }
    for (std::size_t i = 0; i < stage.w1_encode.numel(); ++i) {
      stage.w1_encode[i] -= lr * grads[s].w1[i];
      stage.w2_decode[i] -= lr * grads[s].w2[i];
    }
  }
}

MinibatchSampler::MinibatchSampler(std::size_t n, int batch_size, std::uint64_t seed,
                                   int replica_id)
    : n_(n),
      batch_(std::size_t(std::max(1, batch_size))),
      cursor_(0),
      rng_(substream(seed, "minibatch." + std::to_string(replica_id))) {
  if (n_ == 0) throw ConfigError("minibatch sampler: empty dataset");
  batch_ = std::min(batch_, n_);
  order_.resize(n_);
  std::iota(order_.begin(), order_.end(), std::size_t(0));
  reshuffle();
}

void MinibatchSampler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::size_t> MinibatchSampler::next() {
  if (cursor_ + batch_ > n_) reshuffle();
  std::vector<std::size_t> out(order_.begin() + std::ptrdiff_t(cursor_),
                               order_.begin() + std::ptrdiff_t(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

netcore::NetworkParams train_local(const std::vector<Tensor>& dataset,
                                   netcore::NetworkParams net, const SgdConfig& cfg,
                                   TrainTrace* trace, std::ostream* csv_stream) {
  if (dataset.empty()) throw ConfigError("train_local: empty dataset");
  net.validate();
  if (csv_stream) *csv_stream << "step,objective,wall_ms\n";

  MinibatchSampler sampler(dataset.size(), cfg.minibatch_size, cfg.seed);
  std::vector<Tensor> batch;
  for (int step = 0; step < cfg.max_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto idx = sampler.next();
    batch.clear();
    for (std::size_t i : idx) batch.push_back(dataset[i]);
    auto [objective, grads] = netcore::joint_objective_and_gradient(batch, net);
    sgd_step(net, grads, cfg.learning_rate);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (trace) trace->steps.push_back({step, objective, ms});
    if (csv_stream) *csv_stream << step << "," << objective << "," << ms << "\n";
  }
  return net;
}

namespace {

Tensor normalized(const Tensor& x) {
  const double n = norm2_64(x);
  if (n == 0.0) throw NumericError("maximize_on_sphere: zero-norm iterate");
  Tensor out = x;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = float(double(out[i]) / n);
  return out;
}

}  // namespace

Tensor maximize_on_sphere(const SphereObjective& f, const Tensor& x0,
                          const LineSearchConfig& cfg, SphereTrace* trace) {
  if (norm2_64(x0) == 0.0) throw ConfigError("maximize_on_sphere: x0 must be nonzero");
  if (cfg.shrink_factor <= 0.0f || cfg.shrink_factor >= 1.0f) {
    throw ConfigError("maximize_on_sphere: shrink_factor must lie in (0,1)");
  }

  Tensor x = normalized(x0);
  Tensor grad(x.shape());
  double fx = f(x, &grad);
  if (!std::isfinite(fx) || !grad.all_finite()) {
    throw NumericError("maximize_on_sphere: non-finite objective or gradient at start");
  }
  if (trace) trace->f_values.push_back(fx);

  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    double step = cfg.initial_step;
    bool accepted = false;
    Tensor best_x;
    double best_f = fx;
    // Backtrack until the projected step does not decrease f.
    for (int tries = 0; tries < 60; ++tries) {
      Tensor cand = x;
      axpy(cand, float(step), grad);
      if (norm2_64(cand) == 0.0) {
        step *= cfg.shrink_factor;
        continue;
      }
      cand = normalized(cand);
      const double fc = f(cand, nullptr);
      if (!std::isfinite(fc)) {
        throw NumericError("maximize_on_sphere: non-finite objective during line search");
      }
      if (fc >= fx) {
        accepted = true;
        best_x = std::move(cand);
        best_f = fc;
        break;
      }
      step *= cfg.shrink_factor;
    }
    if (!accepted) break;

    const double improvement = best_f - fx;
    x = std::move(best_x);
    fx = best_f;
    if (trace) trace->f_values.push_back(fx);
    if (improvement < double(cfg.convergence_tol)) break;

    fx = f(x, &grad);
    if (!grad.all_finite()) {
      throw NumericError("maximize_on_sphere: non-finite gradient");
    }
  }
  return x;
}

}  // namespace cortexforge::optim
