#pragma once

// Brute-force reference implementations used as oracles in tests. These are
// written as plain nested loops, independent of the library's kernels, and
// must stay that way.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "cortexforge/netcore.hpp"

namespace oracles {

using cortexforge::Tensor;
using cortexforge::netcore::StageConfig;

// Unshared local filtering: loop over every output unit and sum products.
inline Tensor filter_oracle(const Tensor& input, const StageConfig& cfg, const Tensor& w1) {
  const int rows = cfg.simple_rows(), cols = cfg.simple_cols();
  Tensor out(cfg.simple_shape());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      for (int m = 0; m < cfg.num_maps; ++m) {
        double acc = 0.0;
        for (int u = 0; u < cfg.rf_size; ++u)
          for (int v = 0; v < cfg.rf_size; ++v)
            for (int ch = 0; ch < cfg.input_maps; ++ch) {
              const std::size_t p =
                  (std::size_t(u) * cfg.rf_size + std::size_t(v)) * cfg.input_maps +
                  std::size_t(ch);
              acc += double(w1(std::size_t(r), std::size_t(c), std::size_t(m), p)) *
                     double(input(std::size_t(r * cfg.stride + u),
                                  std::size_t(c * cfg.stride + v), std::size_t(ch)));
            }
        out(std::size_t(r), std::size_t(c), std::size_t(m)) = float(acc);
      }
  return out;
}

// Exhaustive per-neighborhood sum of squares.
inline Tensor pool_oracle(const Tensor& simple, const StageConfig& cfg, const Tensor& h) {
  Tensor out(cfg.output_shape());
  for (int r = 0; r < cfg.pooled_rows(); ++r)
    for (int c = 0; c < cfg.pooled_cols(); ++c)
      for (int m = 0; m < cfg.num_maps; ++m) {
        double acc = 0.0;
        for (int u = 0; u < cfg.pool_size; ++u)
          for (int v = 0; v < cfg.pool_size; ++v) {
            const double s = simple(std::size_t(r + u), std::size_t(c + v), std::size_t(m));
            acc += double(h(std::size_t(u), std::size_t(v))) * s * s;
          }
        out(std::size_t(r), std::size_t(c), std::size_t(m)) = float(std::sqrt(acc));
      }
  return out;
}

// Two-pass LCN with explicit loops: subtract the border-renormalized
// weighted mean, then divide by the floored local energy.
inline Tensor lcn_oracle(const Tensor& pooled, const StageConfig& cfg, const Tensor& g) {
  const int rows = cfg.pooled_rows(), cols = cfg.pooled_cols(), maps = cfg.num_maps;
  const int hw = cfg.lcn_window / 2;
  auto window_sum = [&](int i, int j, const std::function<double(int, int, int)>& f) {
    double acc = 0.0;
    for (int u = -hw; u <= hw; ++u)
      for (int v = -hw; v <= hw; ++v) {
        if (i + u < 0 || i + u >= rows || j + v < 0 || j + v >= cols) continue;
        for (int c = 0; c < maps; ++c) {
          acc += double(g(std::size_t(u + hw), std::size_t(v + hw), std::size_t(c))) *
                 f(i + u, j + v, c);
        }
      }
    return acc;
  };

  Tensor sub(cfg.output_shape());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double z = window_sum(i, j, [](int, int, int) { return 1.0; });
      const double mean =
          window_sum(i, j, [&](int a, int b, int c) {
            return double(pooled(std::size_t(a), std::size_t(b), std::size_t(c)));
          }) /
          z;
      for (int k = 0; k < maps; ++k) {
        sub(std::size_t(i), std::size_t(j), std::size_t(k)) =
            float(double(pooled(std::size_t(i), std::size_t(j), std::size_t(k))) - mean);
      }
    }

  Tensor out(cfg.output_shape());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double z = window_sum(i, j, [](int, int, int) { return 1.0; });
      const double energy = window_sum(i, j, [&](int a, int b, int c) {
                              const double v = sub(std::size_t(a), std::size_t(b), std::size_t(c));
                              return v * v;
                            }) /
                            z;
      const double denom = std::max(double(cfg.lcn_floor_c), std::sqrt(energy));
      for (int k = 0; k < maps; ++k) {
        out(std::size_t(i), std::size_t(j), std::size_t(k)) =
            float(double(sub(std::size_t(i), std::size_t(j), std::size_t(k))) / denom);
      }
    }
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  }
  return worst;
}

inline Tensor random_tensor(std::vector<std::size_t> shape, std::mt19937_64& rng,
                            float lo = -1.0f, float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<float> dist(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = dist(rng);
  return t;
}

// Central finite differences of a scalar function of one tensor entry.
// Evaluations run in the library's 32-bit storage but the quotient is
// formed in 64-bit.
inline double central_difference(const std::function<double()>& eval, float& param, double h) {
  const float saved = param;
  param = float(double(saved) + h);
  const double hp = double(param) - double(saved);  // step actually applied
  const double fp = eval();
  param = float(double(saved) - h);
  const double hm = double(saved) - double(param);
  const double fm = eval();
  param = saved;
  return (fp - fm) / (hp + hm);
}

// Relative error with an absolute floor for near-zero gradients.
inline double rel_err(double got, double want) {
  const double denom = std::max({std::abs(got), std::abs(want), 1e-6});
  return std::abs(got - want) / denom;
}

}  // namespace oracles
