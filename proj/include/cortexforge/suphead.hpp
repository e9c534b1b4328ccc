#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cortexforge/netcore.hpp"
#include "cortexforge/optim.hpp"

namespace cortexforge::suphead {

// One-vs-all head: independent sigmoid per class, argmax for prediction,
// ties broken by the lowest class index.
struct LogisticHead {
  Tensor weights;  // {n_classes, feature_dim}
  Tensor biases;   // {n_classes}

  std::size_t n_classes() const { return weights.shape()[0]; }
  std::size_t feature_dim() const { return weights.shape()[1]; }
};

LogisticHead init_head(std::size_t n_classes, std::size_t feature_dim);  // zeros

// Per-class sigmoid probabilities for one feature vector.
std::vector<double> class_scores(const LogisticHead& head, const std::vector<float>& features);

int predict(const LogisticHead& head, const std::vector<float>& features);

// Sum of per-class binary log-losses for one example.
double head_loss(const LogisticHead& head, const std::vector<float>& features, int label);

// Adds this example's gradient into d_weights/d_biases (same shapes as the
// head) and optionally fills d_features; returns the loss.
double head_loss_grad(const LogisticHead& head, const std::vector<float>& features, int label,
                      Tensor& d_weights, Tensor& d_biases,
                      std::vector<float>* d_features = nullptr);

struct HeadConfig {
  int n_classes = 2;
  float learning_rate = 0.1f;
  int minibatch_size = 32;
  int max_steps = 500;
  std::uint64_t seed = 0;
};

// Minibatch SGD on the one-vs-all log-loss with the features frozen.
LogisticHead train_head(const std::vector<std::vector<float>>& features,
                        const std::vector<int>& labels, const HeadConfig& cfg);

double head_accuracy(const LogisticHead& head, const std::vector<std::vector<float>>& features,
                     const std::vector<int>& labels);

struct FineTuneConfig {
  float learning_rate = 0.01f;
  int minibatch_size = 16;
  int max_steps = 100;
  std::uint64_t seed = 0;
};

// Joint supervised SGD: the classification loss backpropagates through the
// network into every stage's W1 (W2 untouched) and into the head.
// loss_trace, when given, records the minibatch loss per step.
void fine_tune(netcore::NetworkParams& net, LogisticHead& head,
               const std::vector<Tensor>& images, const std::vector<int>& labels,
               const FineTuneConfig& cfg, std::vector<double>* loss_trace = nullptr);

std::vector<float> image_features(const netcore::NetworkParams& net, const Tensor& image);

struct CompareResult {
  double pretrained_train_acc = 0.0;
  double pretrained_val_acc = 0.0;
  double random_train_acc = 0.0;
  double random_val_acc = 0.0;
  std::uint64_t split_checksum = 0;  // identical for both arms by construction
};

// Pretrained-features arm vs random-init arm under identical supervised
// budgets, seeds, and a shared 50/50 train/validation split.
CompareResult compare_init(const std::vector<Tensor>& images, const std::vector<int>& labels,
                           const std::vector<netcore::StageConfig>& configs,
                           const optim::SgdConfig& unsup, const HeadConfig& head_cfg,
                           const FineTuneConfig& ft_cfg, std::uint64_t seed);

// Appends `arm,train_acc,val_acc,steps,seed` rows.
void write_supervised_report_csv(std::ostream& out, const CompareResult& result, int steps,
                                 std::uint64_t seed);

}  // namespace cortexforge::suphead
