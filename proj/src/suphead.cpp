#include "cortexforge/suphead.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "cortexforge/rng.hpp"

namespace cortexforge::suphead {

namespace {

// log(1 + e^z) without overflow.
double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void check_labels(const std::vector<int>& labels, std::size_t n_classes) {
  for (int l : labels) {
    if (l < 0 || std::size_t(l) >= n_classes) {
      throw ConfigError("label " + std::to_string(l) + " outside [0, " +
                        std::to_string(n_classes) + ")");
    }
  }
}

}  // namespace

LogisticHead init_head(std::size_t n_classes, std::size_t feature_dim) {
  if (n_classes < 2) throw ConfigError("init_head: need at least 2 classes");
  if (feature_dim < 1) throw ConfigError("init_head: empty feature space");
  return {Tensor({n_classes, feature_dim}), Tensor({n_classes})};
}

std::vector<double> class_scores(const LogisticHead& head, const std::vector<float>& features) {
  if (features.size() != head.feature_dim()) {
    throw GeometryError("class_scores: feature length mismatch");
  }
  std::vector<double> out(head.n_classes());
  for (std::size_t c = 0; c < head.n_classes(); ++c) {
    double z = head.biases[c];
    for (std::size_t j = 0; j < features.size(); ++j) z += double(head.weights(c, j)) * features[j];
    out[c] = sigmoid(z);
  }
  return out;
}

int predict(const LogisticHead& head, const std::vector<float>& features) {
  const auto scores = class_scores(head, features);
  std::size_t best = 0;
  for (std::size_t c = 1; c < scores.size(); ++c) {
    if (scores[c] > scores[best]) best = c;  // strict: ties keep the lowest index
  }
  return int(best);
}

double head_loss(const LogisticHead& head, const std::vector<float>& features, int label) {
  if (features.size() != head.feature_dim()) throw GeometryError("head_loss: feature mismatch");
  double loss = 0.0;
  for (std::size_t c = 0; c < head.n_classes(); ++c) {
    double z = head.biases[c];
    for (std::size_t j = 0; j < features.size(); ++j) z += double(head.weights(c, j)) * features[j];
    const double y = std::size_t(label) == c ? 1.0 : 0.0;
    // -y log sigma(z) - (1-y) log(1 - sigma(z)) == softplus(z) - y z
    loss += softplus(z) - y * z;
  }
  return loss;
}

double head_loss_grad(const LogisticHead& head, const std::vector<float>& features, int label,
                      Tensor& d_weights, Tensor& d_biases, std::vector<float>* d_features) {
  if (d_weights.shape() != head.weights.shape() || d_biases.shape() != head.biases.shape()) {
    throw GeometryError("head_loss_grad: gradient buffer shape mismatch");
  }
  if (d_features) d_features->assign(features.size(), 0.0f);
  double loss = 0.0;
  for (std::size_t c = 0; c < head.n_classes(); ++c) {
    double z = head.biases[c];
    for (std::size_t j = 0; j < features.size(); ++j) z += double(head.weights(c, j)) * features[j];
    const double y = std::size_t(label) == c ? 1.0 : 0.0;
    loss += softplus(z) - y * z;
    const double dz = sigmoid(z) - y;
    d_biases[c] += float(dz);
    for (std::size_t j = 0; j < features.size(); ++j) {
      d_weights(c, j) += float(dz * features[j]);
      if (d_features) (*d_features)[j] += float(dz * double(head.weights(c, j)));
    }
  }
  return loss;
}

LogisticHead train_head(const std::vector<std::vector<float>>& features,
                        const std::vector<int>& labels, const HeadConfig& cfg) {
  if (features.empty() || features.size() != labels.size()) {
    throw ConfigError("train_head: bad training set");
  }
  if (cfg.n_classes < 2) throw ConfigError("train_head: need at least 2 classes");
  check_labels(labels, std::size_t(cfg.n_classes));
  std::vector<bool> seen(std::size_t(cfg.n_classes), false);
  for (int l : labels) seen[std::size_t(l)] = true;
  if (std::count(seen.begin(), seen.end(), true) < 2) {
    throw ConfigError("train_head: need at least two classes present in the data");
  }

  LogisticHead head = init_head(std::size_t(cfg.n_classes), features[0].size());
  optim::MinibatchSampler sampler(features.size(), cfg.minibatch_size, cfg.seed);
  Tensor dw(head.weights.shape()), db(head.biases.shape());
  for (int step = 0; step < cfg.max_steps; ++step) {
    dw.fill(0.0f);
    db.fill(0.0f);
    const auto idx = sampler.next();
    for (std::size_t i : idx) head_loss_grad(head, features[i], labels[i], dw, db);
    const float scale = cfg.learning_rate / float(idx.size());
    for (std::size_t i = 0; i < head.weights.numel(); ++i) head.weights[i] -= scale * dw[i];
    for (std::size_t i = 0; i < head.biases.numel(); ++i) head.biases[i] -= scale * db[i];
    if (!head.weights.all_finite() || !head.biases.all_finite()) {
      throw NumericError("train_head: non-finite parameters at step " + std::to_string(step));
    }
  }
  return head;
}

double head_accuracy(const LogisticHead& head, const std::vector<std::vector<float>>& features,
                     const std::vector<int>& labels) {
  if (features.empty() || features.size() != labels.size()) {
    throw ConfigError("head_accuracy: bad input");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    correct += std::size_t(predict(head, features[i]) == labels[i]);
  }
  return double(correct) / double(features.size());
}

std::vector<float> image_features(const netcore::NetworkParams& net, const Tensor& image) {
  const auto acts = netcore::network_forward(image, net);
  const Tensor& top = acts.back().normalized;
  return {top.storage().begin(), top.storage().end()};
}

void fine_tune(netcore::NetworkParams& net, LogisticHead& head,
               const std::vector<Tensor>& images, const std::vector<int>& labels,
               const FineTuneConfig& cfg, std::vector<double>* loss_trace) {
  if (images.empty() || images.size() != labels.size()) throw ConfigError("fine_tune: bad data");
  check_labels(labels, head.n_classes());
  net.validate();

  optim::MinibatchSampler sampler(images.size(), cfg.minibatch_size, cfg.seed, 1);
  Tensor dw(head.weights.shape()), db(head.biases.shape());
  for (int step = 0; step < cfg.max_steps; ++step) {
    dw.fill(0.0f);
    db.fill(0.0f);
    std::vector<Tensor> dW1;
    for (std::size_t s = 0; s < net.n_stages(); ++s) dW1.emplace_back(net.configs[s].w_shape());

    const auto idx = sampler.next();
    double loss = 0.0;
    for (std::size_t i : idx) {
      const auto acts = netcore::network_forward(images[i], net);
      const Tensor& top = acts.back().normalized;
      const std::vector<float> feat(top.storage().begin(), top.storage().end());

      std::vector<float> d_feat;
      loss += head_loss_grad(head, feat, labels[i], dw, db, &d_feat);

      Tensor d_top(top.shape());
      for (std::size_t j = 0; j < d_feat.size(); ++j) d_top[j] = d_feat[j];
      const auto grads = netcore::network_backward_w1(images[i], net, acts, d_top);
      for (std::size_t s = 0; s < grads.size(); ++s) axpy(dW1[s], 1.0f, grads[s]);
    }
    const float scale = cfg.learning_rate / float(idx.size());
    for (std::size_t i = 0; i < head.weights.numel(); ++i) head.weights[i] -= scale * dw[i];
    for (std::size_t i = 0; i < head.biases.numel(); ++i) head.biases[i] -= scale * db[i];
    for (std::size_t s = 0; s < net.n_stages(); ++s) {
      Tensor& w1 = net.stages[s].w1_encode;
      for (std::size_t i = 0; i < w1.numel(); ++i) w1[i] -= scale * dW1[s][i];
    }
    if (loss_trace) loss_trace->push_back(loss / double(idx.size()));
  }
}

namespace {

std::uint64_t index_checksum(const std::vector<std::size_t>& idx) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a over the index order
  for (std::size_t i : idx) {
    h ^= std::uint64_t(i);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace

CompareResult compare_init(const std::vector<Tensor>& images, const std::vector<int>& labels,
                           const std::vector<netcore::StageConfig>& configs,
                           const optim::SgdConfig& unsup, const HeadConfig& head_cfg,
                           const FineTuneConfig& ft_cfg, std::uint64_t seed) {
  if (images.size() != labels.size() || images.size() < 4) {
    throw ConfigError("compare_init: need at least 4 labeled images");
  }

  // One split shared by both arms: shuffled halves, train then validation.
  std::vector<std::size_t> idx(images.size());
  std::iota(idx.begin(), idx.end(), std::size_t(0));
  auto rng = substream(seed, "supsplit");
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t half = idx.size() / 2;

  std::vector<Tensor> train_imgs, val_imgs;
  std::vector<int> train_labels, val_labels;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    (i < half ? train_imgs : val_imgs).push_back(images[idx[i]]);
    (i < half ? train_labels : val_labels).push_back(labels[idx[i]]);
  }

  auto run_arm = [&](netcore::NetworkParams net) {
    std::vector<std::vector<float>> feats;
    for (const auto& img : train_imgs) feats.push_back(image_features(net, img));
    LogisticHead head = train_head(feats, train_labels, head_cfg);
    fine_tune(net, head, train_imgs, train_labels, ft_cfg);

    std::vector<std::vector<float>> train_f, val_f;
    for (const auto& img : train_imgs) train_f.push_back(image_features(net, img));
    for (const auto& img : val_imgs) val_f.push_back(image_features(net, img));
    return std::pair<double, double>{head_accuracy(head, train_f, train_labels),
                                     head_accuracy(head, val_f, val_labels)};
  };

  CompareResult out;
  out.split_checksum = index_checksum(idx);

  netcore::NetworkParams pretrained = netcore::init_network(configs, unsup.seed);
  pretrained = optim::train_local(train_imgs, pretrained, unsup);
  std::tie(out.pretrained_train_acc, out.pretrained_val_acc) = run_arm(std::move(pretrained));

  netcore::NetworkParams random_net =
      netcore::init_network(configs, derive_seed(unsup.seed, "randinit"));
  std::tie(out.random_train_acc, out.random_val_acc) = run_arm(std::move(random_net));
  return out;
}

void write_supervised_report_csv(std::ostream& out, const CompareResult& result, int steps,
                                 std::uint64_t seed) {
  out << "arm,train_acc,val_acc,steps,seed\n";
  out << "pretrained," << result.pretrained_train_acc << "," << result.pretrained_val_acc << ","
      << steps << "," << seed << "\n";
  out << "random," << result.random_train_acc << "," << result.random_val_acc << "," << steps
      << "," << seed << "\n";
}

}  // namespace cortexforge::suphead
