#include "cortexforge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <ostream>
#include <random>

#include "cortexforge/data.hpp"
#include "cortexforge/image_io.hpp"
#include "cortexforge/rng.hpp"

namespace cortexforge::eval {

std::vector<float> neuron_thresholds(float lo, float hi) {
  if (hi < lo) throw ConfigError("neuron_thresholds: max below min");
  std::vector<float> out(20);
  for (int i = 1; i <= 20; ++i) {
    out[std::size_t(i - 1)] = lo + float(i) * (hi - lo) / 21.0f;
  }
  return out;
}

namespace {

void check_two_classes(const std::vector<float>& activations, const std::vector<int>& labels) {
  if (activations.size() != labels.size()) {
    throw ConfigError("best_neuron_accuracy: activations and labels differ in length");
  }
  if (labels.empty()) throw ConfigError("best_neuron_accuracy: empty input");
  bool has_pos = false, has_neg = false;
  for (int l : labels) {
    if (l == 1) has_pos = true;
    else if (l == 0) has_neg = true;
    else throw ConfigError("best_neuron_accuracy: labels must be 0 or 1");
  }
  if (!has_pos || !has_neg) {
    throw ConfigError("best_neuron_accuracy: both classes must be present");
  }
}

double threshold_accuracy(const std::vector<float>& a, const std::vector<int>& labels, float t,
                          int polarity) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool predict_pos = polarity > 0 ? (a[i] > t) : (a[i] <= t);
    correct += std::size_t(predict_pos == (labels[i] == 1));
  }
  return double(correct) / double(a.size());
}

}  // namespace

NeuronEval best_neuron_accuracy(const std::vector<float>& activations,
                                const std::vector<int>& labels) {
  check_two_classes(activations, labels);

  const auto [lo_it, hi_it] = std::minmax_element(activations.begin(), activations.end());
  NeuronEval best;
  best.act_min = *lo_it;
  best.act_max = *hi_it;
  best.accuracy = -1.0;

  // Candidate sweep: the 20 interior thresholds, then act_max, which turns
  // polarity +1 into all-negative and polarity -1 into all-positive. The
  // two constants guarantee accuracy >= max(prior, 1 - prior).
  std::vector<float> candidates = neuron_thresholds(best.act_min, best.act_max);
  candidates.push_back(best.act_max);
  for (int polarity : {+1, -1}) {
    for (float t : candidates) {
      const double acc = threshold_accuracy(activations, labels, t, polarity);
      if (acc > best.accuracy) {
        best.accuracy = acc;
        best.best_threshold = t;
        best.polarity = polarity;
      }
    }
  }
  return best;
}

Histogram activation_histogram(const std::vector<float>& activations,
                               const std::vector<int>& labels, int n_bins) {
  if (n_bins < 1) throw ConfigError("activation_histogram: need at least one bin");
  if (activations.size() != labels.size() || activations.empty()) {
    throw ConfigError("activation_histogram: bad input sizes");
  }
  const auto [lo_it, hi_it] = std::minmax_element(activations.begin(), activations.end());
  const float lo = *lo_it, hi = *hi_it;

  Histogram h;
  h.edges.resize(std::size_t(n_bins) + 1);
  for (int i = 0; i <= n_bins; ++i) {
    h.edges[std::size_t(i)] = lo + (hi - lo) * float(i) / float(n_bins);
  }
  h.pos_counts.assign(std::size_t(n_bins), 0);
  h.neg_counts.assign(std::size_t(n_bins), 0);
  const float span = hi - lo;
  for (std::size_t i = 0; i < activations.size(); ++i) {
    int bin = span > 0.0f ? int(float(n_bins) * (activations[i] - lo) / span) : 0;
    bin = std::clamp(bin, 0, n_bins - 1);
    (labels[i] == 1 ? h.pos_counts : h.neg_counts)[std::size_t(bin)] += 1;
  }
  return h;
}

EvalReport scan_all_neurons(const std::vector<std::vector<float>>& activations,
                            const std::vector<int>& labels) {
  if (activations.empty()) throw ConfigError("scan_all_neurons: no neurons");
  EvalReport report;
  report.neurons.reserve(activations.size());
  for (std::size_t n = 0; n < activations.size(); ++n) {
    NeuronEval ev = best_neuron_accuracy(activations[n], labels);
    ev.neuron_index = n;
    report.neurons.push_back(ev);
  }
  std::stable_sort(report.neurons.begin(), report.neurons.end(),
                   [](const NeuronEval& a, const NeuronEval& b) { return a.accuracy > b.accuracy; });

  std::size_t negatives = 0;
  for (int l : labels) negatives += std::size_t(l == 0);
  report.all_negative_baseline = double(negatives) / double(labels.size());
  return report;
}

std::vector<float> top_layer_activations(const netcore::NetworkParams& net, const Tensor& image) {
  const auto acts = netcore::network_forward(image, net);
  const Tensor& top = acts.back().normalized;
  return {top.storage().begin(), top.storage().end()};
}

InvarianceCurve invariance_curve(const netcore::NetworkParams& net, std::size_t neuron,
                                 const std::vector<Tensor>& stimuli, const std::string& axis,
                                 const std::vector<float>& values) {
  if (stimuli.empty()) throw ConfigError("invariance_curve: empty stimulus set");
  if (axis != "scale" && axis != "translate-x" && axis != "translate-y") {
    throw ConfigError("invariance_curve: unknown axis '" + axis + "'");
  }
  InvarianceCurve curve;
  curve.axis = axis;
  curve.values = values;
  curve.n_stimuli = stimuli.size();
  for (float v : values) {
    std::vector<float> scales{1.0f};
    std::vector<std::pair<float, float>> shifts{{0.0f, 0.0f}};
    if (axis == "scale") scales[0] = v;
    if (axis == "translate-x") shifts[0].first = v;
    if (axis == "translate-y") shifts[0].second = v;

    double acc = 0.0;
    for (const auto& base : stimuli) {
      const auto distorted = data::make_distortions(base, scales, shifts);
      const auto a = top_layer_activations(net, distorted[0]);
      if (neuron >= a.size()) throw ConfigError("invariance_curve: neuron index out of range");
      acc += a[neuron];
    }
    curve.mean_response.push_back(acc / double(stimuli.size()));
  }
  return curve;
}

InvarianceCurve rotation_curve(const netcore::NetworkParams& net, std::size_t neuron,
                               const std::vector<std::vector<Tensor>>& sequences) {
  if (sequences.empty()) throw ConfigError("rotation_curve: no sequences");
  std::size_t longest = 0;
  for (const auto& s : sequences) longest = std::max(longest, s.size());

  InvarianceCurve curve;
  curve.axis = "rotation-frame";
  curve.n_stimuli = sequences.size();
  for (std::size_t f = 0; f < longest; ++f) {
    double acc = 0.0;
    std::size_t n = 0;
    for (const auto& seq : sequences) {
      if (f >= seq.size()) continue;
      const auto a = top_layer_activations(net, seq[f]);
      if (neuron >= a.size()) throw ConfigError("rotation_curve: neuron index out of range");
      acc += a[neuron];
      n += 1;
    }
    curve.values.push_back(float(f));
    curve.mean_response.push_back(acc / double(n));
  }
  return curve;
}

std::vector<std::size_t> top_stimuli(const netcore::NetworkParams& net, std::size_t neuron,
                                     const std::vector<Tensor>& images, std::size_t k) {
  if (k > images.size()) {
    throw ConfigError("top_stimuli: k = " + std::to_string(k) + " exceeds the " +
                      std::to_string(images.size()) + " available images");
  }
  std::vector<std::pair<float, std::size_t>> scored;
  scored.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto a = top_layer_activations(net, images[i]);
    if (neuron >= a.size()) throw ConfigError("top_stimuli: neuron index out of range");
    scored.emplace_back(a[neuron], i);
  }
  // Descending response; equal responses keep dataset order.
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < k; ++i) out.push_back(scored[i].second);
  return out;
}

Tensor optimal_stimulus(const netcore::NetworkParams& net, std::size_t neuron,
                        const optim::LineSearchConfig& ls, std::uint64_t seed,
                        optim::SphereTrace* trace) {
  net.validate();
  const auto shape = net.configs.front().input_shape();
  auto rng = substream(seed, "optstim");
  Tensor x0(shape);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (std::size_t i = 0; i < x0.numel(); ++i) x0[i] = normal(rng);

  auto respond = [&](const Tensor& x) {
    const auto a = top_layer_activations(net, x);
    if (neuron >= a.size()) throw ConfigError("optimal_stimulus: neuron index out of range");
    return double(a[neuron]);
  };
  const double h = 1e-3;
  auto f = [&](const Tensor& x, Tensor* grad) {
    const double fx = respond(x);
    if (grad) {
      *grad = Tensor(x.shape());
      Tensor probe = x;
      for (std::size_t i = 0; i < x.numel(); ++i) {
        const float saved = probe[i];
        probe[i] = float(double(saved) + h);
        const double fp = respond(probe);
        probe[i] = float(double(saved) - h);
        const double fm = respond(probe);
        probe[i] = saved;
        (*grad)[i] = float((fp - fm) / (2.0 * h));
      }
    }
    return fx;
  };
  return optim::maximize_on_sphere(f, x0, ls, trace);
}

double cosine_similarity(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) throw GeometryError("cosine_similarity: size mismatch");
  const double na = norm2_64(a), nb = norm2_64(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot64(a, b) / (na * nb);
}

BaselineResult linear_filter_baseline(const std::vector<Tensor>& train_pool,
                                      const std::vector<Tensor>& eval_images,
                                      const std::vector<int>& labels, int n_filters,
                                      std::uint64_t seed) {
  if (train_pool.empty()) throw ConfigError("linear_filter_baseline: empty train pool");
  if (eval_images.empty() || eval_images.size() != labels.size()) {
    throw ConfigError("linear_filter_baseline: bad eval set");
  }
  if (n_filters < 1) throw ConfigError("linear_filter_baseline: need at least one filter");

  const auto& shape = eval_images[0].shape();
  auto rng = substream(seed, "baseline");
  std::uniform_int_distribution<std::size_t> pick(0, train_pool.size() - 1);

  BaselineResult best;
  best.accuracy = -1.0;
  for (int f = 0; f < n_filters; ++f) {
    const std::size_t src = pick(rng);
    Tensor filter = train_pool[src];
    if (filter.shape() != shape) {
      filter = imageio::resize_bicubic(filter, int(shape[0]), int(shape[1]));
    }
    std::vector<float> feature;
    feature.reserve(eval_images.size());
    for (const auto& img : eval_images) {
      feature.push_back(float(cosine_similarity(filter, img)));
    }
    const NeuronEval ev = best_neuron_accuracy(feature, labels);
    if (ev.accuracy > best.accuracy) {
      best.accuracy = ev.accuracy;
      best.best_filter = filter;
      best.best_filter_source = src;
    }
  }
  return best;
}

std::vector<SweepRow> sensitivity_sweep(const netcore::StageConfig& base, const std::string& axis,
                                        const std::vector<int>& values,
                                        const std::vector<Tensor>& train_images,
                                        const std::vector<Tensor>& eval_images,
                                        const std::vector<int>& labels,
                                        const optim::SgdConfig& sgd) {
  if (axis != "rf_size" && axis != "num_maps") {
    throw ConfigError("sensitivity_sweep: unknown axis '" + axis + "'");
  }
  std::vector<SweepRow> rows;
  for (int v : values) {
    SweepRow row;
    row.value = v;
    netcore::StageConfig cfg = base;
    (axis == "rf_size" ? cfg.rf_size : cfg.num_maps) = v;
    try {
      const auto configs = netcore::chain_configs({cfg});
      netcore::NetworkParams net = netcore::init_network(configs, sgd.seed);
      net = optim::train_local(train_images, net, sgd);

      std::vector<std::vector<float>> acts;
      for (std::size_t i = 0; i < eval_images.size(); ++i) {
        const auto a = top_layer_activations(net, eval_images[i]);
        if (acts.empty()) acts.resize(a.size());
        for (std::size_t n = 0; n < a.size(); ++n) acts[n].push_back(a[n]);
      }
      const EvalReport report = scan_all_neurons(acts, labels);
      row.accuracy = report.neurons.front().accuracy;
      row.valid = true;
    } catch (const ConfigError& e) {
      std::cerr << "sensitivity_sweep: skipping " << axis << "=" << v << ": " << e.what() << "\n";
    }
    rows.push_back(row);
  }
  return rows;
}

void write_eval_report_csv(std::ostream& out, const EvalReport& report) {
  out << "neuron_index,accuracy,threshold,polarity,act_min,act_max\n";
  for (const auto& n : report.neurons) {
    out << n.neuron_index << "," << n.accuracy << "," << n.best_threshold << "," << n.polarity
        << "," << n.act_min << "," << n.act_max << "\n";
  }
}

void write_histogram_csv(std::ostream& out, const Histogram& hist) {
  out << "bin_lo,bin_hi,pos_count,neg_count\n";
  for (std::size_t b = 0; b + 1 < hist.edges.size(); ++b) {
    out << hist.edges[b] << "," << hist.edges[b + 1] << "," << hist.pos_counts[b] << ","
        << hist.neg_counts[b] << "\n";
  }
}

void write_invariance_csv(std::ostream& out, const InvarianceCurve& curve) {
  out << "param_value,mean_response\n";
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    out << curve.values[i] << "," << curve.mean_response[i] << "\n";
  }
}

void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  out << "value,accuracy,valid\n";
  for (const auto& r : rows) {
    out << r.value << ",";
    if (r.valid) out << r.accuracy;
    out << "," << (r.valid ? 1 : 0) << "\n";
  }
}

}  // namespace cortexforge::eval
