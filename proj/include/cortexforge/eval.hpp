#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cortexforge/netcore.hpp"
#include "cortexforge/optim.hpp"

namespace cortexforge::eval {

// One top-layer unit scored as a single-threshold classifier.
// polarity +1 predicts positive when activation > threshold;
// polarity -1 predicts positive when activation <= threshold.
struct NeuronEval {
  std::size_t neuron_index = 0;
  float best_threshold = 0.0f;
  int polarity = +1;
  double accuracy = 0.0;
  float act_min = 0.0f;
  float act_max = 0.0f;
};

// The 20 strictly interior thresholds t_i = lo + i*(hi-lo)/21, i = 1..20.
std::vector<float> neuron_thresholds(float lo, float hi);

// Sweeps all 20 thresholds in both polarities plus the two constant
// classifiers; requires both classes present. The returned accuracy can
// never fall below max(prior, 1 - prior).
NeuronEval best_neuron_accuracy(const std::vector<float>& activations,
                                const std::vector<int>& labels);

struct Histogram {
  std::vector<float> edges;  // n_bins + 1 shared edges spanning [min, max]
  std::vector<std::size_t> pos_counts;
  std::vector<std::size_t> neg_counts;
};

Histogram activation_histogram(const std::vector<float>& activations,
                               const std::vector<int>& labels, int n_bins);

struct EvalReport {
  std::vector<NeuronEval> neurons;  // descending accuracy, stable by index
  double all_negative_baseline = 0.0;
};

// activations[n][i]: neuron n's response to eval example i.
EvalReport scan_all_neurons(const std::vector<std::vector<float>>& activations,
                            const std::vector<int>& labels);

struct InvarianceCurve {
  std::string axis;  // scale | translate-x | translate-y | rotation-frame
  std::vector<float> values;
  std::vector<double> mean_response;
  std::size_t n_stimuli = 0;
};

// Flattened top-stage LCN output for one input image.
std::vector<float> top_layer_activations(const netcore::NetworkParams& net, const Tensor& image);

// Distorts every stimulus per axis value (cubic interpolation, mean fill)
// and averages the neuron's response. axis is "scale", "translate-x", or
// "translate-y".
InvarianceCurve invariance_curve(const netcore::NetworkParams& net, std::size_t neuron,
                                 const std::vector<Tensor>& stimuli, const std::string& axis,
                                 const std::vector<float>& values);

// Frame-indexed curve over rotation sequences; sequences shorter than the
// longest contribute only to the frames they have.
InvarianceCurve rotation_curve(const netcore::NetworkParams& net, std::size_t neuron,
                               const std::vector<std::vector<Tensor>>& sequences);

// Indices of the k images with the highest neuron response, descending,
// ties broken by dataset order.
std::vector<std::size_t> top_stimuli(const netcore::NetworkParams& net, std::size_t neuron,
                                     const std::vector<Tensor>& images, std::size_t k);

// Maximizes one top-layer neuron's response over unit-norm inputs. The
// sphere optimizer needs a gradient; it is estimated by central differences
// over the input, which keeps this independent of any analytic input-side
// backward pass. Seeded random start.
Tensor optimal_stimulus(const netcore::NetworkParams& net, std::size_t neuron,
                        const optim::LineSearchConfig& ls, std::uint64_t seed,
                        optim::SphereTrace* trace = nullptr);

struct BaselineResult {
  double accuracy = 0.0;
  Tensor best_filter;
  std::size_t best_filter_source = 0;  // index into the train pool
};

// Best-linear-filter control: sample n_filters images from the pool (with
// replacement), use cosine similarity to each eval image as the feature,
// score with the 20-threshold protocol, keep the best. Zero-norm vectors
// have similarity 0 by definition.
BaselineResult linear_filter_baseline(const std::vector<Tensor>& train_pool,
                                      const std::vector<Tensor>& eval_images,
                                      const std::vector<int>& labels, int n_filters,
                                      std::uint64_t seed);

// Cosine similarity with the zero-norm convention above; exposed for tests.
double cosine_similarity(const Tensor& a, const Tensor& b);

struct SweepRow {
  int value = 0;
  double accuracy = 0.0;
  bool valid = false;  // false when the geometry was rejected
};

// Trains a fresh seeded single-stage network per axis value ("rf_size" or
// "num_maps") with identical budgets and scores the best neuron on the eval
// set. Invalid geometries are recorded as absent rows.
std::vector<SweepRow> sensitivity_sweep(const netcore::StageConfig& base, const std::string& axis,
                                        const std::vector<int>& values,
                                        const std::vector<Tensor>& train_images,
                                        const std::vector<Tensor>& eval_images,
                                        const std::vector<int>& labels,
                                        const optim::SgdConfig& sgd);

// CSV writers matching the documented layouts.
void write_eval_report_csv(std::ostream& out, const EvalReport& report);
void write_histogram_csv(std::ostream& out, const Histogram& hist);
void write_invariance_csv(std::ostream& out, const InvarianceCurve& curve);
void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows);

}  // namespace cortexforge::eval
