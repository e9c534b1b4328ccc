#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "cortexforge/tensor.hpp"

namespace cortexforge::data {

struct Item {
  Tensor image;  // {height, width, channels}, values in [0,1] before whitening
  std::optional<int> label;
  std::string source_path;
};

struct Dataset {
  std::vector<Item> items;

  std::size_t size() const { return items.size(); }
  std::vector<Tensor> images() const;
};

// Reads `relative-path<TAB>label` lines (label optional, `#` comments and
// blank lines skipped), decodes each image, and resizes to the target shape.
// Undecodable files are skipped with a warning; an empty result is an error.
Dataset ingest(const std::string& dir_path, const std::string& index_file, int target_height,
               int target_width);

// Zero-phase whitening over flattened images: y = map · (x − mean).
struct WhiteningTransform {
  Tensor mean;  // {d}
  Tensor map;   // {d, d}, symmetric
};

// Eigenvalues are floored at floor_ratio · (largest eigenvalue) so a
// degenerate covariance never amplifies noise. Fits on at most max_fit
// images (leading subsample).
WhiteningTransform fit_whitening(const std::vector<Tensor>& images,
                                 std::size_t max_fit = 10000, float floor_ratio = 1e-2f);

Tensor apply_whitening(const Tensor& image, const WhiteningTransform& t);
Dataset apply_whitening(const Dataset& dataset, const WhiteningTransform& t);

// Seeded subsample with floor(ratio_pos · total) positives (label 1) and the
// remainder negatives (label 0), shuffled together deterministically.
Dataset assemble_eval_set(const Dataset& positives, const Dataset& negatives, double ratio_pos,
                          std::size_t total, std::uint64_t seed);

// One output per (scale, translation) pair, in that nesting order. Scaling
// is about the image center; samples falling outside the source frame take
// the image mean. scale 1 with zero translation is a bit-exact copy.
std::vector<Tensor> make_distortions(const Tensor& image, const std::vector<float>& scales,
                                     const std::vector<std::pair<float, float>>& translations);

// One subdirectory per sequence; frames in lexicographic filename order.
// Grayscale frames are replicated to `channels`. Empty or unreadable
// sequence directories are skipped with a warning.
std::vector<std::vector<Tensor>> load_rotation_sequences(const std::string& dir, int channels);

}  // namespace cortexforge::data
