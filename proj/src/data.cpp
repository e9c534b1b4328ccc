#include "cortexforge/data.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <random>

#include "cortexforge/errors.hpp"
#include "cortexforge/image_io.hpp"
#include "cortexforge/rng.hpp"

namespace fs = std::filesystem;

namespace cortexforge::data {

std::vector<Tensor> Dataset::images() const {
  std::vector<Tensor> out;
  out.reserve(items.size());
  for (const auto& it : items) out.push_back(it.image);
  return out;
}

Dataset ingest(const std::string& dir_path, const std::string& index_file, int target_height,
               int target_width) {
  if (target_height < 1 || target_width < 1) throw ConfigError("ingest: bad target size");
  std::ifstream index(index_file);
  if (!index) throw DataError("cannot open index file: " + index_file);

  Dataset out;
  std::size_t listed = 0, skipped = 0;
  std::string line;
  while (std::getline(index, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    ++listed;

    std::string rel = line, label_text;
    if (const auto tab = line.find('\t'); tab != std::string::npos) {
      rel = line.substr(0, tab);
      label_text = line.substr(tab + 1);
    }
    std::optional<int> label;
    if (!label_text.empty()) {
      try {
        label = std::stoi(label_text);
      } catch (const std::exception&) {
        throw DataError("ingest: non-numeric label '" + label_text + "' for " + rel);
      }
      if (*label < 0) throw DataError("ingest: negative label for " + rel);
    }

    const std::string full = (fs::path(dir_path) / rel).string();
    try {
      Tensor image = imageio::load_image(full);
      image = imageio::resize_bicubic(image, target_height, target_width);
      out.items.push_back({std::move(image), label, full});
    } catch (const DataError& e) {
      std::cerr << "ingest: skipping " << full << ": " << e.what() << "\n";
      ++skipped;
    }
  }
  std::cerr << "ingest: " << out.items.size() << " of " << listed << " images loaded, " << skipped
            << " skipped\n";
  if (out.items.empty()) throw DataError("empty dataset from index " + index_file);
  return out;
}

WhiteningTransform fit_whitening(const std::vector<Tensor>& images, std::size_t max_fit,
                                 float floor_ratio) {
  if (images.size() < 2) throw DataError("fit_whitening: need at least 2 images");
  const std::size_t n = std::min(images.size(), max_fit);
  const std::size_t d = images[0].numel();
  for (std::size_t i = 1; i < n; ++i) {
    if (images[i].numel() != d) throw GeometryError("fit_whitening: images differ in size");
  }

  Eigen::MatrixXd x;
  x.resize(Eigen::Index(n), Eigen::Index(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) x(Eigen::Index(i), Eigen::Index(j)) = images[i][j];
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd cov = (x.transpose() * x) / double(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("fit_whitening: eigensolver failed");
  Eigen::VectorXd evals = eig.eigenvalues();
  const double floor = double(floor_ratio) * std::max(evals.maxCoeff(), 0.0);
  Eigen::VectorXd inv_sqrt(evals.size());
  for (Eigen::Index i = 0; i < evals.size(); ++i) {
    inv_sqrt(i) = 1.0 / std::sqrt(std::max(evals(i), std::max(floor, 1e-12)));
  }
  const Eigen::MatrixXd map =
      eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();

  WhiteningTransform t;
  t.mean = Tensor({d});
  for (std::size_t j = 0; j < d; ++j) t.mean[j] = float(mean(Eigen::Index(j)));
  t.map = Tensor({d, d});
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      t.map(r, c) = float(map(Eigen::Index(r), Eigen::Index(c)));
    }
  }
  return t;
}

Tensor apply_whitening(const Tensor& image, const WhiteningTransform& t) {
  const std::size_t d = t.mean.numel();
  if (image.numel() != d) throw GeometryError("apply_whitening: image size mismatch");
  std::vector<double> centered(d);
  for (std::size_t j = 0; j < d; ++j) centered[j] = double(image[j]) - double(t.mean[j]);
  Tensor out(image.shape());
  for (std::size_t r = 0; r < d; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < d; ++c) acc += double(t.map(r, c)) * centered[c];
    out[r] = float(acc);
  }
  return out;
}

Dataset apply_whitening(const Dataset& dataset, const WhiteningTransform& t) {
  Dataset out;
  out.items.reserve(dataset.items.size());
  for (const auto& it : dataset.items) {
    out.items.push_back({apply_whitening(it.image, t), it.label, it.source_path});
  }
  return out;
}

Dataset assemble_eval_set(const Dataset& positives, const Dataset& negatives, double ratio_pos,
                          std::size_t total, std::uint64_t seed) {
  if (ratio_pos < 0.0 || ratio_pos > 1.0) throw ConfigError("assemble_eval_set: ratio out of [0,1]");
  const std::size_t n_pos = std::size_t(std::floor(ratio_pos * double(total)));
  const std::size_t n_neg = total - n_pos;
  if (n_pos > positives.size()) {
    throw DataError("assemble_eval_set: need " + std::to_string(n_pos) + " positives, have " +
                    std::to_string(positives.size()));
  }
  if (n_neg > negatives.size()) {
    throw DataError("assemble_eval_set: need " + std::to_string(n_neg) + " negatives, have " +
                    std::to_string(negatives.size()));
  }

  auto pick = [](const Dataset& pool, std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t(0));
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(n);
    return idx;
  };

  auto rng_pos = substream(seed, "evalset.pos");
  auto rng_neg = substream(seed, "evalset.neg");
  Dataset out;
  for (std::size_t i : pick(positives, n_pos, rng_pos)) {
    Item it = positives.items[i];
    it.label = 1;
    out.items.push_back(std::move(it));
  }
  for (std::size_t i : pick(negatives, n_neg, rng_neg)) {
    Item it = negatives.items[i];
    it.label = 0;
    out.items.push_back(std::move(it));
  }
  auto rng_mix = substream(seed, "evalset.mix");
  std::shuffle(out.items.begin(), out.items.end(), rng_mix);
  return out;
}

std::vector<Tensor> make_distortions(const Tensor& image, const std::vector<float>& scales,
                                     const std::vector<std::pair<float, float>>& translations) {
  if (image.rank() != 3) throw GeometryError("make_distortions: image must be rank 3");
  const std::size_t h = image.shape()[0], w = image.shape()[1], ch = image.shape()[2];

  double mean = 0.0;
  for (std::size_t i = 0; i < image.numel(); ++i) mean += image[i];
  const float fill = float(mean / double(image.numel()));

  std::vector<Tensor> out;
  for (float scale : scales) {
    if (!(scale > 0.0f)) throw ConfigError("make_distortions: scale must be positive");
    if (float(h) * scale < 1.0f || float(w) * scale < 1.0f) {
      throw ConfigError("make_distortions: scale produces an empty crop");
    }
    for (const auto& [dx, dy] : translations) {
      if (scale == 1.0f && dx == 0.0f && dy == 0.0f) {
        out.push_back(image);  // identity distortion is exact passthrough
        continue;
      }
      Tensor img({h, w, ch});
      const float cy = 0.5f * float(h - 1), cx = 0.5f * float(w - 1);
      for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
          // Invert scale-about-center-then-translate to find the source.
          const float sy = (float(r) - dy - cy) / scale + cy;
          const float sx = (float(c) - dx - cx) / scale + cx;
          const bool inside = sy >= 0.0f && sy <= float(h - 1) && sx >= 0.0f && sx <= float(w - 1);
          for (std::size_t k = 0; k < ch; ++k) {
            img(r, c, k) = inside ? imageio::sample_bicubic(image, sy, sx, k) : fill;
          }
        }
      }
      out.push_back(std::move(img));
    }
  }
  return out;
}

std::vector<std::vector<Tensor>> load_rotation_sequences(const std::string& dir, int channels) {
  if (channels < 1) throw ConfigError("load_rotation_sequences: bad channel count");
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);

  std::vector<fs::path> seq_dirs;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory()) seq_dirs.push_back(entry.path());
  }
  std::sort(seq_dirs.begin(), seq_dirs.end());

  std::vector<std::vector<Tensor>> sequences;
  for (const auto& sd : seq_dirs) {
    std::vector<fs::path> frames;
    for (const auto& entry : fs::directory_iterator(sd)) {
      if (entry.is_regular_file()) frames.push_back(entry.path());
    }
    std::sort(frames.begin(), frames.end());

    std::vector<Tensor> seq;
    for (const auto& f : frames) {
      try {
        Tensor img = imageio::load_image(f.string());
        const std::size_t h = img.shape()[0], w = img.shape()[1], ch = img.shape()[2];
        if (int(ch) != channels) {
          if (ch != 1) throw DataError("cannot adapt " + std::to_string(ch) + " channels");
          Tensor rep({h, w, std::size_t(channels)});
          for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
              for (int k = 0; k < channels; ++k) rep(r, c, std::size_t(k)) = img(r, c, 0);
            }
          }
          img = std::move(rep);
        }
        seq.push_back(std::move(img));
      } catch (const DataError& e) {
        std::cerr << "rotation sequences: skipping " << f << ": " << e.what() << "\n";
      }
    }
    if (seq.empty()) {
      std::cerr << "rotation sequences: skipping empty sequence " << sd << "\n";
      continue;
    }
    sequences.push_back(std::move(seq));
  }
  return sequences;
}

}  // namespace cortexforge::data
