#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dr/common.hpp"
#include "dr/tensor.hpp"

namespace dr {

/// A labeled set of examples. Image loaders produce pixels in [0,1];
/// synthetic generators may use any finite range (blob features are
/// centered on the unit circle).
struct Dataset {
  std::string name;
  Tensor<float> images;    // [n, ...] row-major, one example per row
  std::vector<int> labels; // [n]
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t example_numel() const {
    return size() ? images.size() / size() : 0;
  }
  void validate() const;
};

struct DatasetTriple {
  Dataset train, val, test;
};

/// IDX readers/writers (MNIST family). `gzip` selects the gzip codec; the
/// reader is codec-transparent either way, so plain and gzipped variants of
/// the same file load identically.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path, bool gzip);
void save_idx(const Dataset& ds, const std::string& images_path,
              const std::string& labels_path, bool gzip);

/// CIFAR-10 binary batches (optional path; nothing depends on it).
Dataset load_cifar10(const std::vector<std::string>& batch_paths);

/// Isotropic Gaussian blobs around fixed per-class centers on the unit
/// circle (first two feature dims; remaining dims centered at 0).
Dataset make_blobs(int num_classes, std::size_t per_class, std::size_t dim,
                   double spread, std::uint64_t seed);

/// Procedural digit glyphs: seven-segment-style strokes rasterized with
/// per-sample affine jitter and noise. MNIST-shaped stand-in ([n, hw, hw],
/// pixels in [0,1], 10 classes).
Dataset make_synth_digits(std::size_t per_class, std::size_t hw,
                          std::uint64_t seed, const std::string& name);

/// 2x2 (or factor x factor) average pooling over [n, H, W] images.
Dataset downscale(const Dataset& ds, std::size_t factor);

/// At most per_class examples of each class, seed-deterministic selection.
Dataset subsample_per_class(const Dataset& ds, std::size_t per_class,
                            std::uint64_t seed);

/// New dataset holding rows at the given indices, in order.
Dataset take(const Dataset& ds, const std::vector<std::size_t>& indices);

/// Seed-deterministic split into (rest, held-out fraction).
std::pair<Dataset, Dataset> split_fraction(const Dataset& ds, double fraction,
                                           std::uint64_t seed);

Dataset concat(const Dataset& a, const Dataset& b);

/// One-hot rows for integer labels.
template <typename S>
Tensor<S> one_hot(const std::vector<int>& labels, int num_classes) {
  Tensor<S> t({labels.size(), static_cast<std::size_t>(num_classes)});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw ContractError("one_hot: label " + std::to_string(labels[i]) +
                          " outside [0," + std::to_string(num_classes) + ")");
    t[i * static_cast<std::size_t>(num_classes) +
      static_cast<std::size_t>(labels[i])] = S{1};
  }
  return t;
}

/// Rows of ds.images at `indices` as a dense [k, example] matrix of S.
template <typename S>
Tensor<S> gather_images(const Dataset& ds,
                        const std::vector<std::size_t>& indices) {
  const std::size_t d = ds.example_numel();
  Tensor<S> out({indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= ds.size())
      throw ContractError("gather_images: index out of range");
    const float* src = ds.images.data() + indices[r] * d;
    S* dst = out.data() + r * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] = static_cast<S>(src[j]);
  }
  return out;
}

}  // namespace dr
