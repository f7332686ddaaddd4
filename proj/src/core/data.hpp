#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "losses.hpp"
#include "tensor.hpp"

namespace kafshot {

/// Grayscale images [N,1,H,W] in [0,1] with one class id per image.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t height() const { return images.dim(2); }
  std::size_t width() const { return images.dim(3); }
  std::map<int, std::size_t> class_counts() const;
  /// Images at the given indices, stacked as [k,1,H,W].
  Tensor gather(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

/// Checks pixel range and image/label agreement; throws a format error.
void validate(const Dataset& ds);

/// IDX image and label files (optionally gzip-compressed).
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

/// Looks for `<prefix>-images-idx3-ubyte[.gz]` and the matching labels file
/// inside `dir`; prefix is "train" or "t10k".
Dataset load_mnist_split(const std::filesystem::path& dir, const std::string& prefix);

/// One subdirectory of P5 PGM files per class; class ids follow sorted
/// directory order. Images are area-resampled to height x width.
Dataset load_pgm_dir(const std::filesystem::path& root, std::size_t height = 100,
                     std::size_t width = 100);

enum class OmniglotSplit { background, evaluation };

/// `<root>/<split>/<alphabet>/<character>/<sample>.png`; the split directory
/// may be named `background` or `images_background` (likewise evaluation).
/// Strokes map to 1 after inversion and binarisation at 0.5.
Dataset load_omniglot_dir(const std::filesystem::path& root, OmniglotSplit split,
                          std::size_t extent = 28);

/// Each class is a fixed bar-and-blob template plus seeded Gaussian pixel
/// noise, clamped to [0,1]. Templates depend only on the class id, so
/// `first_class` selects a disjoint range of novel classes.
Dataset make_synthetic(int classes, int per_class, std::size_t height, std::uint64_t seed,
                       double noise_std = 0.05, int first_class = 0);

/// First `n` images of a seeded shuffle.
Dataset shuffled_subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

struct PairBatch {
  Tensor x1;  // [B,1,H,W]
  Tensor x2;
  std::vector<PairLabel> y;
  std::vector<std::pair<std::size_t, std::size_t>> indices;
};

/// ceil(B/2) similar pairs followed by floor(B/2) dissimilar ones. Similar
/// pairs draw a class uniformly, then two distinct images of it.
PairBatch sample_pairs(const Dataset& ds, std::size_t batch, std::uint64_t seed);

struct Episode {
  std::size_t ways = 0;
  Tensor support;                   // [N*K,1,H,W]
  std::vector<int> support_labels;  // episode-local ids in [0, N)
  Tensor query;                     // [Q,1,H,W]
  std::vector<int> query_labels;
  std::vector<int> classes;  // dataset class id of each local id
  std::vector<std::size_t> support_index;
  std::vector<std::size_t> query_index;
};

/// N-way K-shot episode with Q queries spread over the N classes (the
/// remainder goes to randomly chosen classes). Support and query are disjoint.
Episode sample_episode(const Dataset& ds, std::size_t ways, std::size_t shots,
                       std::size_t queries, std::uint64_t seed);

/// Everything needed to materialise a dataset by name.
struct DatasetRequest {
  std::string kind = "synthetic";  // mnist | att | omniglot | synthetic
  std::filesystem::path dir;
  // mnist: train | test; omniglot: background | evaluation (train | test
  // are accepted as aliases); synthetic: train | test draw fresh noise over
  // the same class templates; att has a single split.
  std::string split = "train";
  std::size_t subset = 0;  // seeded shuffle down to this many images; 0 or >= N keeps all
  std::uint64_t seed = 0;
  std::size_t extent = 0;  // image side; 0 picks 28 (100 for att)
  int classes = 10;        // synthetic only
  int per_class = 20;
  double noise = 0.05;
  int first_class = 0;
};

Dataset open_dataset(const DatasetRequest& req);

}  // namespace kafshot
