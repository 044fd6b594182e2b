#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace fedgp {

// In-memory labeled dataset: one feature row per example.
struct LabeledDataset {
  Eigen::MatrixXd features;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(features.rows()); }
  int dim() const { return static_cast<int>(features.cols()); }

  // Checks row/label agreement and label range; throws std::invalid_argument.
  void validate() const;
};

// Isotropic Gaussian blobs, one mean per class, means pairwise at distance
// >= class_separation. Examples are ordered class-major. Deterministic per seed.
LabeledDataset gen_synthetic(int num_classes, int dim, int per_class,
                             double class_separation, std::uint64_t seed);

// Reads an IDX image/label pair (big-endian magic + dims + raw bytes).
// Pixels are scaled to [0,1]. Throws ParseError naming the offending file.
LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path);

// Stratified head split: for each class, the first train_per_class examples go
// to the first dataset and the remainder to the second.
std::pair<LabeledDataset, LabeledDataset> split_per_class(
    const LabeledDataset& data, int train_per_class);

// 0..n-1, handy for whole-dataset evaluation views.
std::vector<int> all_indices(const LabeledDataset& data);

}  // namespace fedgp
