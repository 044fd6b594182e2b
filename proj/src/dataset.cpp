#include "fedgp/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>

#include "fedgp/errors.hpp"
#include "fedgp/rng.hpp"

namespace fedgp {

void LabeledDataset::validate() const {
  if (static_cast<int>(labels.size()) != size())
    throw std::invalid_argument("dataset: feature rows != label count");
  if (num_classes <= 0)
    throw std::invalid_argument("dataset: num_classes must be positive");
  for (int y : labels)
    if (y < 0 || y >= num_classes)
      throw std::invalid_argument("dataset: label out of range");
}

LabeledDataset gen_synthetic(int num_classes, int dim, int per_class,
                             double class_separation, std::uint64_t seed) {
  if (num_classes < 2) throw std::invalid_argument("gen_synthetic: num_classes must be >= 2");
  if (dim < 2) throw std::invalid_argument("gen_synthetic: dim must be >= 2");
  if (per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be >= 1");

  std::mt19937_64 rng = make_rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Class means are rejection-sampled at growing scale until every pair sits
  // at distance >= class_separation.
  std::vector<Eigen::VectorXd> means;
  double scale = std::max(class_separation, 1.0);
  int rejects = 0;
  while (static_cast<int>(means.size()) < num_classes) {
    Eigen::VectorXd cand(dim);
    for (int j = 0; j < dim; ++j) cand[j] = scale * unit(rng);
    bool ok = true;
    for (const auto& m : means)
      if ((cand - m).norm() < class_separation) { ok = false; break; }
    if (ok) {
      means.push_back(std::move(cand));
      rejects = 0;
    } else if (++rejects >= 64) {
      scale *= 1.5;
      rejects = 0;
    }
  }

  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(num_classes) * per_class, dim);
  out.labels.resize(static_cast<std::size_t>(num_classes) * per_class);
  Eigen::Index row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int j = 0; j < dim; ++j) out.features(row, j) = means[c][j] + unit(rng);
      out.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return out;
}

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_be_u32(std::istream& in, const std::string& path) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw ParseError(path + ": truncated header");
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
         (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

}  // namespace

LabeledDataset load_idx(const std::string& images_path,
                        const std::string& labels_path) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw ParseError(images_path + ": cannot open");
  const std::uint32_t img_magic = read_be_u32(img, images_path);
  if (img_magic != kImagesMagic)
    throw ParseError(images_path + ": bad image magic " + std::to_string(img_magic));
  const std::uint32_t count = read_be_u32(img, images_path);
  const std::uint32_t rows = read_be_u32(img, images_path);
  const std::uint32_t cols = read_be_u32(img, images_path);
  const std::size_t pixels = std::size_t(rows) * cols;

  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw ParseError(labels_path + ": cannot open");
  const std::uint32_t lab_magic = read_be_u32(lab, labels_path);
  if (lab_magic != kLabelsMagic)
    throw ParseError(labels_path + ": bad label magic " + std::to_string(lab_magic));
  const std::uint32_t lab_count = read_be_u32(lab, labels_path);
  if (lab_count != count)
    throw ParseError(images_path + ", " + labels_path + ": count mismatch (" +
                     std::to_string(count) + " images vs " +
                     std::to_string(lab_count) + " labels)");

  LabeledDataset out;
  out.features.resize(count, static_cast<Eigen::Index>(pixels));
  out.labels.resize(count);

  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < count; ++i) {
    img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
    if (!img) throw ParseError(images_path + ": truncated image data at row " + std::to_string(i));
    for (std::size_t j = 0; j < pixels; ++j)
      out.features(i, static_cast<Eigen::Index>(j)) = buf[j] / 255.0;
  }

  int max_label = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    char c;
    lab.read(&c, 1);
    if (!lab) throw ParseError(labels_path + ": truncated label data at row " + std::to_string(i));
    out.labels[i] = static_cast<unsigned char>(c);
    max_label = std::max(max_label, out.labels[i]);
  }
  out.num_classes = max_label + 1;
  out.validate();
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_per_class(
    const LabeledDataset& data, int train_per_class) {
  data.validate();
  std::vector<int> head, tail;
  std::vector<int> seen(data.num_classes, 0);
  for (int i = 0; i < data.size(); ++i) {
    if (seen[data.labels[i]]++ < train_per_class)
      head.push_back(i);
    else
      tail.push_back(i);
  }
  auto take = [&](const std::vector<int>& idx) {
    LabeledDataset d;
    d.num_classes = data.num_classes;
    d.features.resize(static_cast<Eigen::Index>(idx.size()), data.dim());
    d.labels.resize(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) {
      d.features.row(static_cast<Eigen::Index>(r)) = data.features.row(idx[r]);
      d.labels[r] = data.labels[idx[r]];
    }
    return d;
  };
  return {take(head), take(tail)};
}

std::vector<int> all_indices(const LabeledDataset& data) {
  std::vector<int> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

}  // namespace fedgp
