#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedgp/dataset.hpp"

namespace fedgp {

enum class Architecture { logreg, mlp };

struct ModelSpec {
  Architecture architecture = Architecture::logreg;
  int input_dim = 0;
  std::vector<int> hidden_dims;
  int num_classes = 0;

  void validate() const;
};

struct ParamSegment {
  std::string name;
  int rows = 0;
  int cols = 0;  // 1 for bias vectors
  int offset = 0;
  bool bias = false;

  int size() const { return rows * cols; }
  bool operator==(const ParamSegment&) const = default;
};

struct ParamLayout {
  std::vector<ParamSegment> segments;
  int total = 0;

  bool operator==(const ParamLayout&) const = default;
};

// One weight matrix (out x in) and one bias vector (out) per layer, in order.
ParamLayout layout_for(const ModelSpec& spec);

// Flattened model parameters. Weight segments are column-major.
struct ParamVector {
  Eigen::VectorXd values;
  ParamLayout layout;
};

// Weights uniform in +-1/sqrt(fan_in), biases zero. Deterministic per seed.
ParamVector init_params(const ModelSpec& spec, std::uint64_t seed);

struct LossGrad {
  double loss = 0.0;
  ParamVector grad;
};

// Mean cross-entropy over the batch plus (weight_decay/2)*||weights||^2
// (biases excluded), with its exact analytic gradient. Throws NumericError
// naming the layer when activations go non-finite.
LossGrad loss_and_grad(const ParamVector& params, const ModelSpec& spec,
                       const LabeledDataset& data, std::span<const int> batch,
                       double weight_decay);

struct EvalResult {
  double mean_loss = 0.0;
  double accuracy = 0.0;
};

// Mean per-example cross-entropy (no decay term) and argmax accuracy with
// ties broken toward the lowest class index.
EvalResult evaluate(const ParamVector& params, const ModelSpec& spec,
                    const LabeledDataset& data, std::span<const int> examples);

// Flat little-endian float64 array plus a JSON sidecar describing segments.
void save_params(const ParamVector& params, const std::string& bin_path,
                 const std::string& layout_json_path);
ParamVector load_params(const std::string& bin_path,
                        const std::string& layout_json_path);

}  // namespace fedgp
